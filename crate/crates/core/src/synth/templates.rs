//! Procedural icon templates: a colored shape carrying a white glyph.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::font::{ink, CHARSET, GLYPH_HEIGHT, GLYPH_WIDTH};
use crate::classify::metric::{embedding_dissimilarity, reference_extract};
use crate::error::{Error, Result};
use crate::histfilter::{TemplateEntry, TemplateSet};
use crate::image::ImageBuffer;

pub const MAX_CLASSES: u32 = 85;
pub const DEFAULT_TEMPLATE_SIZE: u32 = 40;
/// Minimum reference-feature dissimilarity between any two templates.
pub const MIN_PAIR_DISSIMILARITY: f64 = 0.05;
pub const GLYPH_RGB: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    RoundedSquare,
    Octagon,
}

impl Shape {
    const ALL: [Shape; 3] = [Shape::Circle, Shape::RoundedSquare, Shape::Octagon];

    /// Inside test for the pixel center `(x, y)` of a `size`-wide square.
    fn contains(&self, x: u32, y: u32, size: u32) -> bool {
        let s = f64::from(size);
        let (u, v) = (
            (f64::from(x) + 0.5) / s * 2.0 - 1.0,
            (f64::from(y) + 0.5) / s * 2.0 - 1.0,
        );
        match self {
            Shape::Circle => u * u + v * v <= 1.0,
            Shape::RoundedSquare => {
                let r = 0.35;
                let (du, dv) = (
                    (u.abs() - (1.0 - r)).max(0.0),
                    (v.abs() - (1.0 - r)).max(0.0),
                );
                du * du + dv * dv <= r * r
            }
            Shape::Octagon => u.abs() + v.abs() <= 1.45,
        }
    }
}

/// Drawing recipe of one template.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateDesign {
    pub class_id: u32,
    pub shape: Shape,
    pub base_rgb: [u8; 3],
    pub glyph: char,
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round() as u8)
}

pub fn draw_template(design: &TemplateDesign, size: u32) -> ImageBuffer {
    let cell = (f64::from(size) * 0.6 / GLYPH_HEIGHT as f64)
        .round()
        .max(1.0) as u32;
    let (gw, gh) = (cell * GLYPH_WIDTH as u32, cell * GLYPH_HEIGHT as u32);
    let (gx, gy) = ((size.saturating_sub(gw)) / 2, (size.saturating_sub(gh)) / 2);
    let mut img =
        ImageBuffer::new(size, size, 4, vec![0; (size * size * 4) as usize]).expect("sized buffer");
    for y in 0..size {
        for x in 0..size {
            if !design.shape.contains(x, y, size) {
                continue;
            }
            let in_glyph = x >= gx
                && y >= gy
                && x < gx + gw
                && y < gy + gh
                && ink(
                    design.glyph,
                    ((x - gx) / cell) as usize,
                    ((y - gy) / cell) as usize,
                );
            let [r, g, b] = if in_glyph { GLYPH_RGB } else { design.base_rgb };
            img.set_rgba(x, y, [r, g, b, 255]);
        }
    }
    img
}

/// Draws `class_count` distinct templates of `size`×`size` pixels.
///
/// Base hues are spread evenly around the color wheel with saturation in
/// [0.65, 0.95] and value in [0.6, 0.85], so every base color has a dark
/// channel and none is close to white or near-black. A class whose reference
/// features land too close to an earlier class gets a new glyph.
pub fn generate_templates(class_count: u32, size: u32, seed: u64) -> Result<TemplateSet> {
    let designs = template_designs(class_count, size, seed)?;
    let entries = designs
        .iter()
        .map(|d| {
            TemplateEntry::new(
                d.class_id,
                format!("icon_{:02}", d.class_id),
                draw_template(d, size),
                8,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    TemplateSet::new(entries)
}

pub fn template_designs(class_count: u32, size: u32, seed: u64) -> Result<Vec<TemplateDesign>> {
    if !(2..=MAX_CLASSES).contains(&class_count) {
        return Err(Error::InvalidConfig(format!(
            "class_count {class_count} outside 2..={MAX_CLASSES}"
        )));
    }
    if size < 12 {
        return Err(Error::InvalidConfig(format!(
            "template size {size} below 12"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e3d_1a2b);
    let mut glyphs: Vec<char> = CHARSET.chars().collect();
    glyphs.shuffle(&mut rng);
    let hue0 = rng.random_range(0.0..360.0);
    let step = 360.0 / f64::from(class_count);

    let mut designs: Vec<TemplateDesign> = Vec::new();
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut next_glyph = 0usize;
    for class_id in 0..class_count {
        let hue = hue0 + step * (f64::from(class_id) + rng.random_range(-0.2..0.2));
        let base_rgb = hsv_to_rgb(
            hue,
            rng.random_range(0.65..0.95),
            rng.random_range(0.6..0.85),
        );
        let shape = Shape::ALL[rng.random_range(0..Shape::ALL.len())];
        let mut accepted = None;
        for _ in 0..glyphs.len() {
            let glyph = glyphs[next_glyph % glyphs.len()];
            next_glyph += 1;
            let d = TemplateDesign {
                class_id,
                shape,
                base_rgb,
                glyph,
            };
            let f = reference_extract(&draw_template(&d, size));
            let distinct = features
                .iter()
                .all(|g| embedding_dissimilarity(g, &f).is_ok_and(|s| s >= MIN_PAIR_DISSIMILARITY));
            if distinct {
                accepted = Some((d, f));
                break;
            }
        }
        let (d, f) = accepted.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "no glyph makes class {class_id} distinct from earlier classes"
            ))
        })?;
        designs.push(d);
        features.push(f);
    }
    Ok(designs)
}

/// Colors appearing in a template, for distinctness checks.
pub fn template_colors(design: &TemplateDesign) -> [[u8; 3]; 2] {
    [design.base_rgb, GLYPH_RGB]
}
