//! Map-like scenes: pastel regions, roads, icons and text labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::font::{bold_ink, GLYPH_HEIGHT};
use crate::error::{Error, Result};
use crate::eval::{GroundTruth, GroundTruthEntry};
use crate::geometry::BoundingBox;
use crate::histfilter::TemplateSet;
use crate::image::ImageBuffer;
use crate::mask::{Bitmap, SegmentMask};
use crate::textremoval::OcrBox;

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Minimum RGB distance between the font color and any template color.
pub const MIN_FONT_DISTANCE: f64 = 60.0;

/// Background region colors. Each has a channel below 224, so none shares
/// the white histogram bin, and all channels are at least 200.
const PASTELS: [[u8; 3]; 6] = [
    [236, 232, 214],
    [214, 236, 210],
    [208, 226, 240],
    [240, 222, 226],
    [228, 226, 206],
    [222, 240, 236],
];
const ROADS: [[u8; 3]; 2] = [[252, 226, 160], [214, 214, 220]];

/// Characters used for label strings.
const LABEL_CHARS: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
/// Cells per character: a faux-bold glyph is 6 cells wide, plus 1 of spacing.
const ADVANCE: usize = 7;
const SUPERSAMPLE: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub class_count: u32,
    pub template_size: u32,
    /// Inclusive range of icons per image.
    pub icons_per_image: (u32, u32),
    /// Range of icon scale factors relative to the template size.
    pub scale_range: (f64, f64),
    /// Fraction of icons that get a label drawn across them. Zero disables
    /// text entirely.
    pub text_density: f64,
    pub font_rgb: [u8; 3],
    /// Minimum free pixels between icon boxes.
    pub icon_gap: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 1800,
            height: 697,
            class_count: 20,
            template_size: super::templates::DEFAULT_TEMPLATE_SIZE,
            icons_per_image: (16, 24),
            scale_range: (0.7, 1.3),
            text_density: 0.0,
            font_rgb: [40, 40, 48],
            icon_gap: 4,
            seed: 1,
        }
    }
}

fn rgb_distance(a: [u8; 3], b: [u8; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

impl SceneSpec {
    /// Checks the spec against the templates it will place.
    ///
    /// `area_bounds` are the area-prefilter bounds: the squared scale range
    /// must fit inside them so unperturbed icons are never size-rejected.
    pub fn validate(&self, templates: &TemplateSet, area_bounds: (f64, f64)) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("scale_range ({lo}, {hi}) needs 0 < low <= high"));
        }
        if lo * lo < area_bounds.0 || hi * hi > area_bounds.1 {
            return bad(format!(
                "scale_range ({lo}, {hi}) gives area ratios outside ({}, {})",
                area_bounds.0, area_bounds.1
            ));
        }
        let (a, b) = self.icons_per_image;
        if a > b {
            return bad(format!("icons_per_image ({a}, {b}) is reversed"));
        }
        if !(0.0..=1.0).contains(&self.text_density) {
            return bad(format!("text_density {} outside [0, 1]", self.text_density));
        }
        let largest = (f64::from(self.template_size) * hi).round() as u32 + 2;
        if self.width < largest || self.height < largest {
            return bad(format!(
                "image {}x{} smaller than an icon",
                self.width, self.height
            ));
        }
        for t in templates.entries() {
            for c in distinct_colors(&t.image) {
                if rgb_distance(c, self.font_rgb) < MIN_FONT_DISTANCE {
                    return bad(format!(
                        "font color {:?} within {MIN_FONT_DISTANCE} of template {} color {c:?}",
                        self.font_rgb, t.class_id
                    ));
                }
            }
        }
        Ok(())
    }
}

fn distinct_colors(img: &ImageBuffer) -> Vec<[u8; 3]> {
    let mut out: Vec<[u8; 3]> = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.alpha(x, y) > 0 {
                let c = img.rgb(x, y);
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
    }
    out
}

/// One generated image with everything known about it.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub image: ImageBuffer,
    pub annotations: GroundTruth,
    /// One mask per annotation entry, in the same order.
    pub icon_masks: Vec<SegmentMask>,
    /// Pixels drawn with at least half font ink.
    pub text_mask: Bitmap,
    pub ocr: Vec<OcrBox>,
}

fn background(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let (w, h) = (spec.width, spec.height);
    let n = rng.random_range(8..=14);
    let seeds: Vec<(f64, f64, [u8; 3])> = (0..n)
        .map(|_| {
            (
                rng.random_range(0.0..f64::from(w)),
                rng.random_range(0.0..f64::from(h)),
                PASTELS[rng.random_range(0..PASTELS.len())],
            )
        })
        .collect();
    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            let nearest = seeds
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - px).powi(2) + (a.1 - py).powi(2);
                    let db = (b.0 - px).powi(2) + (b.1 - py).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least one region");
            data.extend_from_slice(&nearest.2);
        }
    }
    ImageBuffer::new(w, h, 3, data).expect("sized buffer")
}

fn draw_segment(img: &mut ImageBuffer, a: (f64, f64), b: (f64, f64), width: f64, rgb: [u8; 3]) {
    let r = width / 2.0;
    let (w, h) = (f64::from(img.width()), f64::from(img.height()));
    let x0 = (a.0.min(b.0) - r).floor().clamp(0.0, w) as u32;
    let x1 = (a.0.max(b.0) + r).ceil().clamp(0.0, w) as u32;
    let y0 = (a.1.min(b.1) - r).floor().clamp(0.0, h) as u32;
    let y1 = (a.1.max(b.1) + r).ceil().clamp(0.0, h) as u32;
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            let t = if len2 > 0.0 {
                (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
            if (px - qx).powi(2) + (py - qy).powi(2) <= r * r {
                img.set_rgb(x, y, rgb);
            }
        }
    }
}

fn roads(img: &mut ImageBuffer, rng: &mut ChaCha8Rng) {
    let (w, h) = (f64::from(img.width()), f64::from(img.height()));
    for _ in 0..rng.random_range(4..=7) {
        let rgb = ROADS[rng.random_range(0..ROADS.len())];
        let width = rng.random_range(4.0..9.0);
        let mut p = (rng.random_range(0.0..w), rng.random_range(0.0..h));
        for _ in 0..rng.random_range(3..=6) {
            let q = (
                (p.0 + rng.random_range(-0.4..0.4) * w).clamp(0.0, w),
                (p.1 + rng.random_range(-0.6..0.6) * h).clamp(0.0, h),
            );
            draw_segment(img, p, q, width, rgb);
            p = q;
        }
    }
}

/// Nearest-neighbour scaled copy of a template's alpha mask.
fn scaled_alpha(template: &ImageBuffer, w: u32, h: u32) -> (Bitmap, Vec<[u8; 3]>) {
    let (tw, th) = (template.width(), template.height());
    let mut mask = Bitmap::new(w, h);
    let mut colors = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        let sy = (((f64::from(y) + 0.5) * f64::from(th) / f64::from(h)) as u32).min(th - 1);
        for x in 0..w {
            let sx = (((f64::from(x) + 0.5) * f64::from(tw) / f64::from(w)) as u32).min(tw - 1);
            mask.set(x, y, template.alpha(sx, sy) > 0);
            colors.push(template.rgb(sx, sy));
        }
    }
    (mask, colors)
}

struct Label {
    text: Vec<char>,
    /// Pixels per font cell.
    cell: f64,
    angle: f64,
    center: (f64, f64),
}

impl Label {
    fn extent(&self) -> (f64, f64) {
        let w = (self.text.len() * ADVANCE - 1) as f64 * self.cell;
        (w, GLYPH_HEIGHT as f64 * self.cell)
    }

    /// Ink at image point `(x, y)`.
    fn ink_at(&self, x: f64, y: f64) -> bool {
        let (w, h) = self.extent();
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let u = c * dx + s * dy + w / 2.0;
        let v = -s * dx + c * dy + h / 2.0;
        if u < 0.0 || v < 0.0 || u >= w || v >= h {
            return false;
        }
        let (col, row) = ((u / self.cell) as usize, (v / self.cell) as usize);
        let ch = self.text[col / ADVANCE];
        bold_ink(ch, col % ADVANCE, row)
    }

    /// Pixel bounding box of the rotated label, clipped to the image.
    fn pixel_bounds(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let (w, h) = self.extent();
        let (s, c) = self.angle.sin_cos();
        let hw = (c.abs() * w + s.abs() * h) / 2.0;
        let hh = (s.abs() * w + c.abs() * h) / 2.0;
        let x0 = (self.center.0 - hw).floor().max(0.0) as u32;
        let y0 = (self.center.1 - hh).floor().max(0.0) as u32;
        let x1 = ((self.center.0 + hw).ceil().max(0.0) as u32).min(width);
        let y1 = ((self.center.1 + hh).ceil().max(0.0) as u32).min(height);
        BoundingBox::new(x0, y0, x1, y1).ok()
    }

    /// Draws the label; returns the box of touched pixels.
    fn draw(
        &self,
        img: &mut ImageBuffer,
        text_mask: &mut Bitmap,
        font: [u8; 3],
    ) -> Option<BoundingBox> {
        let bounds = self.pixel_bounds(img.width(), img.height())?;
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        let n = SUPERSAMPLE * SUPERSAMPLE;
        for y in bounds.y_min()..bounds.y_max() {
            for x in bounds.x_min()..bounds.x_max() {
                let mut hits = 0;
                for j in 0..SUPERSAMPLE {
                    for i in 0..SUPERSAMPLE {
                        let px = f64::from(x) + (f64::from(i) + 0.5) / f64::from(SUPERSAMPLE);
                        let py = f64::from(y) + (f64::from(j) + 0.5) / f64::from(SUPERSAMPLE);
                        hits += u32::from(self.ink_at(px, py));
                    }
                }
                if hits == 0 {
                    continue;
                }
                (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1));
                if 2 * hits >= n {
                    img.set_rgb(x, y, font);
                    text_mask.set(x, y, true);
                } else if !text_mask.get(x, y) {
                    let a = f64::from(hits) / f64::from(n);
                    let cur = img.rgb(x, y);
                    let mut out = [0u8; 3];
                    for k in 0..3 {
                        out[k] =
                            (f64::from(cur[k]) * (1.0 - a) + f64::from(font[k]) * a).round() as u8;
                    }
                    img.set_rgb(x, y, out);
                }
            }
        }
        BoundingBox::new(x0, y0, x1, y1).ok()
    }
}

fn random_text(rng: &mut ChaCha8Rng) -> Vec<char> {
    let chars: Vec<char> = LABEL_CHARS.chars().collect();
    let n = rng.random_range(3..=7);
    (0..n)
        .map(|_| chars[rng.random_range(0..chars.len())])
        .collect()
}

fn random_angle(rng: &mut ChaCha8Rng) -> f64 {
    [0.0f64, 30.0, -30.0][rng.random_range(0..3)].to_radians()
}

/// Renders one scene. Deterministic in `spec` and the templates.
pub fn generate_scene(spec: &SceneSpec, templates: &TemplateSet) -> Result<SceneBundle> {
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut image = background(spec, &mut rng);
    roads(&mut image, &mut rng);

    let entries = templates.entries();
    let n = rng.random_range(spec.icons_per_image.0..=spec.icons_per_image.1) as usize;
    let margin = 2u32;
    let mut gt = Vec::with_capacity(n);
    let mut icon_masks = Vec::with_capacity(n);
    let mut placed: Vec<BoundingBox> = Vec::with_capacity(n);
    for icon in 0..n {
        let t = &entries[rng.random_range(0..entries.len())];
        let scale = rng.random_range(spec.scale_range.0..=spec.scale_range.1);
        let iw = ((f64::from(t.image.width()) * scale).round() as u32).max(1);
        let ih = ((f64::from(t.image.height()) * scale).round() as u32).max(1);
        if iw + 2 * margin > w || ih + 2 * margin > h {
            return Err(Error::PlacementFailure { icon, attempts: 0 });
        }
        let (alpha, colors) = scaled_alpha(&t.image, iw, ih);
        let local_box = alpha.bbox()?;
        let mut spot = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let x = rng.random_range(margin..=w - iw - margin);
            let y = rng.random_range(margin..=h - ih - margin);
            let b = BoundingBox::new(
                x + local_box.x_min(),
                y + local_box.y_min(),
                x + local_box.x_max(),
                y + local_box.y_max(),
            )?;
            let padded = b.expanded(spec.icon_gap, w, h);
            if placed.iter().all(|p| padded.intersection_area(p) == 0) {
                spot = Some((x, y, b));
                break;
            }
        }
        let (x, y, bbox) = spot.ok_or(Error::PlacementFailure {
            icon,
            attempts: MAX_PLACEMENT_ATTEMPTS,
        })?;
        for v in 0..ih {
            for u in 0..iw {
                if alpha.get(u, v) {
                    image.set_rgb(x + u, y + v, colors[(v * iw + u) as usize]);
                }
            }
        }
        placed.push(bbox);
        icon_masks.push(SegmentMask::from_local(&alpha, x, y, w, h));
        gt.push(GroundTruthEntry {
            class_id: t.class_id,
            bbox,
        });
    }

    let mut text_mask = Bitmap::new(w, h);
    let mut ocr = Vec::new();
    if spec.text_density > 0.0 {
        let mut labels = Vec::new();
        for b in &placed {
            if !rng.random_bool(spec.text_density) {
                continue;
            }
            let (cx, cy) = b.midpoint();
            let height = f64::from(b.height()) * rng.random_range(0.8..1.1);
            labels.push(Label {
                text: random_text(&mut rng),
                cell: (height / GLYPH_HEIGHT as f64).max(2.0),
                angle: random_angle(&mut rng),
                center: (
                    cx + rng.random_range(-0.15..0.15) * f64::from(b.width()),
                    cy + rng.random_range(-0.1..0.1) * f64::from(b.height()),
                ),
            });
        }
        let free = (spec.text_density * n as f64 / 2.0).round() as usize;
        for _ in 0..free {
            labels.push(Label {
                text: random_text(&mut rng),
                cell: f64::from(rng.random_range(2..=4u32)),
                angle: random_angle(&mut rng),
                center: (
                    rng.random_range(0.0..f64::from(w)),
                    rng.random_range(0.0..f64::from(h)),
                ),
            });
        }
        for label in &labels {
            if let Some(bbox) = label.draw(&mut image, &mut text_mask, spec.font_rgb) {
                ocr.push(OcrBox {
                    bbox,
                    confidence: Some(1.0),
                });
            }
        }
    }

    Ok(SceneBundle {
        image,
        annotations: GroundTruth {
            image_id: String::new(),
            width: Some(w),
            height: Some(h),
            entries: gt,
        },
        icon_masks,
        text_mask,
        ocr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::templates::generate_templates;

    fn small_spec(seed: u64, text_density: f64) -> SceneSpec {
        SceneSpec {
            width: 400,
            height: 240,
            icons_per_image: (6, 6),
            text_density,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn no_text_means_empty_mask_and_ocr() {
        let t = generate_templates(20, 40, 1).unwrap();
        let s = generate_scene(&small_spec(3, 0.0), &t).unwrap();
        assert!(s.text_mask.is_empty());
        assert!(s.ocr.is_empty());
    }

    #[test]
    fn annotations_match_masks_and_do_not_overlap() {
        let t = generate_templates(20, 40, 1).unwrap();
        for seed in 0..5 {
            let s = generate_scene(&small_spec(seed, 0.5), &t).unwrap();
            let e = &s.annotations.entries;
            assert_eq!(e.len(), 6);
            assert_eq!(s.icon_masks.len(), 6);
            for (g, m) in e.iter().zip(&s.icon_masks) {
                assert_eq!(g.bbox, m.bbox().unwrap());
                assert!(!g.bbox.touches_border(400, 240));
            }
            for i in 0..e.len() {
                for j in i + 1..e.len() {
                    assert_eq!(crate::geometry::iou(&e[i].bbox, &e[j].bbox), 0.0);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let t = generate_templates(20, 40, 1).unwrap();
        let a = generate_scene(&small_spec(7, 0.5), &t).unwrap();
        let b = generate_scene(&small_spec(7, 0.5), &t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn text_mask_pixels_are_font_colored() {
        let t = generate_templates(20, 40, 1).unwrap();
        let spec = small_spec(11, 1.0);
        let s = generate_scene(&spec, &t).unwrap();
        assert!(!s.text_mask.is_empty());
        assert!(!s.ocr.is_empty());
        for y in 0..spec.height {
            for x in 0..spec.width {
                if s.text_mask.get(x, y) {
                    assert_eq!(s.image.rgb(x, y), spec.font_rgb);
                    assert!(s.ocr.iter().any(|o| o
                        .bbox
                        .contains_point(f64::from(x) + 0.5, f64::from(y) + 0.5)));
                }
            }
        }
    }

    #[test]
    fn label_ink_follows_font() {
        let l = Label {
            text: vec!['I'],
            cell: 1.0,
            angle: 0.0,
            center: (3.0, 3.5),
        };
        // Extent 6x7 centered at (3, 3.5): the stroke of 'I' is column 2,
        // bolded into column 3; the top bar covers columns 1..=4.
        assert!(l.ink_at(2.5, 3.5) && l.ink_at(3.5, 3.5));
        assert!(!l.ink_at(0.5, 3.5) && !l.ink_at(4.5, 3.5));
        assert!(l.ink_at(4.5, 0.5) && !l.ink_at(5.5, 0.5));
    }

    #[test]
    fn crowded_spec_fails_placement() {
        let t = generate_templates(20, 40, 1).unwrap();
        let spec = SceneSpec {
            width: 120,
            height: 120,
            icons_per_image: (30, 30),
            ..Default::default()
        };
        assert!(matches!(
            generate_scene(&spec, &t),
            Err(Error::PlacementFailure { .. })
        ));
    }

    #[test]
    fn validate_checks_font_and_scale() {
        let t = generate_templates(20, 40, 1).unwrap();
        assert!(SceneSpec::default().validate(&t, (0.25, 2.0)).is_ok());
        let white_font = SceneSpec {
            font_rgb: [250, 250, 250],
            ..Default::default()
        };
        assert!(white_font.validate(&t, (0.25, 2.0)).is_err());
        let big = SceneSpec {
            scale_range: (0.5, 2.0),
            ..Default::default()
        };
        assert!(big.validate(&t, (0.25, 2.0)).is_err());
    }
}
