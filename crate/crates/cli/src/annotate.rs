//! Annotated detection images: boxes and class labels drawn in place.

use templot_core::classify::Detection;
use templot_core::eval::MatchReport;
use templot_core::geometry::BoundingBox;
use templot_core::synth::font::{ink, GLYPH_HEIGHT, GLYPH_WIDTH};
use templot_core::ImageBuffer;

pub const CORRECT: [u8; 3] = [0, 170, 0];
pub const WRONG: [u8; 3] = [220, 0, 0];
pub const MISSED: [u8; 3] = [0, 90, 230];
/// Color when no ground truth is available.
pub const PLAIN: [u8; 3] = [255, 0, 255];

const LABEL_SCALE: u32 = 2;

fn put(img: &mut ImageBuffer, x: i64, y: i64, rgb: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.set_rgb(x as u32, y as u32, rgb);
    }
}

pub fn draw_box(img: &mut ImageBuffer, b: &BoundingBox, rgb: [u8; 3]) {
    let (x0, y0, x1, y1) = (
        b.x_min() as i64,
        b.y_min() as i64,
        b.x_max() as i64 - 1,
        b.y_max() as i64 - 1,
    );
    for t in 0..2 {
        for x in x0 - t..=x1 + t {
            put(img, x, y0 - t, rgb);
            put(img, x, y1 + t, rgb);
        }
        for y in y0 - t..=y1 + t {
            put(img, x0 - t, y, rgb);
            put(img, x1 + t, y, rgb);
        }
    }
}

/// Draws `text` with its top-left corner at `(x, y)`; characters outside
/// the font (like `.`) render as a dot.
pub fn draw_text(img: &mut ImageBuffer, x: i64, y: i64, text: &str, rgb: [u8; 3]) {
    let s = i64::from(LABEL_SCALE);
    for (i, ch) in text.chars().enumerate() {
        let ox = x + i as i64 * (GLYPH_WIDTH as i64 + 1) * s;
        for gy in 0..GLYPH_HEIGHT {
            for gx in 0..GLYPH_WIDTH {
                let on = if ch == '.' {
                    gx == 2 && gy == GLYPH_HEIGHT - 1
                } else {
                    ink(ch, gx, gy)
                };
                if on {
                    for dy in 0..s {
                        for dx in 0..s {
                            put(img, ox + gx as i64 * s + dx, y + gy as i64 * s + dy, rgb);
                        }
                    }
                }
            }
        }
    }
}

fn label(img: &mut ImageBuffer, d: &Detection, rgb: [u8; 3]) {
    let text = format!("{} {:.2}", d.class_id, d.score);
    let h = (GLYPH_HEIGHT as u32 * LABEL_SCALE) as i64 + 3;
    let y = if i64::from(d.bbox.y_min()) >= h {
        i64::from(d.bbox.y_min()) - h
    } else {
        i64::from(d.bbox.y_max()) + 3
    };
    draw_text(img, i64::from(d.bbox.x_min()), y, &text, rgb);
}

/// Copy of `image` with detections drawn. With a match report, correct
/// detections are green, wrong or spurious ones red and missed ground truth
/// blue.
pub fn annotate(
    image: &ImageBuffer,
    detections: &[Detection],
    report: Option<(&MatchReport, &[BoundingBox])>,
) -> ImageBuffer {
    let mut img = image.to_rgb();
    match report {
        None => {
            for d in detections {
                draw_box(&mut img, &d.bbox, PLAIN);
                label(&mut img, d, PLAIN);
            }
        }
        Some((r, gt_boxes)) => {
            let mut color = vec![WRONG; detections.len()];
            for &(_, d) in &r.true_detections {
                color[d] = CORRECT;
            }
            for &g in &r.missed_gt {
                draw_box(&mut img, &gt_boxes[g], MISSED);
            }
            for (d, c) in detections.iter().zip(color) {
                draw_box(&mut img, &d.bbox, c);
                label(&mut img, d, c);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_outline_is_drawn_and_clipped() {
        let mut img = ImageBuffer::filled_rgb(20, 20, [0, 0, 0]);
        draw_box(
            &mut img,
            &BoundingBox::new(0, 5, 10, 15).unwrap(),
            [9, 9, 9],
        );
        assert_eq!(img.rgb(5, 5), [9, 9, 9]);
        assert_eq!(img.rgb(9, 10), [9, 9, 9]);
        assert_eq!(img.rgb(5, 10), [0, 0, 0]);
    }

    #[test]
    fn labels_use_the_font() {
        let mut img = ImageBuffer::filled_rgb(40, 20, [0, 0, 0]);
        draw_text(&mut img, 0, 0, "1", [1, 2, 3]);
        // '1' has ink at column 2 of row 0, scaled by 2.
        assert_eq!(img.rgb(4, 0), [1, 2, 3]);
        assert_eq!(img.rgb(0, 0), [0, 0, 0]);
    }
}
