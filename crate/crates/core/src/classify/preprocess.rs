//! Crop normalization shared by the built-in metrics.

use crate::image::ImageBuffer;

pub const INPUT_SIZE: usize = 224;
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
/// Alpha is composited over this gray before resizing.
pub const MATTE: f64 = 128.0;

/// A normalized `224 × 224 × 3` tensor in HWC order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * INPUT_SIZE + x) * 3 + c]
    }
}

/// Opaque RGB values in `[0, 255]` as f64, alpha composited over the matte.
fn composited(img: &ImageBuffer) -> Vec<f64> {
    let bytes = img.as_bytes();
    let ch = usize::from(img.channels());
    let mut out = Vec::with_capacity(img.pixel_count() * 3);
    for px in bytes.chunks_exact(ch) {
        let a = if ch == 4 {
            f64::from(px[3]) / 255.0
        } else {
            1.0
        };
        for c in 0..3 {
            out.push(f64::from(px[c]) * a + MATTE * (1.0 - a));
        }
    }
    out
}

/// Bilinear resampling taps along one axis, half-pixel centers, edge clamped.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of an interleaved RGB f64 image.
pub fn resize_bilinear(src: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let tx = taps(w, out_w);
    let ty = taps(h, out_h);
    // Horizontal pass into an out_w × h buffer, then vertical.
    let mut tmp = vec![0.0; out_w * h * 3];
    for y in 0..h {
        for (x, &(x0, x1, f)) in tx.iter().enumerate() {
            for c in 0..3 {
                let a = src[(y * w + x0) * 3 + c];
                let b = src[(y * w + x1) * 3 + c];
                tmp[(y * out_w + x) * 3 + c] = a + (b - a) * f;
            }
        }
    }
    let mut out = vec![0.0; out_w * out_h * 3];
    for (y, &(y0, y1, f)) in ty.iter().enumerate() {
        for x in 0..out_w {
            for c in 0..3 {
                let a = tmp[(y0 * out_w + x) * 3 + c];
                let b = tmp[(y1 * out_w + x) * 3 + c];
                out[(y * out_w + x) * 3 + c] = a + (b - a) * f;
            }
        }
    }
    out
}

/// Resize to 224×224 and normalize with the ImageNet statistics.
pub fn preprocess_crop(crop: &ImageBuffer) -> Tensor {
    let rgb = composited(crop);
    let resized = resize_bilinear(
        &rgb,
        crop.width() as usize,
        crop.height() as usize,
        INPUT_SIZE,
        INPUT_SIZE,
    );
    let data = resized
        .chunks_exact(3)
        .flat_map(|px| {
            (0..3).map(move |c| ((px[c] / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c]) as f32)
        })
        .collect();
    Tensor { data }
}
