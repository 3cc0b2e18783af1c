use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::mask::Bitmap;

pub const DEFAULT_MAX_PASSES: u32 = 512;

#[derive(Debug, Clone)]
pub struct Inpainted {
    pub image: ImageBuffer,
    pub passes: u32,
    /// Masked pixels left when `max_passes` ran out.
    pub unfilled: u64,
}

/// Fills masked pixels inward from the mask boundary.
///
/// Each pass gives every masked pixel that has at least one unmasked
/// 8-neighbour the rounded mean of those neighbours, then unmasks all of
/// them at once. Unmasked input pixels are never touched.
pub fn naive_inpaint(image: &ImageBuffer, mask: &Bitmap, max_passes: u32) -> Result<Inpainted> {
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    let total = mask.count();
    if total == 0 {
        return Ok(Inpainted {
            image: image.clone(),
            passes: 0,
            unfilled: 0,
        });
    }
    if total == image.pixel_count() as u64 {
        return Err(Error::UnfillableMask);
    }

    let (w, h) = (image.width() as i64, image.height() as i64);
    let mut out = image.clone();
    let mut masked = mask.clone();
    let mut pending: Vec<(u32, u32)> = (0..image.height())
        .flat_map(|y| (0..image.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .collect();

    let mut passes = 0;
    let mut fills: Vec<(u32, u32, [u8; 3])> = Vec::new();
    while !pending.is_empty() && passes < max_passes {
        fills.clear();
        for &(x, y) in &pending {
            let mut sum = [0u32; 3];
            let mut n = 0u32;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (i64::from(x) + dx, i64::from(y) + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let (nx, ny) = (nx as u32, ny as u32);
                    if masked.get(nx, ny) {
                        continue;
                    }
                    let p = out.rgb(nx, ny);
                    for c in 0..3 {
                        sum[c] += u32::from(p[c]);
                    }
                    n += 1;
                }
            }
            if n > 0 {
                let avg = sum.map(|s| ((s + n / 2) / n) as u8);
                fills.push((x, y, avg));
            }
        }
        if fills.is_empty() {
            break;
        }
        for &(x, y, rgb) in &fills {
            out.set_rgb(x, y, rgb);
            masked.set(x, y, false);
        }
        pending.retain(|&(x, y)| masked.get(x, y));
        passes += 1;
    }
    Ok(Inpainted {
        image: out,
        passes,
        unfilled: pending.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: u32, h: u32, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::new(w, h, 3, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn empty_mask_is_identity() {
        let img = random_image(8, 6, 1);
        let out = naive_inpaint(&img, &Bitmap::new(8, 6), 10).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(out.passes, 0);
    }

    #[test]
    fn single_pixel_takes_surrounding_color() {
        let mut img = ImageBuffer::filled_rgb(5, 5, [40, 80, 120]);
        img.set_rgb(2, 2, [255, 0, 0]);
        let mut mask = Bitmap::new(5, 5);
        mask.set(2, 2, true);
        let out = naive_inpaint(&img, &mask, 10).unwrap();
        assert_eq!(out.image.rgb(2, 2), [40, 80, 120]);
        assert_eq!(out.unfilled, 0);
    }

    #[test]
    fn disk_in_constant_region_fills_exactly() {
        let c = [17, 200, 33];
        let mut img = ImageBuffer::filled_rgb(40, 40, c);
        let mask = Bitmap::from_fn(40, 40, |x, y| {
            let (dx, dy) = (f64::from(x) - 20.0, f64::from(y) - 19.0);
            dx * dx + dy * dy <= 81.0
        });
        for y in 0..40 {
            for x in 0..40 {
                if mask.get(x, y) {
                    img.set_rgb(x, y, [0, 0, 0]);
                }
            }
        }
        let out = naive_inpaint(&img, &mask, DEFAULT_MAX_PASSES).unwrap();
        assert_eq!(out.unfilled, 0);
        // Flood-fill oracle: every pixel reachable from the boundary of a
        // constant region gets that constant.
        assert_eq!(out.image, ImageBuffer::filled_rgb(40, 40, c));
    }

    #[test]
    fn never_touches_unmasked_pixels() {
        let img = random_image(30, 20, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mask = Bitmap::from_fn(30, 20, |_, _| rng.random_bool(0.3));
        let out = naive_inpaint(&img, &mask, DEFAULT_MAX_PASSES).unwrap();
        assert_eq!(out.unfilled, 0);
        for y in 0..20 {
            for x in 0..30 {
                if !mask.get(x, y) {
                    assert_eq!(out.image.rgb(x, y), img.rgb(x, y));
                }
            }
        }
    }

    #[test]
    fn pass_limit_leaves_remainder() {
        let img = ImageBuffer::filled_rgb(21, 21, [5, 5, 5]);
        let mask = Bitmap::from_fn(21, 21, |x, y| (1..20).contains(&x) && (1..20).contains(&y));
        let out = naive_inpaint(&img, &mask, 2).unwrap();
        assert_eq!(out.passes, 2);
        assert!(out.unfilled > 0);
    }

    #[test]
    fn fully_masked_image_is_unfillable() {
        let img = ImageBuffer::filled_rgb(3, 3, [1, 2, 3]);
        let mask = Bitmap::from_fn(3, 3, |_, _| true);
        assert!(matches!(
            naive_inpaint(&img, &mask, 10),
            Err(Error::UnfillableMask)
        ));
    }
}
