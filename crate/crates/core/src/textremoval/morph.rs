//! Binary morphology with a 3×3 square element. Pixels outside the bitmap
//! count as background for both operations.

use serde::{Deserialize, Serialize};

use crate::mask::Bitmap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphOp {
    Dilate,
    Erode,
}

pub fn dilate(mask: &Bitmap, iterations: u32) -> Bitmap {
    morph(mask, MorphOp::Dilate, iterations)
}

pub fn erode(mask: &Bitmap, iterations: u32) -> Bitmap {
    morph(mask, MorphOp::Erode, iterations)
}

pub fn morph(mask: &Bitmap, op: MorphOp, iterations: u32) -> Bitmap {
    let mut current = mask.clone();
    for _ in 0..iterations {
        current = step(&current, op);
    }
    current
}

/// Text-mask cleanup: dilate ×2 then erode ×1.
pub fn postprocess_text_mask(mask: &Bitmap) -> Bitmap {
    erode(&dilate(mask, 2), 1)
}

/// One separable 3×3 pass: horizontal then vertical.
fn step(mask: &Bitmap, op: MorphOp) -> Bitmap {
    let w = mask.width() as usize;
    let h = mask.height() as usize;
    if w == 0 || h == 0 {
        return mask.clone();
    }
    let src = mask.as_slice();
    let combine = |a: bool, b: bool, c: bool| match op {
        MorphOp::Dilate => a || b || c,
        MorphOp::Erode => a && b && c,
    };
    let mut tmp = vec![false; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let left = x > 0 && row[x - 1];
            let right = x + 1 < w && row[x + 1];
            tmp[y * w + x] = combine(left, row[x], right);
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let up = y > 0 && tmp[(y - 1) * w + x];
            let down = y + 1 < h && tmp[(y + 1) * w + x];
            out[y * w + x] = combine(up, tmp[y * w + x], down);
        }
    }
    Bitmap::from_vec(mask.width(), mask.height(), out).expect("same dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Sliding-window min/max over the 3×3 neighbourhood, outside = false.
    fn naive(mask: &Bitmap, op: MorphOp) -> Bitmap {
        let (w, h) = (mask.width() as i64, mask.height() as i64);
        Bitmap::from_fn(mask.width(), mask.height(), |x, y| {
            let mut any = false;
            let mut all = true;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (i64::from(x) + dx, i64::from(y) + dy);
                    let v =
                        nx >= 0 && ny >= 0 && nx < w && ny < h && mask.get(nx as u32, ny as u32);
                    any |= v;
                    all &= v;
                }
            }
            match op {
                MorphOp::Dilate => any,
                MorphOp::Erode => all,
            }
        })
    }

    fn random_mask(rng: &mut ChaCha8Rng) -> Bitmap {
        let w = rng.random_range(1..30);
        let h = rng.random_range(1..30);
        let p: f64 = rng.random();
        Bitmap::from_fn(w, h, |_, _| rng.random_bool(p))
    }

    #[test]
    fn isolated_pixel_erodes_away() {
        let mut m = Bitmap::new(9, 9);
        m.set(4, 4, true);
        assert!(erode(&m, 1).is_empty());
        assert_eq!(dilate(&m, 1).count(), 9);
    }

    #[test]
    fn closing_keeps_interior_rectangle() {
        let m = Bitmap::from_fn(40, 30, |x, y| (8..30).contains(&x) && (6..22).contains(&y));
        assert_eq!(erode(&dilate(&m, 3), 3), m);
    }

    #[test]
    fn matches_naive_window_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let m = random_mask(&mut rng);
            for op in [MorphOp::Dilate, MorphOp::Erode] {
                let iters = rng.random_range(0..4);
                let mut expected = m.clone();
                for _ in 0..iters {
                    expected = naive(&expected, op);
                }
                assert_eq!(morph(&m, op, iters), expected);
            }
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_mask(&mut rng);
        assert_eq!(dilate(&m, 0), m);
        assert_eq!(erode(&m, 0), m);
    }

    fn complement(m: &Bitmap) -> Bitmap {
        Bitmap::from_fn(m.width(), m.height(), |x, y| !m.get(x, y))
    }

    proptest! {
        #[test]
        fn dual_under_complement_on_interior(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mask(&mut rng);
            let a = erode(&m, 1);
            let b = complement(&dilate(&complement(&m), 1));
            for y in 1..m.height().saturating_sub(1) {
                for x in 1..m.width().saturating_sub(1) {
                    prop_assert_eq!(a.get(x, y), b.get(x, y));
                }
            }
        }

        #[test]
        fn monotone(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_mask(&mut rng);
            let a = Bitmap::from_fn(b.width(), b.height(), |x, y| b.get(x, y) && rng.random_bool(0.5));
            for op in [MorphOp::Dilate, MorphOp::Erode] {
                let (oa, ob) = (morph(&a, op, 1), morph(&b, op, 1));
                prop_assert!(oa.as_slice().iter().zip(ob.as_slice()).all(|(p, q)| !*p || *q));
            }
        }
    }
}
