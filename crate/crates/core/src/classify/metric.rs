use serde::{Deserialize, Serialize};

use super::preprocess::{preprocess_crop, Tensor, INPUT_SIZE};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Pooled grid side of the reference extractor.
pub const POOL_SIZE: usize = 16;
pub const REFERENCE_DIM: usize = POOL_SIZE * POOL_SIZE * 3;

/// Deterministic 768-d features: average-pool the normalized tensor to
/// 16×16×3 and L2-normalize. An all-zero pooled tensor stays zero.
pub fn reference_extract(crop: &ImageBuffer) -> Vec<f64> {
    reference_from_tensor(&preprocess_crop(crop))
}

pub fn reference_from_tensor(t: &Tensor) -> Vec<f64> {
    let cell = INPUT_SIZE / POOL_SIZE;
    let mut v = vec![0.0f64; REFERENCE_DIM];
    for y in 0..INPUT_SIZE {
        for x in 0..INPUT_SIZE {
            let base = ((y / cell) * POOL_SIZE + x / cell) * 3;
            for c in 0..3 {
                v[base + c] += f64::from(t.get(x, y, c));
            }
        }
    }
    let n = (cell * cell) as f64;
    v.iter_mut().for_each(|x| *x /= n);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Per-dimension min and max over the template features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureStats {
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        let first = features.first().ok_or_else(|| {
            Error::InvalidConfig("feature statistics need at least one template".into())
        })?;
        let mut min = first.clone();
        let mut max = first.clone();
        for f in &features[1..] {
            if f.len() != min.len() {
                return Err(Error::DimensionMismatch(format!(
                    "template features of dim {} and {}",
                    min.len(),
                    f.len()
                )));
            }
            for (i, &v) in f.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }
}

/// `(v - min) / (max - min)` per dimension; 0.5 where `min == max`.
pub fn minmax_scale(v: &[f64], stats: &FeatureStats) -> Result<Vec<f64>> {
    if v.len() != stats.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature dim {} vs stats dim {}",
            v.len(),
            stats.dim()
        )));
    }
    Ok(v.iter()
        .zip(stats.min.iter().zip(&stats.max))
        .map(|(&x, (&lo, &hi))| if hi > lo { (x - lo) / (hi - lo) } else { 0.5 })
        .collect())
}

/// `1 - cos(a, b)`.
pub fn embedding_dissimilarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "feature dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(1.0 - dot / (na.sqrt() * nb.sqrt()))
}

/// Mean absolute difference between two preprocessed tensors.
pub fn tensor_dissimilarity(a: &Tensor, b: &Tensor) -> f64 {
    let sum: f64 = a
        .data
        .chunks(INPUT_SIZE * 3)
        .zip(b.data.chunks(INPUT_SIZE * 3))
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .map(|(x, y)| f64::from((x - y).abs()))
                .sum::<f64>()
        })
        .sum();
    sum / a.data.len() as f64
}

pub fn patch_dissimilarity(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    tensor_dissimilarity(&preprocess_crop(a), &preprocess_crop(b))
}

#[cfg(test)]
mod tests {
    use super::super::preprocess::IMAGENET_STD;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: u32, h: u32, rng: &mut ChaCha8Rng) -> ImageBuffer {
        ImageBuffer::new(w, h, 3, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn reference_features_are_unit_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(37, 22, &mut rng);
        let a = reference_extract(&img);
        assert_eq!(a.len(), REFERENCE_DIM);
        assert_eq!(a, reference_extract(&img));
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reference_features_survive_nearest_upscale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(30, 30, &mut rng);
        let up = ImageBuffer::new(
            60,
            60,
            3,
            (0..60 * 60)
                .flat_map(|i| img.rgb((i % 60) / 2, (i / 60) / 2))
                .collect(),
        )
        .unwrap();
        let d = embedding_dissimilarity(&reference_extract(&img), &reference_extract(&up)).unwrap();
        assert!(1.0 - d > 0.99, "cosine {}", 1.0 - d);
    }

    #[test]
    fn minmax_examples() {
        let stats = FeatureStats {
            min: vec![2.0, 0.0, 3.0],
            max: vec![6.0, 1.0, 3.0],
        };
        assert_eq!(
            minmax_scale(&[4.0, 0.0, 100.0], &stats).unwrap(),
            vec![0.5, 0.0, 0.5]
        );
        assert_eq!(
            minmax_scale(&[2.0, 1.0, -7.0], &stats).unwrap(),
            vec![0.0, 1.0, 0.5]
        );
        assert!(matches!(
            minmax_scale(&[1.0], &stats),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn stats_from_features() {
        let s = FeatureStats::from_features(&[vec![1.0, 5.0], vec![3.0, -1.0], vec![2.0, 0.0]])
            .unwrap();
        assert_eq!(s.min, vec![1.0, -1.0]);
        assert_eq!(s.max, vec![3.0, 5.0]);
    }

    #[test]
    fn cosine_examples() {
        assert!(
            embedding_dissimilarity(&[1.0, 2.0], &[1.0, 2.0])
                .unwrap()
                .abs()
                < 1e-12
        );
        assert_eq!(
            embedding_dissimilarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(),
            1.0
        );
        assert!(matches!(
            embedding_dissimilarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn cosine_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..20);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut dot = 0.0;
            for i in 0..n {
                dot += a[i] * b[i];
            }
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            let expected = 1.0 - dot / (na * nb);
            assert!((embedding_dissimilarity(&a, &b).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn patch_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let a = random_image(rng.random_range(5..60), rng.random_range(5..60), &mut rng);
            let b = random_image(rng.random_range(5..60), rng.random_range(5..60), &mut rng);
            assert_eq!(patch_dissimilarity(&a, &a), 0.0);
            assert_eq!(patch_dissimilarity(&a, &b), patch_dissimilarity(&b, &a));
            assert!(patch_dissimilarity(&a, &b) > 0.0);
        }
    }

    #[test]
    fn patch_black_vs_white_closed_form() {
        let black = ImageBuffer::filled_rgb(10, 10, [0, 0, 0]);
        let white = ImageBuffer::filled_rgb(13, 7, [255, 255, 255]);
        // Each channel differs by exactly 1 / std after normalization.
        let expected = IMAGENET_STD.iter().map(|s| 1.0 / s).sum::<f64>() / 3.0;
        assert!((patch_dissimilarity(&black, &white) - expected).abs() < 1e-5);
    }
}
