//! Font-color clusters: cross-sample reduction, best-cluster selection and
//! per-image masking.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::birch::{ClusterFeature, Subcluster};
use super::ica::IcaModel;
use super::OcrBox;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::mask::Bitmap;

/// Default RGB distance under which two cluster centroids are the same color.
pub const DEFAULT_MERGE_TOLERANCE: f64 = 20.0;
/// Mask tolerance as a multiple of the cluster radius.
pub const DEFAULT_TOLERANCE_FACTOR: f64 = 1.5;
/// Absolute slack so exact font-color pixels match a zero-radius cluster.
const DISTANCE_EPSILON: f64 = 1e-6;

/// A color cluster in ICA-projected space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FontColorCluster {
    pub centroid_projected: Vec<f64>,
    pub centroid_rgb: [f64; 3],
    pub radius: f64,
    pub member_count: u64,
    /// CF statistics in projected space; needed for exact merging.
    #[serde(skip)]
    pub cf: Option<ClusterFeature>,
}

impl FontColorCluster {
    /// Builds a cluster from a BIRCH subcluster and the RGB values of the
    /// points it was fitted on.
    pub fn from_subcluster(sub: &Subcluster, rgb: &[[u8; 3]]) -> Self {
        let mut sum = [0.0f64; 3];
        for &m in &sub.members {
            for c in 0..3 {
                sum[c] += f64::from(rgb[m][c]);
            }
        }
        let n = sub.members.len().max(1) as f64;
        Self {
            centroid_projected: sub.cf.centroid(),
            centroid_rgb: sum.map(|s| s / n),
            radius: sub.cf.radius(),
            member_count: sub.cf.count,
            cf: Some(sub.cf.clone()),
        }
    }

    pub fn rgb_distance(&self, other: &FontColorCluster) -> f64 {
        rgb_distance(self.centroid_rgb, other.centroid_rgb)
    }

    /// Count-weighted merge of two clusters.
    pub fn merge(&mut self, other: &FontColorCluster) {
        let (na, nb) = (self.member_count as f64, other.member_count as f64);
        let total = (na + nb).max(1.0);
        for c in 0..3 {
            self.centroid_rgb[c] = (self.centroid_rgb[c] * na + other.centroid_rgb[c] * nb) / total;
        }
        match (&mut self.cf, &other.cf) {
            (Some(a), Some(b)) => {
                a.merge(b);
                self.centroid_projected = a.centroid();
                self.radius = a.radius();
            }
            _ => {
                for (p, q) in self
                    .centroid_projected
                    .iter_mut()
                    .zip(&other.centroid_projected)
                {
                    *p = (*p * na + q * nb) / total;
                }
                self.radius = self.radius.max(other.radius);
                self.cf = None;
            }
        }
        self.member_count += other.member_count;
    }
}

pub fn rgb_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Greedily folds clusters within `tolerance` of each other, largest first.
pub fn merge_similar(clusters: &[FontColorCluster], tolerance: f64) -> Vec<FontColorCluster> {
    let mut sorted: Vec<&FontColorCluster> = clusters.iter().collect();
    sorted.sort_by(|a, b| b.member_count.cmp(&a.member_count));
    let mut out: Vec<FontColorCluster> = Vec::new();
    for c in sorted {
        match out.iter_mut().find(|g| g.rgb_distance(c) <= tolerance) {
            Some(g) => g.merge(c),
            None => out.push(c.clone()),
        }
    }
    out
}

/// Keeps only colors present in every sample.
///
/// Near-duplicate clusters within a sample are merged first. A cluster of
/// the first sample survives when every other sample has a cluster within
/// `tolerance`; the matched clusters are merged into it by member count.
pub fn reduce_across_samples(
    per_sample: &[Vec<FontColorCluster>],
    tolerance: f64,
) -> Result<Vec<FontColorCluster>> {
    if per_sample.is_empty() {
        return Err(Error::NoSharedCluster);
    }
    let merged: Vec<Vec<FontColorCluster>> = per_sample
        .iter()
        .map(|s| merge_similar(s, tolerance))
        .collect();
    let (anchor, others) = merged.split_first().expect("non-empty");
    let mut out = Vec::new();
    'anchor: for cluster in anchor {
        let mut group = cluster.clone();
        for sample in others {
            let best = sample
                .iter()
                .map(|c| (cluster.rgb_distance(c), c))
                .filter(|(d, _)| *d <= tolerance)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            match best {
                Some((_, c)) => group.merge(c),
                None => continue 'anchor,
            }
        }
        out.push(group);
    }
    let out = merge_similar(&out, tolerance);
    if out.is_empty() {
        return Err(Error::NoSharedCluster);
    }
    Ok(out)
}

/// Projects colors through an ICA model, caching by RGB value.
pub struct ColorProjector<'a> {
    model: &'a IcaModel,
    matrix: Vec<Vec<f64>>,
}

impl<'a> ColorProjector<'a> {
    pub fn new(model: &'a IcaModel) -> Self {
        let p = model.projection_matrix();
        let matrix = (0..p.nrows())
            .map(|i| p.row(i).iter().copied().collect())
            .collect();
        Self { model, matrix }
    }

    pub fn project(&self, rgb: [u8; 3]) -> Vec<f64> {
        let centered: Vec<f64> = (0..3)
            .map(|c| f64::from(rgb[c]) - self.model.mean[c])
            .collect();
        self.matrix
            .iter()
            .map(|row| row.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn match_limit(cluster: &FontColorCluster, color_tolerance: Option<f64>) -> f64 {
    let tolerance = color_tolerance.unwrap_or(DEFAULT_TOLERANCE_FACTOR * cluster.radius);
    cluster.radius.max(tolerance) + DISTANCE_EPSILON
}

fn within(p: &[f64], centroid: &[f64], limit: f64) -> bool {
    p.iter()
        .zip(centroid)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
        <= limit
}

/// Pixels whose projected color is within `max(radius, tolerance)` of the
/// cluster centroid. `tolerance` defaults to 1.5 × radius.
pub fn mask_from_cluster(
    image: &ImageBuffer,
    model: &IcaModel,
    cluster: &FontColorCluster,
    color_tolerance: Option<f64>,
) -> Bitmap {
    let limit = match_limit(cluster, color_tolerance);
    let projector = ColorProjector::new(model);
    let mut cache: HashMap<[u8; 3], bool> = HashMap::new();
    let data = image
        .rgb_pixels()
        .map(|rgb| {
            *cache.entry(rgb).or_insert_with(|| {
                within(&projector.project(rgb), &cluster.centroid_projected, limit)
            })
        })
        .collect();
    Bitmap::from_vec(image.width(), image.height(), data).expect("same dimensions")
}

/// Selection score: share of masked pixels inside OCR boxes times the box count.
pub fn cluster_score(mask: &Bitmap, ocr_boxes: &[OcrBox]) -> f64 {
    let total = mask.count();
    if total == 0 {
        return 0.0;
    }
    let inside = box_union(mask.width(), mask.height(), ocr_boxes);
    let hits = mask
        .as_slice()
        .iter()
        .zip(inside.as_slice())
        .filter(|(m, i)| **m && **i)
        .count();
    hits as f64 / total as f64 * ocr_boxes.len() as f64
}

/// Distinct colors of an image with their pixel counts, total and inside OCR
/// boxes. Scoring clusters over this table equals scoring their full masks.
struct ColorTable {
    colors: Vec<(Vec<f64>, u64, u64)>,
}

impl ColorTable {
    fn build(image: &ImageBuffer, model: &IcaModel, ocr_boxes: &[OcrBox]) -> Self {
        let inside = box_union(image.width(), image.height(), ocr_boxes);
        let mut counts: HashMap<[u8; 3], (u64, u64)> = HashMap::new();
        for (rgb, &ins) in image.rgb_pixels().zip(inside.as_slice()) {
            let e = counts.entry(rgb).or_insert((0, 0));
            e.0 += 1;
            e.1 += u64::from(ins);
        }
        let mut keys: Vec<[u8; 3]> = counts.keys().copied().collect();
        keys.sort_unstable();
        let projector = ColorProjector::new(model);
        let colors = keys
            .into_iter()
            .map(|k| {
                let (total, ins) = counts[&k];
                (projector.project(k), total, ins)
            })
            .collect();
        Self { colors }
    }

    fn score(
        &self,
        cluster: &FontColorCluster,
        color_tolerance: Option<f64>,
        n_boxes: usize,
    ) -> (f64, u64) {
        let limit = match_limit(cluster, color_tolerance);
        let (mut total, mut inside) = (0u64, 0u64);
        for (p, t, i) in &self.colors {
            if within(p, &cluster.centroid_projected, limit) {
                total += t;
                inside += i;
            }
        }
        if total == 0 {
            return (0.0, 0);
        }
        (inside as f64 / total as f64 * n_boxes as f64, total)
    }
}

fn box_union(width: u32, height: u32, ocr_boxes: &[OcrBox]) -> Bitmap {
    let mut inside = Bitmap::new(width, height);
    for b in ocr_boxes {
        for y in b.bbox.y_min()..b.bbox.y_max().min(height) {
            for x in b.bbox.x_min()..b.bbox.x_max().min(width) {
                inside.set(x, y, true);
            }
        }
    }
    inside
}

/// Picks the cluster whose mask falls most inside the OCR boxes of `image`.
/// Returns its index and every cluster's score.
pub fn select_best_cluster(
    clusters: &[FontColorCluster],
    model: &IcaModel,
    image: &ImageBuffer,
    ocr_boxes: &[OcrBox],
    color_tolerance: Option<f64>,
) -> Result<(usize, Vec<f64>)> {
    let scores = cluster_scores(clusters, model, image, ocr_boxes, color_tolerance)?;
    Ok((best_index(clusters, &scores), scores))
}

/// Scores every cluster against one sample image.
pub fn cluster_scores(
    clusters: &[FontColorCluster],
    model: &IcaModel,
    image: &ImageBuffer,
    ocr_boxes: &[OcrBox],
    color_tolerance: Option<f64>,
) -> Result<Vec<f64>> {
    if clusters.is_empty() {
        return Err(Error::NoSharedCluster);
    }
    if ocr_boxes.is_empty() {
        return Err(Error::InvalidConfig(
            "cluster selection needs OCR boxes".into(),
        ));
    }
    let table = ColorTable::build(image, model, ocr_boxes);
    let mut any_masked = false;
    let scores = clusters
        .iter()
        .map(|c| {
            let (s, masked) = table.score(c, color_tolerance, ocr_boxes.len());
            any_masked |= masked > 0;
            s
        })
        .collect();
    if !any_masked {
        return Err(Error::AllZeroMasks);
    }
    Ok(scores)
}

/// Argmax of `scores`; ties go to the larger cluster, then the lower index.
pub fn best_index(clusters: &[FontColorCluster], scores: &[f64]) -> usize {
    (0..clusters.len())
        .max_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then(clusters[a].member_count.cmp(&clusters[b].member_count))
                .then(b.cmp(&a))
        })
        .expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    fn cluster(rgb: [f64; 3], count: u64) -> FontColorCluster {
        let mut cf = ClusterFeature::empty(3);
        for _ in 0..count {
            cf.add_point(&rgb.map(|v| v / 100.0));
        }
        FontColorCluster {
            centroid_projected: cf.centroid(),
            centroid_rgb: rgb,
            radius: cf.radius(),
            member_count: count,
            cf: Some(cf),
        }
    }

    fn identity_model() -> IcaModel {
        IcaModel {
            mean: vec![0.0; 3],
            whitening: vec![
                vec![0.01, 0.0, 0.0],
                vec![0.0, 0.01, 0.0],
                vec![0.0, 0.0, 0.01],
            ],
            unmixing: vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            converged: true,
            iterations: 1,
        }
    }

    #[test]
    fn keeps_only_shared_colors() {
        let white = cluster([250.0, 250.0, 250.0], 50);
        let black = cluster([10.0, 10.0, 10.0], 30);
        let samples = vec![
            vec![white.clone(), black.clone()],
            vec![white.clone()],
            vec![cluster([248.0, 251.0, 250.0], 20)],
        ];
        let out = reduce_across_samples(&samples, DEFAULT_MERGE_TOLERANCE).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].rgb_distance(&white) < 2.0);
    }

    #[test]
    fn identical_lists_reduce_to_themselves() {
        let list = vec![
            cluster([250.0, 250.0, 250.0], 50),
            cluster([10.0, 10.0, 200.0], 30),
        ];
        let out = reduce_across_samples(&[list.clone(), list.clone(), list.clone()], 20.0).unwrap();
        assert_eq!(out.len(), list.len());
        for (o, l) in out.iter().zip(&list) {
            assert!(o.rgb_distance(l) < 1e-9);
            for (a, b) in o.centroid_projected.iter().zip(&l.centroid_projected) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((o.radius - l.radius).abs() < 1e-6);
        }
    }

    #[test]
    fn close_clusters_merge_by_weighted_mean() {
        let a = cluster([100.0, 100.0, 100.0], 30);
        let b = cluster([109.0, 112.0, 100.0], 10); // distance 15 < 20
        assert!((a.rgb_distance(&b) - 15.0).abs() < 1e-12);
        let out = reduce_across_samples(&[vec![a], vec![b]], 20.0).unwrap();
        assert_eq!(out.len(), 1);
        let expected = [
            (100.0 * 30.0 + 109.0 * 10.0) / 40.0,
            (100.0 * 30.0 + 112.0 * 10.0) / 40.0,
            100.0,
        ];
        for c in 0..3 {
            assert!((out[0].centroid_rgb[c] - expected[c]).abs() < 1e-12);
        }
        assert_eq!(out[0].member_count, 40);
    }

    #[test]
    fn no_shared_cluster_is_an_error() {
        let out = reduce_across_samples(
            &[
                vec![cluster([0.0, 0.0, 0.0], 5)],
                vec![cluster([200.0, 0.0, 0.0], 5)],
            ],
            20.0,
        );
        assert!(matches!(out, Err(Error::NoSharedCluster)));
    }

    #[test]
    fn score_formula() {
        // 1000 masked pixels, 900 of them inside three boxes.
        let mut mask = Bitmap::new(100, 100);
        let mut n = 0;
        for y in 0..100 {
            for x in 0..100 {
                let first = n < 900 && x < 30 && y < 30;
                let second = (900..1000).contains(&n) && x >= 60 && y >= 60;
                if first || second {
                    mask.set(x, y, true);
                    n += 1;
                }
            }
        }
        assert_eq!(mask.count(), 1000);
        let boxes = vec![
            OcrBox {
                bbox: BoundingBox::new(0, 0, 30, 10).unwrap(),
                confidence: None,
            },
            OcrBox {
                bbox: BoundingBox::new(0, 10, 30, 20).unwrap(),
                confidence: None,
            },
            OcrBox {
                bbox: BoundingBox::new(0, 20, 30, 30).unwrap(),
                confidence: None,
            },
        ];
        assert!((cluster_score(&mask, &boxes) - 2.7).abs() < 1e-12);
        assert_eq!(cluster_score(&Bitmap::new(100, 100), &boxes), 0.0);
    }

    #[test]
    fn selects_cluster_concentrated_in_boxes() {
        let mut img = ImageBuffer::filled_rgb(60, 40, [200, 200, 200]);
        for y in 10..20 {
            for x in 10..40 {
                if (x + y) % 2 == 0 {
                    img.set_rgb(x, y, [50, 0, 100]);
                }
            }
        }
        let boxes = vec![OcrBox {
            bbox: BoundingBox::new(8, 8, 42, 22).unwrap(),
            confidence: Some(0.9),
        }];
        let model = identity_model();
        let clusters = vec![
            cluster([200.0, 200.0, 200.0], 500),
            cluster([50.0, 0.0, 100.0], 100),
        ];
        let (best, scores) = select_best_cluster(&clusters, &model, &img, &boxes, None).unwrap();
        assert_eq!(best, 1);
        assert!((scores[1] - 1.0).abs() < 1e-12);
        assert!(scores[0] < 0.5);
    }

    #[test]
    fn all_zero_masks_is_an_error() {
        let img = ImageBuffer::filled_rgb(10, 10, [0, 0, 0]);
        let boxes = vec![OcrBox {
            bbox: BoundingBox::new(0, 0, 5, 5).unwrap(),
            confidence: None,
        }];
        let r = select_best_cluster(
            &[cluster([255.0, 0.0, 0.0], 3)],
            &identity_model(),
            &img,
            &boxes,
            None,
        );
        assert!(matches!(r, Err(Error::AllZeroMasks)));
    }

    #[test]
    fn mask_is_empty_without_font_pixels() {
        let img = ImageBuffer::filled_rgb(10, 10, [0, 200, 0]);
        let m = mask_from_cluster(
            &img,
            &identity_model(),
            &cluster([50.0, 0.0, 100.0], 10),
            None,
        );
        assert!(m.is_empty());
    }
}
