//! Font-color text removal: discover the text color from OCR boxes, mask it
//! per image, clean the mask and inpaint.

pub mod birch;
pub mod clusters;
pub mod ica;
pub mod inpaint;
pub mod morph;

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::image::ImageBuffer;
use crate::mask::Bitmap;

pub use birch::{birch_cluster, BirchParams, ClusterFeature, Subcluster};
pub use clusters::{
    mask_from_cluster, reduce_across_samples, select_best_cluster, FontColorCluster,
    DEFAULT_MERGE_TOLERANCE,
};
pub use ica::{fastica, IcaModel, IcaParams};
pub use inpaint::{naive_inpaint, Inpainted, DEFAULT_MAX_PASSES};
pub use morph::{dilate, erode, morph, postprocess_text_mask, MorphOp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrBox {
    pub bbox: BoundingBox,
    #[serde(default)]
    pub confidence: Option<f64>,
}

pub fn load_ocr(path: &Path) -> Result<Vec<OcrBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, e))
}

/// Checks every OCR box lies inside a `width`×`height` image.
pub fn validate_ocr(boxes: &[OcrBox], width: u32, height: u32) -> Result<()> {
    for b in boxes {
        if !b.bbox.fits_within(width, height) {
            return Err(Error::DimensionMismatch(format!(
                "OCR box {:?} outside {width}x{height} image",
                b.bbox.to_array()
            )));
        }
    }
    Ok(())
}

/// Fraction of `bbox` covered by `mask`.
pub fn text_coverage(bbox: &BoundingBox, mask: &Bitmap) -> f64 {
    mask.count_in(bbox) as f64 / bbox.area() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FontClusterRecord {
    pub centroid_projected: Vec<f64>,
    pub centroid_rgb: [f64; 3],
    pub radius: f64,
}

/// Persisted font model: the ICA projection plus the selected color cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FontModel {
    pub mean: Vec<f64>,
    pub whitening: Vec<Vec<f64>>,
    pub unmixing: Vec<Vec<f64>>,
    pub cluster: FontClusterRecord,
}

impl FontModel {
    pub fn new(ica: &IcaModel, cluster: &FontColorCluster) -> Self {
        Self {
            mean: ica.mean.clone(),
            whitening: ica.whitening.clone(),
            unmixing: ica.unmixing.clone(),
            cluster: FontClusterRecord {
                centroid_projected: cluster.centroid_projected.clone(),
                centroid_rgb: cluster.centroid_rgb,
                radius: cluster.radius,
            },
        }
    }

    pub fn ica(&self) -> IcaModel {
        IcaModel {
            mean: self.mean.clone(),
            whitening: self.whitening.clone(),
            unmixing: self.unmixing.clone(),
            converged: true,
            iterations: 0,
        }
    }

    pub fn font_cluster(&self) -> FontColorCluster {
        FontColorCluster {
            centroid_projected: self.cluster.centroid_projected.clone(),
            centroid_rgb: self.cluster.centroid_rgb,
            radius: self.cluster.radius,
            member_count: 1,
            cf: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ica().validate()?;
        if self.cluster.centroid_projected.len() != self.unmixing.len() {
            return Err(Error::DimensionMismatch(format!(
                "cluster centroid has {} dims, model projects to {}",
                self.cluster.centroid_projected.len(),
                self.unmixing.len()
            )));
        }
        if !(self.cluster.radius >= 0.0) {
            return Err(Error::InvalidConfig(
                "font cluster radius must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text).map_err(|e| Error::schema(path, e))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("font model serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextRemovalConfig {
    /// Number of sample images used for discovery.
    pub samples: usize,
    /// Cap on pixels pooled from the OCR boxes of all samples.
    pub max_pixels: usize,
    pub seed: u64,
    pub components: usize,
    pub ica_tolerance: f64,
    pub ica_max_iterations: usize,
    /// BIRCH radius threshold as a fraction of the pooled projected std.
    pub birch_threshold_factor: f64,
    pub branching_factor: usize,
    pub merge_tolerance: f64,
    /// Projected-space match distance; defaults to 1.5 × cluster radius.
    pub color_tolerance: Option<f64>,
    pub dilate_iterations: u32,
    pub erode_iterations: u32,
    pub inpaint_max_passes: u32,
}

impl Default for TextRemovalConfig {
    fn default() -> Self {
        Self {
            samples: 3,
            max_pixels: 50_000,
            seed: 0,
            components: 3,
            ica_tolerance: 1e-4,
            ica_max_iterations: 200,
            birch_threshold_factor: 0.25,
            branching_factor: 50,
            merge_tolerance: DEFAULT_MERGE_TOLERANCE,
            color_tolerance: None,
            dilate_iterations: 2,
            erode_iterations: 1,
            inpaint_max_passes: DEFAULT_MAX_PASSES,
        }
    }
}

impl TextRemovalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.samples == 0 {
            return bad("text_removal.samples must be >= 1");
        }
        if self.max_pixels < 10 * self.components.max(1) {
            return bad("text_removal.max_pixels too small for the component count");
        }
        if self.components == 0 || self.components > 3 {
            return bad("text_removal.components must be in 1..=3");
        }
        if !(self.birch_threshold_factor > 0.0) {
            return bad("text_removal.birch_threshold_factor must be > 0");
        }
        if self.branching_factor < 2 {
            return bad("text_removal.branching_factor must be >= 2");
        }
        if !(self.merge_tolerance >= 0.0) {
            return bad("text_removal.merge_tolerance must be >= 0");
        }
        if matches!(self.color_tolerance, Some(t) if !(t >= 0.0)) {
            return bad("text_removal.color_tolerance must be >= 0");
        }
        Ok(())
    }
}

/// A sample image with its OCR boxes.
pub struct TextSample<'a> {
    pub image: &'a ImageBuffer,
    pub ocr: &'a [OcrBox],
}

#[derive(Debug, Clone)]
pub struct Discovery {
    pub model: FontModel,
    pub ica_converged: bool,
    /// Clusters shared by all samples, with their summed selection scores.
    pub candidates: Vec<(FontColorCluster, f64)>,
    pub pooled_pixels: usize,
}

/// Discovers the font color from the OCR boxes of a few sample images.
///
/// Samples without OCR boxes are skipped. Pixels inside the boxes are pooled
/// (subsampled to `max_pixels` with the configured seed), ICA is fitted on the
/// pool, each sample's projected pixels are clustered with BIRCH, colors not
/// shared across samples are dropped and the remaining cluster with the
/// highest OCR-box concentration is kept.
pub fn discover_font_model(
    samples: &[TextSample<'_>],
    config: &TextRemovalConfig,
) -> Result<Discovery> {
    config.validate()?;
    let used: Vec<&TextSample<'_>> = samples
        .iter()
        .filter(|s| !s.ocr.is_empty())
        .take(config.samples)
        .collect();
    if used.is_empty() {
        return Err(Error::InvalidConfig(
            "font discovery needs at least one image with OCR boxes".into(),
        ));
    }

    // Pixels of each sample lying inside any of its OCR boxes.
    let mut per_sample: Vec<Vec<[u8; 3]>> = Vec::with_capacity(used.len());
    for s in &used {
        validate_ocr(s.ocr, s.image.width(), s.image.height())?;
        let inside = Bitmap::from_fn(s.image.width(), s.image.height(), |x, y| {
            s.ocr.iter().any(|b| {
                b.bbox
                    .contains_point(f64::from(x) + 0.5, f64::from(y) + 0.5)
            })
        });
        per_sample.push(
            s.image
                .rgb_pixels()
                .zip(inside.as_slice())
                .filter(|(_, &i)| i)
                .map(|(p, _)| p)
                .collect(),
        );
    }

    let total: usize = per_sample.iter().map(Vec::len).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if total > config.max_pixels {
        let mut keep = sample(&mut rng, total, config.max_pixels).into_vec();
        keep.sort_unstable();
        let mut offset = 0;
        let mut k = 0;
        for pixels in per_sample.iter_mut() {
            let end = offset + pixels.len();
            let mut chosen = Vec::new();
            while k < keep.len() && keep[k] < end {
                chosen.push(pixels[keep[k] - offset]);
                k += 1;
            }
            offset = end;
            *pixels = chosen;
        }
    }
    let pooled: Vec<[u8; 3]> = per_sample.iter().flatten().copied().collect();
    if pooled.len() < 10 * config.components {
        return Err(Error::DegenerateData(format!(
            "only {} pixels inside OCR boxes",
            pooled.len()
        )));
    }

    let matrix = DMatrix::from_fn(pooled.len(), 3, |i, c| f64::from(pooled[i][c]));
    let ica_params = IcaParams {
        components: config.components,
        tolerance: config.ica_tolerance,
        max_iterations: config.ica_max_iterations,
        seed: config.seed,
    };
    let ica = fastica(&matrix, &ica_params)?;
    if !ica.converged {
        log::warn!(
            "FastICA stopped after {} iterations without converging",
            ica.iterations
        );
    }
    let projected = ica.transform(&matrix);
    let threshold = config.birch_threshold_factor * pooled_std(&projected);
    if !(threshold > 0.0) {
        return Err(Error::DegenerateData(
            "projected OCR pixels have zero spread".into(),
        ));
    }
    let birch = BirchParams {
        threshold,
        branching_factor: config.branching_factor,
    };

    let mut clusters_per_sample = Vec::with_capacity(per_sample.len());
    let mut row = 0;
    for pixels in &per_sample {
        if pixels.is_empty() {
            continue;
        }
        let rows = projected.rows(row, pixels.len()).into_owned();
        row += pixels.len();
        let subs = birch_cluster(&rows, &birch)?;
        clusters_per_sample.push(
            subs.iter()
                .map(|s| FontColorCluster::from_subcluster(s, pixels))
                .collect::<Vec<_>>(),
        );
    }
    let shared = reduce_across_samples(&clusters_per_sample, config.merge_tolerance)?;

    let mut totals = vec![0.0; shared.len()];
    let mut any = false;
    for s in &used {
        match clusters::cluster_scores(&shared, &ica, s.image, s.ocr, config.color_tolerance) {
            Ok(scores) => {
                any = true;
                for (t, v) in totals.iter_mut().zip(scores) {
                    *t += v;
                }
            }
            Err(Error::AllZeroMasks) => {}
            Err(e) => return Err(e),
        }
    }
    if !any {
        return Err(Error::AllZeroMasks);
    }
    let best = clusters::best_index(&shared, &totals);
    log::info!(
        "font color cluster rgb={:?} radius={:.4} from {} shared clusters",
        shared[best].centroid_rgb,
        shared[best].radius,
        shared.len()
    );
    Ok(Discovery {
        model: FontModel::new(&ica, &shared[best]),
        ica_converged: ica.converged,
        candidates: shared.into_iter().zip(totals).collect(),
        pooled_pixels: pooled.len(),
    })
}

/// Root mean of the per-column variances.
fn pooled_std(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows() as f64;
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let var: f64 = m
        .column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / m.ncols() as f64;
    var.sqrt()
}

#[derive(Debug, Clone)]
pub struct TextRemoval {
    pub raw_mask: Bitmap,
    pub mask: Bitmap,
    pub inpainted: Inpainted,
}

/// Text mask for one image: cluster mask followed by morphological cleanup.
pub fn text_mask(
    image: &ImageBuffer,
    model: &FontModel,
    config: &TextRemovalConfig,
) -> (Bitmap, Bitmap) {
    let raw = mask_from_cluster(
        image,
        &model.ica(),
        &model.font_cluster(),
        config.color_tolerance,
    );
    let cleaned = erode(
        &dilate(&raw, config.dilate_iterations),
        config.erode_iterations,
    );
    (raw, cleaned)
}

/// Masks and inpaints one image with a discovered font model.
pub fn remove_text(
    image: &ImageBuffer,
    model: &FontModel,
    config: &TextRemovalConfig,
) -> Result<TextRemoval> {
    let (raw_mask, mask) = text_mask(image, model, config);
    let inpainted = naive_inpaint(&image.to_rgb(), &mask, config.inpaint_max_passes)?;
    Ok(TextRemoval {
        raw_mask,
        mask,
        inpainted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_examples() {
        let b = BoundingBox::new(2, 2, 6, 6).unwrap();
        assert_eq!(text_coverage(&b, &Bitmap::new(10, 10)), 0.0);
        assert_eq!(
            text_coverage(&b, &Bitmap::from_fn(10, 10, |_, _| true)),
            1.0
        );
        let half = Bitmap::from_fn(10, 10, |x, _| x < 4);
        assert_eq!(text_coverage(&b, &half), 0.5);
    }

    #[test]
    fn ocr_json_shape() {
        let boxes: Vec<OcrBox> = serde_json::from_str(
            r#"[{"bbox":[1,2,30,12],"confidence":0.8},{"bbox":[0,0,4,4],"confidence":null}]"#,
        )
        .unwrap();
        assert_eq!(boxes[0].bbox.to_array(), [1, 2, 30, 12]);
        assert_eq!(boxes[1].confidence, None);
        assert!(validate_ocr(&boxes, 30, 12).is_ok());
        assert!(validate_ocr(&boxes, 20, 12).is_err());
    }

    /// Light background with bands of text-colored strokes inside OCR boxes.
    fn text_image(seed: u32, font: [u8; 3]) -> (ImageBuffer, Vec<OcrBox>) {
        let (w, h) = (160, 90);
        let mut img = ImageBuffer::filled_rgb(w, h, [230, 220, 200]);
        for y in 0..h {
            for x in 0..w {
                if (x / 40 + y / 30 + seed) % 3 == 0 {
                    img.set_rgb(x, y, [180, 210, 240]);
                }
            }
        }
        let mut boxes = Vec::new();
        for (i, y0) in [10u32, 40, 70].into_iter().enumerate() {
            let x0 = 10 + 15 * ((i as u32 + seed) % 3);
            boxes.push(OcrBox {
                bbox: BoundingBox::new(x0, y0, x0 + 90, y0 + 12).unwrap(),
                confidence: Some(0.9),
            });
            for y in y0 + 2..y0 + 10 {
                for x in x0 + 2..x0 + 88 {
                    if (x + y * 3 + seed) % 4 < 2 {
                        img.set_rgb(x, y, font);
                    }
                }
            }
        }
        (img, boxes)
    }

    #[test]
    fn discovers_font_color_and_removes_it() {
        let font = [64, 32, 96];
        let data: Vec<_> = (0..3).map(|s| text_image(s, font)).collect();
        let samples: Vec<TextSample<'_>> = data
            .iter()
            .map(|(image, ocr)| TextSample { image, ocr })
            .collect();
        let found = discover_font_model(&samples, &TextRemovalConfig::default()).unwrap();
        let rgb = found.model.cluster.centroid_rgb;
        assert!(
            clusters::rgb_distance(rgb, font.map(f64::from)) < DEFAULT_MERGE_TOLERANCE,
            "{rgb:?}"
        );

        let json = serde_json::to_string(&found.model).unwrap();
        let back: FontModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, found.model);

        let (img, _) = &data[0];
        let out = remove_text(img, &found.model, &TextRemovalConfig::default()).unwrap();
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.rgb(x, y) == font {
                    assert!(out.raw_mask.get(x, y));
                }
                assert_ne!(out.inpainted.image.rgb(x, y), font);
            }
        }
    }

    #[test]
    fn discovery_requires_ocr_boxes() {
        let img = ImageBuffer::filled_rgb(10, 10, [1, 2, 3]);
        let s = [TextSample {
            image: &img,
            ocr: &[],
        }];
        assert!(matches!(
            discover_font_model(&s, &TextRemovalConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }
}
