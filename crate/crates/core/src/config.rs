use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which similarity family scores (proposal, template) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    /// Pairwise perceptual distance, lower is better.
    #[default]
    Perceptual,
    /// Cosine similarity of feature embeddings, converted to `1 - s`.
    Embedding,
}

impl MetricMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricMode::Perceptual => "perceptual",
            MetricMode::Embedding => "embedding",
        }
    }
}

/// Overlap measure used by non-maximum suppression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMode {
    #[default]
    Iou,
    Coverage,
}

/// Pixels contributing to a proposal's color histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HistogramRegion {
    /// Only the segment-mask pixels.
    #[default]
    Masked,
    /// Every pixel of the bounding-box crop.
    FullBox,
}

pub const DEFAULT_PERCEPTUAL_THRESHOLD: f64 = 0.7;
/// Cosine-similarity threshold for embedding mode, in similarity units.
pub const DEFAULT_EMBEDDING_SIMILARITY: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub correlation_threshold: f64,
    pub shortlist_factor: f64,
    /// Perceptual mode: maximum distance. Embedding mode: minimum cosine
    /// similarity. `None` selects the mode default.
    pub metric_threshold: Option<f64>,
    pub nms_overlap: f64,
    pub overlap_mode: OverlapMode,
    pub area_ratio_bounds: (f64, f64),
    pub histogram_bins_per_channel: u32,
    pub histogram_region: HistogramRegion,
    pub grid_points_long_side: u32,
    /// Drop proposals whose area is far from every template's area.
    pub area_prefilter: bool,
    /// Withdraw proposals by histogram correlation and shortlist templates.
    pub histogram_filter: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            correlation_threshold: 0.5,
            shortlist_factor: 0.9,
            metric_threshold: None,
            nms_overlap: 0.10,
            overlap_mode: OverlapMode::Iou,
            area_ratio_bounds: (0.25, 2.0),
            histogram_bins_per_channel: 8,
            histogram_region: HistogramRegion::Masked,
            grid_points_long_side: 64,
            area_prefilter: true,
            histogram_filter: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(-1.0..=1.0).contains(&self.correlation_threshold) {
            return bad(format!(
                "correlation_threshold {} outside [-1, 1]",
                self.correlation_threshold
            ));
        }
        if !(self.shortlist_factor > 0.0 && self.shortlist_factor <= 1.0) {
            return bad(format!(
                "shortlist_factor {} outside (0, 1]",
                self.shortlist_factor
            ));
        }
        if !(self.nms_overlap > 0.0 && self.nms_overlap < 1.0) {
            return bad(format!("nms_overlap {} outside (0, 1)", self.nms_overlap));
        }
        let (lo, hi) = self.area_ratio_bounds;
        if !(lo >= 0.0 && lo < hi) {
            return bad(format!(
                "area_ratio_bounds ({lo}, {hi}) need 0 <= low < high"
            ));
        }
        if !(1..=256).contains(&self.histogram_bins_per_channel) {
            return bad(format!(
                "histogram_bins_per_channel {} outside 1..=256",
                self.histogram_bins_per_channel
            ));
        }
        if self.grid_points_long_side < 2 {
            return bad("grid_points_long_side must be at least 2".into());
        }
        if let Some(t) = self.metric_threshold {
            if !t.is_finite() {
                return bad(format!("metric_threshold {t} is not finite"));
            }
        }
        Ok(())
    }

    /// Threshold on the lower-is-better dissimilarity scale for `mode`.
    ///
    /// Embedding thresholds are configured as cosine similarities and
    /// converted with `1 - s`.
    pub fn dissimilarity_threshold(&self, mode: MetricMode) -> f64 {
        match mode {
            MetricMode::Perceptual => self
                .metric_threshold
                .unwrap_or(DEFAULT_PERCEPTUAL_THRESHOLD),
            MetricMode::Embedding => {
                1.0 - self
                    .metric_threshold
                    .unwrap_or(DEFAULT_EMBEDDING_SIMILARITY)
            }
        }
    }
}
