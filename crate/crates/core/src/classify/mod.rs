//! Pair scoring, per-proposal classification and non-maximum suppression.

pub mod io;
pub mod metric;
pub mod preprocess;
pub mod sweep;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::OverlapMode;
use crate::error::{Error, Result};
use crate::geometry::{coverage, iou, BoundingBox};
use crate::histfilter::{Candidate, TemplateSet};
use crate::proposals::Proposal;

pub use io::{Detection, FeatureTable, PairScoreFile};
pub use metric::{
    embedding_dissimilarity, minmax_scale, patch_dissimilarity, reference_extract, FeatureStats,
};
pub use preprocess::{preprocess_crop, Tensor};
pub use sweep::{calibrate, sweep_threshold, Calibration, SweepRow};

/// Best template for a proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub proposal_id: u32,
    pub class_id: u32,
    /// Dissimilarity, lower is better.
    pub score: f64,
    pub bbox: BoundingBox,
    /// Histogram correlation with the chosen template.
    pub correlation: f64,
}

/// Scores (proposal, template) pairs on the lower-is-better scale.
pub trait PairScorer: Send + Sync {
    fn metric_name(&self) -> &str;

    /// One score per entry of `candidates`, in order. Failures are returned
    /// per pair so callers can skip them.
    fn score_candidates(
        &self,
        image_id: &str,
        proposal: &Proposal,
        candidates: &[Candidate],
    ) -> Vec<Result<f64>>;
}

/// Built-in pairwise metric: mean absolute difference of normalized tensors.
pub struct PatchScorer {
    templates: Vec<Tensor>,
}

impl PatchScorer {
    pub fn new(templates: &TemplateSet) -> Self {
        Self {
            templates: templates
                .entries()
                .iter()
                .map(|t| preprocess_crop(&t.image))
                .collect(),
        }
    }
}

impl PairScorer for PatchScorer {
    fn metric_name(&self) -> &str {
        "patch"
    }

    fn score_candidates(
        &self,
        _image_id: &str,
        proposal: &Proposal,
        candidates: &[Candidate],
    ) -> Vec<Result<f64>> {
        if candidates.is_empty() {
            return Vec::new();
        }
        let t = preprocess_crop(&proposal.crop);
        candidates
            .iter()
            .map(|c| Ok(metric::tensor_dissimilarity(&t, &self.templates[c.index])))
            .collect()
    }
}

/// Where proposal embeddings come from.
pub enum FeatureSource {
    /// Computed in-process with the reference extractor.
    Reference,
    /// Precomputed rows keyed by `"<image_id>/<proposal_id>"`.
    Table(HashMap<String, Vec<f32>>),
}

/// Cosine dissimilarity of features min-max scaled with template statistics.
pub struct EmbeddingScorer {
    name: String,
    stats: FeatureStats,
    templates: Vec<Vec<f64>>,
    source: FeatureSource,
}

impl EmbeddingScorer {
    /// Reference features for both templates and proposals.
    pub fn reference(templates: &TemplateSet) -> Result<Self> {
        let raw: Vec<Vec<f64>> = templates
            .entries()
            .iter()
            .map(|t| reference_extract(&t.image))
            .collect();
        Self::from_template_features("reference", raw, FeatureSource::Reference)
    }

    /// Features from an external extractor. Template rows are looked up as
    /// `"class/<class_id>"` in `table`.
    pub fn from_table(
        templates: &TemplateSet,
        table: HashMap<String, Vec<f32>>,
        origin: &Path,
    ) -> Result<Self> {
        let mut raw = Vec::with_capacity(templates.len());
        for t in templates.entries() {
            let id = io::template_row_id(t.class_id);
            let row = table.get(&id).ok_or_else(|| {
                Error::schema(origin, format!("feature file has no row for template {id}"))
            })?;
            raw.push(row.iter().map(|&v| f64::from(v)).collect());
        }
        Self::from_template_features("embedding", raw, FeatureSource::Table(table))
    }

    fn from_template_features(
        name: &str,
        raw: Vec<Vec<f64>>,
        source: FeatureSource,
    ) -> Result<Self> {
        let stats = FeatureStats::from_features(&raw)?;
        let templates = raw
            .iter()
            .map(|f| minmax_scale(f, &stats))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.to_string(),
            stats,
            templates,
            source,
        })
    }

    pub fn stats(&self) -> &FeatureStats {
        &self.stats
    }

    fn proposal_features(&self, image_id: &str, proposal: &Proposal) -> Result<Vec<f64>> {
        let raw = match &self.source {
            FeatureSource::Reference => reference_extract(&proposal.crop),
            FeatureSource::Table(table) => table
                .get(&io::proposal_row_id(image_id, proposal.id))
                .ok_or(Error::MissingScore {
                    proposal_id: proposal.id,
                    class_id: 0,
                })?
                .iter()
                .map(|&v| f64::from(v))
                .collect(),
        };
        minmax_scale(&raw, &self.stats)
    }
}

impl PairScorer for EmbeddingScorer {
    fn metric_name(&self) -> &str {
        &self.name
    }

    fn score_candidates(
        &self,
        image_id: &str,
        proposal: &Proposal,
        candidates: &[Candidate],
    ) -> Vec<Result<f64>> {
        if candidates.is_empty() {
            return Vec::new();
        }
        match self.proposal_features(image_id, proposal) {
            Ok(f) => candidates
                .iter()
                .map(|c| embedding_dissimilarity(&f, &self.templates[c.index]))
                .collect(),
            Err(e) => candidates
                .iter()
                .map(|c| {
                    Err(match &e {
                        Error::MissingScore { proposal_id, .. } => Error::MissingScore {
                            proposal_id: *proposal_id,
                            class_id: c.class_id,
                        },
                        other => Error::DimensionMismatch(other.to_string()),
                    })
                })
                .collect(),
        }
    }
}

/// Scores read from external pair-score files, one table per image id.
pub struct PairTableScorer {
    name: String,
    tables: HashMap<String, HashMap<(u32, u32), f64>>,
}

impl PairTableScorer {
    pub fn new(name: impl Into<String>, tables: HashMap<String, HashMap<(u32, u32), f64>>) -> Self {
        Self {
            name: name.into(),
            tables,
        }
    }
}

impl PairScorer for PairTableScorer {
    fn metric_name(&self) -> &str {
        &self.name
    }

    fn score_candidates(
        &self,
        image_id: &str,
        proposal: &Proposal,
        candidates: &[Candidate],
    ) -> Vec<Result<f64>> {
        let table = self.tables.get(image_id);
        candidates
            .iter()
            .map(|c| {
                table
                    .and_then(|t| t.get(&(proposal.id, c.class_id)).copied())
                    .ok_or(Error::MissingScore {
                        proposal_id: proposal.id,
                        class_id: c.class_id,
                    })
            })
            .collect()
    }
}

/// Outcome of scoring one proposal's shortlist.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    /// Best-scoring template regardless of the threshold.
    pub best: Option<MatchResult>,
    pub failed_pairs: usize,
}

impl Classification {
    /// The best match if it passes `threshold`.
    pub fn accepted(&self, threshold: f64) -> Option<&MatchResult> {
        self.best.as_ref().filter(|m| m.score <= threshold)
    }
}

/// Picks the lowest score among the shortlist.
///
/// Ties go to the higher histogram correlation, then the lower class id.
/// Failed pairs are skipped and counted.
pub fn classify_proposal(
    proposal: &Proposal,
    candidates: &[Candidate],
    scores: Vec<Result<f64>>,
) -> Classification {
    let mut failed_pairs = 0;
    let mut best: Option<(&Candidate, f64)> = None;
    for (c, s) in candidates.iter().zip(scores) {
        let s = match s {
            Ok(s) if s.is_finite() => s,
            Ok(_) | Err(_) => {
                failed_pairs += 1;
                continue;
            }
        };
        let better = match best {
            None => true,
            Some((b, bs)) => {
                s.total_cmp(&bs)
                    .then(b.correlation.total_cmp(&c.correlation))
                    .then(c.class_id.cmp(&b.class_id))
                    == Ordering::Less
            }
        };
        if better {
            best = Some((c, s));
        }
    }
    Classification {
        best: best.map(|(c, score)| MatchResult {
            proposal_id: proposal.id,
            class_id: c.class_id,
            score,
            bbox: proposal.bbox,
            correlation: c.correlation,
        }),
        failed_pairs,
    }
}

pub fn overlap(a: &BoundingBox, b: &BoundingBox, mode: OverlapMode) -> f64 {
    match mode {
        OverlapMode::Iou => iou(a, b),
        OverlapMode::Coverage => coverage(a, b),
    }
}

/// Canonical order: score, class id, then box coordinates.
pub fn match_order(a: &MatchResult, b: &MatchResult) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.to_array().cmp(&b.bbox.to_array()))
        .then(a.proposal_id.cmp(&b.proposal_id))
}

/// Greedy suppression: best score first, a match is kept when its overlap
/// with every kept match is at most `overlap_threshold`.
pub fn nms(matches: &[MatchResult], overlap_threshold: f64, mode: OverlapMode) -> Vec<MatchResult> {
    let mut sorted: Vec<&MatchResult> = matches.iter().collect();
    sorted.sort_by(|a, b| match_order(a, b));
    let mut kept: Vec<MatchResult> = Vec::new();
    for m in sorted {
        if kept
            .iter()
            .all(|k| overlap(&k.bbox, &m.bbox, mode) <= overlap_threshold)
        {
            kept.push(m.clone());
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageBuffer;
    use crate::mask::Bitmap;
    use proptest::prelude::*;

    fn proposal() -> Proposal {
        let img = ImageBuffer::filled_rgb(10, 10, [1, 2, 3]);
        let mask = Bitmap::from_fn(10, 10, |x, y| (2..6).contains(&x) && (2..6).contains(&y))
            .to_segment_mask();
        Proposal::new(7, mask, &img, None).unwrap()
    }

    fn cand(class_id: u32, correlation: f64) -> Candidate {
        Candidate {
            index: class_id as usize,
            class_id,
            correlation,
        }
    }

    #[test]
    fn picks_argmin() {
        let p = proposal();
        let c = classify_proposal(&p, &[cand(0, 0.9), cand(1, 0.8)], vec![Ok(0.12), Ok(0.30)]);
        let best = c.best.as_ref().unwrap();
        assert_eq!((best.class_id, best.score), (0, 0.12));
        assert!(c.accepted(0.7).is_some());
        let c = classify_proposal(&p, &[cand(0, 0.9), cand(1, 0.8)], vec![Ok(0.8), Ok(0.9)]);
        assert!(c.accepted(0.7).is_none());
    }

    #[test]
    fn ties_prefer_correlation_then_class() {
        let p = proposal();
        let c = classify_proposal(&p, &[cand(3, 0.7), cand(5, 0.9)], vec![Ok(0.2), Ok(0.2)]);
        assert_eq!(c.best.unwrap().class_id, 5);
        let c = classify_proposal(&p, &[cand(5, 0.9), cand(3, 0.9)], vec![Ok(0.2), Ok(0.2)]);
        assert_eq!(c.best.unwrap().class_id, 3);
    }

    #[test]
    fn failed_pairs_are_skipped() {
        let p = proposal();
        let c = classify_proposal(
            &p,
            &[cand(0, 0.9), cand(1, 0.8), cand(2, 0.7)],
            vec![Err(Error::ZeroVector), Ok(0.5), Ok(f64::NAN)],
        );
        assert_eq!(c.failed_pairs, 2);
        assert_eq!(c.best.unwrap().class_id, 1);
    }

    #[test]
    fn monotone_transform_keeps_argmin() {
        let p = proposal();
        let cands = [cand(0, 0.9), cand(1, 0.8), cand(2, 0.95)];
        let raw = [0.4, 0.1, 0.3];
        let a = classify_proposal(&p, &cands, raw.iter().map(|&s| Ok(s)).collect());
        let b = classify_proposal(
            &p,
            &cands,
            raw.iter().map(|&s| Ok((3.0 * s).exp())).collect(),
        );
        assert_eq!(a.best.unwrap().class_id, b.best.as_ref().unwrap().class_id);
        assert!(b.accepted((3.0f64 * 0.2).exp()).is_some());
    }

    fn m(class_id: u32, score: f64, b: [u32; 4]) -> MatchResult {
        MatchResult {
            proposal_id: 0,
            class_id,
            score,
            bbox: BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            correlation: 1.0,
        }
    }

    #[test]
    fn nms_examples() {
        // IoU of these two is 0.5.
        let a = m(0, 0.2, [0, 0, 30, 10]);
        let b = m(1, 0.3, [10, 0, 40, 10]);
        assert!((iou(&a.bbox, &b.bbox) - 0.5).abs() < 1e-12);
        assert_eq!(nms(&[b.clone(), a.clone()], 0.1, OverlapMode::Iou), vec![a]);
        // IoU 5 / 100 = 0.05 stays below 0.10.
        let c = m(0, 0.2, [0, 0, 10, 10]);
        let d = m(1, 0.3, [0, 0, 10, 1]);
        let d = MatchResult {
            bbox: BoundingBox::new(9, 0, 19, 10).unwrap(),
            ..d
        };
        assert!(iou(&c.bbox, &d.bbox) < 0.1);
        assert_eq!(nms(&[c, d], 0.1, OverlapMode::Iou).len(), 2);
    }

    #[test]
    fn coverage_mode_suppresses_nested() {
        let outer = m(0, 0.2, [0, 0, 40, 40]);
        let inner = m(1, 0.3, [5, 5, 10, 10]);
        assert_eq!(
            nms(&[outer.clone(), inner.clone()], 0.1, OverlapMode::Iou).len(),
            2
        );
        assert_eq!(nms(&[outer, inner], 0.1, OverlapMode::Coverage).len(), 1);
    }

    fn arb_match() -> impl Strategy<Value = MatchResult> {
        (0u32..4, 0u32..20, 0u32..60, 0u32..60, 1u32..25, 1u32..25).prop_map(
            |(c, s, x, y, w, h)| MatchResult {
                proposal_id: 0,
                class_id: c,
                score: f64::from(s) / 20.0,
                bbox: BoundingBox::from_origin_size(x, y, w, h).unwrap(),
                correlation: 1.0,
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn nms_idempotent_subset_and_separated(
            ms in proptest::collection::vec(arb_match(), 0..25),
            thr in 0.01f64..0.9,
            cov in any::<bool>(),
        ) {
            let mode = if cov { OverlapMode::Coverage } else { OverlapMode::Iou };
            let once = nms(&ms, thr, mode);
            prop_assert_eq!(&nms(&once, thr, mode), &once);
            for k in &once {
                prop_assert!(ms.contains(k));
            }
            for (i, a) in once.iter().enumerate() {
                for b in &once[i + 1..] {
                    prop_assert!(overlap(&a.bbox, &b.bbox, mode) <= thr);
                }
            }
        }
    }
}
