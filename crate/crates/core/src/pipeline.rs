//! Per-image detection: area prefilter, histogram shortlist, scoring,
//! thresholding and non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::classify::{classify_proposal, nms, Detection, MatchResult, PairScorer};
use crate::config::{HistogramRegion, PipelineConfig};
use crate::eval::timing::{Clock, Stage, StageLog};
use crate::histfilter::{
    all_candidates, area_prefilter, compute_histogram, shortlist, TemplateSet,
};
use crate::proposals::Proposal;

/// What happened to one proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalTrace {
    pub proposal_id: u32,
    pub area_rejected: bool,
    /// Best template correlation, when a histogram was computed.
    pub best_correlation: Option<f64>,
    /// Withdrawn by the correlation threshold or an empty region.
    pub withdrawn: bool,
    pub pairs_scored: usize,
    pub failed_pairs: usize,
    /// Best match regardless of the metric threshold.
    pub best: Option<MatchResult>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectStats {
    pub images: u64,
    pub proposals: u64,
    pub area_rejected: u64,
    pub withdrawn: u64,
    pub pairs_scored: u64,
    pub failed_pairs: u64,
    pub detections: u64,
}

impl DetectStats {
    pub fn merge(&mut self, o: &DetectStats) {
        self.images += o.images;
        self.proposals += o.proposals;
        self.area_rejected += o.area_rejected;
        self.withdrawn += o.withdrawn;
        self.pairs_scored += o.pairs_scored;
        self.failed_pairs += o.failed_pairs;
        self.detections += o.detections;
    }
}

#[derive(Debug, Clone)]
pub struct ImageDetections {
    pub image_id: String,
    pub traces: Vec<ProposalTrace>,
    pub detections: Vec<Detection>,
    pub log: StageLog,
}

impl ImageDetections {
    /// Unthresholded best match of every scored proposal.
    pub fn candidates(&self) -> Vec<MatchResult> {
        self.traces.iter().filter_map(|t| t.best.clone()).collect()
    }

    pub fn stats(&self) -> DetectStats {
        let mut s = DetectStats {
            images: 1,
            proposals: self.traces.len() as u64,
            ..Default::default()
        };
        for t in &self.traces {
            s.area_rejected += u64::from(t.area_rejected);
            s.withdrawn += u64::from(t.withdrawn);
            s.pairs_scored += t.pairs_scored as u64;
            s.failed_pairs += t.failed_pairs as u64;
        }
        s.detections = self.detections.len() as u64;
        s
    }
}

pub struct Detector<'a> {
    pub config: &'a PipelineConfig,
    pub templates: &'a TemplateSet,
    pub scorer: &'a dyn PairScorer,
    /// Maximum accepted dissimilarity.
    pub threshold: f64,
}

impl Detector<'_> {
    fn trace(
        &self,
        image_id: &str,
        p: &Proposal,
        clock: &dyn Clock,
        log: &mut StageLog,
    ) -> ProposalTrace {
        let cfg = self.config;
        let templates = self.templates.entries();
        let mut trace = ProposalTrace {
            proposal_id: p.id,
            area_rejected: false,
            best_correlation: None,
            withdrawn: false,
            pairs_scored: 0,
            failed_pairs: 0,
            best: None,
        };
        let candidates = log.time(clock, Stage::Histogram, || {
            if cfg.area_prefilter && !area_prefilter(p.area(), templates, cfg.area_ratio_bounds) {
                trace.area_rejected = true;
                return Vec::new();
            }
            if !cfg.histogram_filter {
                return all_candidates(None, templates);
            }
            let mask = match cfg.histogram_region {
                HistogramRegion::Masked => Some(&p.local_mask),
                HistogramRegion::FullBox => None,
            };
            let Ok(hist) = compute_histogram(&p.crop, mask, cfg.histogram_bins_per_channel) else {
                trace.withdrawn = true;
                return Vec::new();
            };
            let list = shortlist(
                &hist,
                templates,
                cfg.correlation_threshold,
                cfg.shortlist_factor,
            );
            trace.best_correlation = Some(match list.first() {
                Some(c) => c.correlation,
                None => all_candidates(Some(&hist), templates)
                    .iter()
                    .map(|c| c.correlation)
                    .fold(f64::NEG_INFINITY, f64::max),
            });
            trace.withdrawn = list.is_empty();
            list
        });
        if candidates.is_empty() {
            return trace;
        }
        let c = log.time(clock, Stage::Classification, || {
            let scores = self.scorer.score_candidates(image_id, p, &candidates);
            classify_proposal(p, &candidates, scores)
        });
        trace.pairs_scored = candidates.len();
        trace.failed_pairs = c.failed_pairs;
        trace.best = c.best;
        trace
    }

    /// Runs every stage on one image's proposals.
    pub fn detect(
        &self,
        image_id: &str,
        proposals: &[Proposal],
        clock: &dyn Clock,
    ) -> ImageDetections {
        let mut log = StageLog {
            images: 1,
            icon_proposals: proposals.len() as u64,
            ..Default::default()
        };
        let traces: Vec<ProposalTrace> = proposals
            .iter()
            .map(|p| self.trace(image_id, p, clock, &mut log))
            .collect();
        let failed: usize = traces.iter().map(|t| t.failed_pairs).sum();
        if failed > 0 {
            log::warn!("{image_id}: {failed} pair scores unavailable, skipped");
        }
        let accepted: Vec<MatchResult> = traces
            .iter()
            .filter_map(|t| t.best.clone())
            .filter(|m| m.score <= self.threshold)
            .collect();
        let kept = log.time(clock, Stage::Nms, || {
            nms(&accepted, self.config.nms_overlap, self.config.overlap_mode)
        });
        let metric = self.scorer.metric_name().to_string();
        let detections = kept
            .into_iter()
            .map(|m| Detection {
                class_id: m.class_id,
                score: m.score,
                bbox: m.bbox,
                metric: metric.clone(),
                image_id: image_id.to_string(),
            })
            .collect();
        ImageDetections {
            image_id: image_id.to_string(),
            traces,
            detections,
            log,
        }
    }
}
