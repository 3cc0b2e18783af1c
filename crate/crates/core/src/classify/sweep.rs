//! Precision/recall as a function of the metric threshold.

use serde::{Deserialize, Serialize};

use super::{nms, MatchResult};
use crate::classify::Detection;
use crate::config::OverlapMode;
use crate::eval::{evaluate_image, GroundTruthEntry, MatchRule, Tally};

/// Unthresholded best matches of one image, with its ground truth.
#[derive(Debug, Clone)]
pub struct SweepImage {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub candidates: Vec<MatchResult>,
    pub gt: Vec<GroundTruthEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub misclassification_rate: f64,
}

/// Settings shared by every threshold of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepSettings {
    pub nms_overlap: f64,
    pub overlap_mode: OverlapMode,
    pub rule: MatchRule,
}

fn evaluate_at(images: &[SweepImage], threshold: f64, s: &SweepSettings) -> SweepRow {
    let mut tally = Tally::default();
    for img in images {
        let accepted: Vec<MatchResult> = img
            .candidates
            .iter()
            .filter(|m| m.score <= threshold)
            .cloned()
            .collect();
        let dets: Vec<Detection> = nms(&accepted, s.nms_overlap, s.overlap_mode)
            .into_iter()
            .map(|m| Detection {
                class_id: m.class_id,
                score: m.score,
                bbox: m.bbox,
                metric: String::new(),
                image_id: img.image_id.clone(),
            })
            .collect();
        let (report, kept) = evaluate_image(&dets, &img.gt, img.width, img.height, s.rule);
        tally.add_image(&report, &dets, &kept);
    }
    let m = tally.metrics();
    SweepRow {
        threshold,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1(),
        misclassification_rate: m.misclassification_rate,
    }
}

/// Metrics after keeping matches with `score <= threshold`, then NMS.
pub fn sweep_threshold(
    images: &[SweepImage],
    thresholds: &[f64],
    settings: &SweepSettings,
) -> Vec<SweepRow> {
    thresholds
        .iter()
        .map(|&t| evaluate_at(images, t, settings))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Recommended dissimilarity threshold.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Metrics at every distinct candidate score.
    pub sweep: Vec<SweepRow>,
}

/// Picks the threshold with the best F1.
///
/// Metrics only change at candidate scores, so each distinct score is
/// evaluated. Among runs of consecutive scores reaching the best F1, the run
/// spanning the widest threshold range wins (lower run on ties), and the
/// recommendation is the middle of the threshold range giving that F1.
pub fn calibrate(images: &[SweepImage], settings: &SweepSettings) -> Option<Calibration> {
    let mut scores: Vec<f64> = images
        .iter()
        .flat_map(|i| i.candidates.iter().map(|m| m.score))
        .filter(|s| s.is_finite())
        .collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    if scores.is_empty() {
        return None;
    }
    let sweep = sweep_threshold(images, &scores, settings);
    let best_f1 = sweep.iter().map(|r| r.f1).fold(f64::NEG_INFINITY, f64::max);

    let mut best: Option<(f64, f64, usize)> = None; // (gap, threshold, row)
    let mut i = 0;
    while i < sweep.len() {
        if sweep[i].f1 != best_f1 {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < sweep.len() && sweep[i + 1].f1 == best_f1 {
            i += 1;
        }
        let lo = scores[start];
        let (gap, threshold) = match scores.get(i + 1) {
            Some(&next) => (next - lo, lo + (next - lo) / 2.0),
            None => {
                let span = (scores[i] - lo).max(scores[i].abs() * 0.1).max(1e-6);
                (f64::INFINITY, scores[i] + span / 2.0)
            }
        };
        if best.is_none_or(|(g, _, _)| gap > g) {
            best = Some((gap, threshold, start));
        }
        i += 1;
    }
    let (_, threshold, row) = best?;
    let r = sweep[row];
    Some(Calibration {
        threshold,
        precision: r.precision,
        recall: r.recall,
        f1: r.f1,
        sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    fn b(x: u32) -> BoundingBox {
        BoundingBox::new(x, 10, x + 20, 30).unwrap()
    }

    fn fixture() -> Vec<SweepImage> {
        let m = |pid, class_id, score, x| MatchResult {
            proposal_id: pid,
            class_id,
            score,
            bbox: b(x),
            correlation: 1.0,
        };
        vec![SweepImage {
            image_id: "a".into(),
            width: 400,
            height: 100,
            // Correct icons score 0.1-0.3, the wrong-class one 0.5, a
            // background blob 0.8 and a near-duplicate 0.35.
            candidates: vec![
                m(0, 1, 0.1, 10),
                m(1, 2, 0.2, 50),
                m(2, 3, 0.3, 90),
                m(3, 9, 0.5, 130),
                m(4, 4, 0.8, 300),
                m(5, 1, 0.35, 11),
            ],
            gt: vec![
                GroundTruthEntry {
                    class_id: 1,
                    bbox: b(10),
                },
                GroundTruthEntry {
                    class_id: 2,
                    bbox: b(50),
                },
                GroundTruthEntry {
                    class_id: 3,
                    bbox: b(90),
                },
                GroundTruthEntry {
                    class_id: 4,
                    bbox: b(130),
                },
            ],
        }]
    }

    fn settings() -> SweepSettings {
        SweepSettings {
            nms_overlap: 0.1,
            overlap_mode: OverlapMode::Iou,
            rule: MatchRule::Mutual,
        }
    }

    #[test]
    fn sweep_endpoints() {
        let rows = sweep_threshold(&fixture(), &[0.05, 10.0], &settings());
        assert_eq!(rows[0].recall, 0.0);
        assert_eq!(rows[1].recall, 0.75);
        assert_eq!(rows[1].precision, 3.0 / 5.0);
    }

    #[test]
    fn recall_is_monotone_in_threshold() {
        let ts: Vec<f64> = (0..100).map(|i| f64::from(i) / 100.0).collect();
        let rows = sweep_threshold(&fixture(), &ts, &settings());
        for w in rows.windows(2) {
            assert!(w[0].recall <= w[1].recall);
        }
    }

    #[test]
    fn plateau_past_duplicates() {
        // The 0.35 duplicate is always suppressed by the 0.1 match, so the
        // metrics at 0.3 and 0.4 agree.
        let rows = sweep_threshold(&fixture(), &[0.3, 0.4], &settings());
        assert_eq!(
            (rows[0].precision, rows[0].recall),
            (rows[1].precision, rows[1].recall)
        );
    }

    #[test]
    fn calibrate_picks_middle_of_best_gap() {
        let c = calibrate(&fixture(), &settings()).unwrap();
        // Best F1 with all three correct and nothing else: thresholds in [0.3, 0.5).
        assert_eq!((c.precision, c.recall), (1.0, 0.75));
        assert!((c.threshold - 0.4).abs() < 1e-12, "{}", c.threshold);
    }
}
