//! Detection evaluation: border filtering, midpoint matching and metrics.

pub mod coverage;
pub mod timing;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::Detection;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

pub use coverage::{coverage_report, CoverageBin, CoverageReport};
pub use timing::{collect_timings, Clock, MockClock, Stage, StageLog, SystemClock, TimingReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub class_id: u32,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    pub entries: Vec<GroundTruthEntry>,
}

impl GroundTruth {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("ground truth serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Drops entries whose box touches the image border. Returns the kept
/// entries with their original indices, and the excluded count.
pub fn filter_border_gt(
    entries: &[GroundTruthEntry],
    width: u32,
    height: u32,
) -> (Vec<(usize, GroundTruthEntry)>, usize) {
    let kept: Vec<_> = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.bbox.touches_border(width, height))
        .map(|(i, e)| (i, e.clone()))
        .collect();
    let excluded = entries.len() - kept.len();
    (kept, excluded)
}

/// When a detection and a ground-truth box are considered the same object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    /// Each box contains the other's midpoint.
    #[default]
    Mutual,
    /// The detection midpoint lies in the ground-truth box.
    DetectionInGt,
}

impl MatchRule {
    pub fn matches(&self, det: &BoundingBox, gt: &BoundingBox) -> bool {
        let (dx, dy) = det.midpoint();
        let in_gt = gt.contains_point(dx, dy);
        match self {
            MatchRule::Mutual => {
                let (gx, gy) = gt.midpoint();
                in_gt && det.contains_point(gx, gy)
            }
            MatchRule::DetectionInGt => in_gt,
        }
    }
}

/// Indices refer to the ground-truth and detection slices given to
/// [`match_detections`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// `(gt, detection)` pairs with the right class.
    pub true_detections: Vec<(usize, usize)>,
    /// `(gt, detection)` pairs with the wrong class.
    pub misclassified: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub missed_gt: Vec<usize>,
    pub excluded_border_gt: usize,
}

/// Assigns detections to ground truth.
///
/// Every (gt, detection) pair satisfying `rule` is a candidate; candidates
/// are taken greedily by midpoint distance so each gt and each detection is
/// used at most once. Equal distances are resolved by gt index, then
/// correct class first, then score and box, so the result does not depend
/// on detection order except between identical detections.
pub fn match_detections(
    detections: &[Detection],
    gt: &[GroundTruthEntry],
    rule: MatchRule,
) -> MatchReport {
    let mut pairs = Vec::new();
    for (gi, g) in gt.iter().enumerate() {
        let (gx, gy) = g.bbox.midpoint();
        for (di, d) in detections.iter().enumerate() {
            if rule.matches(&d.bbox, &g.bbox) {
                let (dx, dy) = d.bbox.midpoint();
                let dist = ((gx - dx).powi(2) + (gy - dy).powi(2)).sqrt();
                pairs.push((dist, gi, di));
            }
        }
    }
    pairs.sort_by(|a, b| {
        let (da, db) = (&detections[a.2], &detections[b.2]);
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then((da.class_id != gt[a.1].class_id).cmp(&(db.class_id != gt[b.1].class_id)))
            .then(da.score.total_cmp(&db.score))
            .then(da.bbox.to_array().cmp(&db.bbox.to_array()))
            .then(da.class_id.cmp(&db.class_id))
            .then(a.2.cmp(&b.2))
    });
    let mut gt_used = vec![false; gt.len()];
    let mut det_used = vec![false; detections.len()];
    let mut report = MatchReport::default();
    for (_, gi, di) in pairs {
        if gt_used[gi] || det_used[di] {
            continue;
        }
        gt_used[gi] = true;
        det_used[di] = true;
        if detections[di].class_id == gt[gi].class_id {
            report.true_detections.push((gi, di));
        } else {
            report.misclassified.push((gi, di));
        }
    }
    report.true_detections.sort_unstable();
    report.misclassified.sort_unstable();
    report.false_positives = (0..detections.len()).filter(|&i| !det_used[i]).collect();
    report.missed_gt = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    report
}

/// Border-filters `gt` for a `width × height` image, then matches.
/// Returned gt indices refer to the kept entries.
pub fn evaluate_image(
    detections: &[Detection],
    gt: &[GroundTruthEntry],
    width: u32,
    height: u32,
    rule: MatchRule,
) -> (MatchReport, Vec<GroundTruthEntry>) {
    let (kept, excluded) = filter_border_gt(gt, width, height);
    let kept: Vec<GroundTruthEntry> = kept.into_iter().map(|(_, e)| e).collect();
    let mut report = match_detections(detections, &kept, rule);
    report.excluded_border_gt = excluded;
    (report, kept)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub true_detections: u64,
    pub misclassified: u64,
    pub false_positives: u64,
    pub missed: u64,
    pub excluded_border_gt: u64,
}

impl Counts {
    pub fn from_report(r: &MatchReport) -> Self {
        Self {
            true_detections: r.true_detections.len() as u64,
            misclassified: r.misclassified.len() as u64,
            false_positives: r.false_positives.len() as u64,
            missed: r.missed_gt.len() as u64,
            excluded_border_gt: r.excluded_border_gt as u64,
        }
    }

    pub fn add(&mut self, o: &Counts) {
        self.true_detections += o.true_detections;
        self.misclassified += o.misclassified;
        self.false_positives += o.false_positives;
        self.missed += o.missed;
        self.excluded_border_gt += o.excluded_border_gt;
    }

    pub fn predictions(&self) -> u64 {
        self.true_detections + self.misclassified + self.false_positives
    }

    pub fn kept_gt(&self) -> u64 {
        self.true_detections + self.misclassified + self.missed
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    /// Ground truth of this class.
    pub gt: u64,
    /// Ground truth of this class found with the right class.
    pub correct: u64,
    /// Predictions carrying this class.
    pub predicted: u64,
}

impl ClassCounts {
    fn add(&mut self, o: &ClassCounts) {
        self.gt += o.gt;
        self.correct += o.correct;
        self.predicted += o.predicted;
    }
}

/// Counts accumulated over images; metrics are derived at the end.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub counts: Counts,
    pub per_class: BTreeMap<u32, ClassCounts>,
}

impl Tally {
    pub fn add_image(
        &mut self,
        report: &MatchReport,
        detections: &[Detection],
        kept_gt: &[GroundTruthEntry],
    ) {
        self.counts.add(&Counts::from_report(report));
        for g in kept_gt {
            self.per_class.entry(g.class_id).or_default().gt += 1;
        }
        for d in detections {
            self.per_class.entry(d.class_id).or_default().predicted += 1;
        }
        for &(gi, _) in &report.true_detections {
            self.per_class
                .entry(kept_gt[gi].class_id)
                .or_default()
                .correct += 1;
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        self.counts.add(&other.counts);
        for (k, v) in &other.per_class {
            self.per_class.entry(*k).or_default().add(v);
        }
    }

    pub fn metrics(&self) -> MetricsReport {
        metrics_from_counts(&self.counts, &self.per_class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: u32,
    pub precision: f64,
    pub recall: f64,
    pub counts: ClassCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub misclassification_rate: f64,
    pub counts: Counts,
    /// Set when there were no predictions; precision and misclassification
    /// are then reported as 0.
    pub no_predictions: bool,
    /// Set when no ground truth survived border filtering; recall is 0.
    pub no_ground_truth: bool,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    pub fn f1(&self) -> f64 {
        f1(self.precision, self.recall)
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Precision, recall and misclassification rate of one match report.
pub fn metrics(report: &MatchReport) -> MetricsReport {
    metrics_from_counts(&Counts::from_report(report), &BTreeMap::new())
}

pub fn metrics_from_counts(
    counts: &Counts,
    per_class: &BTreeMap<u32, ClassCounts>,
) -> MetricsReport {
    let predictions = counts.predictions();
    let kept = counts.kept_gt();
    MetricsReport {
        precision: ratio(counts.true_detections, predictions),
        recall: ratio(counts.true_detections, kept),
        misclassification_rate: ratio(counts.misclassified, predictions),
        counts: *counts,
        no_predictions: predictions == 0,
        no_ground_truth: kept == 0,
        per_class: per_class
            .iter()
            .map(|(&class_id, c)| ClassMetrics {
                class_id,
                precision: ratio(c.correct, c.predicted),
                recall: ratio(c.correct, c.gt),
                counts: *c,
            })
            .collect(),
    }
}

/// Plain-text summary for terminals.
pub fn format_metrics(m: &MetricsReport) -> String {
    let c = &m.counts;
    let mut s = format!(
        "precision {:.4}  recall {:.4}  misclassification {:.4}\n\
         true {}  misclassified {}  false positives {}  missed {}  excluded at border {}\n",
        m.precision,
        m.recall,
        m.misclassification_rate,
        c.true_detections,
        c.misclassified,
        c.false_positives,
        c.missed,
        c.excluded_border_gt
    );
    if m.no_predictions {
        s.push_str("note: no predictions\n");
    }
    if m.no_ground_truth {
        s.push_str("note: no ground truth\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(a: [u32; 4]) -> BoundingBox {
        BoundingBox::new(a[0], a[1], a[2], a[3]).unwrap()
    }

    fn det(class_id: u32, bbox: [u32; 4]) -> Detection {
        Detection {
            class_id,
            score: 0.1,
            bbox: b(bbox),
            metric: "patch".into(),
            image_id: "x".into(),
        }
    }

    fn gt(class_id: u32, bbox: [u32; 4]) -> GroundTruthEntry {
        GroundTruthEntry {
            class_id,
            bbox: b(bbox),
        }
    }

    #[test]
    fn border_filter() {
        let entries = vec![
            gt(0, [0, 5, 10, 15]),
            gt(0, [5, 5, 10, 15]),
            gt(0, [90, 90, 100, 100]),
        ];
        let (kept, excluded) = filter_border_gt(&entries, 100, 100);
        assert_eq!(excluded, 2);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].0, 1);
    }

    #[test]
    fn identical_boxes_match() {
        let r = match_detections(
            &[det(1, [10, 10, 20, 20])],
            &[gt(1, [10, 10, 20, 20])],
            MatchRule::Mutual,
        );
        assert_eq!(r.true_detections, vec![(0, 0)]);
    }

    #[test]
    fn mutual_midpoint_counterexample() {
        let g = gt(1, [40, 40, 60, 60]);
        let d = det(1, [41, 41, 44, 44]);
        // Containment oracle: det midpoint (42.5, 42.5) is inside gt, gt midpoint (50, 50) is not inside det.
        assert!(g.bbox.contains_point(42.5, 42.5));
        assert!(!d.bbox.contains_point(50.0, 50.0));
        let r = match_detections(
            std::slice::from_ref(&d),
            std::slice::from_ref(&g),
            MatchRule::Mutual,
        );
        assert!(r.true_detections.is_empty());
        assert_eq!(r.false_positives, vec![0]);
        assert_eq!(r.missed_gt, vec![0]);
        let r = match_detections(&[d], &[g], MatchRule::DetectionInGt);
        assert_eq!(r.true_detections.len(), 1);
    }

    #[test]
    fn wrong_class_is_misclassified() {
        let r = match_detections(
            &[det(2, [10, 10, 20, 20])],
            &[gt(1, [10, 10, 20, 20])],
            MatchRule::Mutual,
        );
        assert!(r.true_detections.is_empty());
        assert_eq!(r.misclassified, vec![(0, 0)]);
    }

    #[test]
    fn one_third_fixture() {
        let gts = vec![
            gt(1, [10, 10, 30, 30]),
            gt(2, [50, 10, 70, 30]),
            gt(3, [10, 50, 30, 70]),
        ];
        let dets = vec![
            det(1, [10, 10, 30, 30]),
            det(5, [50, 10, 70, 30]),
            det(3, [80, 80, 95, 95]),
        ];
        let m = metrics(&match_detections(&dets, &gts, MatchRule::Mutual));
        // Hand count: 1 correct, 1 wrong class, 1 false positive, 1 missed.
        assert_eq!(m.precision, 1.0 / 3.0);
        assert_eq!(m.recall, 1.0 / 3.0);
        assert_eq!(m.misclassification_rate, 1.0 / 3.0);
    }

    #[test]
    fn precision_nine_tenths() {
        let gts: Vec<_> = (0..9)
            .map(|i| gt(0, [i * 20 + 1, 1, i * 20 + 11, 11]))
            .collect();
        let mut dets: Vec<_> = gts.iter().map(|g| det(0, g.bbox.to_array())).collect();
        dets.push(det(0, [1, 50, 11, 60]));
        let m = metrics(&match_detections(&dets, &gts, MatchRule::Mutual));
        assert!((m.precision - 0.9).abs() < 1e-12);
    }

    #[test]
    fn degenerate_denominators_are_flagged() {
        let gts: Vec<_> = (0..5)
            .map(|i| gt(0, [i * 20 + 1, 1, i * 20 + 11, 11]))
            .collect();
        let m = metrics(&match_detections(&[], &gts, MatchRule::Mutual));
        assert_eq!((m.precision, m.recall), (0.0, 0.0));
        assert!(m.no_predictions);
        assert!(!m.no_ground_truth);
    }

    #[test]
    fn nearest_midpoint_wins() {
        let g = gt(1, [10, 10, 30, 30]);
        let near = det(1, [11, 11, 31, 31]);
        let far = det(1, [14, 14, 34, 34]);
        let r = match_detections(&[far, near], &[g], MatchRule::Mutual);
        assert_eq!(r.true_detections, vec![(0, 1)]);
        assert_eq!(r.false_positives, vec![0]);
    }

    #[test]
    fn shuffling_detections_keeps_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let gts: Vec<_> = (0..rng.random_range(0..8))
                .map(|_| {
                    let (x, y) = (rng.random_range(1..80), rng.random_range(1..80));
                    gt(
                        rng.random_range(0..3),
                        [
                            x,
                            y,
                            x + rng.random_range(2..15),
                            y + rng.random_range(2..15),
                        ],
                    )
                })
                .collect();
            let mut dets: Vec<_> = (0..rng.random_range(0..10))
                .map(|_| {
                    let (x, y) = (rng.random_range(1..80), rng.random_range(1..80));
                    det(
                        rng.random_range(0..3),
                        [
                            x,
                            y,
                            x + rng.random_range(2..15),
                            y + rng.random_range(2..15),
                        ],
                    )
                })
                .collect();
            let a = Counts::from_report(&match_detections(&dets, &gts, MatchRule::Mutual));
            dets.shuffle(&mut rng);
            let b = Counts::from_report(&match_detections(&dets, &gts, MatchRule::Mutual));
            assert_eq!(a, b);
            assert_eq!(a.kept_gt(), gts.len() as u64);
            assert_eq!(a.predictions(), dets.len() as u64);
        }
    }

    #[test]
    fn tally_matches_brute_force_recount() {
        let gts = vec![gt(1, [10, 10, 30, 30]), gt(2, [50, 10, 70, 30])];
        let dets = vec![det(1, [10, 10, 30, 30]), det(1, [50, 10, 70, 30])];
        let r = match_detections(&dets, &gts, MatchRule::Mutual);
        let mut t = Tally::default();
        t.add_image(&r, &dets, &gts);
        t.add_image(&r, &dets, &gts);
        let m = t.metrics();
        assert_eq!(m.counts.true_detections, 2);
        assert_eq!(m.counts.misclassified, 2);
        assert_eq!(m.precision, 0.5);
        let c1 = m.per_class.iter().find(|c| c.class_id == 1).unwrap();
        assert_eq!(
            (c1.counts.gt, c1.counts.correct, c1.counts.predicted),
            (2, 2, 4)
        );
    }
}
