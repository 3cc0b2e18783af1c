//! Detection rate binned by how much text covers each ground-truth box.

use serde::{Deserialize, Serialize};

use super::{GroundTruthEntry, MatchReport};
use crate::error::{Error, Result};
use crate::mask::Bitmap;
use crate::textremoval::text_coverage;

/// Slack so coverages sitting exactly on a bin edge land in the upper bin
/// despite floating-point division.
const BIN_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageBin {
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    /// Ground truth found with the right class.
    pub detected: u64,
    /// Ground truth missed or found with the wrong class.
    pub missed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub bin_width: f64,
    pub bins: Vec<CoverageBin>,
}

pub fn bin_count(bin_width: f64) -> usize {
    ((1.0 / bin_width) - BIN_EPSILON).ceil().max(1.0) as usize
}

/// Bin index of a coverage value; 1.0 goes to the top bin.
pub fn bin_index(coverage: f64, bin_width: f64) -> usize {
    let top = bin_count(bin_width) - 1;
    ((coverage / bin_width + BIN_EPSILON).floor().max(0.0) as usize).min(top)
}

impl CoverageReport {
    pub fn new(bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "coverage bin width {bin_width} outside (0, 1]"
            )));
        }
        let n = bin_count(bin_width);
        Ok(Self {
            bin_width,
            bins: (0..n)
                .map(|i| CoverageBin {
                    bin: i,
                    lower: i as f64 * bin_width,
                    upper: ((i + 1) as f64 * bin_width).min(1.0),
                    detected: 0,
                    missed: 0,
                })
                .collect(),
        })
    }

    /// Adds one image: `kept_gt` are the border-filtered entries the report
    /// indexes into.
    pub fn add_image(
        &mut self,
        report: &MatchReport,
        kept_gt: &[GroundTruthEntry],
        text_mask: &Bitmap,
    ) {
        let mut found = vec![false; kept_gt.len()];
        for &(g, _) in &report.true_detections {
            found[g] = true;
        }
        for (g, entry) in kept_gt.iter().enumerate() {
            let c = text_coverage(&entry.bbox, text_mask);
            let bin = &mut self.bins[bin_index(c, self.bin_width)];
            if found[g] {
                bin.detected += 1;
            } else {
                bin.missed += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &CoverageReport) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.detected += b.detected;
            a.missed += b.missed;
        }
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.detected + b.missed).sum()
    }

    /// Detected / total over bins whose range satisfies `pred`.
    pub fn detection_rate(&self, pred: impl Fn(&CoverageBin) -> bool) -> Option<f64> {
        let (d, t) = self
            .bins
            .iter()
            .filter(|b| pred(b))
            .fold((0, 0), |(d, t), b| {
                (d + b.detected, t + b.detected + b.missed)
            });
        (t > 0).then(|| d as f64 / t as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,detected,missed\n");
        for b in &self.bins {
            s.push_str(&format!(
                "{:.2}-{:.2},{},{}\n",
                b.lower, b.upper, b.detected, b.missed
            ));
        }
        s
    }
}

/// Coverage histogram over several images.
pub fn coverage_report(
    images: &[(&MatchReport, &[GroundTruthEntry], &Bitmap)],
    bin_width: f64,
) -> Result<CoverageReport> {
    let mut out = CoverageReport::new(bin_width)?;
    for (report, gt, mask) in images {
        out.add_image(report, gt, mask);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    #[test]
    fn bin_edges() {
        assert_eq!(bin_count(0.1), 10);
        assert_eq!(bin_index(0.0, 0.1), 0);
        assert_eq!(bin_index(0.55, 0.1), 5);
        assert_eq!(bin_index(0.3, 0.1), 3);
        assert_eq!(bin_index(0.7, 0.1), 7);
        assert_eq!(bin_index(1.0, 0.1), 9);
        assert_eq!(bin_index(1.0, 0.25), 3);
    }

    #[test]
    fn partitions_kept_gt() {
        let gt: Vec<_> = (0..6)
            .map(|i| GroundTruthEntry {
                class_id: 0,
                bbox: BoundingBox::new(i * 10 + 1, 1, i * 10 + 9, 9).unwrap(),
            })
            .collect();
        // Text covering x < 25: boxes 0 and 1 fully, box 2 partly.
        let mask = Bitmap::from_fn(70, 12, |x, _| x < 25);
        let report = MatchReport {
            true_detections: vec![(0, 0), (3, 1)],
            missed_gt: vec![1, 2, 4, 5],
            ..Default::default()
        };
        let r = coverage_report(&[(&report, &gt, &mask)], 0.1).unwrap();
        assert_eq!(r.total(), 6);
        assert_eq!((r.bins[9].detected, r.bins[9].missed), (1, 1));
        assert_eq!((r.bins[0].detected, r.bins[0].missed), (1, 2));
        assert_eq!(r.bins[5].missed, 1); // box 2: 4 of 8 columns covered
        assert!(r
            .to_csv()
            .starts_with("bin,detected,missed\n0.00-0.10,1,2\n"));
    }

    #[test]
    fn all_zero_coverage_is_bin_zero() {
        let gt = vec![GroundTruthEntry {
            class_id: 0,
            bbox: BoundingBox::new(1, 1, 5, 5).unwrap(),
        }];
        let report = MatchReport {
            missed_gt: vec![0],
            ..Default::default()
        };
        let r = coverage_report(&[(&report, &gt, &Bitmap::new(10, 10))], 0.1).unwrap();
        assert_eq!(r.bins[0].missed, 1);
        assert_eq!(r.total(), 1);
    }
}
