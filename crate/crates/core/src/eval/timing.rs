//! Per-stage wall-clock accounting.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SegmentationIngest,
    MaskGeneration,
    Inpainting,
    Histogram,
    Classification,
    Nms,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::SegmentationIngest,
        Stage::MaskGeneration,
        Stage::Inpainting,
        Stage::Histogram,
        Stage::Classification,
        Stage::Nms,
    ];

    /// Per-image stages are averaged over images, the rest over proposals.
    pub fn per_image(&self) -> bool {
        matches!(
            self,
            Stage::SegmentationIngest | Stage::MaskGeneration | Stage::Inpainting
        )
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::SegmentationIngest => "segmentation_ingest",
            Stage::MaskGeneration => "mask_generation",
            Stage::Inpainting => "inpainting",
            Stage::Histogram => "histogram",
            Stage::Classification => "classification",
            Stage::Nms => "nms",
        }
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

/// Monotonic wall clock.
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// Clock that only moves when told to.
#[derive(Default)]
pub struct MockClock {
    nanos: AtomicU64,
}

impl MockClock {
    pub fn advance(&self, d: Duration) {
        self.nanos.fetch_add(d.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for MockClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }
}

/// Accumulated stage durations for one or more images.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageLog {
    pub images: u64,
    pub icon_proposals: u64,
    pub totals: BTreeMap<Stage, Duration>,
}

impl StageLog {
    pub fn record(&mut self, stage: Stage, d: Duration) {
        *self.totals.entry(stage).or_default() += d;
    }

    /// Runs `f`, charging its duration on `clock` to `stage`.
    pub fn time<T>(&mut self, clock: &dyn Clock, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = clock.now();
        let out = f();
        self.record(stage, clock.now().saturating_sub(start));
        out
    }

    pub fn merge(&mut self, other: &StageLog) {
        self.images += other.images;
        self.icon_proposals += other.icon_proposals;
        for (s, d) in &other.totals {
            self.record(*s, *d);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub images: u64,
    pub icon_proposals: u64,
    /// Mean milliseconds per image.
    pub per_image_ms: BTreeMap<Stage, f64>,
    /// Mean milliseconds per icon proposal.
    pub per_icon_ms: BTreeMap<Stage, f64>,
}

impl TimingReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{} images, {} proposals\n",
            self.images, self.icon_proposals
        );
        for (stage, ms) in &self.per_image_ms {
            s.push_str(&format!("  {:<20} {:>10.3} ms/image\n", stage.as_str(), ms));
        }
        for (stage, ms) in &self.per_icon_ms {
            s.push_str(&format!(
                "  {:<20} {:>10.4} ms/proposal\n",
                stage.as_str(),
                ms
            ));
        }
        s
    }
}

/// Mean stage times. Stages with a zero denominator are left out.
pub fn collect_timings(logs: &[StageLog]) -> TimingReport {
    let mut all = StageLog::default();
    for l in logs {
        all.merge(l);
    }
    let mut report = TimingReport {
        images: all.images,
        icon_proposals: all.icon_proposals,
        ..Default::default()
    };
    for (stage, d) in &all.totals {
        let ms = d.as_secs_f64() * 1000.0;
        if stage.per_image() {
            if all.images > 0 {
                report.per_image_ms.insert(*stage, ms / all.images as f64);
            }
        } else if all.icon_proposals > 0 {
            report
                .per_icon_ms
                .insert(*stage, ms / all.icon_proposals as f64);
        }
    }
    report
}
