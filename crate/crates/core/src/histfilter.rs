//! Color-histogram prefiltering of proposals against templates.
//!
//! Histograms are joint RGB with `B` bins per channel, flattened as
//! `(r_bin * B + g_bin) * B + b_bin`. Proposals are compared with every
//! template by Pearson correlation over the bin vectors; a proposal whose
//! best correlation falls below the threshold is withdrawn, and otherwise
//! only templates within a fraction of the best correlation move on to the
//! (more expensive) metric stage.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::mask::Bitmap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorHistogram {
    bins_per_channel: u32,
    counts: Vec<u64>,
}

impl ColorHistogram {
    pub fn bins_per_channel(&self) -> u32 {
        self.bins_per_channel
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    #[inline]
    pub fn bin_index(rgb: [u8; 3], bins: u32) -> usize {
        let b = |c: u8| (u32::from(c) * bins / 256) as usize;
        let bins = bins as usize;
        (b(rgb[0]) * bins + b(rgb[1])) * bins + b(rgb[2])
    }

    pub fn from_counts(bins_per_channel: u32, counts: Vec<u64>) -> Result<Self> {
        let expected = (bins_per_channel as usize).pow(3);
        if counts.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{bins_per_channel} bins per channel need {expected} counts, got {}",
                counts.len()
            )));
        }
        Ok(Self {
            bins_per_channel,
            counts,
        })
    }
}

/// Histogram over the contributing pixels of `crop`.
///
/// With a mask only mask pixels count; without one, RGBA crops use their
/// `alpha > 0` pixels and RGB crops use every pixel.
pub fn compute_histogram(
    crop: &ImageBuffer,
    mask: Option<&Bitmap>,
    bins_per_channel: u32,
) -> Result<ColorHistogram> {
    if let Some(m) = mask {
        if m.width() != crop.width() || m.height() != crop.height() {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} does not cover crop {}x{}",
                m.width(),
                m.height(),
                crop.width(),
                crop.height()
            )));
        }
    }
    let mut counts = vec![0u64; (bins_per_channel as usize).pow(3)];
    let channels = crop.channels() as usize;
    let use_alpha = mask.is_none() && crop.has_alpha();
    for (i, px) in crop.as_bytes().chunks_exact(channels).enumerate() {
        let keep = match mask {
            Some(m) => m.as_slice()[i],
            None => !use_alpha || px[3] > 0,
        };
        if keep {
            counts[ColorHistogram::bin_index([px[0], px[1], px[2]], bins_per_channel)] += 1;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptyRegion);
    }
    Ok(ColorHistogram {
        bins_per_channel,
        counts,
    })
}

/// Pearson correlation of the two bin vectors.
pub fn histogram_correlation(a: &ColorHistogram, b: &ColorHistogram) -> Result<f64> {
    if a.counts.len() != b.counts.len() {
        return Err(Error::DimensionMismatch(format!(
            "histograms have {} and {} bins",
            a.counts.len(),
            b.counts.len()
        )));
    }
    let n = a.counts.len() as f64;
    let mean_a = a.total() as f64 / n;
    let mean_b = b.total() as f64 / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.counts.iter().zip(&b.counts) {
        let dx = x as f64 - mean_a;
        let dy = y as f64 - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation with degenerate comparisons scored as 0.
pub fn correlation_or_zero(a: &ColorHistogram, b: &ColorHistogram) -> f64 {
    histogram_correlation(a, b).unwrap_or(0.0)
}

/// One per-class exemplar.
#[derive(Debug, Clone)]
pub struct TemplateEntry {
    pub class_id: u32,
    pub name: String,
    /// RGBA pixels; `alpha > 0` marks the icon.
    pub image: ImageBuffer,
    pub histogram: ColorHistogram,
    pub pixel_area: u64,
}

impl TemplateEntry {
    pub fn new(
        class_id: u32,
        name: impl Into<String>,
        image: ImageBuffer,
        bins: u32,
    ) -> Result<Self> {
        let histogram = compute_histogram(&image, None, bins)?;
        let pixel_area = histogram.total();
        Ok(Self {
            class_id,
            name: name.into(),
            image,
            histogram,
            pixel_area,
        })
    }
}

/// Row of the template index file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateIndexEntry {
    pub class_id: u32,
    pub name: String,
    pub file: String,
}

/// The per-class templates of a run, sorted by class id.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    entries: Vec<TemplateEntry>,
}

impl TemplateSet {
    pub fn new(mut entries: Vec<TemplateEntry>) -> Result<Self> {
        entries.sort_by_key(|t| t.class_id);
        if entries.windows(2).any(|w| w[0].class_id == w[1].class_id) {
            return Err(Error::InvalidConfig("duplicate template class id".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[TemplateEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn by_class(&self, class_id: u32) -> Option<&TemplateEntry> {
        self.entries
            .binary_search_by_key(&class_id, |t| t.class_id)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Recomputes histograms when the run uses a different bin count.
    pub fn with_bins(mut self, bins: u32) -> Result<Self> {
        for t in &mut self.entries {
            if t.histogram.bins_per_channel != bins {
                t.histogram = compute_histogram(&t.image, None, bins)?;
            }
        }
        Ok(self)
    }

    /// Reads `index.json` and the PNG files it names from `dir`.
    pub fn load(dir: &Path, bins: u32) -> Result<Self> {
        let index_path = dir.join("index.json");
        if !index_path.is_file() {
            return Err(Error::MissingInput {
                path: index_path,
                what: "template index".into(),
            });
        }
        let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: Vec<TemplateIndexEntry> =
            serde_json::from_str(&text).map_err(|e| Error::schema(&index_path, e))?;
        if index.is_empty() {
            return Err(Error::schema(&index_path, "template index is empty"));
        }
        let mut entries = Vec::with_capacity(index.len());
        for row in index {
            let path = dir.join(&row.file);
            let mut image = ImageBuffer::load(&path)?;
            if !image.has_alpha() {
                image = add_opaque_alpha(&image);
            }
            let entry =
                TemplateEntry::new(row.class_id, row.name, image, bins).map_err(|e| match e {
                    Error::EmptyRegion => Error::schema(&path, "template has no opaque pixels"),
                    other => other,
                })?;
            entries.push(entry);
        }
        TemplateSet::new(entries)
    }

    /// Writes PNGs plus `index.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = Vec::with_capacity(self.entries.len());
        for t in &self.entries {
            let file = format!("{:03}_{}.png", t.class_id, t.name);
            t.image.save_png(&dir.join(&file))?;
            index.push(TemplateIndexEntry {
                class_id: t.class_id,
                name: t.name.clone(),
                file,
            });
        }
        let path = dir.join("index.json");
        let json = serde_json::to_string_pretty(&index).expect("index serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

fn add_opaque_alpha(rgb: &ImageBuffer) -> ImageBuffer {
    let data = rgb
        .rgb_pixels()
        .flat_map(|p| [p[0], p[1], p[2], 255])
        .collect();
    ImageBuffer::new(rgb.width(), rgb.height(), 4, data).expect("same dimensions")
}

/// Keeps a proposal when its area is within `bounds` of some template area.
pub fn area_prefilter(mask_area: u64, templates: &[TemplateEntry], bounds: (f64, f64)) -> bool {
    let (low, high) = bounds;
    templates.iter().any(|t| {
        let ratio = mask_area as f64 / t.pixel_area as f64;
        low <= ratio && ratio <= high
    })
}

/// A template that survived the correlation stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Position in the template slice.
    pub index: usize,
    pub class_id: u32,
    pub correlation: f64,
}

/// Templates worth scoring for a proposal, best correlation first.
///
/// Empty when the best correlation is below `correlation_threshold`.
pub fn shortlist(
    proposal_hist: &ColorHistogram,
    templates: &[TemplateEntry],
    correlation_threshold: f64,
    shortlist_factor: f64,
) -> Vec<Candidate> {
    let mut all: Vec<Candidate> = templates
        .iter()
        .enumerate()
        .map(|(index, t)| Candidate {
            index,
            class_id: t.class_id,
            correlation: correlation_or_zero(proposal_hist, &t.histogram),
        })
        .collect();
    sort_candidates(&mut all);
    let Some(best) = all.first().map(|c| c.correlation) else {
        return all;
    };
    if best < correlation_threshold {
        return Vec::new();
    }
    let cutoff = (shortlist_factor * best).min(best);
    all.retain(|c| c.correlation >= cutoff);
    all
}

/// Every template as a candidate, unfiltered, in template order.
pub fn all_candidates(
    proposal_hist: Option<&ColorHistogram>,
    templates: &[TemplateEntry],
) -> Vec<Candidate> {
    templates
        .iter()
        .enumerate()
        .map(|(index, t)| Candidate {
            index,
            class_id: t.class_id,
            correlation: proposal_hist.map_or(0.0, |h| correlation_or_zero(h, &t.histogram)),
        })
        .collect()
}

fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| {
        b.correlation
            .total_cmp(&a.correlation)
            .then(a.class_id.cmp(&b.class_id))
    });
}
