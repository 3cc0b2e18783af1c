//! Segment proposals: prompt grids, manifest ingest and an oracle segmenter
//! for synthetic scenes.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::image::ImageBuffer;
use crate::mask::{Bitmap, SegmentMask};
use crate::textremoval::morph::{morph, MorphOp};
use crate::textremoval::OcrBox;

/// A candidate object region.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub id: u32,
    pub mask: SegmentMask,
    pub bbox: BoundingBox,
    /// Pixels of `bbox`, background included.
    pub crop: ImageBuffer,
    /// `mask` restricted to `bbox`.
    pub local_mask: Bitmap,
    pub source_confidence: Option<f64>,
}

impl Proposal {
    pub fn new(
        id: u32,
        mask: SegmentMask,
        image: &ImageBuffer,
        confidence: Option<f64>,
    ) -> Result<Self> {
        if mask.width != image.width() || mask.height != image.height() {
            return Err(Error::DimensionMismatch(format!(
                "proposal {id}: mask {}x{} vs image {}x{}",
                mask.width,
                mask.height,
                image.width(),
                image.height()
            )));
        }
        mask.validate()?;
        let bbox = mask.bbox()?;
        let crop = image.crop(&bbox)?;
        let local_mask = mask.crop(&bbox);
        Ok(Self {
            id,
            mask,
            bbox,
            crop,
            local_mask,
            source_confidence: confidence,
        })
    }

    pub fn area(&self) -> u64 {
        self.local_mask.count()
    }
}

/// Automatic-mask-generation settings recorded in manifest headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterParams {
    pub points_long_side: u32,
    pub predicted_iou_threshold: f64,
    pub stability_threshold: f64,
    pub concept_confidence_threshold: f64,
    /// Backend-specific extras, kept verbatim.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

impl Default for SegmenterParams {
    fn default() -> Self {
        Self {
            points_long_side: 64,
            predicted_iou_threshold: 0.5,
            stability_threshold: 0.7,
            concept_confidence_threshold: 0.3,
            extra: None,
        }
    }
}

impl SegmenterParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("predicted_iou_threshold", self.predicted_iou_threshold),
            ("stability_threshold", self.stability_threshold),
            (
                "concept_confidence_threshold",
                self.concept_confidence_threshold,
            ),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "segmenter.{name} must be in [0, 1], got {v}"
                )));
            }
        }
        if self.points_long_side < 2 {
            return Err(Error::InvalidConfig(
                "segmenter.points_long_side must be >= 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestProposal {
    pub mask: SegmentMask,
    #[serde(default)]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalManifest {
    pub image_id: String,
    /// Absolute, or relative to the manifest's directory.
    pub image_path: String,
    #[serde(default)]
    pub segmenter: SegmenterParams,
    pub proposals: Vec<ManifestProposal>,
}

impl ProposalManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve_image_path(&self, manifest_path: &Path) -> PathBuf {
        let p = Path::new(&self.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    /// Checks every mask against the image dimensions without decoding pixels.
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        self.segmenter.validate()?;
        for (i, p) in self.proposals.iter().enumerate() {
            if p.mask.width != width || p.mask.height != height {
                return Err(Error::DimensionMismatch(format!(
                    "{}: proposal {i} mask {}x{} vs image {width}x{height}",
                    self.image_id, p.mask.width, p.mask.height
                )));
            }
            p.mask.validate()?;
        }
        Ok(())
    }

    pub fn from_proposals(
        image_id: &str,
        image_path: &str,
        segmenter: SegmenterParams,
        proposals: &[Proposal],
    ) -> Self {
        Self {
            image_id: image_id.to_string(),
            image_path: image_path.to_string(),
            segmenter,
            proposals: proposals
                .iter()
                .map(|p| ManifestProposal {
                    mask: p.mask.clone(),
                    confidence: p.source_confidence,
                })
                .collect(),
        }
    }
}

/// Proposals built from a manifest, and how many empty masks were dropped.
#[derive(Debug, Clone)]
pub struct LoadedProposals {
    pub proposals: Vec<Proposal>,
    pub dropped_empty: usize,
}

/// Builds proposals for `image`. Ids are the manifest row indices, so they
/// stay stable when empty masks are dropped.
pub fn proposals_from_manifest(
    manifest: &ProposalManifest,
    image: &ImageBuffer,
) -> Result<LoadedProposals> {
    manifest.validate(image.width(), image.height())?;
    let mut proposals = Vec::with_capacity(manifest.proposals.len());
    let mut dropped_empty = 0;
    for (i, p) in manifest.proposals.iter().enumerate() {
        if p.mask.is_empty() {
            dropped_empty += 1;
            continue;
        }
        proposals.push(Proposal::new(
            i as u32,
            p.mask.clone(),
            image,
            p.confidence,
        )?);
    }
    if dropped_empty > 0 {
        log::warn!(
            "{}: dropped {dropped_empty} empty proposal masks",
            manifest.image_id
        );
    }
    Ok(LoadedProposals {
        proposals,
        dropped_empty,
    })
}

/// Reads a manifest and the image it references.
pub fn load_manifest(path: &Path) -> Result<(ProposalManifest, ImageBuffer, LoadedProposals)> {
    let manifest = ProposalManifest::read(path)?;
    let image = ImageBuffer::load(&manifest.resolve_image_path(path))?.to_rgb();
    let loaded = proposals_from_manifest(&manifest, &image)?;
    Ok((manifest, image, loaded))
}

/// Point prompts on a uniform grid, row-major, at cell centers.
///
/// The longer side gets `points_long_side` points and the shorter side
/// `round(points_long_side / (long / short))`.
pub fn point_grid(width: u32, height: u32, points_long_side: u32) -> Result<Vec<(f64, f64)>> {
    if points_long_side < 2 {
        return Err(Error::InvalidGrid(format!(
            "points_long_side must be >= 2, got {points_long_side}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidGrid(format!("empty image {width}x{height}")));
    }
    let (long, short) = (width.max(height) as f64, width.min(height) as f64);
    let short_count = (f64::from(points_long_side) / (long / short)).round() as u32;
    if short_count < 1 {
        return Err(Error::InvalidGrid(format!(
            "{width}x{height} with {points_long_side} points leaves no points on the short side"
        )));
    }
    let (nx, ny) = if width >= height {
        (points_long_side, short_count)
    } else {
        (short_count, points_long_side)
    };
    let (cw, ch) = (
        f64::from(width) / f64::from(nx),
        f64::from(height) / f64::from(ny),
    );
    Ok((0..ny)
        .flat_map(|j| (0..nx).map(move |i| ((f64::from(i) + 0.5) * cw, (f64::from(j) + 0.5) * ch)))
        .collect())
}

/// Ground truth an oracle segmenter needs from a synthetic scene.
#[derive(Debug, Clone, Copy)]
pub struct OracleScene<'a> {
    pub image: &'a ImageBuffer,
    pub icon_masks: &'a [SegmentMask],
    /// Pixels drawn with text ink, if the scene has text.
    pub text_mask: Option<&'a Bitmap>,
    pub ocr: &'a [OcrBox],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    /// Maximum boundary perturbation in pixels.
    pub perturbation: u32,
    /// Distractors as a multiple of the icon count.
    pub distractor_factor: f64,
    pub seed: u64,
    /// Semi-axis range of background ellipses, in pixels.
    pub distractor_radius: (u32, u32),
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            perturbation: 0,
            distractor_factor: 2.0,
            seed: 0,
            distractor_radius: (10, 28),
        }
    }
}

/// Stand-in segmenter driven by ground truth.
///
/// Emits one proposal per icon, with its mask dilated or eroded by a seeded
/// 1..=`perturbation` iterations (identity when `perturbation` is 0), then
/// distractors: ellipses over background away from every icon and, when the
/// scene has text, text-ink regions inside OCR boxes. Icons come first, in
/// input order; ids are sequential.
pub fn oracle_segment(scene: &OracleScene<'_>, params: &OracleParams) -> Result<Vec<Proposal>> {
    let (w, h) = (scene.image.width(), scene.image.height());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::new();
    let mut icon_boxes = Vec::with_capacity(scene.icon_masks.len());

    for mask in scene.icon_masks {
        let bbox = mask.bbox()?;
        icon_boxes.push(bbox);
        let mask = if params.perturbation == 0 {
            mask.clone()
        } else {
            let op = if rng.random_bool(0.5) {
                MorphOp::Dilate
            } else {
                MorphOp::Erode
            };
            let iters = rng.random_range(1..=params.perturbation);
            perturb(mask, &bbox, op, iters, w, h)?
        };
        out.push(Proposal::new(
            out.len() as u32,
            mask,
            scene.image,
            Some(1.0),
        )?);
    }

    let total = (params.distractor_factor * scene.icon_masks.len() as f64).round() as usize;
    let text_regions: Vec<(BoundingBox, Bitmap)> = match scene.text_mask {
        Some(text) => scene
            .ocr
            .iter()
            .filter_map(|b| {
                let local = text.crop(&b.bbox);
                (!local.is_empty()).then_some((b.bbox, local))
            })
            .collect(),
        None => Vec::new(),
    };
    let text_count = if text_regions.is_empty() {
        0
    } else {
        total / 2
    };
    let background_count = total - text_count;

    let (rmin, rmax) = params.distractor_radius;
    for _ in 0..background_count {
        let Some(local) = background_ellipse(&mut rng, &icon_boxes, w, h, rmin, rmax.max(rmin))
        else {
            continue;
        };
        out.push(Proposal::new(
            out.len() as u32,
            local,
            scene.image,
            Some(rng.random_range(0.5..1.0)),
        )?);
    }
    for i in 0..text_count {
        let idx = if text_count <= text_regions.len() {
            i * text_regions.len() / text_count
        } else {
            rng.random_range(0..text_regions.len())
        };
        let (bbox, local) = &text_regions[idx];
        let mask = SegmentMask::from_local(local, bbox.x_min(), bbox.y_min(), w, h);
        out.push(Proposal::new(
            out.len() as u32,
            mask,
            scene.image,
            Some(rng.random_range(0.5..1.0)),
        )?);
    }
    Ok(out)
}

fn perturb(
    mask: &SegmentMask,
    bbox: &BoundingBox,
    op: MorphOp,
    iters: u32,
    w: u32,
    h: u32,
) -> Result<SegmentMask> {
    // Pad so dilation is not clipped by the crop; the image border still clips.
    let region = bbox.expanded(iters + 1, w, h);
    let local = mask.crop(&region);
    let changed = morph(&local, op, iters);
    let changed = if changed.is_empty() {
        morph(&local, MorphOp::Dilate, iters)
    } else {
        changed
    };
    Ok(SegmentMask::from_local(
        &changed,
        region.x_min(),
        region.y_min(),
        w,
        h,
    ))
}

fn background_ellipse(
    rng: &mut ChaCha8Rng,
    avoid: &[BoundingBox],
    w: u32,
    h: u32,
    rmin: u32,
    rmax: u32,
) -> Option<SegmentMask> {
    for _ in 0..200 {
        let rx = rng.random_range(rmin..=rmax);
        let ry = rng.random_range(rmin..=rmax);
        if 2 * rx + 2 >= w || 2 * ry + 2 >= h {
            return None;
        }
        let cx = rng.random_range(rx + 1..w - rx - 1);
        let cy = rng.random_range(ry + 1..h - ry - 1);
        let bbox = BoundingBox::new(cx - rx, cy - ry, cx + rx + 1, cy + ry + 1).ok()?;
        if avoid
            .iter()
            .any(|a| a.expanded(1, w, h).intersection(&bbox).is_some())
        {
            continue;
        }
        let (frx, fry) = (f64::from(rx) + 0.5, f64::from(ry) + 0.5);
        let local = Bitmap::from_fn(bbox.width(), bbox.height(), |x, y| {
            let dx = f64::from(x) - f64::from(rx);
            let dy = f64::from(y) - f64::from(ry);
            (dx / frx).powi(2) + (dy / fry).powi(2) <= 1.0
        });
        return Some(SegmentMask::from_local(
            &local,
            bbox.x_min(),
            bbox.y_min(),
            w,
            h,
        ));
    }
    None
}
