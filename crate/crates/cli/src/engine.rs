//! Loading inputs and running detection over a directory of manifests.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use templot_core::classify::io::read_features;
use templot_core::classify::{
    EmbeddingScorer, PairScoreFile, PairScorer, PairTableScorer, PatchScorer,
};
use templot_core::eval::timing::{Clock, Stage, StageLog};
use templot_core::histfilter::TemplateSet;
use templot_core::proposals::{load_manifest, Proposal};
use templot_core::textremoval::{
    discover_font_model, load_ocr, naive_inpaint, text_mask, FontModel, OcrBox, TextSample,
};
use templot_core::{Detector, Error, ImageBuffer, ImageDetections, MetricMode, Result};

use crate::config::{require, Backend, RunConfig};

/// Files in `dir` with extension `ext`, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_templates(cfg: &RunConfig) -> Result<TemplateSet> {
    let dir = require(cfg.templates_dir(), "template directory")?;
    TemplateSet::load(&dir, cfg.pipeline.histogram_bins_per_channel)
}

pub fn build_scorer(
    cfg: &RunConfig,
    templates: &TemplateSet,
    image_ids: &[String],
) -> Result<Box<dyn PairScorer>> {
    Ok(match (cfg.metric, cfg.backend) {
        (MetricMode::Perceptual, Backend::Builtin) => Box::new(PatchScorer::new(templates)),
        (MetricMode::Embedding, Backend::Builtin) => {
            Box::new(EmbeddingScorer::reference(templates)?)
        }
        (MetricMode::Embedding, Backend::Features) => {
            let path = require(cfg.features.clone(), "feature file")?;
            Box::new(EmbeddingScorer::from_table(
                templates,
                read_features(&path)?,
                &path,
            )?)
        }
        (MetricMode::Perceptual, Backend::PairScores) => {
            let dir = require(cfg.pair_scores.clone(), "pair-score directory")?;
            let mut tables = HashMap::new();
            for id in image_ids {
                let path = dir.join(format!("{id}.json"));
                if path.is_file() {
                    tables.insert(id.clone(), PairScoreFile::read(&path)?.to_map());
                } else {
                    log::warn!("no pair scores for {id} at {}", path.display());
                }
            }
            Box::new(PairTableScorer::new("pair_scores", tables))
        }
        (m, b) => {
            return Err(Error::InvalidConfig(format!(
                "metric {} cannot use backend {b:?}",
                m.as_str()
            )))
        }
    })
}

/// OCR boxes of `image_id`, empty when no file exists.
pub fn read_ocr(dir: &Path, image_id: &str) -> Result<Vec<OcrBox>> {
    let path = dir.join(format!("{image_id}.json"));
    if path.is_file() {
        load_ocr(&path)
    } else {
        Ok(Vec::new())
    }
}

/// Loads a saved font model, or discovers one from the first images that
/// have OCR boxes.
pub fn font_model(cfg: &RunConfig, images: &[(String, PathBuf)]) -> Result<FontModel> {
    if let Some(path) = &cfg.font_model {
        if !path.is_file() {
            return Err(Error::MissingInput {
                path: path.clone(),
                what: "font model".into(),
            });
        }
        return FontModel::load(path);
    }
    let ocr_dir = require(cfg.ocr_dir(), "OCR directory")?;
    let mut loaded: Vec<(ImageBuffer, Vec<OcrBox>)> = Vec::new();
    for (id, image_path) in images {
        if loaded.len() == cfg.removal.samples {
            break;
        }
        let ocr = read_ocr(&ocr_dir, id)?;
        if !ocr.is_empty() {
            loaded.push((ImageBuffer::load(image_path)?.to_rgb(), ocr));
        }
    }
    let samples: Vec<TextSample<'_>> = loaded
        .iter()
        .map(|(image, ocr)| TextSample { image, ocr })
        .collect();
    let discovery = discover_font_model(&samples, &cfg.removal)?;
    if !discovery.ica_converged {
        log::warn!("ICA did not converge; using the last iterate");
    }
    log::info!("font color {:?}", discovery.model.cluster.centroid_rgb);
    Ok(discovery.model)
}

/// Image ids and image paths named by the manifests in `dir`.
pub fn manifest_images(manifests: &[PathBuf]) -> Result<Vec<(String, PathBuf)>> {
    manifests
        .iter()
        .map(|m| {
            let manifest = templot_core::proposals::ProposalManifest::read(m)?;
            let path = manifest.resolve_image_path(m);
            Ok((manifest.image_id, path))
        })
        .collect()
}

/// One image after detection, with what annotation and evaluation need.
pub struct ImageRun {
    pub result: ImageDetections,
    pub width: u32,
    pub height: u32,
    /// Image the detector saw (inpainted when text removal ran).
    pub image: ImageBuffer,
}

pub struct Engine<'a> {
    pub cfg: &'a RunConfig,
    pub templates: &'a TemplateSet,
    pub scorer: &'a dyn PairScorer,
    pub font_model: Option<&'a FontModel>,
    pub threshold: f64,
}

impl Engine<'_> {
    pub fn run_one(&self, manifest_path: &Path, clock: &dyn Clock) -> Result<ImageRun> {
        let mut log = StageLog::default();
        let (manifest, image, loaded) = log.time(clock, Stage::SegmentationIngest, || {
            load_manifest(manifest_path)
        })?;
        if loaded.dropped_empty > 0 {
            log::warn!(
                "{}: dropped {} empty proposals",
                manifest.image_id,
                loaded.dropped_empty
            );
        }
        let (image, proposals) = match self.font_model {
            None => (image, loaded.proposals),
            Some(model) => {
                let rgb = image.to_rgb();
                let (_, mask) = log.time(clock, Stage::MaskGeneration, || {
                    text_mask(&rgb, model, &self.cfg.removal)
                });
                let filled = log.time(clock, Stage::Inpainting, || {
                    naive_inpaint(&rgb, &mask, self.cfg.removal.inpaint_max_passes)
                })?;
                if filled.unfilled > 0 {
                    log::warn!(
                        "{}: {} masked pixels left unfilled",
                        manifest.image_id,
                        filled.unfilled
                    );
                }
                let proposals = loaded
                    .proposals
                    .into_iter()
                    .map(|p| Proposal::new(p.id, p.mask, &filled.image, p.source_confidence))
                    .collect::<Result<Vec<_>>>()?;
                (filled.image, proposals)
            }
        };
        let detector = Detector {
            config: &self.cfg.pipeline,
            templates: self.templates,
            scorer: self.scorer,
            threshold: self.threshold,
        };
        let mut result = detector.detect(&manifest.image_id, &proposals, clock);
        result.log.merge(&StageLog {
            images: 0,
            icon_proposals: 0,
            totals: log.totals,
        });
        Ok(ImageRun {
            width: image.width(),
            height: image.height(),
            image,
            result,
        })
    }

    /// Runs every manifest on `pool`; results keep manifest order.
    pub fn run_all(
        &self,
        manifests: &[PathBuf],
        pool: &rayon::ThreadPool,
        clock: &dyn Clock,
    ) -> Result<Vec<ImageRun>> {
        pool.install(|| {
            manifests
                .par_iter()
                .map(|m| self.run_one(m, clock))
                .collect()
        })
    }
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {jobs} workers: {e}")))
}

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
