//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use templot_core::classify::io::{read_detections, read_features, write_detections, FeatureTable};
use templot_core::classify::sweep::{calibrate, SweepImage, SweepSettings};
use templot_core::classify::{Detection, PairScoreFile};
use templot_core::eval::coverage::CoverageReport;
use templot_core::eval::timing::{collect_timings, StageLog, SystemClock, TimingReport};
use templot_core::eval::{evaluate_image, format_metrics, GroundTruth, Tally};
use templot_core::histfilter::TemplateSet;
use templot_core::proposals::{load_manifest, ProposalManifest};
use templot_core::synth::{write_dataset, Dataset};
use templot_core::textremoval::{load_ocr, naive_inpaint, text_mask, validate_ocr, FontModel};
use templot_core::{DetectStats, Error, ImageBuffer, MetricMode, Result, SegmentMask};

use crate::annotate::annotate;
use crate::config::{require, RunConfig};
use crate::engine::{
    build_scorer, create_dir, file_stem, font_model, list_files, load_templates, manifest_images,
    thread_pool, write_json, Engine, ImageRun,
};

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir()?;
    let pool = thread_pool(cfg.jobs)?;
    let ds = pool.install(|| write_dataset(&out, &cfg.synth, cfg.pipeline.area_ratio_bounds))?;
    println!(
        "wrote {} images to {}",
        ds.manifest.image_ids.len(),
        out.display()
    );
    Ok(())
}

struct Prepared {
    templates: TemplateSet,
    manifests: Vec<PathBuf>,
    images: Vec<(String, PathBuf)>,
    font: Option<FontModel>,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let templates = load_templates(cfg)?;
    let dir = require(cfg.manifests_dir(), "manifest directory")?;
    let manifests = list_files(&dir, "json")?;
    if manifests.is_empty() {
        return Err(Error::MissingInput {
            path: dir,
            what: "proposal manifests".into(),
        });
    }
    let images = manifest_images(&manifests)?;
    let font = if cfg.text_removal {
        Some(font_model(cfg, &images)?)
    } else {
        None
    };
    Ok(Prepared {
        templates,
        manifests,
        images,
        font,
    })
}

fn run(
    cfg: &RunConfig,
    p: &Prepared,
    threshold: f64,
    clock: &SystemClock,
) -> Result<Vec<ImageRun>> {
    let ids: Vec<String> = p.images.iter().map(|(id, _)| id.clone()).collect();
    let scorer = build_scorer(cfg, &p.templates, &ids)?;
    let engine = Engine {
        cfg,
        templates: &p.templates,
        scorer: scorer.as_ref(),
        font_model: p.font.as_ref(),
        threshold,
    };
    let pool = thread_pool(cfg.jobs)?;
    engine.run_all(&p.manifests, &pool, clock)
}

fn read_gt(dir: &Path, image_id: &str) -> Result<Option<GroundTruth>> {
    let path = dir.join(format!("{image_id}.json"));
    if path.is_file() {
        GroundTruth::read(&path).map(Some)
    } else {
        Ok(None)
    }
}

#[derive(Serialize)]
struct ImageStats<'a> {
    image_id: &'a str,
    #[serde(flatten)]
    stats: DetectStats,
}

#[derive(Serialize)]
struct DetectSummary<'a> {
    metric: &'a str,
    backend: crate::config::Backend,
    threshold: f64,
    text_removal: bool,
    totals: DetectStats,
    per_image: Vec<ImageStats<'a>>,
}

pub fn detect(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir()?;
    let p = prepare(cfg)?;
    let threshold = cfg.pipeline.dissimilarity_threshold(cfg.metric);
    let runs = run(cfg, &p, threshold, &SystemClock::default())?;
    create_dir(&out)?;

    let detections: Vec<Detection> = runs
        .iter()
        .flat_map(|r| r.result.detections.iter().cloned())
        .collect();
    write_detections(&out.join("detections.json"), &detections)?;
    let mut totals = DetectStats::default();
    let per_image: Vec<ImageStats<'_>> = runs
        .iter()
        .map(|r| {
            let stats = r.result.stats();
            totals.merge(&stats);
            ImageStats {
                image_id: &r.result.image_id,
                stats,
            }
        })
        .collect();
    write_json(
        &out.join("detect_stats.json"),
        &DetectSummary {
            metric: cfg.metric.as_str(),
            backend: cfg.backend,
            threshold,
            text_removal: cfg.text_removal,
            totals,
            per_image,
        },
    )?;
    if let Some(model) = &p.font {
        model.save(&out.join("font_model.json"))?;
    }
    if cfg.annotate {
        let dir = out.join("annotated");
        create_dir(&dir)?;
        let gt_dir = cfg.ground_truth_dir().filter(|d| d.is_dir());
        runs.par_iter()
            .map(|r| {
                let gt = match &gt_dir {
                    Some(d) => read_gt(d, &r.result.image_id)?,
                    None => None,
                };
                let img = match gt {
                    Some(gt) => {
                        let (report, kept) = evaluate_image(
                            &r.result.detections,
                            &gt.entries,
                            r.width,
                            r.height,
                            cfg.match_rule,
                        );
                        let boxes: Vec<_> = kept.iter().map(|e| e.bbox).collect();
                        annotate(&r.image, &r.result.detections, Some((&report, &boxes)))
                    }
                    None => annotate(&r.image, &r.result.detections, None),
                };
                img.save_png(&dir.join(format!("{}.png", r.result.image_id)))
            })
            .collect::<Result<Vec<()>>>()?;
    }
    println!(
        "{} detections in {} images",
        totals.detections, totals.images
    );
    Ok(())
}

pub fn remove_text(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir()?;
    let dir = require(cfg.images_dir(), "image directory")?;
    let images: Vec<(String, PathBuf)> = list_files(&dir, "png")?
        .into_iter()
        .map(|p| (file_stem(&p), p))
        .collect();
    if images.is_empty() {
        return Err(Error::MissingInput {
            path: dir,
            what: "PNG images".into(),
        });
    }
    let model = font_model(cfg, &images)?;
    for sub in ["textmasks", "inpainted"] {
        create_dir(&out.join(sub))?;
    }
    model.save(&out.join("font_model.json"))?;
    let pool = thread_pool(cfg.jobs)?;
    pool.install(|| {
        images
            .par_iter()
            .map(|(id, path)| {
                let rgb = ImageBuffer::load(path)?.to_rgb();
                let (_, mask) = text_mask(&rgb, &model, &cfg.removal);
                let filled = naive_inpaint(&rgb, &mask, cfg.removal.inpaint_max_passes)?;
                write_json(
                    &out.join("textmasks").join(format!("{id}.json")),
                    &mask.to_segment_mask(),
                )?;
                filled
                    .image
                    .save_png(&out.join("inpainted").join(format!("{id}.png")))
            })
            .collect::<Result<Vec<()>>>()
    })?;
    println!(
        "font color {:?}; processed {} images",
        model.cluster.centroid_rgb,
        images.len()
    );
    Ok(())
}

pub fn calibrate_cmd(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir()?;
    let gt_dir = require(cfg.ground_truth_dir(), "ground-truth directory")?;
    let p = prepare(cfg)?;
    // Every pair is scored so the best-F1 range is bounded by real non-icon
    // scores; the threshold then holds with or without pruning.
    let open = RunConfig {
        pipeline: templot_core::PipelineConfig {
            area_prefilter: false,
            histogram_filter: false,
            ..cfg.pipeline.clone()
        },
        ..cfg.clone()
    };
    let runs = run(&open, &p, f64::INFINITY, &SystemClock::default())?;
    let mut images = Vec::with_capacity(runs.len());
    for r in &runs {
        let gt = read_gt(&gt_dir, &r.result.image_id)?.ok_or_else(|| Error::MissingInput {
            path: gt_dir.join(format!("{}.json", r.result.image_id)),
            what: "ground truth".into(),
        })?;
        images.push(SweepImage {
            image_id: r.result.image_id.clone(),
            width: r.width,
            height: r.height,
            candidates: r.result.candidates(),
            gt: gt.entries,
        });
    }
    let settings = SweepSettings {
        nms_overlap: cfg.pipeline.nms_overlap,
        overlap_mode: cfg.pipeline.overlap_mode,
        rule: cfg.match_rule,
    };
    let c = calibrate(&images, &settings)
        .ok_or_else(|| Error::DegenerateData("no scored proposals to calibrate on".into()))?;
    // Config value on the metric's own scale.
    let metric_threshold = match cfg.metric {
        MetricMode::Perceptual => c.threshold,
        MetricMode::Embedding => 1.0 - c.threshold,
    };
    create_dir(&out)?;
    write_json(
        &out.join("calibration.json"),
        &json!({
            "metric": cfg.metric.as_str(),
            "dissimilarity_threshold": c.threshold,
            "metric_threshold": metric_threshold,
            "precision": c.precision,
            "recall": c.recall,
            "f1": c.f1,
            "sweep": c.sweep,
        }),
    )?;
    println!(
        "metric_threshold {metric_threshold} (precision {:.4}, recall {:.4}, f1 {:.4})",
        c.precision, c.recall, c.f1
    );
    Ok(())
}

fn read_text_mask(path: &Path) -> Result<SegmentMask> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mask: SegmentMask = serde_json::from_str(&text).map_err(|e| Error::schema(path, e))?;
    mask.validate()?;
    Ok(mask)
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir()?;
    let det_path = require(cfg.detections.clone(), "detections file")?;
    let gt_dir = require(cfg.ground_truth_dir(), "ground-truth directory")?;
    let detections = read_detections(&det_path)?;
    let gt_files = list_files(&gt_dir, "json")?;
    if gt_files.is_empty() {
        return Err(Error::MissingInput {
            path: gt_dir,
            what: "ground-truth files".into(),
        });
    }
    let mut by_image: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        by_image.entry(d.image_id.clone()).or_default().push(d);
    }
    let masks_dir = cfg.text_masks_dir().filter(|d| d.is_dir());
    let mut tally = Tally::default();
    let mut coverage = CoverageReport::new(cfg.coverage_bin_width)?;
    let mut seen = 0;
    for path in &gt_files {
        let gt = GroundTruth::read(path)?;
        let (Some(w), Some(h)) = (gt.width, gt.height) else {
            return Err(Error::schema(
                path,
                "ground truth needs width and height for the border filter",
            ));
        };
        let dets = by_image.get(&gt.image_id).map(Vec::as_slice).unwrap_or(&[]);
        seen += usize::from(by_image.contains_key(&gt.image_id));
        let (report, kept) = evaluate_image(dets, &gt.entries, w, h, cfg.match_rule);
        tally.add_image(&report, dets, &kept);
        if let Some(dir) = &masks_dir {
            let mpath = dir.join(format!("{}.json", gt.image_id));
            if mpath.is_file() {
                coverage.add_image(&report, &kept, &read_text_mask(&mpath)?.decode()?);
            }
        }
    }
    if seen < by_image.len() {
        let unknown: Vec<&String> = by_image
            .keys()
            .filter(|id| !gt_files.iter().any(|p| file_stem(p) == **id))
            .collect();
        return Err(Error::schema(
            &det_path,
            format!("detections for images without ground truth: {unknown:?}"),
        ));
    }
    let metrics = tally.metrics();
    create_dir(&out)?;
    write_json(&out.join("metrics.json"), &metrics)?;
    if masks_dir.is_some() {
        fs::write(out.join("coverage.csv"), coverage.to_csv())
            .map_err(|e| Error::io(out.join("coverage.csv"), e))?;
    }
    print!("{}", format_metrics(&metrics));
    Ok(())
}

#[derive(Serialize)]
struct BenchRun {
    pairs_scored: u64,
    seconds: f64,
}

pub fn bench(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir()?;
    let p = prepare(cfg)?;
    let threshold = cfg.pipeline.dissimilarity_threshold(cfg.metric);
    let timed = |c: &RunConfig| -> Result<(Vec<ImageRun>, f64)> {
        let start = Instant::now();
        let runs = run(c, &p, threshold, &SystemClock::default())?;
        Ok((runs, start.elapsed().as_secs_f64()))
    };
    let (runs, pruned_s) = timed(cfg)?;
    let open = RunConfig {
        pipeline: templot_core::PipelineConfig {
            area_prefilter: false,
            histogram_filter: false,
            ..cfg.pipeline.clone()
        },
        ..cfg.clone()
    };
    let (open_runs, open_s) = timed(&open)?;
    let pairs = |rs: &[ImageRun]| {
        rs.iter()
            .map(|r| r.result.stats().pairs_scored)
            .sum::<u64>()
    };
    let logs: Vec<StageLog> = runs.iter().map(|r| r.result.log.clone()).collect();
    let timing: TimingReport = collect_timings(&logs);
    let pruned = BenchRun {
        pairs_scored: pairs(&runs),
        seconds: pruned_s,
    };
    let unpruned = BenchRun {
        pairs_scored: pairs(&open_runs),
        seconds: open_s,
    };
    create_dir(&out)?;
    write_json(
        &out.join("timing.json"),
        &json!({
            "timing": timing,
            "pruned": pruned,
            "unpruned": unpruned,
            "pair_ratio": unpruned.pairs_scored as f64 / pruned.pairs_scored.max(1) as f64,
            "wall_clock_ratio": open_s / pruned_s.max(1e-9),
        }),
    )?;
    print!("{}", timing.to_table());
    println!(
        "pairs {} pruned vs {} unpruned; wall clock {:.2}s vs {:.2}s",
        pruned.pairs_scored, unpruned.pairs_scored, pruned_s, open_s
    );
    Ok(())
}

/// Interchange formats accepted by `validate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Kind {
    Manifest,
    Features,
    PairScores,
    Ocr,
    Detections,
    GroundTruth,
    FontModel,
    Templates,
    Dataset,
}

/// Checks one interchange file, returning a short summary.
pub fn validate(kind: Kind, path: &Path) -> Result<Value> {
    if !path.exists() {
        return Err(Error::MissingInput {
            path: path.to_path_buf(),
            what: format!("{kind:?} input"),
        });
    }
    Ok(match kind {
        Kind::Manifest => {
            let (m, image, loaded) = load_manifest(path)?;
            let _: &ProposalManifest = &m;
            json!({"image_id": m.image_id, "width": image.width(), "height": image.height(),
                   "proposals": m.proposals.len(), "empty": loaded.dropped_empty})
        }
        Kind::Features => {
            let table = FeatureTable::read(path)?;
            let rows = read_features(path)?;
            json!({"dim": table.dim, "rows": rows.len()})
        }
        Kind::PairScores => json!({"pairs": PairScoreFile::read(path)?.pairs.len()}),
        Kind::Ocr => {
            let boxes = load_ocr(path)?;
            validate_ocr(&boxes, u32::MAX, u32::MAX)?;
            json!({"boxes": boxes.len()})
        }
        Kind::Detections => json!({"detections": read_detections(path)?.len()}),
        Kind::GroundTruth => {
            let gt = GroundTruth::read(path)?;
            if let (Some(w), Some(h)) = (gt.width, gt.height) {
                if let Some(e) = gt.entries.iter().find(|e| !e.bbox.fits_within(w, h)) {
                    return Err(Error::schema(
                        path,
                        format!("box {:?} outside {w}x{h}", e.bbox.to_array()),
                    ));
                }
            }
            json!({"image_id": gt.image_id, "entries": gt.entries.len()})
        }
        Kind::FontModel => {
            let m = FontModel::load(path)?;
            json!({"font_rgb": m.cluster.centroid_rgb})
        }
        Kind::Templates => json!({"templates": TemplateSet::load(path, 8)?.len()}),
        Kind::Dataset => json!({"images": Dataset::open(path)?.manifest.image_ids.len()}),
    })
}
