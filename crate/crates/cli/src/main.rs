//! `templot`: template-based icon detection over segment proposals.

mod annotate;
mod commands;
mod config;
mod engine;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use templot_core::{Error, ErrorKind};

use crate::commands::Kind;

#[derive(Parser)]
#[command(
    name = "templot",
    version,
    about = "Training-free template detection on segment proposals"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for synthesis, the oracle segmenter and text-removal sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set pipeline.nms_overlap=0.2`.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Inputs {
    /// Synthetic dataset directory supplying default input paths.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    manifests: Option<PathBuf>,
    /// perceptual or embedding.
    #[arg(long)]
    metric: Option<String>,
    /// builtin, features or pair_scores.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    pair_scores: Option<PathBuf>,
    /// Metric threshold on the metric's own scale.
    #[arg(long)]
    threshold: Option<f64>,
    /// Remove text before detection.
    #[arg(long)]
    text_removal: bool,
    #[arg(long)]
    ocr: Option<PathBuf>,
    #[arg(long)]
    font_model: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        classes: Option<u32>,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        #[arg(long)]
        perturbation: Option<u32>,
        /// Distractor proposals per icon.
        #[arg(long)]
        distractors: Option<f64>,
        #[arg(long)]
        text_density: Option<f64>,
    },
    /// Detect icons and write detections.json.
    Detect {
        #[command(flatten)]
        inputs: Inputs,
        /// Also write annotated PNGs.
        #[arg(long)]
        annotate: bool,
    },
    /// Discover the font color, then write text masks and inpainted images.
    RemoveText {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        ocr: Option<PathBuf>,
        #[arg(long)]
        font_model: Option<PathBuf>,
    },
    /// Pick the metric threshold that maximizes F1 on labelled data.
    Calibrate {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Score detections against ground truth.
    Evaluate {
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        text_masks: Option<PathBuf>,
    },
    /// Per-stage timings, with and without pruning.
    Bench {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Check an interchange file.
    Validate {
        #[arg(value_enum)]
        kind: Kind,
        path: PathBuf,
    },
}

fn push<T: Into<Value>>(o: &mut Vec<(String, Value)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        o.push((key.to_string(), v.into()));
    }
}

fn path_value(p: Option<PathBuf>) -> Option<Value> {
    p.map(|p| Value::String(p.to_string_lossy().into_owned()))
}

fn input_overrides(o: &mut Vec<(String, Value)>, i: Inputs) {
    push(o, "dataset", path_value(i.dataset));
    push(o, "templates", path_value(i.templates));
    push(o, "manifests", path_value(i.manifests));
    push(o, "metric", i.metric);
    push(o, "backend", i.backend);
    push(o, "features", path_value(i.features));
    push(o, "pair_scores", path_value(i.pair_scores));
    push(o, "pipeline.metric_threshold", i.threshold);
    if i.text_removal {
        push(o, "text_removal", Some(true));
    }
    push(o, "ocr", path_value(i.ocr));
    push(o, "font_model", path_value(i.font_model));
    push(o, "ground_truth", path_value(i.ground_truth));
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut o: Vec<(String, Value)> = Vec::new();
    for s in &cli.set {
        o.push(config::parse_override(s)?);
    }
    push(&mut o, "jobs", cli.jobs);
    push(&mut o, "output", path_value(cli.output));
    if let Some(seed) = cli.seed {
        for k in ["synth.scene.seed", "synth.oracle.seed", "removal.seed"] {
            o.push((k.into(), seed.into()));
        }
    }
    enum Todo {
        Synth,
        Detect,
        RemoveText,
        Calibrate,
        Evaluate,
        Bench,
    }
    let todo = match cli.command {
        Command::Synth {
            images,
            classes,
            width,
            height,
            perturbation,
            distractors,
            text_density,
        } => {
            push(&mut o, "synth.images", images);
            push(&mut o, "synth.scene.class_count", classes);
            push(&mut o, "synth.scene.width", width);
            push(&mut o, "synth.scene.height", height);
            push(&mut o, "synth.oracle.perturbation", perturbation);
            push(&mut o, "synth.oracle.distractor_factor", distractors);
            push(&mut o, "synth.scene.text_density", text_density);
            Todo::Synth
        }
        Command::Detect { inputs, annotate } => {
            input_overrides(&mut o, inputs);
            if annotate {
                push(&mut o, "annotate", Some(true));
            }
            Todo::Detect
        }
        Command::RemoveText {
            dataset,
            images,
            ocr,
            font_model,
        } => {
            push(&mut o, "dataset", path_value(dataset));
            push(&mut o, "images", path_value(images));
            push(&mut o, "ocr", path_value(ocr));
            push(&mut o, "font_model", path_value(font_model));
            Todo::RemoveText
        }
        Command::Calibrate { inputs } => {
            input_overrides(&mut o, inputs);
            Todo::Calibrate
        }
        Command::Evaluate {
            detections,
            dataset,
            ground_truth,
            text_masks,
        } => {
            push(&mut o, "detections", path_value(detections));
            push(&mut o, "dataset", path_value(dataset));
            push(&mut o, "ground_truth", path_value(ground_truth));
            push(&mut o, "text_masks", path_value(text_masks));
            Todo::Evaluate
        }
        Command::Bench { inputs } => {
            input_overrides(&mut o, inputs);
            Todo::Bench
        }
        Command::Validate { kind, path } => {
            let summary = commands::validate(kind, &path)?;
            println!(
                "{}",
                json!({"valid": true, "kind": format!("{kind:?}"), "path": path, "summary": summary})
            );
            return Ok(());
        }
    };
    let cfg = config::load(cli.config.as_deref(), &o)?;
    log::debug!(
        "configuration: {}",
        serde_json::to_string(&cfg).unwrap_or_default()
    );
    match todo {
        Todo::Synth => commands::synth(&cfg),
        Todo::Detect => commands::detect(&cfg),
        Todo::RemoveText => commands::remove_text(&cfg),
        Todo::Calibrate => commands::calibrate_cmd(&cfg),
        Todo::Evaluate => commands::evaluate(&cfg),
        Todo::Bench => commands::bench(&cfg),
    }
}

fn report(kind: &str, code: &str, message: String, path: Option<&std::path::Path>) {
    let mut e = json!({"kind": kind, "code": code, "message": message});
    if let Some(p) = path {
        e["path"] = json!(p);
    }
    eprintln!("{}", json!({ "error": e }));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TEMPLOT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            report("config", "Usage", e.to_string(), None);
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Config => ("config", 2),
                ErrorKind::Data => ("data", 3),
                ErrorKind::Internal => ("internal", 4),
            };
            report(kind, e.name(), e.to_string(), e.path());
            ExitCode::from(code)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            report("internal", "Panic", msg, None);
            ExitCode::from(4)
        }
    }
}
