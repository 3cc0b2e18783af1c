//! Run configuration: defaults, then a JSON file, then dotted overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use templot_core::eval::MatchRule;
use templot_core::proposals::OracleParams;
use templot_core::synth::{DatasetSpec, SceneSpec};
use templot_core::textremoval::TextRemovalConfig;
use templot_core::{Error, MetricMode, PipelineConfig, Result};

/// Where pair scores come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Deterministic in-process metrics.
    #[default]
    Builtin,
    /// A feature file written by an embedding adapter.
    Features,
    /// Per-image pair-score files written by a pairwise adapter.
    PairScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub metric: MetricMode,
    pub backend: Backend,
    /// Synthetic dataset directory; fills in every unset input path.
    pub dataset: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub manifests: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub pair_scores: Option<PathBuf>,
    pub ocr: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub text_masks: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Remove text before detection.
    pub text_removal: bool,
    pub removal: TextRemovalConfig,
    /// Reuse a saved font model instead of discovering one.
    pub font_model: Option<PathBuf>,
    /// Write annotated PNGs next to the detections.
    pub annotate: bool,
    pub match_rule: MatchRule,
    pub coverage_bin_width: f64,
    pub synth: DatasetSpec,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            metric: MetricMode::default(),
            backend: Backend::default(),
            dataset: None,
            templates: None,
            manifests: None,
            images: None,
            features: None,
            pair_scores: None,
            ocr: None,
            ground_truth: None,
            text_masks: None,
            detections: None,
            output: None,
            text_removal: false,
            removal: TextRemovalConfig::default(),
            font_model: None,
            annotate: false,
            match_rule: MatchRule::default(),
            coverage_bin_width: 0.1,
            synth: DatasetSpec {
                scene: SceneSpec::default(),
                images: 50,
                oracle: OracleParams::default(),
            },
            jobs: 0,
        }
    }
}

/// Sets `path` (dot separated) inside `root`, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("bad override path {path:?}")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            Error::InvalidConfig(format!(
                "override {path:?}: {} is not an object",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

/// Parses `a.b=value`; the value is JSON when it parses as JSON, else a string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override {s:?} is not PATH=VALUE")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Builds the configuration from its layers, later layers winning.
pub fn load(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("config serializes");
    if let Some(path) = file {
        if !path.is_file() {
            return Err(Error::MissingInput {
                path: path.to_path_buf(),
                what: "config file".into(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file_value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if !file_value.is_object() {
            return Err(Error::InvalidConfig(format!(
                "{}: expected a JSON object",
                path.display()
            )));
        }
        merge(&mut value, file_value);
    }
    for (k, v) in overrides {
        set_path(&mut value, k, v.clone())?;
    }
    let cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.removal.validate()?;
        match (self.metric, self.backend) {
            (MetricMode::Perceptual, Backend::Features) => {
                return Err(Error::InvalidConfig(
                    "feature files need metric \"embedding\"".into(),
                ))
            }
            (MetricMode::Embedding, Backend::PairScores) => {
                return Err(Error::InvalidConfig(
                    "pair-score files need metric \"perceptual\"".into(),
                ))
            }
            _ => {}
        }
        if !(self.coverage_bin_width > 0.0 && self.coverage_bin_width <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "coverage_bin_width {} outside (0, 1]",
                self.coverage_bin_width
            )));
        }
        Ok(())
    }

    fn or_dataset(&self, explicit: &Option<PathBuf>, sub: &str) -> Option<PathBuf> {
        explicit
            .clone()
            .or_else(|| self.dataset.as_ref().map(|d| d.join(sub)))
    }

    pub fn templates_dir(&self) -> Option<PathBuf> {
        self.or_dataset(&self.templates, "templates")
    }
    pub fn manifests_dir(&self) -> Option<PathBuf> {
        self.or_dataset(&self.manifests, "masks")
    }
    pub fn images_dir(&self) -> Option<PathBuf> {
        self.or_dataset(&self.images, "images")
    }
    pub fn ocr_dir(&self) -> Option<PathBuf> {
        self.or_dataset(&self.ocr, "ocr")
    }
    pub fn ground_truth_dir(&self) -> Option<PathBuf> {
        self.or_dataset(&self.ground_truth, "annotations")
    }
    pub fn text_masks_dir(&self) -> Option<PathBuf> {
        self.or_dataset(&self.text_masks, "textmasks")
    }

    pub fn output_dir(&self) -> Result<PathBuf> {
        self.output
            .clone()
            .ok_or_else(|| Error::InvalidConfig("no output directory (use --output)".into()))
    }
}

/// `path` if it exists, else a `MissingInput` naming it.
pub fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let path = path.ok_or_else(|| Error::InvalidConfig(format!("no {what} given")))?;
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingInput {
            path,
            what: what.into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"pipeline": {"nms_overlap": 0.3}, "jobs": 4}"#).unwrap();
        let cfg = load(
            Some(&file),
            &[
                parse_override("pipeline.nms_overlap=0.2").unwrap(),
                parse_override("output=out").unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.pipeline.nms_overlap, 0.2);
        assert_eq!(cfg.pipeline.shortlist_factor, 0.9);
        assert_eq!(cfg.jobs, 4);
        assert_eq!(cfg.output, Some(PathBuf::from("out")));
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let e = load(None, &[parse_override("pipeline.nope=1").unwrap()]).unwrap_err();
        assert!(matches!(e, Error::InvalidConfig(_)));
        assert!(load(None, &[("metric".into(), Value::String("clip".into()))]).is_err());
    }

    #[test]
    fn incompatible_backend_is_rejected() {
        let e = load(None, &[parse_override("backend=features").unwrap()]).unwrap_err();
        assert!(matches!(e, Error::InvalidConfig(_)));
    }

    #[test]
    fn dataset_fills_paths() {
        let cfg = RunConfig {
            dataset: Some("d".into()),
            ocr: Some("o".into()),
            ..Default::default()
        };
        assert_eq!(cfg.templates_dir(), Some(PathBuf::from("d/templates")));
        assert_eq!(cfg.ocr_dir(), Some(PathBuf::from("o")));
    }

    #[test]
    fn override_values() {
        assert_eq!(parse_override("a=1").unwrap().1, Value::from(1));
        assert_eq!(parse_override("a=x/y").unwrap().1, Value::from("x/y"));
        assert!(parse_override("a").is_err());
        let mut v = serde_json::json!({"a": 1});
        assert!(set_path(&mut v, "a.b", Value::Null).is_err());
    }
}
