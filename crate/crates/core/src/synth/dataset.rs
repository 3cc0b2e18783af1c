//! On-disk synthetic datasets.
//!
//! ```text
//! dataset.json        spec, oracle settings and image ids
//! templates/          template PNGs and index.json
//! images/ID.png
//! annotations/ID.json ground truth
//! masks/ID.json       oracle proposals in manifest form
//! textmasks/ID.json   text ink mask (RLE)
//! ocr/ID.json         text boxes
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{generate_scene, SceneBundle, SceneSpec};
use super::templates::generate_templates;
use crate::error::{Error, Result};
use crate::histfilter::TemplateSet;
use crate::mask::SegmentMask;
use crate::proposals::{
    oracle_segment, OracleParams, OracleScene, ProposalManifest, SegmenterParams,
};

pub const DATASET_FILE: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub scene: SceneSpec,
    pub images: usize,
    pub oracle: OracleParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub image_ids: Vec<String>,
}

pub fn image_id(index: usize) -> String {
    format!("img_{index:04}")
}

/// Scene seed of image `index`, mixed so neighbouring seeds differ widely.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// In-memory dataset: templates plus one bundle per image.
pub struct GeneratedDataset {
    pub templates: TemplateSet,
    pub scenes: Vec<SceneBundle>,
}

/// Generates templates and every scene. Scenes run in parallel on the
/// current rayon pool; the result does not depend on its width.
pub fn generate_dataset(spec: &DatasetSpec, area_bounds: (f64, f64)) -> Result<GeneratedDataset> {
    let s = &spec.scene;
    let templates = generate_templates(s.class_count, s.template_size, s.seed)?;
    s.validate(&templates, area_bounds)?;
    let scenes = (0..spec.images)
        .into_par_iter()
        .map(|i| {
            let scene_spec = SceneSpec {
                seed: scene_seed(s.seed, i),
                ..s.clone()
            };
            let mut bundle = generate_scene(&scene_spec, &templates)?;
            bundle.annotations.image_id = image_id(i);
            Ok(bundle)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedDataset { templates, scenes })
}

/// Oracle parameters for image `index`.
pub fn oracle_for(params: &OracleParams, index: usize) -> OracleParams {
    OracleParams {
        seed: scene_seed(params.seed, index),
        ..params.clone()
    }
}

/// Oracle proposals for one scene.
pub fn oracle_proposals(
    bundle: &SceneBundle,
    params: &OracleParams,
    index: usize,
) -> Result<Vec<crate::proposals::Proposal>> {
    let scene = OracleScene {
        image: &bundle.image,
        icon_masks: &bundle.icon_masks,
        text_mask: (!bundle.ocr.is_empty()).then_some(&bundle.text_mask),
        ocr: &bundle.ocr,
    };
    oracle_segment(&scene, &oracle_for(params, index))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string(value).map_err(|e| Error::schema(path, e.to_string()))?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Paths inside a dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(DATASET_FILE);
        if !path.exists() {
            return Err(Error::MissingInput {
                path,
                what: "dataset manifest".into(),
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest =
            serde_json::from_str(&text).map_err(|e| Error::schema(&path, e.to_string()))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn templates_dir(&self) -> PathBuf {
        self.root.join("templates")
    }
    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.png"))
    }
    pub fn annotation_path(&self, id: &str) -> PathBuf {
        self.root.join("annotations").join(format!("{id}.json"))
    }
    pub fn manifest_path(&self, id: &str) -> PathBuf {
        self.root.join("masks").join(format!("{id}.json"))
    }
    pub fn textmask_path(&self, id: &str) -> PathBuf {
        self.root.join("textmasks").join(format!("{id}.json"))
    }
    pub fn ocr_path(&self, id: &str) -> PathBuf {
        self.root.join("ocr").join(format!("{id}.json"))
    }

    pub fn read_text_mask(&self, id: &str) -> Result<SegmentMask> {
        let path = self.textmask_path(id);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mask: SegmentMask =
            serde_json::from_str(&text).map_err(|e| Error::schema(&path, e.to_string()))?;
        mask.validate()?;
        Ok(mask)
    }
}

/// Generates a dataset and writes it under `root`, overwriting files with
/// identical bytes on re-runs.
pub fn write_dataset(root: &Path, spec: &DatasetSpec, area_bounds: (f64, f64)) -> Result<Dataset> {
    let generated = generate_dataset(spec, area_bounds)?;
    for d in [
        "images",
        "annotations",
        "masks",
        "textmasks",
        "ocr",
        "templates",
    ] {
        create_dir(&root.join(d))?;
    }
    let manifest = DatasetManifest {
        spec: spec.clone(),
        image_ids: (0..spec.images).map(image_id).collect(),
    };
    let dataset = Dataset {
        root: root.to_path_buf(),
        manifest,
    };
    generated.templates.save(&dataset.templates_dir())?;

    generated
        .scenes
        .par_iter()
        .enumerate()
        .map(|(i, bundle)| {
            let id = image_id(i);
            bundle.image.save_png(&dataset.image_path(&id))?;
            bundle.annotations.write(&dataset.annotation_path(&id))?;
            write_json(
                &dataset.textmask_path(&id),
                &bundle.text_mask.to_segment_mask(),
            )?;
            write_json(&dataset.ocr_path(&id), &bundle.ocr)?;
            let proposals = oracle_proposals(bundle, &spec.oracle, i)?;
            let segmenter = SegmenterParams {
                extra: Some(serde_json::json!({ "oracle": oracle_for(&spec.oracle, i) })),
                ..Default::default()
            };
            ProposalManifest::from_proposals(
                &id,
                &format!("../images/{id}.png"),
                segmenter,
                &proposals,
            )
            .write(&dataset.manifest_path(&id))
        })
        .collect::<Result<Vec<()>>>()?;
    write_json(&root.join(DATASET_FILE), &dataset.manifest)?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::GroundTruth;
    use crate::proposals::load_manifest;
    use crate::textremoval::load_ocr;

    fn spec() -> DatasetSpec {
        DatasetSpec {
            scene: SceneSpec {
                width: 300,
                height: 200,
                icons_per_image: (4, 5),
                text_density: 0.5,
                ..Default::default()
            },
            images: 3,
            oracle: OracleParams {
                perturbation: 2,
                ..Default::default()
            },
        }
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_dataset(dir.path(), &spec(), (0.25, 2.0)).unwrap();
        let reopened = Dataset::open(dir.path()).unwrap();
        assert_eq!(reopened.manifest, ds.manifest);
        let generated = generate_dataset(&spec(), (0.25, 2.0)).unwrap();
        for (i, id) in ds.manifest.image_ids.iter().enumerate() {
            let gt = GroundTruth::read(&ds.annotation_path(id)).unwrap();
            assert_eq!(gt, generated.scenes[i].annotations);
            let (manifest, image, loaded) = load_manifest(&ds.manifest_path(id)).unwrap();
            assert_eq!(manifest.image_id, *id);
            assert_eq!(image.as_bytes(), generated.scenes[i].image.as_bytes());
            assert!(loaded.proposals.len() >= gt.entries.len());
            assert_eq!(
                ds.read_text_mask(id).unwrap().decode().unwrap(),
                generated.scenes[i].text_mask
            );
            assert_eq!(load_ocr(&ds.ocr_path(id)).unwrap(), generated.scenes[i].ocr);
        }
        let t = TemplateSet::load(&ds.templates_dir(), 8).unwrap();
        assert_eq!(t.len(), 20);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        write_dataset(a.path(), &spec(), (0.25, 2.0)).unwrap();
        let first = fs::read(a.path().join("masks/img_0001.json")).unwrap();
        let png = fs::read(a.path().join("images/img_0002.png")).unwrap();
        write_dataset(a.path(), &spec(), (0.25, 2.0)).unwrap();
        assert_eq!(
            first,
            fs::read(a.path().join("masks/img_0001.json")).unwrap()
        );
        assert_eq!(png, fs::read(a.path().join("images/img_0002.png")).unwrap());
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Dataset::open(dir.path()),
            Err(Error::MissingInput { .. })
        ));
    }

    #[test]
    fn scene_seeds_differ() {
        let s: std::collections::BTreeSet<u64> = (0..1000).map(|i| scene_seed(1, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
