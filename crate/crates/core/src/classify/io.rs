//! Interchange files: binary feature tables, pair-score tables and detections.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

pub const FEATURE_MAGIC: &[u8; 4] = b"TBOF";
pub const FEATURE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

/// A dense row-major table of f32 features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub rows: Vec<Vec<f32>>,
}

impl FeatureTable {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.rows.len() * self.dim * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u32).to_le_bytes());
        for row in &self.rows {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a feature file; `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: String| Error::schema(origin, m);
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!(
                "feature file is {} bytes, shorter than its header",
                bytes.len()
            )));
        }
        if &bytes[..4] != FEATURE_MAGIC {
            return Err(bad("missing TBOF magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FEATURE_VERSION {
            return Err(bad(format!("unsupported feature file version {version}")));
        }
        let dim = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let count = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
        let expected = HEADER_LEN as u64 + dim as u64 * count as u64 * 4;
        if bytes.len() as u64 != expected {
            return Err(bad(format!(
                "{count} rows of dim {dim} need {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        if dim == 0 && count > 0 {
            return Err(bad("zero feature dimension".into()));
        }
        let body = &bytes[HEADER_LEN..];
        let mut rows = Vec::with_capacity(count);
        for r in 0..count {
            let row: Vec<f32> = body[r * dim * 4..(r + 1) * dim * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            if row.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("row {r} has a non-finite value")));
            }
            rows.push(row);
        }
        Ok(Self { dim, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Row ids of a feature table. Proposal rows are named
/// `"<image_id>/<proposal_id>"`, template rows `"class/<class_id>"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub ids: Vec<String>,
}

pub fn proposal_row_id(image_id: &str, proposal_id: u32) -> String {
    format!("{image_id}/{proposal_id}")
}

pub fn template_row_id(class_id: u32) -> String {
    format!("class/{class_id}")
}

/// Sidecar path for a feature file: `x.tbof` → `x.json`.
pub fn sidecar_path(features: &Path) -> PathBuf {
    features.with_extension("json")
}

/// Reads a feature file with its sidecar into an id → row map.
pub fn read_features(path: &Path) -> Result<HashMap<String, Vec<f32>>> {
    let table = FeatureTable::read(path)?;
    let side_path = sidecar_path(path);
    let text = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: FeatureSidecar =
        serde_json::from_str(&text).map_err(|e| Error::schema(&side_path, e))?;
    if sidecar.ids.len() != table.rows.len() {
        return Err(Error::schema(
            &side_path,
            format!(
                "{} ids for {} feature rows",
                sidecar.ids.len(),
                table.rows.len()
            ),
        ));
    }
    let mut map = HashMap::with_capacity(table.rows.len());
    for (id, row) in sidecar.ids.into_iter().zip(table.rows) {
        if map.insert(id.clone(), row).is_some() {
            return Err(Error::schema(&side_path, format!("duplicate row id {id}")));
        }
    }
    Ok(map)
}

pub fn write_features(path: &Path, ids: &[String], table: &FeatureTable) -> Result<()> {
    table.write(path)?;
    let side = sidecar_path(path);
    let text =
        serde_json::to_string(&FeatureSidecar { ids: ids.to_vec() }).expect("sidecar serializes");
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub proposal_id: u32,
    pub class_id: u32,
    pub score: f64,
}

/// Scores from an external pairwise metric for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScoreFile {
    pub pairs: Vec<PairScore>,
}

impl PairScoreFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Self = serde_json::from_str(&text).map_err(|e| Error::schema(path, e))?;
        file.validate().map_err(|m| Error::schema(path, m))?;
        Ok(file)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for p in &self.pairs {
            if !p.score.is_finite() {
                return Err(format!(
                    "pair ({}, {}) has a non-finite score",
                    p.proposal_id, p.class_id
                ));
            }
            if !seen.insert((p.proposal_id, p.class_id)) {
                return Err(format!(
                    "pair ({}, {}) listed twice",
                    p.proposal_id, p.class_id
                ));
            }
        }
        Ok(())
    }

    pub fn to_map(&self) -> HashMap<(u32, u32), f64> {
        self.pairs
            .iter()
            .map(|p| ((p.proposal_id, p.class_id), p.score))
            .collect()
    }
}

/// One output detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u32,
    pub score: f64,
    pub bbox: BoundingBox,
    pub metric: String,
    pub image_id: String,
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, e))
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    let text = serde_json::to_string_pretty(detections).expect("detections serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_table_round_trip() {
        let t = FeatureTable {
            dim: 3,
            rows: vec![vec![1.0, -2.5, 0.0], vec![3.25, 4.0, 1e-7]],
        };
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], b"TBOF");
        assert_eq!(bytes.len(), 14 + 2 * 3 * 4);
        // dim and count as little-endian u32 after the u16 version.
        assert_eq!(&bytes[4..14], &[1, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(FeatureTable::from_bytes(&bytes, Path::new("x")).unwrap(), t);
    }

    #[test]
    fn feature_table_rejects_corruption() {
        let t = FeatureTable {
            dim: 2,
            rows: vec![vec![1.0, 2.0]],
        };
        let mut bytes = t.to_bytes();
        bytes.pop();
        assert!(FeatureTable::from_bytes(&bytes, Path::new("x")).is_err());
        let mut bytes = t.to_bytes();
        bytes[0] = b'X';
        assert!(FeatureTable::from_bytes(&bytes, Path::new("x")).is_err());
        let t = FeatureTable {
            dim: 1,
            rows: vec![vec![f32::NAN]],
        };
        assert!(FeatureTable::from_bytes(&t.to_bytes(), Path::new("x")).is_err());
    }

    #[test]
    fn features_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.tbof");
        let ids = vec![proposal_row_id("img", 3), template_row_id(7)];
        write_features(
            &path,
            &ids,
            &FeatureTable {
                dim: 2,
                rows: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            },
        )
        .unwrap();
        let map = read_features(&path).unwrap();
        assert_eq!(map["img/3"], vec![1.0, 2.0]);
        assert_eq!(map["class/7"], vec![3.0, 4.0]);
    }

    #[test]
    fn pair_scores_json() {
        let f: PairScoreFile =
            serde_json::from_str(r#"{"pairs":[{"proposal_id":1,"class_id":2,"score":0.25}]}"#)
                .unwrap();
        assert_eq!(f.to_map()[&(1, 2)], 0.25);
        let dup = PairScoreFile {
            pairs: vec![f.pairs[0], f.pairs[0]],
        };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn detection_json_shape() {
        let d = Detection {
            class_id: 4,
            score: 0.125,
            bbox: BoundingBox::new(1, 2, 3, 4).unwrap(),
            metric: "patch".into(),
            image_id: "a".into(),
        };
        let v: serde_json::Value = serde_json::to_value(&d).unwrap();
        assert_eq!(v["bbox"], serde_json::json!([1, 2, 3, 4]));
        assert_eq!(v["class_id"], 4);
        assert_eq!(v["metric"], "patch");
    }
}
