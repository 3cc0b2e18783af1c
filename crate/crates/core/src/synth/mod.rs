//! Deterministic synthetic map scenes for self-contained verification.

pub mod dataset;
pub mod font;
pub mod scene;
pub mod templates;

pub use dataset::{
    generate_dataset, write_dataset, Dataset, DatasetManifest, DatasetSpec, GeneratedDataset,
};
pub use scene::{generate_scene, SceneBundle, SceneSpec};
pub use templates::generate_templates;
