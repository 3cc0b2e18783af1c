//! Shared fixtures for the benchmarks.

use templot_core::proposals::{OracleParams, Proposal};
use templot_core::synth::dataset::{
    generate_dataset, oracle_proposals, DatasetSpec, GeneratedDataset,
};
use templot_core::synth::SceneSpec;
use templot_core::PipelineConfig;

/// One perturbed scene with its oracle proposals.
pub fn scene_fixture(text_density: f64) -> (GeneratedDataset, Vec<Proposal>) {
    let spec = DatasetSpec {
        scene: SceneSpec {
            text_density,
            ..Default::default()
        },
        images: 1,
        oracle: OracleParams {
            perturbation: 2,
            distractor_factor: 2.0,
            ..Default::default()
        },
    };
    let data = generate_dataset(&spec, PipelineConfig::default().area_ratio_bounds)
        .expect("fixture dataset");
    let proposals = oracle_proposals(&data.scenes[0], &spec.oracle, 0).expect("fixture proposals");
    (data, proposals)
}
