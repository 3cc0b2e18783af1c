use templot_core::classify::{Detection, PatchScorer};
use templot_core::eval::timing::MockClock;
use templot_core::eval::{evaluate_image, GroundTruth, MatchRule, Tally};
use templot_core::histfilter::TemplateSet;
use templot_core::proposals::{load_manifest, OracleParams};
use templot_core::synth::dataset::{write_dataset, Dataset, DatasetSpec};
use templot_core::synth::SceneSpec;
use templot_core::{Detector, ErrorKind, PipelineConfig};

fn small_spec() -> DatasetSpec {
    DatasetSpec {
        scene: SceneSpec {
            width: 600,
            height: 400,
            icons_per_image: (5, 8),
            class_count: 6,
            ..Default::default()
        },
        images: 3,
        oracle: OracleParams::default(),
    }
}

#[test]
fn written_dataset_detects_perfectly_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    write_dataset(dir.path(), &small_spec(), cfg.area_ratio_bounds).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let templates = TemplateSet::load(&ds.templates_dir(), cfg.histogram_bins_per_channel).unwrap();
    assert_eq!(templates.entries().len(), 6);
    let scorer = PatchScorer::new(&templates);
    let det = Detector {
        config: &cfg,
        templates: &templates,
        scorer: &scorer,
        threshold: 1.0,
    };

    let mut tally = Tally::default();
    for id in &ds.manifest.image_ids {
        let (_, image, loaded) = load_manifest(&ds.manifest_path(id)).unwrap();
        let out = det.detect(id, &loaded.proposals, &MockClock::default());
        let gt = GroundTruth::read(&ds.annotation_path(id)).unwrap();
        assert_eq!(
            (gt.width, gt.height),
            (Some(image.width()), Some(image.height()))
        );
        let dets: Vec<Detection> = out.detections;
        let (report, kept) = evaluate_image(
            &dets,
            &gt.entries,
            image.width(),
            image.height(),
            MatchRule::Mutual,
        );
        tally.add_image(&report, &dets, &kept);
    }
    let m = tally.metrics();
    assert!(m.counts.kept_gt() > 0);
    assert_eq!(
        (m.precision, m.recall, m.misclassification_rate),
        (1.0, 1.0, 0.0)
    );
}

#[test]
fn opening_a_missing_dataset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = Dataset::open(&dir.path().join("absent")).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);
}
