use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn templot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_templot"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("json error line");
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

fn write(path: &Path, v: &Value) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn det(class_id: u32, bbox: [u32; 4]) -> Value {
    json!({"image_id": "fixture", "class_id": class_id, "score": 0.1, "bbox": bbox, "metric": "patch"})
}

#[test]
fn evaluate_three_gt_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let gt = json!({"image_id": "fixture", "width": 100, "height": 100, "entries": [
        {"class_id": 1, "bbox": [10, 10, 30, 30]},
        {"class_id": 2, "bbox": [50, 10, 70, 30]},
        {"class_id": 3, "bbox": [10, 50, 30, 70]},
    ]});
    write(&dir.path().join("gt/fixture.json"), &gt);
    let dets = json!([
        det(1, [10, 10, 30, 30]),
        det(5, [50, 10, 70, 30]),
        det(3, [80, 80, 95, 95])
    ]);
    write(&dir.path().join("detections.json"), &dets);
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let out = templot(&[
        "evaluate",
        "--detections",
        &p("detections.json"),
        "--ground-truth",
        &p("gt"),
        "--output",
        &p("eval"),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("eval/metrics.json")).unwrap(),
    )
    .unwrap();
    for key in ["precision", "recall", "misclassification_rate"] {
        assert!(
            (m[key].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12,
            "{key}: {}",
            m[key]
        );
    }
}

#[test]
fn missing_input_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let absent = dir.path().join("absent");
    let out = templot(&[
        "detect",
        "--dataset",
        absent.to_str().unwrap(),
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_error(&out);
    assert_eq!(err["kind"], "config");
    assert!(err["path"].as_str().unwrap().contains("absent"));
}

#[test]
fn unknown_override_is_rejected() {
    let out = templot(&[
        "--set",
        "pipeline.no_such_field=1",
        "validate",
        "manifest",
        "/nonexistent.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_detections_exit_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dets.json");
    std::fs::write(&path, "[{\"class_id\": \"seven\"}]").unwrap();
    let out = templot(&["validate", "detections", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["kind"], "data");
}

#[test]
fn validate_accepts_generated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    let ds_s = ds.to_str().unwrap();
    let out = templot(&[
        "synth",
        "--output",
        ds_s,
        "--images",
        "2",
        "--width",
        "600",
        "--height",
        "400",
        "--classes",
        "5",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for (kind, path) in [
        ("dataset", ds.clone()),
        ("templates", ds.join("templates")),
        ("manifest", ds.join("masks/img_0000.json")),
    ] {
        let out = templot(&["validate", kind, path.to_str().unwrap()]);
        assert!(
            out.status.success(),
            "{kind}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["valid"], true);
    }
}
