mod common;

use std::fs;

use common::{build_dataset, p, run, run_ok, split_manifest};
use posepilot::manifest::load_manifest;
use posepilot::scores::load_scores;
use posepilot_core::metrics::MetricsReport;
use posepilot_core::{ClassLabel, Split, Task};
use serde_json::Value;

#[test]
fn ingest_keeps_largest_person_and_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [12, 12, 12]);
    let manifest = split_manifest(&ds);
    let m = load_manifest(&manifest).unwrap();
    assert_eq!(m.len(), 36);
    assert_eq!(m.class_counts().values().copied().collect::<Vec<_>>(), vec![12, 12, 12]);
    let r = m.get("sitting_003").unwrap();
    assert_eq!(r.file_path, "images/sitting/sitting_003.png");
    assert!((r.person_box.unwrap().area() - 28.0 * 44.0).abs() < 1e-9);
    assert!(r.keypoints.is_some());
    assert!(m.records().iter().all(|r| r.split != Split::Unassigned));
}

#[test]
fn split_is_deterministic_and_in_place() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [10, 10, 10]);
    let manifest = split_manifest(&ds);
    let first = fs::read(&manifest).unwrap();
    run_ok(&["split", "--manifest", p(&manifest), "--seed", "42"]);
    assert_eq!(fs::read(&manifest).unwrap(), first);
    let other = dir.path().join("other.jsonl");
    run_ok(&["split", "--manifest", p(&manifest), "--seed", "7", "--out", p(&other)]);
    let m = load_manifest(&other).unwrap();
    for label in ClassLabel::ALL {
        let n = |s| m.records().iter().filter(|r| r.label == label && r.split == s).count();
        assert_eq!((n(Split::Train), n(Split::Val), n(Split::Test)), (8, 1, 1));
    }
}

#[test]
fn bad_manifest_line_is_reported_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    fs::write(
        &m,
        "{\"image_id\":\"a\",\"file_path\":\"a.png\",\"label\":\"sitting\",\"width_px\":4,\"height_px\":4}\n\
         {\"image_id\":\"b\",\"file_path\":\"b.png\",\"label\":\"crouching\",\"width_px\":4,\"height_px\":4}\n",
    )
    .unwrap();
    let out = run(&["eda", "--manifest", p(&m)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("m.jsonl:2:") && err.contains("crouching"), "{err}");
}

#[test]
fn classify_calibrate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [15, 15, 15]);
    let manifest = split_manifest(&ds);
    let val = dir.path().join("val.jsonl");
    let test = dir.path().join("test.jsonl");
    let calib = dir.path().join("calib.json");
    let report = dir.path().join("report.json");
    run_ok(&["classify", "--manifest", p(&manifest), "--promptset", "tier1", "--split", "val", "--out", p(&val)]);
    run_ok(&["classify", "--manifest", p(&manifest), "--promptset", "tier1", "--split", "test", "--out", p(&test)]);
    let m = load_manifest(&manifest).unwrap();
    let n_test = m.records().iter().filter(|r| r.split == Split::Test).count();
    assert_eq!(load_scores(&test).unwrap().len(), n_test);
    run_ok(&["calibrate", "--scores", p(&val), "--out", p(&calib)]);
    let c: Value = serde_json::from_slice(&fs::read(&calib).unwrap()).unwrap();
    for key in ["temperature", "validation_nll", "ece_before", "ece_after", "bins"] {
        assert!(c.get(key).is_some(), "calibration output lacks {key}");
    }
    let out = run_ok(&[
        "evaluate", "--scores", p(&test), "--manifest", p(&manifest), "--task", "multi", "--out", p(&report), "--table",
    ]);
    let r: MetricsReport = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r.n_evaluated, n_test);
    assert!(r.ece.is_some());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("Model"), "{table}");
    assert!(table.lines().nth(2).unwrap().starts_with("tier1"));

    // the temperature never moves the argmax, so accuracy is unchanged
    let calibrated = dir.path().join("calibrated.json");
    run_ok(&[
        "evaluate", "--scores", p(&test), "--manifest", p(&manifest), "--out", p(&calibrated), "--calibration", p(&calib),
    ]);
    let rc: MetricsReport = serde_json::from_slice(&fs::read(&calibrated).unwrap()).unwrap();
    assert_eq!(rc.accuracy, r.accuracy);
}

#[test]
fn binary_scores_leave_out_standing() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [10, 10, 10]);
    let manifest = split_manifest(&ds);
    let scores = dir.path().join("b.jsonl");
    run_ok(&["classify", "--manifest", p(&manifest), "--task", "binary", "--promptset", "tier2", "--out", p(&scores)]);
    let s = load_scores(&scores).unwrap();
    assert_eq!(s.len(), 20);
    assert!(s.iter().all(|r| r.scores.similarities.len() == 2 && r.true_label != Some(ClassLabel::Standing)));
    // evaluating binary scores as multi-class is refused
    let out = run(&["evaluate", "--scores", p(&scores), "--manifest", p(&manifest), "--out", p(&dir.path().join("x.json"))]);
    assert!(!out.status.success());
    let report = dir.path().join("bin.json");
    run_ok(&["evaluate", "--scores", p(&scores), "--manifest", p(&manifest), "--task", "binary", "--out", p(&report)]);
    let r: MetricsReport = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r.task, Task::Binary);
}

#[test]
fn unreadable_image_is_a_failure_entry() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [5, 5, 5]);
    let manifest = split_manifest(&ds);
    fs::write(ds.images_dir.join("standing/standing_002.png"), b"not a png").unwrap();
    let scores = dir.path().join("s.jsonl");
    let out = run(&["classify", "--manifest", p(&manifest), "--out", p(&scores)]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(load_scores(&scores).unwrap().len(), 14);
    let failures = fs::read_to_string(dir.path().join("s.failures.jsonl")).unwrap();
    assert!(failures.contains("standing_002"));
}

#[test]
fn unknown_backend_lists_known_names() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [3, 3, 3]);
    let manifest = split_manifest(&ds);
    let out = run(&["classify", "--manifest", p(&manifest), "--backend", "nope", "--out", p(&dir.path().join("s"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mock") && err.contains("clip-family"), "{err}");
}

#[test]
fn prompts_commands() {
    let dir = tempfile::tempdir().unwrap();
    let list = String::from_utf8(run_ok(&["prompts", "list"]).stdout).unwrap();
    assert_eq!(list.lines().count(), 3);
    let shown = String::from_utf8(run_ok(&["prompts", "show", "tier3"]).stdout).unwrap();
    assert!(shown.contains("set_id = \"tier3\""));

    let file = dir.path().join("scene.toml");
    fs::write(
        &file,
        "set_id = \"scene\"\ntier = 0\n[prompts]\nsitting = [\"a person sitting on a park bench at sunset\"]\n\
         standing = [\"a person standing\"]\nwalking_running = [\"a person walking\"]\n",
    )
    .unwrap();
    let lint = String::from_utf8(run_ok(&["prompts", "lint", p(&file)]).stdout).unwrap();
    assert!(lint.contains("sunset"), "{lint}");

    let store = dir.path().join("store");
    run_ok(&["prompts", "add", p(&file), "--store", p(&store)]);
    let stored = String::from_utf8(run_ok(&["prompts", "show", "scene", "--store", p(&store)]).stdout).unwrap();
    assert!(stored.contains("revision = 1"));
    // a stale base revision is refused
    assert!(!run(&["prompts", "add", p(&file), "--store", p(&store)]).status.success());
    assert_eq!(String::from_utf8(run_ok(&["prompts", "list", "--store", p(&store)]).stdout).unwrap().lines().count(), 4);

    let blank = dir.path().join("blank.toml");
    fs::write(&blank, "set_id = \"b\"\ntier = 0\n[prompts]\nsitting = [\" \"]\nstanding = [\"x\"]\nwalking_running = [\"y\"]\n").unwrap();
    assert!(!run(&["prompts", "lint", p(&blank)]).status.success());
}

#[test]
fn pose_eval_fit_and_default() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [20, 20, 20]);
    let manifest = split_manifest(&ds);
    let out = dir.path().join("pose.json");
    let th = dir.path().join("th.toml");
    run_ok(&[
        "pose-eval", "--manifest", p(&manifest), "--thresholds", "fit", "--full-set", "--write-thresholds", p(&th), "--out",
        p(&out),
    ]);
    let r: Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    // two of every twenty records hide their ankles
    assert_eq!(r["coverage"]["n_total"], 60);
    assert_eq!(r["coverage"]["n_covered"], 54);
    assert_eq!(r["coverage"]["accuracy_on_covered"], 1.0);
    assert_eq!(r["evaluated_on"], "all");

    let again = dir.path().join("pose2.json");
    run_ok(&["pose-eval", "--manifest", p(&manifest), "--thresholds", p(&th), "--out", p(&again)]);
    let r2: Value = serde_json::from_slice(&fs::read(&again).unwrap()).unwrap();
    assert_eq!(r2["evaluated_on"], "test");
    assert_eq!(r2["thresholds"], r["thresholds"]);
}

#[test]
fn pose_ingest_runs_detector_command() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [3, 3, 3]);
    let manifest = split_manifest(&ds);
    let script = dir.path().join("detector.sh");
    let kp: Vec<String> = (0..17).flat_map(|k| [format!("{}", 30 + k % 3), format!("{}", 2 + 2 * k), "0.9".into()]).collect();
    fs::write(
        &script,
        format!(
            "#!/bin/sh\ncase \"$1\" in *standing_001*) echo 'not json'; exit 0;; esac\n\
             echo '{{\"detections\":[{{\"box\":[1,1,4,4],\"keypoints\":[{k}]}},{{\"box\":[10,2,30,40],\"keypoints\":[{k}]}}]}}'\n",
            k = kp.join(",")
        ),
    )
    .unwrap();
    let out = dir.path().join("with_kp.jsonl");
    let res = run(&["pose-ingest", "--manifest", p(&manifest), "--detector-cmd", &format!("sh {}", p(&script)), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    let audit = fs::read_to_string(dir.path().join("with_kp.detections.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 9);
    let first: Value = serde_json::from_str(audit.lines().next().unwrap()).unwrap();
    assert_eq!(first["chosen"], 1);
    assert!(audit.lines().any(|l| l.contains("standing_001") && l.contains("error")));
    let m = load_manifest(&out).unwrap();
    assert_eq!(m.get("sitting_000").unwrap().keypoints.as_ref().unwrap().point(0).confidence, 0.9);
}

#[test]
fn saliency_writes_stats_and_overlays() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [3, 3, 3]);
    let manifest = split_manifest(&ds);
    let out = dir.path().join("sal.jsonl");
    let overlays = dir.path().join("overlays");
    run_ok(&[
        "saliency", "--manifest", p(&manifest), "--promptset", "tier3", "--image-id", "sitting_001", "--image-id", "standing_002",
        "--class", "all", "--overlay-dir", p(&overlays), "--out", p(&out),
    ]);
    let lines: Vec<Value> = fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    for l in &lines {
        let s = &l["stats"];
        let prop = s["in_person_proportion"].as_f64().unwrap();
        let ent = s["normalized_entropy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&prop) && (0.0..=1.0).contains(&ent));
        let name = l["overlay"].as_str().unwrap();
        let img = image::open(overlays.join(name)).unwrap();
        assert_eq!((img.width(), img.height()), common::IMAGE_SIZE);
    }
}

#[test]
fn eda_reports_constant_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [4, 4, 4]);
    let manifest = split_manifest(&ds);
    let out = String::from_utf8(run_ok(&["eda", "--manifest", p(&manifest)]).stdout).unwrap();
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["n_images"], 12);
    assert_eq!(v["size_histogram"].as_array().unwrap().len(), 1);
    assert_eq!(v["aspect_ratio_overall"]["median"].as_f64().unwrap(), 64.0 / 48.0);
}
