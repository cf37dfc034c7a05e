mod common;

use std::fs;
use std::path::Path;

use posepilot::backend::Registry;
use posepilot::harness::{build_tables, parse_config, render_tables, run_sweep, ModelKind, SweepOutput};
use posepilot::manifest::{load_manifest, save_manifest};
use posepilot_core::dataset::Manifest;
use posepilot_core::{Split, Task};

use common::{build_dataset, p, run, run_ok, split_manifest};

fn sweep(root: &Path, manifest: &Path, extra: &str) -> SweepOutput {
    let text = format!("manifest = \"{}\"\nbackends = [\"mock\"]\n{extra}", p(manifest));
    let cfg = parse_config(&text, &root.join("exp.toml")).unwrap();
    let m = load_manifest(&cfg.manifest).unwrap();
    run_sweep(&cfg, &m, root, &Registry::default(), None).unwrap()
}

#[test]
fn zero_shot_grid_has_one_cell_per_seed_with_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = split_manifest(&build_dataset(dir.path(), [12, 12, 12]));
    let out = sweep(dir.path(), &manifest, "seeds = [0, 1]\n");
    let r = &out.report;
    assert!(!r.has_failures(), "{:?}", r.failures);
    assert_eq!(r.cells.len(), 3 * 2 * 2);
    assert_eq!(r.aggregates.len(), 6);
    for a in &r.aggregates {
        assert_eq!(a.n_seeds, 2);
        assert_eq!(a.accuracy.sd, 0.0);
        assert_eq!(a.macro_f1.sd, 0.0);
    }
    assert_eq!(out.cell_scores.len(), 6);
    assert!(out.cell_scores.contains_key("mock__tier2__binary.jsonl"));
    // one temperature fit on tier1, shared by every set
    assert_eq!(r.calibrations.len(), 1);
    assert_eq!(r.calibrations[0].applies_to, vec!["tier1", "tier2", "tier3"]);
    let t = r.calibrations[0].temperature;
    assert!(r.cells.iter().all(|c| c.temperature == Some(t)));
    let n_test = load_manifest(&manifest).unwrap().in_split(Split::Test).count();
    let multi = r.aggregate("mock", ModelKind::ZeroShot, Some("tier1"), Task::Multi).unwrap();
    let cell = r.cells.iter().find(|c| c.key == multi.key).unwrap();
    assert_eq!(cell.metrics.n_evaluated, n_test);
}

#[test]
fn per_tier_policy_fits_each_set() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = split_manifest(&build_dataset(dir.path(), [10, 10, 10]));
    let out = sweep(dir.path(), &manifest, "seeds = [0]\ncalibration_policy = \"per_tier\"\n");
    assert_eq!(out.report.calibrations.len(), 3);
    let none = sweep(dir.path(), &manifest, "seeds = [0]\ncalibration_policy = \"none\"\n");
    assert!(none.report.cells.iter().all(|c| c.temperature == Some(1.0)));
}

#[test]
fn removing_train_records_leaves_zero_shot_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = split_manifest(&build_dataset(dir.path(), [12, 12, 12]));
    let full = sweep(dir.path(), &manifest, "seeds = [0]\n");
    let m = load_manifest(&manifest).unwrap();
    let kept: Vec<_> = m.records().iter().filter(|r| r.split != Split::Train).cloned().collect();
    let reduced = dir.path().join("no_train.jsonl");
    save_manifest(&Manifest::new(kept).unwrap(), &reduced).unwrap();
    let part = sweep(dir.path(), &reduced, "seeds = [0]\n");
    assert_eq!(full.report.cells, part.report.cells);
    assert_eq!(full.cell_scores, part.cell_scores);
}

#[test]
fn tables_order_tasks_then_prompt_sets() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = split_manifest(&build_dataset(dir.path(), [10, 10, 10]));
    let out = sweep(dir.path(), &manifest, "seeds = [0]\ntasks = [\"multi\", \"binary\"]\n");
    let t = build_tables(&out.report);
    let order: Vec<(Task, &str)> = t.tiers.iter().map(|r| (r.task, r.prompt_set_id.as_str())).collect();
    assert_eq!(
        order,
        vec![
            (Task::Binary, "tier1"),
            (Task::Binary, "tier2"),
            (Task::Binary, "tier3"),
            (Task::Multi, "tier1"),
            (Task::Multi, "tier2"),
            (Task::Multi, "tier3"),
        ]
    );
    assert_eq!(t.models.len(), 1);
    assert_eq!(t.models[0].model, "mock (tier1)");
    let text = render_tables(&out.report);
    assert!(text.starts_with("Models (mean over 1 seed(s))"));
    assert!(text.contains("mock Acc.") && text.contains("mock F1"));
}

#[test]
fn single_cell_sweep_renders_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = split_manifest(&build_dataset(dir.path(), [10, 10, 10]));
    let out = sweep(dir.path(), &manifest, "seeds = [3]\nprompt_sets = [\"tier2\"]\ntasks = [\"binary\"]\n");
    assert_eq!(out.report.cells.len(), 1);
    let t = build_tables(&out.report);
    assert_eq!(t.tiers.len(), 1);
    assert_eq!(t.models.len(), 1);
    assert!(t.models[0].binary_accuracy.is_some() && t.models[0].multi_accuracy.is_none());
    let text = render_tables(&out.report);
    let tier_table: Vec<&str> = text.split("Zero-shot by prompt set\n\n").nth(1).unwrap().lines().collect();
    assert_eq!(tier_table.len(), 3);
    assert_eq!(tier_table[2].split_whitespace().take(2).collect::<Vec<_>>(), ["binary", "tier2"]);
    assert!(text.lines().nth(4).unwrap().contains("---"));
}

#[test]
fn probe_and_pose_rows() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = split_manifest(&build_dataset(dir.path(), [20, 20, 20]));
    let extra = "seeds = [0, 1]\nprompt_sets = [\"tier1\"]\nrun_probe = true\npose_baseline = true\n[probe]\nlearning_rate = 0.5\nmax_epochs = 30\npatience = 3\nbatch_size = 8\nweight_decay = 0.0\n[probe.optimizer]\nkind = \"momentum\"\nbeta = 0.9\n";
    let out = sweep(dir.path(), &manifest, extra);
    let r = &out.report;
    assert!(!r.has_failures(), "{:?}", r.failures);
    let probe = r.aggregate("mock", ModelKind::Probe, None, Task::Multi).unwrap();
    assert_eq!(probe.n_seeds, 2);
    let probe_cell = r.cells.iter().find(|c| c.key.model == ModelKind::Probe).unwrap();
    assert!(probe_cell.metrics.ece.is_some());
    let pose = r.aggregate("keypoints", ModelKind::PoseRule, None, Task::Multi).unwrap();
    assert!(pose.coverage.mean < 1.0 && pose.accuracy.sd == 0.0);
    assert!(r.aggregate("keypoints", ModelKind::PoseRule, None, Task::Binary).is_none());
    let models: Vec<String> = build_tables(r).models.into_iter().map(|m| m.model).collect();
    assert_eq!(models, vec!["mock (tier1)", "mock probe", "pose rule"]);
}

#[test]
fn config_errors_abort_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [4, 4, 4]);
    let manifest = dir.path().join("unsplit.jsonl");
    run_ok(&["ingest", "--coco-annotations", p(&ds.coco), "--images-dir", p(&ds.images_dir), "--out", p(&manifest)]);
    let cfg = parse_config(&format!("manifest = \"{}\"\nbackends = [\"mock\"]\n", p(&manifest)), &dir.path().join("e.toml")).unwrap();
    let m = load_manifest(&manifest).unwrap();
    assert!(run_sweep(&cfg, &m, dir.path(), &Registry::default(), None).is_err());
    let full = parse_config(
        &format!("manifest = \"{}\"\nbackends = [\"mock\"]\nfull_set = true\ncalibration_policy = \"none\"\nseeds = [0]\n", p(&manifest)),
        &dir.path().join("e.toml"),
    )
    .unwrap();
    let out = run_sweep(&full, &m, dir.path(), &Registry::default(), None).unwrap();
    assert_eq!(out.report.evaluated_on, "all");
    // binary cells leave out standing
    assert_eq!(out.report.cells[0].key.task, Task::Binary);
    assert_eq!(out.report.cells[0].metrics.n_evaluated, 8);
    assert_eq!(out.report.cells[1].metrics.n_evaluated, 12);
}

#[test]
fn cli_sweep_is_byte_identical_and_flags_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = split_manifest(&build_dataset(dir.path(), [10, 10, 10]));
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, "manifest = \"manifest.jsonl\"\nbackends = [\"mock\"]\nseeds = [0, 1]\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let stdout = run_ok(&["sweep", "--config", p(&cfg), "--out", p(&a)]).stdout;
    run_ok(&["sweep", "--config", p(&cfg), "--out", p(&b)]);
    for f in ["report.json", "tables.txt", "tables.json", "cells/mock__tier3__multi.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(String::from_utf8(stdout).unwrap(), fs::read_to_string(a.join("tables.txt")).unwrap());
    assert!(manifest.exists());

    // a backend that cannot start fails its cells but not the sweep
    let broken = dir.path().join("broken.toml");
    fs::write(&broken, "manifest = \"manifest.jsonl\"\nbackends = [\"mock\", \"clip-family\"]\nseeds = [0]\n").unwrap();
    let c = dir.path().join("c");
    let res = run(&["sweep", "--config", p(&broken), "--out", p(&c)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("clip-family"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(c.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 6);
    assert_eq!(report["failures"].as_array().unwrap().len(), 1);
}
