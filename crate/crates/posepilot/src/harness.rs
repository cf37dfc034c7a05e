//! Experiment sweeps over backend x prompt set x task x seed, with optional
//! probe and keypoint-rule rows, and the report tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use posepilot_core::calibration::{expected_calibration_error, CalibrationResult, DEFAULT_BINS};
use posepilot_core::dataset::{ImageRecord, Manifest};
use posepilot_core::metrics::{compute_metrics, MetricsReport, Prediction};
use posepilot_core::probe::{train_linear_probe, ProbeConfig};
use posepilot_core::prompts::PromptSet;
use posepilot_core::report::{fixed2, MeanSd};
use posepilot_core::zeroshot::ScoringParams;
use posepilot_core::{ClassLabel, Embedding, Split, Task};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendSpec, Encoder, Registry};
use crate::classify::{class_embeddings, score_embedded, strip_labels};
use crate::error::{Error, Result};
use crate::evaluation::{calibrate_scores, evaluate_scores, EvalOptions};
use crate::fsutil;
use crate::pose::{pose_eval, ThresholdSource, DEFAULT_CONF_THRESHOLD};
use crate::promptsets::{resolve_prompt_set, PromptStore};
use crate::scores::{scores_to_jsonl, ScoreRecord};
use crate::tables::TextTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationPolicy {
    /// One temperature per backend, fit on tier-1 validation scores.
    #[default]
    FixedTier1,
    /// One temperature per backend and prompt set.
    PerTier,
    /// Temperature 1.
    None,
}

fn default_prompt_sets() -> Vec<String> {
    vec!["tier1".into(), "tier2".into(), "tier3".into()]
}

fn default_tasks() -> Vec<Task> {
    vec![Task::Binary, Task::Multi]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths resolve against the config file's directory.
    pub manifest: PathBuf,
    pub backends: Vec<BackendSpec>,
    #[serde(default = "default_prompt_sets")]
    pub prompt_sets: Vec<String>,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<Task>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub calibration_policy: CalibrationPolicy,
    #[serde(default)]
    pub abstain_margin: f64,
    /// Evaluate zero-shot cells on every record instead of the test split.
    #[serde(default)]
    pub full_set: bool,
    #[serde(default)]
    pub run_probe: bool,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub pose_baseline: bool,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub prompt_store: Option<PathBuf>,
}

fn distinct<T: PartialEq>(items: &[T]) -> bool {
    items.iter().enumerate().all(|(i, a)| !items[..i].contains(a))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.backends.is_empty() || self.prompt_sets.is_empty() || self.tasks.is_empty() || self.seeds.is_empty() {
            return bad("backends, prompt_sets, tasks and seeds must be non-empty");
        }
        let names: Vec<&str> = self.backends.iter().map(|b| b.name.as_str()).collect();
        if !distinct(&names) || !distinct(&self.prompt_sets) || !distinct(&self.tasks) {
            return bad("backends, prompt_sets and tasks must not repeat");
        }
        if !distinct(&self.seeds) {
            return bad("seeds must be distinct");
        }
        if !(self.abstain_margin >= 0.0) {
            return bad("abstain_margin must be non-negative");
        }
        if self.n_bins == 0 {
            return bad("n_bins must be positive");
        }
        if self.run_probe {
            self.probe.validate()?;
        }
        Ok(())
    }
}

/// Parses a config and makes its relative paths absolute against `base`.
pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
    let base = fsutil::parent_dir(path);
    cfg.manifest = base.join(&cfg.manifest);
    cfg.prompt_store = cfg.prompt_store.map(|p| base.join(p));
    for ps in &mut cfg.prompt_sets {
        if ps.ends_with(".toml") {
            *ps = base.join(&*ps).display().to_string();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&fsutil::read_to_string(path)?, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ZeroShot,
    Probe,
    PoseRule,
}

/// Name used for rows that do not depend on an encoder.
pub const KEYPOINT_BACKEND: &str = "keypoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub backend: String,
    pub model: ModelKind,
    pub prompt_set_id: Option<String>,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(flatten)]
    pub key: CellKey,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores_file: Option<String>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    #[serde(flatten)]
    pub key: CellKey,
    pub seed: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub backend: String,
    pub image_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub backend: String,
    /// Prompt set whose validation scores were fit.
    pub fitted_on: Option<String>,
    pub applies_to: Vec<String>,
    pub temperature: f64,
    pub result: Option<CalibrationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(flatten)]
    pub key: CellKey,
    pub n_seeds: usize,
    pub accuracy: MeanSd,
    pub macro_precision: MeanSd,
    pub macro_recall: MeanSd,
    pub macro_f1: MeanSd,
    pub coverage: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub backends: Vec<String>,
    pub prompt_sets: Vec<String>,
    pub tasks: Vec<Task>,
    pub seeds: Vec<u64>,
    pub calibration_policy: CalibrationPolicy,
    pub abstain_margin: f64,
    /// `test` or `all`.
    pub evaluated_on: String,
    pub calibrations: Vec<CalibrationEntry>,
    pub cells: Vec<Cell>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<CellFailure>,
    pub image_failures: Vec<ImageFailure>,
}

impl SweepReport {
    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty() || !self.image_failures.is_empty()
    }

    pub fn aggregate(&self, backend: &str, model: ModelKind, prompt_set_id: Option<&str>, task: Task) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| {
            a.key.backend == backend && a.key.model == model && a.key.prompt_set_id.as_deref() == prompt_set_id && a.key.task == task
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub report: SweepReport,
    /// Zero-shot score files keyed by their file name under `cells/`.
    pub cell_scores: BTreeMap<String, Vec<ScoreRecord>>,
}

fn safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}

fn cell_file(backend: &str, ps: &str, task: Task) -> String {
    format!("{}__{}__{}.jsonl", safe(backend), safe(ps), task.as_str())
}

struct BackendRun<'a> {
    cfg: &'a ExperimentConfig,
    manifest: &'a Manifest,
    encoder: Encoder,
    embedded: BTreeMap<String, Embedding>,
}

impl BackendRun<'_> {
    fn pairs<'r>(&'r self, records: &[&'r ImageRecord]) -> Vec<(&'r ImageRecord, &'r Embedding)> {
        records.iter().filter_map(|r| Some((*r, self.embedded.get(&r.image_id)?))).collect()
    }

    fn records(&self, split: Option<Split>, task: Task) -> Vec<&ImageRecord> {
        crate::classify::records_for_task(self.manifest, task, split)
    }

    fn scores(&self, ps: &PromptSet, task: Task, split: Option<Split>, params: &ScoringParams) -> Result<Vec<ScoreRecord>> {
        let classes = class_embeddings(&self.encoder, ps, task.active_classes())?;
        score_embedded(&self.pairs(&self.records(split, task)), &classes, ps, params, task)
    }

    fn fit_temperature(&self, ps: &PromptSet) -> Result<CalibrationResult> {
        let val = self.scores(ps, Task::Multi, Some(Split::Val), &ScoringParams::default())?;
        calibrate_scores(&val, None, self.cfg.n_bins)
    }

    fn probe_metrics(&self, task: Task, seed: u64, eval_split: Option<Split>) -> Result<MetricsReport> {
        let data = |split: Option<Split>| -> Vec<(Embedding, ClassLabel)> {
            self.pairs(&self.records(split, task)).into_iter().map(|(r, e)| (e.clone(), r.label)).collect()
        };
        let model = train_linear_probe(&data(Some(Split::Train)), &data(Some(Split::Val)), &self.cfg.probe, seed)?;
        let test = data(eval_split);
        let mut preds = Vec::with_capacity(test.len());
        let mut confs = Vec::with_capacity(test.len());
        for (e, truth) in &test {
            let x: Vec<f64> = e.as_slice().iter().map(|&v| f64::from(v)).collect();
            let probs = model.model.probabilities(&x);
            let p = model.predict(e);
            preds.push(Prediction::new(*truth, p));
            confs.push((probs.iter().copied().fold(0.0, f64::max), p == *truth));
        }
        let mut report = compute_metrics(&preds, task.active_classes(), false)?;
        report.ece = Some(expected_calibration_error(&confs, self.cfg.n_bins)?);
        Ok(report)
    }
}

fn embed_all(encoder: &Encoder, manifest: &Manifest, base_dir: &Path) -> (BTreeMap<String, Embedding>, Vec<ImageFailure>) {
    let results: Vec<(String, Result<Embedding>)> = manifest
        .records()
        .par_iter()
        .map(|r| (r.image_id.clone(), encoder.image_embedding(&fsutil::resolve(base_dir, &r.file_path))))
        .collect();
    let mut ok = BTreeMap::new();
    let mut failed = Vec::new();
    for (id, res) in results {
        match res {
            Ok(e) => {
                ok.insert(id, e);
            }
            Err(e) => failed.push(ImageFailure { backend: encoder.name().to_string(), image_id: id, message: e.to_string() }),
        }
    }
    (ok, failed)
}

/// Runs every cell. Cell failures are recorded and the sweep continues;
/// only configuration problems abort.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    manifest: &Manifest,
    base_dir: &Path,
    registry: &Registry,
    cache_root: Option<&Path>,
) -> Result<SweepOutput> {
    cfg.validate()?;
    let store = cfg.prompt_store.as_deref().map(PromptStore::open).transpose()?;
    let prompt_sets: Vec<PromptSet> =
        cfg.prompt_sets.iter().map(|id| resolve_prompt_set(id, store.as_ref())).collect::<Result<_>>()?;
    let has = |s: Split| manifest.in_split(s).next().is_some();
    if !cfg.full_set && !has(Split::Test) {
        return Err(Error::Config("the manifest has no test records; split it first or set full_set".into()));
    }
    if cfg.calibration_policy != CalibrationPolicy::None && !has(Split::Val) {
        return Err(Error::Config("calibration needs validation records; split the manifest or use calibration_policy = \"none\"".into()));
    }
    if cfg.run_probe && !(has(Split::Train) && has(Split::Val) && has(Split::Test)) {
        return Err(Error::Config("the probe needs train, val and test records".into()));
    }
    let eval_split = if cfg.full_set { None } else { Some(Split::Test) };

    let mut report = SweepReport {
        backends: cfg.backends.iter().map(|b| b.name.clone()).collect(),
        prompt_sets: prompt_sets.iter().map(|p| p.set_id.clone()).collect(),
        tasks: cfg.tasks.clone(),
        seeds: cfg.seeds.clone(),
        calibration_policy: cfg.calibration_policy,
        abstain_margin: cfg.abstain_margin,
        evaluated_on: if cfg.full_set { "all" } else { "test" }.into(),
        calibrations: Vec::new(),
        cells: Vec::new(),
        aggregates: Vec::new(),
        failures: Vec::new(),
        image_failures: Vec::new(),
    };
    let mut cell_scores = BTreeMap::new();

    for spec in &cfg.backends {
        let key = |model, ps: Option<&str>, task| CellKey {
            backend: spec.name.clone(),
            model,
            prompt_set_id: ps.map(str::to_string),
            task,
        };
        let backend = match registry.create(spec) {
            Ok(b) => b,
            Err(e) => {
                report.failures.push(CellFailure { key: key(ModelKind::ZeroShot, None, cfg.tasks[0]), seed: None, message: e.to_string() });
                continue;
            }
        };
        let mut encoder = Encoder::new(backend);
        if let Some(root) = cache_root {
            encoder = encoder.with_disk_cache(root)?;
        }
        let (embedded, failed) = embed_all(&encoder, manifest, base_dir);
        report.image_failures.extend(failed);
        let run = BackendRun { cfg, manifest, encoder, embedded };

        // temperature per prompt set id
        let mut temps: BTreeMap<String, f64> = BTreeMap::new();
        let mut calibrate = |fit_ps: &PromptSet, applies: Vec<String>, report: &mut SweepReport| {
            let (temperature, result) = match run.fit_temperature(fit_ps) {
                Ok(r) => (r.temperature, Some(r)),
                Err(e) => {
                    report.failures.push(CellFailure {
                        key: key(ModelKind::ZeroShot, Some(&fit_ps.set_id), Task::Multi),
                        seed: None,
                        message: format!("calibration failed, temperature left at 1: {e}"),
                    });
                    (1.0, None)
                }
            };
            for id in &applies {
                temps.insert(id.clone(), temperature);
            }
            report.calibrations.push(CalibrationEntry {
                backend: spec.name.clone(),
                fitted_on: Some(fit_ps.set_id.clone()),
                applies_to: applies,
                temperature,
                result,
            });
        };
        let ids: Vec<String> = prompt_sets.iter().map(|p| p.set_id.clone()).collect();
        match cfg.calibration_policy {
            CalibrationPolicy::None => {
                for id in &ids {
                    temps.insert(id.clone(), 1.0);
                }
                report.calibrations.push(CalibrationEntry {
                    backend: spec.name.clone(),
                    fitted_on: None,
                    applies_to: ids.clone(),
                    temperature: 1.0,
                    result: None,
                });
            }
            CalibrationPolicy::FixedTier1 => {
                let tier1 = prompt_sets
                    .iter()
                    .find(|p| p.set_id == "tier1")
                    .cloned()
                    .unwrap_or_else(|| posepilot_core::prompts::builtin("tier1").expect("tier1 is built in"));
                calibrate(&tier1, ids.clone(), &mut report);
            }
            CalibrationPolicy::PerTier => {
                for ps in &prompt_sets {
                    calibrate(ps, vec![ps.set_id.clone()], &mut report);
                }
            }
        }

        for ps in &prompt_sets {
            let temperature = temps[&ps.set_id];
            for &task in &cfg.tasks {
                let k = key(ModelKind::ZeroShot, Some(&ps.set_id), task);
                let evaluated = ScoringParams::new(temperature, cfg.abstain_margin)
                    .map_err(Error::from)
                    .and_then(|params| run.scores(ps, task, eval_split, &params))
                    .and_then(|scores| {
                        let mut opts = EvalOptions::new(task);
                        opts.n_bins = cfg.n_bins;
                        let metrics = evaluate_scores(&strip_labels(&scores), manifest, &opts)?;
                        Ok((scores, metrics))
                    });
                match evaluated {
                    Ok((scores, metrics)) => {
                        let file = cell_file(&spec.name, &ps.set_id, task);
                        cell_scores.insert(file.clone(), scores);
                        // zero-shot scoring has no randomness; every seed shares one evaluation
                        for &seed in &cfg.seeds {
                            report.cells.push(Cell {
                                key: k.clone(),
                                seed,
                                temperature: Some(temperature),
                                scores_file: Some(format!("cells/{file}")),
                                metrics: metrics.clone(),
                            });
                        }
                    }
                    Err(e) => report.failures.push(CellFailure { key: k, seed: None, message: e.to_string() }),
                }
            }
        }

        if cfg.run_probe {
            for &task in &cfg.tasks {
                let results: Vec<(u64, Result<MetricsReport>)> =
                    cfg.seeds.par_iter().map(|&seed| (seed, run.probe_metrics(task, seed, Some(Split::Test)))).collect();
                for (seed, res) in results {
                    let k = key(ModelKind::Probe, None, task);
                    match res {
                        Ok(metrics) => report.cells.push(Cell { key: k, seed, temperature: None, scores_file: None, metrics }),
                        Err(e) => report.failures.push(CellFailure { key: k, seed: Some(seed), message: e.to_string() }),
                    }
                }
            }
        }
    }

    if cfg.pose_baseline && cfg.tasks.contains(&Task::Multi) {
        let k = CellKey { backend: KEYPOINT_BACKEND.into(), model: ModelKind::PoseRule, prompt_set_id: None, task: Task::Multi };
        match pose_eval(manifest, &ThresholdSource::Fit, DEFAULT_CONF_THRESHOLD, cfg.full_set) {
            Ok(pose) => match pose.metrics {
                Some(metrics) => {
                    for &seed in &cfg.seeds {
                        report.cells.push(Cell { key: k.clone(), seed, temperature: None, scores_file: None, metrics: metrics.clone() });
                    }
                }
                None => report.failures.push(CellFailure { key: k, seed: None, message: "no record was covered by the keypoint rule".into() }),
            },
            Err(e) => report.failures.push(CellFailure { key: k, seed: None, message: e.to_string() }),
        }
    }

    report.aggregates = aggregate(&report.cells);
    Ok(SweepOutput { report, cell_scores })
}

fn aggregate(cells: &[Cell]) -> Vec<Aggregate> {
    let mut groups: Vec<(CellKey, Vec<&MetricsReport>)> = Vec::new();
    for c in cells {
        match groups.iter_mut().find(|(k, _)| *k == c.key) {
            Some((_, v)) => v.push(&c.metrics),
            None => groups.push((c.key.clone(), vec![&c.metrics])),
        }
    }
    groups
        .into_iter()
        .map(|(key, ms)| {
            let stat = |f: fn(&MetricsReport) -> f64| MeanSd::of(&ms.iter().map(|m| f(m)).collect::<Vec<_>>()).expect("group is non-empty");
            Aggregate {
                key,
                n_seeds: ms.len(),
                accuracy: stat(|m| m.accuracy),
                macro_precision: stat(|m| m.macro_precision),
                macro_recall: stat(|m| m.macro_recall),
                macro_f1: stat(|m| m.macro_f1),
                coverage: stat(|m| m.coverage),
            }
        })
        .collect()
}

/// Machine-readable Table-1 row: one model, binary accuracy plus multi-class
/// metrics. Missing entries are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub binary_accuracy: Option<f64>,
    pub multi_accuracy: Option<f64>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    pub coverage: Option<f64>,
}

/// Machine-readable Table-2 entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierRow {
    pub task: Task,
    pub prompt_set_id: String,
    pub backend: String,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tables {
    pub models: Vec<ModelRow>,
    pub tiers: Vec<TierRow>,
}

/// Zero-shot model rows use the first configured prompt set.
pub fn build_tables(report: &SweepReport) -> Tables {
    let mut models = Vec::new();
    let mut row = |model: String, backend: &str, kind: ModelKind, ps: Option<&str>| {
        let bin = report.aggregate(backend, kind, ps, Task::Binary);
        let multi = report.aggregate(backend, kind, ps, Task::Multi);
        if bin.is_none() && multi.is_none() {
            return;
        }
        models.push(ModelRow {
            model,
            binary_accuracy: bin.map(|a| a.accuracy.mean),
            multi_accuracy: multi.map(|a| a.accuracy.mean),
            macro_precision: multi.map(|a| a.macro_precision.mean),
            macro_recall: multi.map(|a| a.macro_recall.mean),
            macro_f1: multi.map(|a| a.macro_f1.mean),
            coverage: multi.map(|a| a.coverage.mean),
        });
    };
    let first = report.prompt_sets.first().map(String::as_str);
    for b in &report.backends {
        if let Some(ps) = first {
            row(format!("{b} ({ps})"), b, ModelKind::ZeroShot, Some(ps));
        }
        row(format!("{b} probe"), b, ModelKind::Probe, None);
    }
    row("pose rule".into(), KEYPOINT_BACKEND, ModelKind::PoseRule, None);

    let mut tiers = Vec::new();
    for task in Task::ALL.into_iter().filter(|t| report.tasks.contains(t)) {
        for ps in &report.prompt_sets {
            for b in &report.backends {
                if let Some(a) = report.aggregate(b, ModelKind::ZeroShot, Some(ps), task) {
                    tiers.push(TierRow {
                        task,
                        prompt_set_id: ps.clone(),
                        backend: b.clone(),
                        accuracy: a.accuracy.mean,
                        macro_f1: a.macro_f1.mean,
                    });
                }
            }
        }
    }
    Tables { models, tiers }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "---".to_string(), fixed2)
}

/// Per-model table, then per-tier table (tasks outer, prompt sets inner).
pub fn render_tables(report: &SweepReport) -> String {
    let tables = build_tables(report);
    let mut t1 = TextTable::new(&["Model", "B. Acc.", "M. Acc.", "Prec.", "Rec.", "F1", "Cov."]);
    for r in &tables.models {
        t1.row(vec![
            r.model.clone(),
            cell(r.binary_accuracy),
            cell(r.multi_accuracy),
            cell(r.macro_precision),
            cell(r.macro_recall),
            cell(r.macro_f1),
            cell(r.coverage),
        ]);
    }
    let mut headers = vec!["Task".to_string(), "Prompt set".to_string()];
    for b in &report.backends {
        headers.push(format!("{b} Acc."));
        headers.push(format!("{b} F1"));
    }
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut t2 = TextTable::new(&header_refs);
    for task in Task::ALL.into_iter().filter(|t| report.tasks.contains(t)) {
        for ps in &report.prompt_sets {
            let mut cells = vec![task.as_str().to_string(), ps.clone()];
            let mut any = false;
            for b in &report.backends {
                let a = report.aggregate(b, ModelKind::ZeroShot, Some(ps), task);
                any |= a.is_some();
                cells.push(cell(a.map(|a| a.accuracy.mean)));
                cells.push(cell(a.map(|a| a.macro_f1.mean)));
            }
            if any {
                t2.row(cells);
            }
        }
    }
    let mut out = format!("Models (mean over {} seed(s))\n\n", report.seeds.len());
    out.push_str(&t1.render());
    out.push_str("\nZero-shot by prompt set\n\n");
    out.push_str(&t2.render());
    out
}

/// Writes `report.json`, `tables.txt`, `tables.json` and `cells/*.jsonl`.
pub fn write_sweep(out_dir: &Path, output: &SweepOutput) -> Result<()> {
    let cells = out_dir.join("cells");
    std::fs::create_dir_all(&cells).map_err(|e| Error::io(&cells, e))?;
    for (name, scores) in &output.cell_scores {
        fsutil::write_atomic(&cells.join(name), scores_to_jsonl(scores).as_bytes())?;
    }
    fsutil::write_atomic(&out_dir.join("report.json"), fsutil::to_json_pretty(&output.report).as_bytes())?;
    fsutil::write_atomic(&out_dir.join("tables.txt"), render_tables(&output.report).as_bytes())?;
    fsutil::write_atomic(&out_dir.join("tables.json"), fsutil::to_json_pretty(&build_tables(&output.report)).as_bytes())?;
    Ok(())
}
