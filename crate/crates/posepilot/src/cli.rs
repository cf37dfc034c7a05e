//! Command-line entry point.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use posepilot_core::calibration::{CalibrationResult, DEFAULT_BINS};
use posepilot_core::dataset::{eda_stats_with_bin, stratified_split, SplitFractions, DEFAULT_SIZE_BIN_PX};
use posepilot_core::prompts::{builtin_tiers, validate_prompt_set, StopList};
use posepilot_core::zeroshot::ScoringParams;
use posepilot_core::{Split, Task};
use serde::Deserialize;

use crate::backend::{serve_stub, BackendSpec, Encoder, MockBackend, Registry};
use crate::classify::{classify_records, records_for_task, strip_labels};
use crate::coco::{ingest_coco, LabelSource};
use crate::error::{Error, Result};
use crate::evaluation::{calibrate_scores, evaluate_scores, metrics_table, rescore_all, EvalOptions};
use crate::harness::{load_config, run_sweep, write_sweep};
use crate::manifest::{load_manifest, save_manifest};
use crate::pose::{pose_eval, pose_ingest, thresholds_to_toml, ThresholdSource, DEFAULT_CONF_THRESHOLD};
use crate::promptsets::{load_prompt_set, prompt_set_to_toml, resolve_prompt_set, PromptStore};
use crate::saliency::{record_saliency, ClassSelection};
use crate::scores::{load_scores, save_scores};
use crate::service::{serve, AppState};
use crate::fsutil;

/// Exit status when a run finished but some records or cells failed.
pub const EXIT_PARTIAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "posepilot", version, about = "Zero-shot posture classification with tiered prompts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct BackendArgs {
    /// Encoder backend (mock, clip-family, metaclip-family, siglip-family).
    #[arg(long)]
    pub backend: Option<String>,
    /// TOML file with a [backend] table (name, command, weights_path, attribution_layer).
    #[arg(long)]
    pub backend_config: Option<PathBuf>,
    /// Shell command that starts the adapter process for external backends.
    #[arg(long)]
    pub backend_cmd: Option<String>,
    /// Model weights passed to the adapter.
    #[arg(long)]
    pub weights: Option<String>,
    /// Attribution layer passed to the adapter.
    #[arg(long)]
    pub attribution_layer: Option<String>,
    /// Embedding cache directory; defaults to $POSEPILOT_CACHE_DIR when set.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
struct BackendConfigFile {
    backend: BackendSpec,
}

impl BackendArgs {
    pub fn spec(&self) -> Result<BackendSpec> {
        let mut spec = match &self.backend_config {
            Some(path) => {
                let text = fsutil::read_to_string(path)?;
                let file: BackendConfigFile =
                    toml::from_str(&text).map_err(|e| Error::Format { path: path.clone(), message: e.to_string() })?;
                file.backend
            }
            None => BackendSpec::named("mock"),
        };
        if let Some(name) = &self.backend {
            spec.name = name.clone();
        }
        if let Some(cmd) = &self.backend_cmd {
            spec.command = Some(vec!["sh".into(), "-c".into(), cmd.clone()]);
        }
        if let Some(w) = &self.weights {
            spec.weights_path = Some(w.clone());
        }
        if let Some(l) = &self.attribution_layer {
            spec.attribution_layer = Some(l.clone());
        }
        Ok(spec)
    }

    pub fn encoder(&self) -> Result<Encoder> {
        let backend = Registry::default().create(&self.spec()?)?;
        let enc = Encoder::new(backend);
        match &self.cache_dir {
            Some(dir) => enc.with_disk_cache(dir),
            None => enc.with_env_cache(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            Self::Train => Some(Split::Train),
            Self::Val => Some(Split::Val),
            Self::Test => Some(Split::Test),
            Self::All => None,
        }
    }
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: posepilot_core::Error| e.to_string())
}

fn parse_fractions(s: &str) -> std::result::Result<SplitFractions, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [a, b, c] => SplitFractions::new(*a, *b, *c).map_err(|e| e.to_string()),
        _ => Err("expected three comma-separated fractions".into()),
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a manifest from COCO person annotations and posture labels.
    Ingest {
        #[arg(long)]
        coco_annotations: PathBuf,
        #[arg(long)]
        images_dir: PathBuf,
        /// CSV of `file_name,label`; without it labels come from class subdirectories.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified train/val/test assignment.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_fractions)]
        fractions: SplitFractions,
        /// Defaults to rewriting the input manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Image size histogram and aspect-ratio quartiles.
    Eda {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SIZE_BIN_PX)]
        bin_px: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect, lint and store prompt sets.
    Prompts {
        #[command(subcommand)]
        action: PromptsAction,
    },
    /// Zero-shot scores for manifest records.
    Classify {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        /// Built-in id, store id or path to a .toml prompt set.
        #[arg(long, default_value = "tier1")]
        promptset: String,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value = "multi", value_parser = parse_task)]
        task: Task,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0.0)]
        abstain_margin: f64,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a temperature on validation scores.
    Calibrate {
        #[arg(long)]
        scores: PathBuf,
        /// Truth for score lines without `true_label`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics for a score file against manifest truth.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "multi", value_parser = parse_task)]
        task: Task,
        #[arg(long)]
        out: PathBuf,
        /// Count abstentions as misses.
        #[arg(long)]
        include_abstained: bool,
        /// Apply the temperature from a `calibrate` output before scoring.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Abstention margin used when re-applying a calibration.
        #[arg(long, default_value_t = 0.0)]
        abstain_margin: f64,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// Also print a plain-text table row.
        #[arg(long)]
        table: bool,
        /// Row label for --table; defaults to the prompt set id.
        #[arg(long)]
        name: Option<String>,
    },
    /// Keypoint-rule baseline with coverage.
    PoseEval {
        #[arg(long)]
        manifest: PathBuf,
        /// `fit`, `default` or a TOML file with the five thresholds.
        #[arg(long, default_value = "default")]
        thresholds: String,
        #[arg(long, default_value_t = DEFAULT_CONF_THRESHOLD)]
        conf_threshold: f64,
        /// Evaluate every record instead of the test split.
        #[arg(long)]
        full_set: bool,
        /// Save the thresholds used (handy after `fit`).
        #[arg(long)]
        write_thresholds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an external pose detector and store keypoints in the manifest.
    PoseIngest {
        #[arg(long)]
        manifest: PathBuf,
        /// Shell command; the image path is appended as its last argument.
        #[arg(long)]
        detector_cmd: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attribution statistics per prompt, optionally with overlay rasters.
    Saliency {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value = "tier3")]
        promptset: String,
        #[arg(long)]
        store: Option<PathBuf>,
        /// `truth`, `all` or a class label.
        #[arg(long, default_value = "truth")]
        class: String,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        /// Restrict to these image ids (repeatable).
        #[arg(long = "image-id")]
        image_ids: Vec<String>,
        #[arg(long)]
        overlay_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Backend x prompt set x task x seed sweep with report tables.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// HTTP service for the prompt workbench.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        /// Prompt-set directory; defaults to `promptsets/` beside the manifest.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Overlay directory; defaults to `overlays/` beside the manifest.
        #[arg(long)]
        overlay_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = crate::service::DEFAULT_WORKING_SET_CAP)]
        cap: usize,
    },
    /// Serve the mock encoder over the adapter protocol on stdin/stdout.
    #[command(hide = true)]
    BackendStub,
}

#[derive(Subcommand, Debug)]
pub enum PromptsAction {
    /// List prompt sets (built-ins, or a store's contents).
    List {
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Print a prompt set as TOML.
    Show {
        id: String,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Structural checks plus stop-list findings (warnings only).
    Lint {
        id: String,
        #[arg(long)]
        store: Option<PathBuf>,
        /// Stop-list file with `[category]` headers.
        #[arg(long)]
        stoplist: Option<PathBuf>,
    },
    /// Add or update a set in the store from a TOML file; its `revision` is the base revision.
    Add {
        file: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
}

fn open_store(dir: &Option<PathBuf>) -> Result<Option<PromptStore>> {
    dir.as_deref().map(PromptStore::open).transpose()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fsutil::write_atomic(path, fsutil::to_json_pretty(value).as_bytes())
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest { coco_annotations, images_dir, labels, out } => {
            let out_dir = fsutil::parent_dir(&out);
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let recorded = fsutil::relative_to(&images_dir, &out_dir);
            let source = match &labels {
                Some(p) => LabelSource::Csv(p),
                None => LabelSource::Subdirectories,
            };
            let report = ingest_coco(&coco_annotations, &images_dir, &recorded, source)?;
            save_manifest(&report.manifest, &out)?;
            for s in &report.skipped {
                eprintln!("skipped {}: {}", s.file_name, s.reason);
            }
            eprintln!("{} records ({} skipped) -> {}", report.manifest.len(), report.skipped.len(), out.display());
        }
        Command::Split { manifest, seed, fractions, out } => {
            let m = load_manifest(&manifest)?;
            let split = stratified_split(&m, fractions, seed)?;
            let dest = out.unwrap_or(manifest);
            save_manifest(&split, &dest)?;
            let count = |s: Split| split.in_split(s).count();
            eprintln!("train {} / val {} / test {} -> {}", count(Split::Train), count(Split::Val), count(Split::Test), dest.display());
        }
        Command::Eda { manifest, bin_px, out } => {
            let summary = eda_stats_with_bin(&load_manifest(&manifest)?, bin_px);
            match out {
                Some(p) => write_json(&p, &summary)?,
                None => print(&fsutil::to_json_pretty(&summary)),
            }
        }
        Command::Prompts { action } => return prompts(action),
        Command::Classify { manifest, backend, promptset, store, task, temperature, abstain_margin, split, out } => {
            let m = load_manifest(&manifest)?;
            let store = open_store(&store)?;
            let ps = resolve_prompt_set(&promptset, store.as_ref())?;
            let params = ScoringParams::new(temperature, abstain_margin)?;
            let encoder = backend.encoder()?;
            let records = records_for_task(&m, task, split.split());
            if records.is_empty() {
                return Err(Error::Config(format!("no records match the {task} task and the selected split")));
            }
            let result = classify_records(&encoder, &records, &fsutil::parent_dir(&manifest), &ps, &params, task)?;
            save_scores(&result.scores, &out)?;
            eprintln!("{} scored -> {}", result.scores.len(), out.display());
            if !result.failures.is_empty() {
                let failures = out.with_extension("failures.jsonl");
                fsutil::write_atomic(&failures, fsutil::to_jsonl(&result.failures).as_bytes())?;
                eprintln!("{} records failed; see {}", result.failures.len(), failures.display());
                return Ok(ExitCode::from(EXIT_PARTIAL));
            }
        }
        Command::Calibrate { scores, manifest, bins, out } => {
            let s = load_scores(&scores)?;
            let m = manifest.as_deref().map(load_manifest).transpose()?;
            let result = calibrate_scores(&s, m.as_ref(), bins)?;
            write_json(&out, &result)?;
            eprintln!("temperature {} (ECE {:.4} -> {:.4})", result.temperature, result.ece_before, result.ece_after);
        }
        Command::Evaluate {
            scores,
            manifest,
            task,
            out,
            include_abstained,
            calibration,
            abstain_margin,
            bins,
            table,
            name,
        } => {
            let m = load_manifest(&manifest)?;
            let records = load_scores(&scores)?;
            let mut s = strip_labels(&records);
            if let Some(path) = calibration {
                let calib: CalibrationResult = serde_json::from_str(&fsutil::read_to_string(&path)?)
                    .map_err(|e| Error::Format { path: path.clone(), message: e.to_string() })?;
                s = rescore_all(&s, calib.temperature, abstain_margin)?;
            }
            let opts = EvalOptions { task, include_abstained, n_bins: bins };
            let report = evaluate_scores(&s, &m, &opts)?;
            write_json(&out, &report)?;
            if table {
                let label = name.unwrap_or_else(|| s.first().map(|x| x.prompt_set_id.clone()).unwrap_or_default());
                print(&metrics_table(&label, &report));
            }
        }
        Command::PoseEval { manifest, thresholds, conf_threshold, full_set, write_thresholds, out } => {
            let m = load_manifest(&manifest)?;
            let report = pose_eval(&m, &ThresholdSource::parse(&thresholds), conf_threshold, full_set)?;
            write_json(&out, &report)?;
            if let Some(p) = write_thresholds {
                fsutil::write_atomic(&p, thresholds_to_toml(&report.thresholds).as_bytes())?;
            }
            let acc = report.coverage.accuracy_on_covered.map_or_else(|| "undefined".to_string(), |a| format!("{a:.4}"));
            eprintln!("coverage {:.4}, accuracy on covered {acc}", report.coverage.coverage);
        }
        Command::PoseIngest { manifest, detector_cmd, out } => {
            let m = load_manifest(&manifest)?;
            let (updated, audit) = pose_ingest(&m, &fsutil::parent_dir(&manifest), &detector_cmd)?;
            save_manifest(&updated, &out)?;
            let audit_path = out.with_extension("detections.jsonl");
            fsutil::write_atomic(&audit_path, fsutil::to_jsonl(&audit).as_bytes())?;
            let failed = audit.iter().filter(|a| a.error.is_some()).count();
            let with = updated.records().iter().filter(|r| r.keypoints.is_some()).count();
            eprintln!("{with} of {} records have keypoints; audit -> {}", updated.len(), audit_path.display());
            if failed > 0 {
                eprintln!("detector failed on {failed} records");
                return Ok(ExitCode::from(EXIT_PARTIAL));
            }
        }
        Command::Saliency { manifest, backend, promptset, store, class, split, image_ids, overlay_dir, out } => {
            let m = load_manifest(&manifest)?;
            let store = open_store(&store)?;
            let ps = resolve_prompt_set(&promptset, store.as_ref())?;
            let selection: ClassSelection = class.parse()?;
            let encoder = backend.encoder()?;
            if let Some(dir) = &overlay_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            for id in &image_ids {
                if m.get(id).is_none() {
                    return Err(Error::Config(format!("image_id `{id}` is not in the manifest")));
                }
            }
            let base = fsutil::parent_dir(&manifest);
            let mut entries = Vec::new();
            for r in m.records() {
                if split.split().is_some_and(|s| r.split != s) || (!image_ids.is_empty() && !image_ids.contains(&r.image_id)) {
                    continue;
                }
                entries.extend(record_saliency(&encoder, r, &base, &ps, selection, overlay_dir.as_deref())?);
            }
            fsutil::write_atomic(&out, fsutil::to_jsonl(&entries).as_bytes())?;
            eprintln!("{} saliency records -> {}", entries.len(), out.display());
        }
        Command::Sweep { config, out, cache_dir } => {
            let cfg = load_config(&config)?;
            let m = load_manifest(&cfg.manifest)?;
            let cache = cache_dir.or_else(|| std::env::var_os("POSEPILOT_CACHE_DIR").filter(|d| !d.is_empty()).map(PathBuf::from));
            let output = run_sweep(&cfg, &m, &fsutil::parent_dir(&cfg.manifest), &Registry::default(), cache.as_deref())?;
            write_sweep(&out, &output)?;
            print(&crate::harness::render_tables(&output.report));
            if output.report.has_failures() {
                for f in &output.report.failures {
                    eprintln!("cell failed ({} {:?} {:?} {}): {}", f.key.backend, f.key.model, f.key.prompt_set_id, f.key.task, f.message);
                }
                for f in &output.report.image_failures {
                    eprintln!("image failed ({} {}): {}", f.backend, f.image_id, f.message);
                }
                return Ok(ExitCode::from(EXIT_PARTIAL));
            }
        }
        Command::Serve { manifest, backend, store, overlay_dir, host, port, cap } => {
            let m = load_manifest(&manifest)?;
            let base = fsutil::parent_dir(&manifest);
            let store = PromptStore::open(&store.unwrap_or_else(|| base.join("promptsets")))?;
            let overlays = overlay_dir.unwrap_or_else(|| base.join("overlays"));
            let encoder = Arc::new(backend.encoder()?);
            let state = AppState::new(m, base, encoder, store, overlays)?.with_cap(cap);
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Error::Config(format!("bad address {host}:{port}: {e}")))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Config(e.to_string()))?;
            rt.block_on(serve(state, addr))?;
        }
        Command::BackendStub => {
            let stdin = std::io::stdin();
            serve_stub(&MockBackend::new(), stdin.lock(), std::io::stdout().lock())
                .map_err(|e| Error::io("<stdio>", e))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn prompts(action: PromptsAction) -> Result<ExitCode> {
    match action {
        PromptsAction::List { store } => {
            let sets = match open_store(&store)? {
                Some(s) => s.list()?,
                None => builtin_tiers(),
            };
            for ps in sets {
                let n: usize = ps.prompts.values().map(Vec::len).sum();
                print(&format!("{}\ttier {}\trev {}\t{n} prompts\t{}\n", ps.set_id, ps.tier, ps.revision, ps.description));
            }
        }
        PromptsAction::Show { id, store } => {
            let ps = resolve_prompt_set(&id, open_store(&store)?.as_ref())?;
            print(&prompt_set_to_toml(&ps));
        }
        PromptsAction::Lint { id, store, stoplist } => {
            let ps = resolve_prompt_set(&id, open_store(&store)?.as_ref())?;
            let list = match stoplist {
                Some(p) => StopList::parse(&fsutil::read_to_string(&p)?)?,
                None => StopList::builtin(),
            };
            let findings = validate_prompt_set(&ps, &list)?;
            print(&fsutil::to_jsonl(&findings));
            eprintln!("{}: {} finding(s)", ps.set_id, findings.len());
        }
        PromptsAction::Add { file, store } => {
            let ps = load_prompt_set(&file)?;
            let base = ps.revision;
            let stored = PromptStore::open(&store)?.put(ps, base)?;
            eprintln!("{} stored at revision {}", stored.set_id, stored.revision);
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
