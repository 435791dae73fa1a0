//! Staged experiment driver. Every stage reads its inputs from and writes its
//! outputs to the output directory, so stages can also run one at a time.

use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{build_dataset, drop_correlated, event_matrix, event_names, event_values, select_invariant_events, Dataset, OracleRun, FEATURE_NAMES};
use crate::experiment::{Deployment, Evaluation, ExperimentConfig, NO_PREFETCH};
use crate::forest::{fit_classifier_variants, fit_suite, ClassifierVariants, SuiteModel};
use crate::manager::{replay, run_managed, Backend, Manager, ManagerKind, Models, Totals};
use crate::metrics::{compute_metrics, metrics_csv, summary_csv, ScoredRun, Summary};
use crate::nodemem::{entries_for_budget, max_nodes_for_entries, quantize, NodeMemImage, SizeReport, MAX_ENTRIES};
use crate::psc::prune;
use crate::sim::{HierarchyConfig, WindowStats};
use crate::sweep::{self, ipc_table, oracle_sweep, static_ipc, SweepOptions};
use crate::trace::Trace;
use crate::util::{fmt_f64, write_atomic};

pub const MANIFEST_VERSION: u32 = 1;

/// Output file names.
pub mod files {
    pub const SWEEP: &str = "sweep.csv";
    pub const SWEEP_SUMMARY: &str = "sweep_summary.csv";
    pub const EVENTS: &str = "events.json";
    pub const IPC_TABLE: &str = "ipc_table.csv";
    pub const DEPLOYMENT: &str = "deployment.json";
    pub const TRAIN: &str = "train.csv";
    pub const TEST: &str = "test.csv";
    pub const SUITE: &str = "suite.json";
    pub const BASELINES: &str = "baselines.json";
    pub const PMEM: &str = "model.pmem";
    pub const SIZE_REPORT: &str = "size_report.json";
    pub const RUNS: &str = "runs.json";
    pub const RUNS_CSV: &str = "runs.csv";
    pub const DECISIONS: &str = "decisions";
    pub const METRICS: &str = "metrics.csv";
    pub const SUMMARY: &str = "summary.csv";
    pub const MODEL_SIZE: &str = "model_size";
    pub const MODEL_SIZE_SUMMARY: &str = "model_size_summary.csv";
    pub const CACHE_SIZE: &str = "cache_size";
    pub const CACHE_SIZE_SUMMARY: &str = "cache_size_summary.csv";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Sweep,
    Prune,
    Dataset,
    Train,
    Quantize,
    Run,
    Report,
    ModelSize,
    CacheSize,
    Manifest,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Sweep => "sweep",
            Stage::Prune => "prune",
            Stage::Dataset => "dataset",
            Stage::Train => "train",
            Stage::Quantize => "quantize",
            Stage::Run => "run",
            Stage::Report => "report",
            Stage::ModelSize => "model-size",
            Stage::CacheSize => "cache-size",
            Stage::Manifest => "manifest",
        })
    }
}

type BoxError = Box<dyn StdError + Send + Sync>;

#[derive(Debug, Error)]
#[error("{stage} stage: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: BoxError,
}

pub type Result<T> = std::result::Result<T, PipelineError>;

trait InStage<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T, E: Into<BoxError>> InStage<T> for std::result::Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| PipelineError { stage, source: e.into() })
    }
}

fn fail<T>(stage: Stage, msg: String) -> Result<T> {
    Err(PipelineError { stage, source: msg.into() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventsReport {
    pub events: Vec<String>,
    pub invariant: Vec<String>,
    pub kept_after_correlation: Vec<String>,
    pub zero_variance: Vec<String>,
    pub features: Vec<String>,
    /// Whether every model feature passed the invariance filter.
    pub features_invariant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentFile {
    pub psc_ids: Vec<usize>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub trace_id: String,
    pub baseline: Totals,
    pub no_prefetch: Totals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trace_id: String,
    pub manager: String,
    pub totals: Totals,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunsFile {
    pub references: Vec<Reference>,
    pub runs: Vec<RunRecord>,
}

impl RunsFile {
    pub fn metrics(&self, outlier_threshold: f64) -> std::result::Result<(Vec<crate::metrics::MetricsRow>, Vec<Summary>), crate::metrics::MetricsError> {
        let scored: Vec<ScoredRun> = self
            .runs
            .iter()
            .map(|r| ScoredRun { trace_id: &r.trace_id, manager: &r.manager, totals: &r.totals })
            .collect();
        compute_metrics(
            &scored,
            |t| self.references.iter().find(|r| r.trace_id == t).map(|r| (&r.baseline, &r.no_prefetch)),
            outlier_threshold,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trace_id,manager,windows,instructions,cycles,ipc,max_comparisons,usage\n");
        let mut row = |trace: &str, manager: &str, t: &Totals| {
            let usage: Vec<String> = t.usage.iter().map(|(p, f)| format!("{p}:{}", fmt_f64(*f))).collect();
            out.push_str(&format!(
                "{trace},{manager},{},{},{},{},{},{}\n",
                t.windows,
                t.instructions,
                t.cycles,
                fmt_f64(t.ipc),
                t.max_comparisons,
                usage.join(";")
            ));
        };
        for r in &self.references {
            row(&r.trace_id, "baseline", &r.baseline);
            row(&r.trace_id, "no-prefetch", &r.no_prefetch);
        }
        for r in &self.runs {
            row(&r.trace_id, &r.manager, &r.totals);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    /// Output file (relative path) → SHA-256.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    sha256_hex(serde_json::to_string(config).expect("config serializes").as_bytes())
}

pub struct Pipeline {
    config: ExperimentConfig,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        config.validate().stage(Stage::Config)?;
        Ok(Pipeline { config, out: out.into() })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, stage: Stage, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display())).stage(stage)?;
        }
        write_atomic(&path, contents.as_ref()).map_err(|e| format!("{}: {e}", path.display())).stage(stage)
    }

    fn read(&self, stage: Stage, name: &str) -> Result<Vec<u8>> {
        let path = self.path(name);
        fs::read(&path).map_err(|e| format!("{}: {e}", path.display())).stage(stage)
    }

    fn read_text(&self, stage: Stage, name: &str) -> Result<String> {
        String::from_utf8(self.read(stage, name)?).map_err(|e| format!("{name}: {e}")).stage(stage)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, stage: Stage, name: &str) -> Result<T> {
        serde_json::from_slice(&self.read(stage, name)?).map_err(|e| format!("{name}: {e}")).stage(stage)
    }

    fn load_traces(&self, stage: Stage) -> Result<Vec<Trace>> {
        self.config.traces.iter().map(|t| self.config.load_trace(t).stage(stage)).collect()
    }

    pub fn load_runs(&self, stage: Stage) -> Result<Vec<OracleRun>> {
        sweep::from_csv(&self.read_text(stage, files::SWEEP)?).stage(stage)
    }

    pub fn load_deployment(&self, stage: Stage) -> Result<Vec<usize>> {
        Ok(self.read_json::<DeploymentFile>(stage, files::DEPLOYMENT)?.psc_ids)
    }

    /// Oracle sweep of every trace plus the event-filter report.
    pub fn sweep(&self) -> Result<Vec<OracleRun>> {
        let s = Stage::Sweep;
        let c = &self.config;
        let swept = c.swept_pscs();
        let options = SweepOptions { window_size: c.window_size, carrier: c.carrier_index(), debug: true };
        let mut runs = Vec::new();
        let mut per_psc: Vec<Vec<WindowStats>> = vec![Vec::new(); swept.len()];
        for (source, trace) in c.traces.iter().zip(self.load_traces(s)?) {
            let r = oracle_sweep(&trace, &source.id, source.benchmark(), &c.hierarchy, &c.registry, &swept, &options).stage(s)?;
            for (acc, stats) in per_psc.iter_mut().zip(r.stats.unwrap_or_default()) {
                acc.extend(stats);
            }
            runs.push(r.run);
        }
        self.write(s, files::SWEEP, sweep::to_csv(&runs))?;

        let mut summary = String::from("trace_id,windows,oracle_ipc,best_static_psc,best_static_ipc,worst_static_ipc\n");
        for run in &runs {
            let sm = sweep::summarize(run);
            let worst = static_ipc(run).into_iter().fold(f64::INFINITY, f64::min);
            summary.push_str(&format!(
                "{},{},{},{},{},{}\n",
                sm.trace_id,
                sm.windows,
                fmt_f64(sm.oracle_ipc),
                sm.best_static_psc,
                fmt_f64(sm.best_static_ipc),
                fmt_f64(worst)
            ));
        }
        self.write(s, files::SWEEP_SUMMARY, summary)?;

        let report = events_report(&per_psc, options.carrier, c.events.invariance_tol, c.events.corr_threshold).stage(s)?;
        self.write(s, files::EVENTS, to_json(&report))?;
        Ok(runs)
    }

    /// Per-trace IPC table and the deployment PSC set.
    pub fn prune(&self) -> Result<Vec<usize>> {
        let s = Stage::Prune;
        let c = &self.config;
        let runs = self.load_runs(s)?;
        let table = ipc_table(&runs).stage(s)?;
        self.write(s, files::IPC_TABLE, table.to_csv())?;
        let catalog = c.registry.catalog().stage(s)?;
        let deployment = match &c.deployment {
            Deployment::Prune { top_k } => prune(&table, &catalog, *top_k).stage(s)?,
            Deployment::List { pscs } => pscs.clone(),
        };
        if let Some(p) = deployment.iter().find(|p| !table.psc_ids.contains(p)) {
            return fail(s, format!("deployment psc {p} was not swept"));
        }
        if c.baseline_psc != NO_PREFETCH && !deployment.contains(&c.baseline_psc) {
            return fail(s, format!("baseline psc {} is neither in the deployment nor no-prefetch", c.baseline_psc));
        }
        let labels = deployment
            .iter()
            .map(|&id| catalog.decode(id).map(|p| c.registry.psc_label(&p)))
            .collect::<std::result::Result<_, _>>()
            .stage(s)?;
        self.write(s, files::DEPLOYMENT, to_json(&DeploymentFile { psc_ids: deployment.clone(), labels }))?;
        Ok(deployment)
    }

    pub fn dataset(&self) -> Result<(Dataset, Dataset)> {
        let s = Stage::Dataset;
        let runs = self.load_runs(s)?;
        let deployment = self.load_deployment(s)?;
        let (train, test) = build_dataset(&runs, &deployment, &self.config.dataset_spec()).stage(s)?;
        self.write(s, files::TRAIN, train.to_csv())?;
        self.write(s, files::TEST, test.to_csv())?;
        Ok((train, test))
    }

    pub fn train(&self) -> Result<(SuiteModel, ClassifierVariants)> {
        let s = Stage::Train;
        let train = Dataset::from_csv(&self.read_text(s, files::TRAIN)?).stage(s)?;
        let config = self.config.train_config();
        let suite = fit_suite(&train, &config).stage(s)?;
        let baselines = fit_classifier_variants(&train, &config, self.config.label_threshold).stage(s)?;
        self.write(s, files::SUITE, suite.to_json())?;
        self.write(s, files::BASELINES, to_json(&baselines))?;
        Ok((suite, baselines))
    }

    pub fn quantize(&self) -> Result<SizeReport> {
        let s = Stage::Quantize;
        let suite = SuiteModel::from_json(&self.read_text(s, files::SUITE)?).stage(s)?;
        let (image, _) = quantize(&suite, &self.config.quant).stage(s)?;
        let report = image.size_report();
        self.write(s, files::PMEM, image.serialize())?;
        self.write(s, files::SIZE_REPORT, to_json(&report))?;
        Ok(report)
    }

    fn load_models(&self, s: Stage) -> Result<Models> {
        let suite = SuiteModel::from_json(&self.read_text(s, files::SUITE)?).stage(s)?;
        let image = NodeMemImage::deserialize(&self.read(s, files::PMEM)?).stage(s)?;
        let baselines: ClassifierVariants = self.read_json(s, files::BASELINES)?;
        Ok(Models { suite: Some(Arc::new(suite)), image: Some(Arc::new(image)), baselines: Some(Arc::new(baselines)) })
    }

    /// Managed runs of every configured manager, plus the baseline and
    /// no-prefetch references, with per-window decision logs.
    pub fn run(&self) -> Result<RunsFile> {
        let s = Stage::Run;
        let models = self.load_models(s)?;
        let deployment = self.load_deployment(s)?;
        let runs = self.evaluate(s, &self.config.hierarchy, self.config.evaluation, &self.config.managers, &models, &deployment, Some(files::DECISIONS))?;
        self.write(s, files::RUNS, to_json(&runs))?;
        self.write(s, files::RUNS_CSV, runs.to_csv())?;
        Ok(runs)
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &self,
        s: Stage,
        hierarchy: &HierarchyConfig,
        evaluation: Evaluation,
        managers: &[ManagerKind],
        models: &Models,
        deployment: &[usize],
        decisions: Option<&str>,
    ) -> Result<RunsFile> {
        let c = &self.config;
        let table = match evaluation {
            Evaluation::Table => Some(self.load_runs(s)?),
            Evaluation::Simulate => None,
        };
        let traces = match evaluation {
            Evaluation::Simulate => self.load_traces(s)?,
            Evaluation::Table => Vec::new(),
        };
        let mut out = RunsFile::default();
        for (i, source) in c.traces.iter().enumerate() {
            let drive = |kind: &ManagerKind| -> Result<(crate::manager::DecisionLog, Totals)> {
                let mut m = Manager::new(kind, deployment, models).stage(s)?;
                match &table {
                    Some(runs) => replay(&runs[i], &mut m).stage(s),
                    None => run_managed(&traces[i], hierarchy, &c.registry, &mut m, c.window_size).stage(s),
                }
            };
            if let Some(runs) = &table {
                if runs.get(i).map(|r| r.trace_id.as_str()) != Some(source.id.as_str()) {
                    return fail(s, format!("sweep table does not match trace `{}`", source.id));
                }
            }
            let baseline = drive(&ManagerKind::Static { psc: c.baseline_psc })?.1;
            let no_prefetch = drive(&ManagerKind::Static { psc: NO_PREFETCH })?.1;
            out.references.push(Reference { trace_id: source.id.clone(), baseline, no_prefetch });
            for kind in managers {
                let (log, totals) = drive(kind)?;
                if let Some(dir) = decisions {
                    self.write(s, &format!("{dir}/{}/{}.csv", source.id, kind.label()), log.to_csv())?;
                }
                out.runs.push(RunRecord { trace_id: source.id.clone(), manager: kind.label(), totals });
            }
        }
        Ok(out)
    }

    pub fn report(&self) -> Result<Vec<Summary>> {
        let s = Stage::Report;
        let runs: RunsFile = self.read_json(s, files::RUNS)?;
        let (rows, summary) = runs.metrics(self.config.outlier_threshold).stage(s)?;
        self.write(s, files::METRICS, metrics_csv(&rows))?;
        self.write(s, files::SUMMARY, summary_csv(&summary))?;
        Ok(summary)
    }

    /// Retrains and evaluates the Node MEM Puppeteer at each configured
    /// node-memory budget.
    pub fn model_size_sweep(&self) -> Result<()> {
        let s = Stage::ModelSize;
        let c = &self.config;
        if c.model_sizes_kib.is_empty() {
            return Ok(());
        }
        let train = Dataset::from_csv(&self.read_text(s, files::TRAIN)?).stage(s)?;
        let deployment = self.load_deployment(s)?;
        let references: RunsFile = self.read_json(s, files::RUNS)?;
        let base = self.config.train_config();
        let mut combined = String::from(
            "size_kib,entry_budget,max_nodes_per_tree,entries,raw_kib,geomean_normalized_ipc,mean_normalized_ipc,outliers,worst_normalized_ipc\n",
        );
        let kind = ManagerKind::Puppeteer { backend: Backend::Nodemem, first: 0 };
        for &kib in &c.model_sizes_kib {
            let budget = entries_for_budget((kib * 1024.0) as u64).min(MAX_ENTRIES);
            let config = crate::forest::TrainConfig {
                max_nodes_per_tree: max_nodes_for_entries(budget, deployment.len(), base.trees_per_forest),
                ..base
            };
            let suite = fit_suite(&train, &config).stage(s)?;
            let (image, _) = quantize(&suite, &c.quant).stage(s)?;
            let report = image.size_report();
            let models = Models { image: Some(Arc::new(image)), ..Models::default() };
            let mut runs = self.evaluate(s, &c.hierarchy, c.evaluation, std::slice::from_ref(&kind), &models, &deployment, None)?;
            runs.references = references.references.clone();
            let (rows, summary) = runs.metrics(c.outlier_threshold).stage(s)?;
            let dir = format!("{}/{}kib", files::MODEL_SIZE, kib);
            self.write(s, &format!("{dir}/metrics.csv"), metrics_csv(&rows))?;
            self.write(s, &format!("{dir}/summary.csv"), summary_csv(&summary))?;
            self.write(s, &format!("{dir}/size_report.json"), to_json(&report))?;
            let sm = &summary[0];
            combined.push_str(&format!(
                "{kib},{budget},{},{},{},{},{},{},{}\n",
                config.max_nodes_per_tree,
                report.entries,
                fmt_f64(report.raw_kib),
                fmt_f64(sm.geomean_normalized),
                fmt_f64(sm.mean_normalized),
                sm.outliers,
                fmt_f64(sm.worst_normalized)
            ));
        }
        self.write(s, files::MODEL_SIZE_SUMMARY, combined)
    }

    /// Re-simulates every manager with scaled cache capacities, keeping the
    /// trained models.
    pub fn cache_size_sweep(&self) -> Result<()> {
        let s = Stage::CacheSize;
        let c = &self.config;
        if c.cache_scales.is_empty() {
            return Ok(());
        }
        let models = self.load_models(s)?;
        let deployment = self.load_deployment(s)?;
        let mut combined = String::from("cache_scale,manager,geomean_normalized_ipc,mean_normalized_ipc,outliers,worst_normalized_ipc\n");
        for &scale in &c.cache_scales {
            let hierarchy = c.hierarchy.scaled(scale);
            let runs = self.evaluate(s, &hierarchy, Evaluation::Simulate, &c.managers, &models, &deployment, None)?;
            let (rows, summary) = runs.metrics(c.outlier_threshold).stage(s)?;
            let dir = format!("{}/x{}", files::CACHE_SIZE, scale);
            self.write(s, &format!("{dir}/metrics.csv"), metrics_csv(&rows))?;
            self.write(s, &format!("{dir}/summary.csv"), summary_csv(&summary))?;
            for sm in &summary {
                combined.push_str(&format!(
                    "{scale},{},{},{},{},{}\n",
                    sm.manager,
                    fmt_f64(sm.geomean_normalized),
                    fmt_f64(sm.mean_normalized),
                    sm.outliers,
                    fmt_f64(sm.worst_normalized)
                ));
            }
        }
        self.write(s, files::CACHE_SIZE_SUMMARY, combined)
    }

    /// Hashes every output file and records the embedded config.
    pub fn write_manifest(&self) -> Result<Manifest> {
        let s = Stage::Manifest;
        let mut paths = Vec::new();
        collect_files(&self.out, &self.out, &mut paths).map_err(|e| format!("{}: {e}", self.out.display())).stage(s)?;
        let mut files_map = BTreeMap::new();
        for rel in paths {
            if rel == files::MANIFEST {
                continue;
            }
            files_map.insert(rel.clone(), sha256_hex(&self.read(s, &rel)?));
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            seed: self.config.seed,
            config_sha256: config_hash(&self.config),
            config: self.config.clone(),
            files: files_map,
        };
        self.write(s, files::MANIFEST, to_json(&manifest))?;
        Ok(manifest)
    }

    /// All stages in order.
    pub fn run_all(&self) -> Result<Manifest> {
        self.sweep()?;
        self.prune()?;
        self.dataset()?;
        self.train()?;
        self.quantize()?;
        self.run()?;
        self.report()?;
        self.model_size_sweep()?;
        self.cache_size_sweep()?;
        self.write_manifest()
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display())).stage(Stage::Config)?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display())).stage(Stage::Config)?;
    if manifest.version != MANIFEST_VERSION {
        return fail(Stage::Config, format!("unsupported manifest version {}", manifest.version));
    }
    if config_hash(&manifest.config) != manifest.config_sha256 {
        return fail(Stage::Config, "manifest config does not match its recorded hash".into());
    }
    Ok(manifest)
}

/// Reruns the whole pipeline from a manifest's embedded config into `out`.
pub fn rerun_from_manifest(path: &Path, out: &Path) -> Result<Manifest> {
    let manifest = read_manifest(path)?;
    Pipeline::new(manifest.config, out)?.run_all()
}

fn events_report(per_psc: &[Vec<WindowStats>], carrier: usize, tol: f64, corr: f64) -> std::result::Result<EventsReport, BoxError> {
    let names = event_names();
    let invariant = select_invariant_events(&event_matrix(per_psc), tol)?;
    let samples: Vec<Vec<f64>> = per_psc.get(carrier).map(|w| w.iter().map(event_values).collect()).unwrap_or_default();
    let (kept, zero_variance) = if samples.len() >= 2 {
        let f = drop_correlated(&samples, &invariant, corr)?;
        (f.kept, f.zero_variance)
    } else {
        (invariant.clone(), Vec::new())
    };
    let pick = |ids: &[usize]| ids.iter().map(|&i| names[i].clone()).collect::<Vec<_>>();
    let invariant_names = pick(&invariant);
    Ok(EventsReport {
        events: names.clone(),
        features_invariant: FEATURE_NAMES.iter().all(|f| invariant_names.iter().any(|n| n == f)),
        invariant: invariant_names,
        kept_after_correlation: pick(&kept),
        zero_variance: pick(&zero_variance),
        features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::result::Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if e.file_type()?.is_dir() {
            collect_files(root, &path, out)?;
        } else if !e.file_name().to_string_lossy().starts_with('.') {
            let rel = path.strip_prefix(root).expect("under root");
            out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_errors_carry_the_stage() {
        let e: Result<()> = Err::<(), _>("boom".to_string()).stage(Stage::Train);
        assert_eq!(e.unwrap_err().to_string(), "train stage: boom");
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
