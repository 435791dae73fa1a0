//! Experiment configuration, read from a single TOML file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Approach, DatasetSpec, LabelAlignment};
use crate::forest::TrainConfig;
use crate::manager::ManagerKind;
use crate::nodemem::QuantSpec;
use crate::prefetch::PrefetcherRegistry;
use crate::sim::HierarchyConfig;
use crate::trace::{parse_trace, Trace, TraceFormat};
use crate::util::derive_seed;
use crate::workload::{generate_synthetic, WorkloadSpec};
use crate::DEFAULT_WINDOW;

/// Catalog id of the all-`none` PSC.
pub const NO_PREFETCH: usize = 0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("trace {id}: {reason}")]
    Trace { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSource {
    pub id: String,
    /// Defaults to the trace id.
    #[serde(default)]
    pub benchmark: Option<String>,
    #[serde(flatten)]
    pub input: TraceInput,
}

impl TraceSource {
    pub fn benchmark(&self) -> &str {
        self.benchmark.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TraceInput {
    Synthetic { workload: WorkloadSpec },
    File {
        path: PathBuf,
        /// `binary` or `csv`.
        #[serde(default = "binary")]
        format: String,
    },
}

fn binary() -> String {
    "binary".into()
}

/// PSCs the oracle sweep evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SweepSet {
    All,
    List { pscs: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Deployment {
    /// Greedy cover of every trace's `top_k` best PSCs.
    Prune { top_k: usize },
    List { pscs: Vec<usize> },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    /// Managed runs through the simulator.
    #[default]
    Simulate,
    /// Managed runs replayed over the oracle sweep table.
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    pub approach: Approach,
    pub labels: LabelAlignment,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { approach: Approach::A1RandomWindows, labels: LabelAlignment::SameWindow }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventFilter {
    pub invariance_tol: f64,
    pub corr_threshold: f64,
}

impl Default for EventFilter {
    fn default() -> Self {
        EventFilter { invariance_tol: 0.10, corr_threshold: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_window")]
    pub window_size: usize,
    pub traces: Vec<TraceSource>,
    #[serde(default)]
    pub hierarchy: HierarchyConfig,
    #[serde(default)]
    pub registry: PrefetcherRegistry,
    #[serde(default = "sweep_all")]
    pub sweep: SweepSet,
    /// Catalog id whose run the sweep commits; defaults to the first swept PSC.
    #[serde(default)]
    pub carrier: Option<usize>,
    pub deployment: Deployment,
    #[serde(default)]
    pub events: EventFilter,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_label_threshold")]
    pub label_threshold: f64,
    #[serde(default)]
    pub quant: QuantSpec,
    pub managers: Vec<ManagerKind>,
    #[serde(default)]
    pub baseline_psc: usize,
    #[serde(default)]
    pub evaluation: Evaluation,
    #[serde(default = "default_outlier")]
    pub outlier_threshold: f64,
    /// Node-memory budgets for the model-size sweep.
    #[serde(default)]
    pub model_sizes_kib: Vec<f64>,
    /// Cache capacity multipliers for the cache-size sweep.
    #[serde(default)]
    pub cache_scales: Vec<f64>,
    /// Output directory; relative paths resolve against the config file.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

fn sweep_all() -> SweepSet {
    SweepSet::All
}

fn default_label_threshold() -> f64 {
    0.005
}

fn default_outlier() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file, resolving relative trace and output paths against
    /// its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for t in &mut self.traces {
            if let TraceInput::File { path, .. } = &mut t.input {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        if let Some(out) = &mut self.out {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.traces.is_empty() {
            return invalid("no traces".into());
        }
        let mut ids = BTreeSet::new();
        for t in &self.traces {
            let safe = !t.id.is_empty() && t.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
            if !safe || t.id.starts_with('.') {
                return invalid(format!("trace id `{}` must be non-empty [A-Za-z0-9._-]", t.id));
            }
            if t.benchmark().contains(',') {
                return invalid(format!("benchmark name of `{}` contains a comma", t.id));
            }
            if !ids.insert(&t.id) {
                return invalid(format!("duplicate trace id `{}`", t.id));
            }
            if let TraceInput::File { format, .. } = &t.input {
                format.parse::<TraceFormat>().map_err(ConfigError::Invalid)?;
            }
        }
        if self.window_size == 0 {
            return invalid("window_size must be >= 1".into());
        }
        if self.managers.is_empty() {
            return invalid("no managers".into());
        }
        let mut labels = BTreeSet::new();
        for m in &self.managers {
            if !labels.insert(m.label()) {
                return invalid(format!("manager `{}` listed twice", m.label()));
            }
        }
        if !(self.label_threshold >= 0.0) {
            return invalid("label_threshold must be >= 0".into());
        }
        if self.model_sizes_kib.iter().any(|&k| !(k > 0.0)) || self.cache_scales.iter().any(|&s| !(s > 0.0)) {
            return invalid("model sizes and cache scales must be positive".into());
        }
        if let Deployment::Prune { top_k: 0 } = self.deployment {
            return invalid("top_k must be >= 1".into());
        }
        if let Deployment::List { pscs } = &self.deployment {
            if pscs.is_empty() {
                return invalid("empty deployment list".into());
            }
        }
        self.hierarchy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.registry.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let n = self.registry.catalog().map_err(|e| ConfigError::Invalid(e.to_string()))?.len();
        let in_range = |id: usize, what: &str| {
            if id < n {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{what} psc {id} outside catalog of {n}")))
            }
        };
        in_range(self.baseline_psc, "baseline")?;
        if let Some(c) = self.carrier {
            in_range(c, "carrier")?;
        }
        if let SweepSet::List { pscs } = &self.sweep {
            if pscs.is_empty() {
                return invalid("empty sweep list".into());
            }
            pscs.iter().try_for_each(|&p| in_range(p, "sweep"))?;
        }
        if let Deployment::List { pscs } = &self.deployment {
            pscs.iter().try_for_each(|&p| in_range(p, "deployment"))?;
        }
        for m in &self.managers {
            if let ManagerKind::Static { psc } = m {
                in_range(*psc, "static manager")?;
            }
        }
        Ok(())
    }

    /// Catalog ids the sweep runs, in order. Explicit lists are extended with
    /// every PSC a later stage needs from the table.
    pub fn swept_pscs(&self) -> Vec<usize> {
        let n = self.registry.catalog().map(|c| c.len()).unwrap_or(0);
        match &self.sweep {
            SweepSet::All => (0..n).collect(),
            SweepSet::List { pscs } => {
                let mut out: Vec<usize> = Vec::new();
                let mut push = |p: usize| {
                    if !out.contains(&p) {
                        out.push(p);
                    }
                };
                pscs.iter().for_each(|&p| push(p));
                push(NO_PREFETCH);
                push(self.baseline_psc);
                if let Deployment::List { pscs } = &self.deployment {
                    pscs.iter().for_each(|&p| push(p));
                }
                for m in &self.managers {
                    if let ManagerKind::Static { psc } = m {
                        push(*psc);
                    }
                }
                out
            }
        }
    }

    /// Index of the carrier within [`Self::swept_pscs`].
    pub fn carrier_index(&self) -> usize {
        let swept = self.swept_pscs();
        self.carrier.and_then(|c| swept.iter().position(|&p| p == c)).unwrap_or(0)
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec { approach: self.dataset.approach, seed: derive_seed(self.seed, 1), labels: self.dataset.labels }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: derive_seed(self.seed, 2), ..self.train }
    }

    pub fn load_trace(&self, source: &TraceSource) -> Result<Trace, ConfigError> {
        let err = |reason: String| ConfigError::Trace { id: source.id.clone(), reason };
        match &source.input {
            TraceInput::Synthetic { workload } => generate_synthetic(workload).map_err(|e| err(e.to_string())),
            TraceInput::File { path, format } => {
                let format: TraceFormat = format.parse().map_err(err)?;
                let bytes = std::fs::read(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
                parse_trace(&bytes, format).map_err(|e| err(e.to_string()))
            }
        }
    }
}
