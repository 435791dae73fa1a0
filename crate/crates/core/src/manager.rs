//! Runtime PSC managers behind one decision interface, and the loops that
//! drive them over a trace (simulated) or over an oracle table (replayed).

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FeatureVector, OracleRun, FEATURE_NAMES};
use crate::forest::{argmax, ClassifierVariants, SuiteModel};
use crate::nodemem::{NodeMemError, NodeMemImage};
use crate::prefetch::PrefetcherRegistry;
use crate::sim::{Hierarchy, HierarchyConfig, LevelStats, SimError};
use crate::trace::{slice_windows, Trace};
use crate::util::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Float,
    Nodemem,
}

/// Manager selection as written in configs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManagerKind {
    /// Always the given catalog PSC.
    Static { psc: usize },
    Puppeteer {
        backend: Backend,
        /// Deployment index used before any window has been observed.
        #[serde(default)]
        first: usize,
    },
    BtClassifier,
    SingleRegressor,
    SuiteClassifiers,
    Trial {
        #[serde(default = "one")]
        trial_windows: usize,
        #[serde(default = "twenty")]
        exploit_windows: usize,
    },
}

fn one() -> usize {
    1
}

fn twenty() -> usize {
    20
}

impl ManagerKind {
    pub fn label(&self) -> String {
        match self {
            ManagerKind::Static { psc } => format!("static-{psc}"),
            ManagerKind::Puppeteer { backend: Backend::Float, .. } => "puppeteer-float".into(),
            ManagerKind::Puppeteer { backend: Backend::Nodemem, .. } => "puppeteer-nodemem".into(),
            ManagerKind::BtClassifier => "bt-classifier".into(),
            ManagerKind::SingleRegressor => "single-regressor".into(),
            ManagerKind::SuiteClassifiers => "suite-classifiers".into(),
            ManagerKind::Trial { trial_windows, exploit_windows } => format!("trial-{trial_windows}-{exploit_windows}"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ManagerError {
    #[error("empty deployment set")]
    EmptyDeployment,
    #[error("trial parameters must be >= 1")]
    TrialParams,
    #[error("model covers {model} PSCs, deployment has {deployment}")]
    Schema { model: usize, deployment: usize },
    #[error("{0} requires a trained model")]
    MissingModel(&'static str),
    #[error("first-window index {first} outside deployment of {len}")]
    FirstIndex { first: usize, len: usize },
    #[error("psc {0} is not in the oracle table")]
    NotInTable(usize),
    #[error(transparent)]
    NodeMem(#[from] NodeMemError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Trained models a manager may draw on.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub suite: Option<Arc<SuiteModel>>,
    pub image: Option<Arc<NodeMemImage>>,
    pub baselines: Option<Arc<ClassifierVariants>>,
}

/// What the manager sees at the end of a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub features: FeatureVector,
    pub ipc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub psc: usize,
    /// Comparator operations spent (Node MEM backend only).
    pub comparisons: u32,
}

#[derive(Debug, Clone)]
enum Policy {
    Static(usize),
    Float(Arc<SuiteModel>, usize),
    NodeMem(Arc<NodeMemImage>, usize),
    Bt(Arc<ClassifierVariants>),
    SingleRegressor(Arc<ClassifierVariants>),
    SuiteClassifiers(Arc<ClassifierVariants>),
    Trial(TrialState),
}

#[derive(Debug, Clone)]
struct TrialState {
    trial_windows: usize,
    exploit_windows: usize,
    pos: usize,
    sums: Vec<(f64, usize)>,
    latched: usize,
    last: Option<usize>,
}

impl TrialState {
    fn cycle(&self, n: usize) -> usize {
        n * self.trial_windows + self.exploit_windows
    }

    fn decide(&mut self, n: usize, last: Option<&Observation>) -> usize {
        if let (Some(obs), Some(k)) = (last, self.last) {
            self.sums[k].0 += obs.ipc;
            self.sums[k].1 += 1;
        }
        let trial_end = n * self.trial_windows;
        if self.pos == 0 {
            self.sums.iter_mut().for_each(|s| *s = (0.0, 0));
        }
        let choice = if self.pos < trial_end {
            let k = self.pos / self.trial_windows;
            self.last = Some(k);
            k
        } else {
            if self.pos == trial_end {
                let means: Vec<f64> = self
                    .sums
                    .iter()
                    .map(|&(s, c)| if c == 0 { f64::NEG_INFINITY } else { s / c as f64 })
                    .collect();
                self.latched = argmax(&means).unwrap_or(0);
            }
            self.last = None;
            self.latched
        };
        self.pos = (self.pos + 1) % self.cycle(n);
        choice
    }
}

/// A manager instance: a policy over a deployment list of catalog ids.
#[derive(Debug, Clone)]
pub struct Manager {
    kind: ManagerKind,
    deployment: Vec<usize>,
    policy: Policy,
}

impl Manager {
    pub fn new(kind: &ManagerKind, deployment: &[usize], models: &Models) -> Result<Self, ManagerError> {
        if deployment.is_empty() {
            return Err(ManagerError::EmptyDeployment);
        }
        let n = deployment.len();
        let check = |model: usize| {
            if model == n {
                Ok(())
            } else {
                Err(ManagerError::Schema { model, deployment: n })
            }
        };
        let baselines = |name| models.baselines.clone().ok_or(ManagerError::MissingModel(name));
        let policy = match kind {
            ManagerKind::Static { psc } => Policy::Static(*psc),
            ManagerKind::Puppeteer { backend, first } => {
                if *first >= n {
                    return Err(ManagerError::FirstIndex { first: *first, len: n });
                }
                match backend {
                    Backend::Float => {
                        let s = models.suite.clone().ok_or(ManagerError::MissingModel("puppeteer-float"))?;
                        check(s.forests.len())?;
                        if s.feature_names.len() != FEATURE_NAMES.len() {
                            return Err(ManagerError::Schema { model: s.feature_names.len(), deployment: FEATURE_NAMES.len() });
                        }
                        Policy::Float(s, *first)
                    }
                    Backend::Nodemem => {
                        let img = models.image.clone().ok_or(ManagerError::MissingModel("puppeteer-nodemem"))?;
                        check(img.n_psc as usize)?;
                        Policy::NodeMem(img, *first)
                    }
                }
            }
            ManagerKind::BtClassifier => {
                let b = baselines("bt-classifier")?;
                check(b.psc_ids.len())?;
                Policy::Bt(b)
            }
            ManagerKind::SingleRegressor => {
                let b = baselines("single-regressor")?;
                check(b.psc_ids.len())?;
                Policy::SingleRegressor(b)
            }
            ManagerKind::SuiteClassifiers => {
                let b = baselines("suite-classifiers")?;
                check(b.psc_ids.len())?;
                Policy::SuiteClassifiers(b)
            }
            ManagerKind::Trial { trial_windows, exploit_windows } => {
                if *trial_windows == 0 || *exploit_windows == 0 {
                    return Err(ManagerError::TrialParams);
                }
                Policy::Trial(TrialState {
                    trial_windows: *trial_windows,
                    exploit_windows: *exploit_windows,
                    pos: 0,
                    sums: vec![(0.0, 0); n],
                    latched: 0,
                    last: None,
                })
            }
        };
        Ok(Manager { kind: kind.clone(), deployment: deployment.to_vec(), policy })
    }

    pub fn kind(&self) -> &ManagerKind {
        &self.kind
    }

    pub fn deployment(&self) -> &[usize] {
        &self.deployment
    }

    /// PSC (catalog id) for the next window. `last` is `None` before the
    /// first window.
    pub fn decide(&mut self, last: Option<&Observation>) -> Result<Decision, ManagerError> {
        let n = self.deployment.len();
        let (index, comparisons) = match (&mut self.policy, last) {
            (Policy::Static(psc), _) => return Ok(Decision { psc: *psc, comparisons: 0 }),
            (Policy::Trial(state), last) => (state.decide(n, last), 0),
            (Policy::Float(_, first) | Policy::NodeMem(_, first), None) => (*first, 0),
            (Policy::Bt(_) | Policy::SingleRegressor(_) | Policy::SuiteClassifiers(_), None) => (0, 0),
            (Policy::Float(suite, _), Some(obs)) => (suite.best(&obs.features), 0),
            (Policy::NodeMem(image, _), Some(obs)) => {
                let b = image.select_best_psc(&obs.features)?;
                (b.psc_index, b.comparisons)
            }
            (Policy::Bt(b), Some(obs)) => (b.classify(&obs.features), 0),
            (Policy::SingleRegressor(b), Some(obs)) => (b.regress(&obs.features), 0),
            (Policy::SuiteClassifiers(b), Some(obs)) => (b.suite_classify(&obs.features), 0),
        };
        Ok(Decision { psc: self.deployment[index.min(n - 1)], comparisons })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub window_index: usize,
    pub psc: usize,
    pub instructions: u64,
    pub cycles: u64,
    pub ipc: f64,
    pub comparisons: u32,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionLog {
    pub rows: Vec<DecisionRow>,
}

impl DecisionLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window_index,psc,instructions,cycles,ipc,comparisons");
        for name in FEATURE_NAMES {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                r.window_index,
                r.psc,
                r.instructions,
                r.cycles,
                fmt_f64(r.ipc),
                r.comparisons
            ));
            for f in r.features.0 {
                out.push_str(&format!(",{f}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn choices(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.psc).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub instructions: u64,
    pub cycles: u64,
    pub ipc: f64,
    pub windows: usize,
    /// Fraction of windows run under each catalog PSC.
    pub usage: BTreeMap<usize, f64>,
    /// Summed per-level counters (zero for table replays).
    pub levels: [LevelStats; 4],
    pub max_comparisons: u32,
}

impl Totals {
    fn from_log(log: &DecisionLog, levels: [LevelStats; 4]) -> Self {
        let instructions: u64 = log.rows.iter().map(|r| r.instructions).sum();
        let cycles: u64 = log.rows.iter().map(|r| r.cycles).sum();
        let mut usage: BTreeMap<usize, f64> = BTreeMap::new();
        for r in &log.rows {
            *usage.entry(r.psc).or_default() += 1.0;
        }
        let windows = log.rows.len();
        for v in usage.values_mut() {
            *v /= windows as f64;
        }
        Totals {
            instructions,
            cycles,
            ipc: if cycles == 0 { 0.0 } else { instructions as f64 / cycles as f64 },
            windows,
            usage,
            levels,
            max_comparisons: log.rows.iter().map(|r| r.comparisons).max().unwrap_or(0),
        }
    }
}

/// Runs `trace` window by window; each window uses the PSC decided at the
/// end of the previous one. Prefetcher and cache state persist across
/// switches.
pub fn run_managed(
    trace: &Trace,
    config: &HierarchyConfig,
    registry: &PrefetcherRegistry,
    manager: &mut Manager,
    window_size: usize,
) -> Result<(DecisionLog, Totals), ManagerError> {
    let catalog = registry.catalog().map_err(SimError::from)?;
    let mut h = Hierarchy::new(config.clone(), registry)?;
    let mut log = DecisionLog::default();
    let mut levels = [LevelStats::default(); 4];
    let mut last: Option<Observation> = None;
    for (w, range) in slice_windows(trace.len(), window_size.max(1)).into_iter().enumerate() {
        let decision = manager.decide(last.as_ref())?;
        let psc = catalog.decode(decision.psc).map_err(|e| SimError::Prefetch(e.into()))?;
        let stats = h.run_window(trace.window(range), &psc)?;
        for (acc, l) in levels.iter_mut().zip(&stats.levels) {
            acc.add(l);
        }
        last = Some(Observation { features: stats.hpc, ipc: stats.ipc });
        log.rows.push(DecisionRow {
            window_index: w,
            psc: decision.psc,
            instructions: stats.instructions,
            cycles: stats.cycles,
            ipc: stats.ipc,
            comparisons: decision.comparisons,
            features: stats.hpc,
        });
    }
    let totals = Totals::from_log(&log, levels);
    Ok((log, totals))
}

/// Drives a manager over an oracle table: each window's outcome is looked up
/// for the chosen PSC instead of simulated.
pub fn replay(run: &OracleRun, manager: &mut Manager) -> Result<(DecisionLog, Totals), ManagerError> {
    let mut log = DecisionLog::default();
    let mut last = None;
    for (w, win) in run.windows.iter().enumerate() {
        let decision = manager.decide(last.as_ref())?;
        let col = run.column(decision.psc).ok_or(ManagerError::NotInTable(decision.psc))?;
        last = Some(Observation { features: win.features, ipc: win.ipc[col] });
        log.rows.push(DecisionRow {
            window_index: w,
            psc: decision.psc,
            instructions: win.instructions,
            cycles: win.cycles[col],
            ipc: win.ipc[col],
            comparisons: decision.comparisons,
            features: win.features,
        });
    }
    let totals = Totals::from_log(&log, [LevelStats::default(); 4]);
    Ok((log, totals))
}
