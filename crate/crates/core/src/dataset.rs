//! Per-window features, event filtering and train/test dataset construction.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{EventCounts, WindowStats};
use crate::trace::TraceRecord;
use crate::util::{derive_seed, fmt_f64};
use crate::Level;

pub const FEATURE_COUNT: usize = 6;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "l1i_pages_read_load",
    "l1d_pages_read_load",
    "l1d_rfo_access",
    "branch_return",
    "not_branch",
    "branch_conditional",
];

/// The six PSC-invariant counters of one window, each saturating at 16 bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureVector(pub [u16; FEATURE_COUNT]);

impl FeatureVector {
    pub fn saturating(counts: [u64; FEATURE_COUNT]) -> Self {
        FeatureVector(counts.map(|c| c.min(u16::MAX as u64) as u16))
    }

    pub fn get(&self, feature: usize) -> u16 {
        self.0[feature]
    }

    pub fn to_f64(&self) -> [f64; FEATURE_COUNT] {
        self.0.map(f64::from)
    }
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u16::to_string).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

pub fn extract_features(stats: &WindowStats) -> FeatureVector {
    stats.hpc
}

/// Features computed directly from a record slice; equals what
/// [`crate::sim::Hierarchy::run_window`] reports for that window.
pub fn features_of(window: &[TraceRecord]) -> FeatureVector {
    let mut counts = EventCounts::default();
    for r in window {
        counts.record(r);
    }
    counts.features()
}

/// Names of every per-window event the simulator exposes, in event-id order.
/// The first six are the model features.
pub fn event_names() -> Vec<String> {
    let mut names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    names.extend(["branch_other", "loads", "cycles", "stall_latency"].map(String::from));
    for level in Level::ALL {
        for stat in [
            "demand_accesses",
            "demand_misses",
            "prefetch_issued",
            "prefetch_useful",
            "prefetch_unused_evicted",
            "misses_caused_by_prefetch",
        ] {
            names.push(format!("{level}_{stat}"));
        }
    }
    names
}

/// Event values for one window, aligned with [`event_names`].
pub fn event_values(stats: &WindowStats) -> Vec<f64> {
    let mut v: Vec<f64> = stats.hpc.to_f64().to_vec();
    v.extend([
        stats.branch_other as f64,
        stats.loads as f64,
        stats.cycles as f64,
        stats.stall_latency as f64,
    ]);
    for l in &stats.levels {
        v.extend([
            l.demand_accesses,
            l.demand_misses,
            l.prefetch_issued,
            l.prefetch_useful,
            l.prefetch_unused_evicted,
            l.misses_caused_by_prefetch,
        ]
        .map(|x| x as f64));
    }
    v
}

/// Event × PSC matrix of per-window means. `runs[p][w]` is window `w` under
/// PSC `p`, all PSCs run from the same snapshots.
pub fn event_matrix(runs: &[Vec<WindowStats>]) -> Vec<Vec<f64>> {
    let n_events = event_names().len();
    let mut m = vec![vec![0.0; runs.len()]; n_events];
    for (p, windows) in runs.iter().enumerate() {
        for w in windows {
            for (e, v) in event_values(w).into_iter().enumerate() {
                m[e][p] += v;
            }
        }
        if !windows.is_empty() {
            for row in &mut m {
                row[p] /= windows.len() as f64;
            }
        }
    }
    m
}

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("empty event matrix")]
    EmptyMatrix,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("too few {kind} for holdout: {count}")]
    TooFewGroups { kind: &'static str, count: usize },
    #[error("psc {0} is not in the oracle table")]
    MissingPsc(usize),
    #[error("trace {trace} window {window}: incomplete labels")]
    IncompleteLabels { trace: String, window: usize },
    #[error("dataset csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// Keeps event `e` iff `max_p |v(e,p) − mean(e)| / mean(e) < tol`. Events with
/// a non-positive mean are dropped as degenerate; exactly constant events are
/// kept for every `tol`.
pub fn select_invariant_events(matrix: &[Vec<f64>], tol: f64) -> Result<Vec<usize>, DatasetError> {
    if matrix.is_empty() || matrix.iter().all(Vec::is_empty) {
        return Err(DatasetError::EmptyMatrix);
    }
    let mut kept = Vec::new();
    for (e, row) in matrix.iter().enumerate() {
        if row.is_empty() {
            continue;
        }
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        if !(mean > 0.0) {
            continue;
        }
        let dev = row.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        if dev == 0.0 || dev / mean < tol {
            kept.push(e);
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationFilter {
    pub kept: Vec<usize>,
    /// Kept events whose variance is zero; correlation is undefined for them.
    pub zero_variance: Vec<usize>,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Greedy redundancy filter over `events` (column ids of `samples`) in the
/// given order: an event is dropped when `|r|` with any kept event exceeds
/// `threshold`.
pub fn drop_correlated(
    samples: &[Vec<f64>],
    events: &[usize],
    threshold: f64,
) -> Result<CorrelationFilter, DatasetError> {
    if samples.len() < 2 {
        return Err(DatasetError::TooFewSamples(samples.len()));
    }
    let column = |e: usize| -> Vec<f64> { samples.iter().map(|s| s[e]).collect() };
    let mut kept: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut zero_variance = Vec::new();
    for &e in events {
        let col = column(e);
        let constant = col.iter().all(|&v| v == col[0]);
        if constant {
            zero_variance.push(e);
            kept.push((e, col));
            continue;
        }
        let redundant = kept
            .iter()
            .any(|(_, k)| pearson(k, &col).is_some_and(|r| r.abs() > threshold));
        if !redundant {
            kept.push((e, col));
        }
    }
    Ok(CorrelationFilter {
        kept: kept.into_iter().map(|(e, _)| e).collect(),
        zero_variance,
    })
}

/// One trace's oracle sweep: per window, the shared features and the IPC of
/// every swept PSC (columns are catalog ids).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRun {
    pub trace_id: String,
    pub benchmark: String,
    pub psc_ids: Vec<usize>,
    pub windows: Vec<OracleWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleWindow {
    pub features: FeatureVector,
    pub instructions: u64,
    /// Cycles per swept PSC.
    pub cycles: Vec<u64>,
    pub ipc: Vec<f64>,
}

impl OracleRun {
    pub fn column(&self, psc_id: usize) -> Option<usize> {
        self.psc_ids.iter().position(|&p| p == psc_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub trace_id: String,
    pub window_index: usize,
    pub features: FeatureVector,
    /// IPC per deployment PSC.
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// Uniform random 10% of all windows for training.
    A1RandomWindows,
    /// Hold out 20% of traces; 60% of the remaining traces' windows train.
    A2LeaveTracesOut,
    /// As A2 with whole benchmarks held out.
    A3LeaveBenchmarksOut,
}

impl Approach {
    pub const A1_TRAIN_FRACTION: f64 = 0.10;
    pub const HOLDOUT_FRACTION: f64 = 0.20;
    pub const WINDOW_TRAIN_FRACTION: f64 = 0.60;
}

/// Which window's IPC labels a window's features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelAlignment {
    #[default]
    SameWindow,
    NextWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub approach: Approach,
    pub seed: u64,
    #[serde(default)]
    pub labels: LabelAlignment,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub psc_ids: Vec<usize>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn header(&self) -> String {
        let mut cols: Vec<String> = vec!["trace_id".into(), "window_index".into()];
        cols.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
        cols.extend(self.psc_ids.iter().map(|p| format!("ipc_{p}")));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for s in &self.samples {
            out.push_str(&s.trace_id);
            out.push_str(&format!(",{}", s.window_index));
            for f in s.features.0 {
                out.push_str(&format!(",{f}"));
            }
            for &l in &s.labels {
                out.push(',');
                out.push_str(&fmt_f64(l));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, DatasetError> {
        let err = |line: usize, reason: String| DatasetError::Csv { line, reason };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty input".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let fixed = 2 + FEATURE_COUNT;
        if cols.len() < fixed
            || cols[0] != "trace_id"
            || cols[1] != "window_index"
            || cols[2..fixed] != FEATURE_NAMES[..]
        {
            return Err(err(1, "unexpected header".into()));
        }
        let psc_ids = cols[fixed..]
            .iter()
            .map(|c| {
                c.strip_prefix("ipc_")
                    .and_then(|id| id.parse::<usize>().ok())
                    .ok_or_else(|| err(1, format!("bad label column {c:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut samples = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(err(line_no, format!("expected {} fields, got {}", cols.len(), fields.len())));
            }
            let window_index = fields[1]
                .parse::<usize>()
                .map_err(|e| err(line_no, format!("window_index: {e}")))?;
            let mut features = [0u16; FEATURE_COUNT];
            for (k, f) in features.iter_mut().enumerate() {
                *f = fields[2 + k]
                    .parse::<u16>()
                    .map_err(|e| err(line_no, format!("{}: {e}", FEATURE_NAMES[k])))?;
            }
            let labels = fields[fixed..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| err(line_no, format!("label: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            samples.push(Sample {
                trace_id: fields[0].to_string(),
                window_index,
                features: FeatureVector(features),
                labels,
            });
        }
        Ok(Dataset { psc_ids, samples })
    }
}

/// All samples of the given runs, labeled over `deployment` (catalog ids).
pub fn samples_from_runs(
    runs: &[OracleRun],
    deployment: &[usize],
    alignment: LabelAlignment,
) -> Result<Vec<Vec<Sample>>, DatasetError> {
    runs.iter()
        .map(|run| {
            let cols = deployment
                .iter()
                .map(|&p| run.column(p).ok_or(DatasetError::MissingPsc(p)))
                .collect::<Result<Vec<_>, _>>()?;
            let shift = match alignment {
                LabelAlignment::SameWindow => 0,
                LabelAlignment::NextWindow => 1,
            };
            (0..run.windows.len().saturating_sub(shift))
                .map(|w| {
                    let labels: Vec<f64> = cols.iter().map(|&c| run.windows[w + shift].ipc.get(c).copied().unwrap_or(f64::NAN)).collect();
                    if labels.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                        return Err(DatasetError::IncompleteLabels {
                            trace: run.trace_id.clone(),
                            window: w,
                        });
                    }
                    Ok(Sample {
                        trace_id: run.trace_id.clone(),
                        window_index: w,
                        features: run.windows[w].features,
                        labels,
                    })
                })
                .collect()
        })
        .collect()
}

fn fraction_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// Splits oracle runs into train and test sets. Both sets keep the original
/// (trace, window) order.
pub fn build_dataset(
    runs: &[OracleRun],
    deployment: &[usize],
    spec: &DatasetSpec,
) -> Result<(Dataset, Dataset), DatasetError> {
    let per_run = samples_from_runs(runs, deployment, spec.labels)?;
    let mut in_train: Vec<Vec<bool>> = per_run.iter().map(|s| vec![false; s.len()]).collect();
    match spec.approach {
        Approach::A1RandomWindows => {
            let mut all: Vec<(usize, usize)> = per_run
                .iter()
                .enumerate()
                .flat_map(|(r, s)| (0..s.len()).map(move |w| (r, w)))
                .collect();
            let take = fraction_count(all.len(), Approach::A1_TRAIN_FRACTION);
            all.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
            for &(r, w) in &all[..take] {
                in_train[r][w] = true;
            }
        }
        Approach::A2LeaveTracesOut | Approach::A3LeaveBenchmarksOut => {
            let (kind, key): (&'static str, fn(&OracleRun) -> &str) = if spec.approach == Approach::A2LeaveTracesOut {
                ("traces", |r| &r.trace_id)
            } else {
                ("benchmarks", |r| &r.benchmark)
            };
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, run) in runs.iter().enumerate() {
                groups.entry(key(run)).or_default().push(i);
            }
            if groups.len() < 2 {
                return Err(DatasetError::TooFewGroups { kind, count: groups.len() });
            }
            let mut names: Vec<&str> = groups.keys().copied().collect();
            names.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
            let holdout = fraction_count(names.len(), Approach::HOLDOUT_FRACTION).clamp(1, names.len() - 1);
            for name in &names[holdout..] {
                for &r in &groups[name] {
                    let mut idx: Vec<usize> = (0..per_run[r].len()).collect();
                    let take = fraction_count(idx.len(), Approach::WINDOW_TRAIN_FRACTION);
                    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, r as u64 + 1)));
                    for &w in &idx[..take] {
                        in_train[r][w] = true;
                    }
                }
            }
        }
    }
    let mut train = Dataset {
        psc_ids: deployment.to_vec(),
        samples: Vec::new(),
    };
    let mut test = train.clone();
    for (samples, flags) in per_run.into_iter().zip(in_train) {
        for (s, t) in samples.into_iter().zip(flags) {
            if t {
                train.samples.push(s);
            } else {
                test.samples.push(s);
            }
        }
    }
    Ok((train, test))
}
