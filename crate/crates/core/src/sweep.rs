//! Oracle sweeps: every window is run once per PSC from a shared snapshot,
//! and the carrier PSC's run is committed as the state for the next window.

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{FeatureVector, OracleRun, OracleWindow, FEATURE_COUNT, FEATURE_NAMES};
use crate::prefetch::PrefetcherRegistry;
use crate::psc::{IpcTable, PscCatalog};
use crate::sim::{Hierarchy, HierarchyConfig, SimError, WindowStats};
use crate::trace::{slice_windows, Trace};

#[derive(Debug, Error, PartialEq)]
pub enum SweepError {
    #[error("empty PSC set")]
    EmptyPscSet,
    #[error("carrier index {carrier} out of range for {len} PSCs")]
    Carrier { carrier: usize, len: usize },
    #[error("window size must be >= 1")]
    WindowSize,
    #[error("empty trace")]
    EmptyTrace,
    #[error("window {window}: features differ between PSC {a} and PSC {b}")]
    FeatureMismatch { window: usize, a: usize, b: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Psc(#[from] crate::psc::PscError),
    #[error("sweep csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub window_size: usize,
    /// Index into the PSC list whose run is committed.
    pub carrier: usize,
    /// Keep every PSC's full window statistics.
    pub debug: bool,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub run: OracleRun,
    /// `stats[p][w]` when run in debug mode.
    pub stats: Option<Vec<Vec<WindowStats>>>,
}

pub fn oracle_sweep(
    trace: &Trace,
    trace_id: &str,
    benchmark: &str,
    config: &HierarchyConfig,
    registry: &PrefetcherRegistry,
    psc_ids: &[usize],
    options: &SweepOptions,
) -> Result<SweepResult, SweepError> {
    if psc_ids.is_empty() {
        return Err(SweepError::EmptyPscSet);
    }
    if options.carrier >= psc_ids.len() {
        return Err(SweepError::Carrier { carrier: options.carrier, len: psc_ids.len() });
    }
    if options.window_size == 0 {
        return Err(SweepError::WindowSize);
    }
    if trace.is_empty() {
        return Err(SweepError::EmptyTrace);
    }
    let catalog = registry.catalog().map_err(SimError::from)?;
    let pscs = psc_ids.iter().map(|&id| catalog.decode(id)).collect::<Result<Vec<_>, _>>()?;
    let mut committed = Hierarchy::new(config.clone(), registry)?;
    let mut windows = Vec::new();
    let mut debug: Vec<Vec<WindowStats>> = vec![Vec::new(); if options.debug { pscs.len() } else { 0 }];
    for (w, range) in slice_windows(trace.len(), options.window_size).into_iter().enumerate() {
        let records = trace.window(range);
        let mut per_psc: Vec<Option<WindowStats>> = vec![None; pscs.len()];
        for (p, psc) in pscs.iter().enumerate() {
            if p != options.carrier {
                per_psc[p] = Some(committed.clone().run_window(records, psc)?);
            }
        }
        per_psc[options.carrier] = Some(committed.run_window(records, &pscs[options.carrier])?);
        let stats: Vec<WindowStats> = per_psc.into_iter().map(|s| s.expect("every PSC ran")).collect();
        let features = stats[0].hpc;
        if let Some(b) = stats.iter().position(|s| s.hpc != features) {
            return Err(SweepError::FeatureMismatch { window: w, a: psc_ids[0], b: psc_ids[b] });
        }
        windows.push(OracleWindow {
            features,
            instructions: stats[0].instructions,
            cycles: stats.iter().map(|s| s.cycles).collect(),
            ipc: stats.iter().map(|s| s.ipc).collect(),
        });
        if options.debug {
            for (d, s) in debug.iter_mut().zip(stats) {
                d.push(s);
            }
        }
    }
    Ok(SweepResult {
        run: OracleRun {
            trace_id: trace_id.to_string(),
            benchmark: benchmark.to_string(),
            psc_ids: psc_ids.to_vec(),
            windows,
        },
        stats: options.debug.then_some(debug),
    })
}

/// Whole-run totals per PSC as if it were held static (from the table).
pub fn static_ipc(run: &OracleRun) -> Vec<f64> {
    let instr: u64 = run.windows.iter().map(|w| w.instructions).sum();
    (0..run.psc_ids.len())
        .map(|p| instr as f64 / run.windows.iter().map(|w| w.cycles[p]).sum::<u64>() as f64)
        .collect()
}

/// Total IPC of the per-window oracle: the best PSC in every window.
pub fn oracle_ipc(run: &OracleRun) -> f64 {
    let instr: u64 = run.windows.iter().map(|w| w.instructions).sum();
    let cycles: u64 = run.windows.iter().map(|w| w.cycles.iter().copied().min().unwrap_or(0)).sum();
    instr as f64 / cycles as f64
}

/// Per-trace mean window IPC for each swept PSC.
pub fn ipc_table(runs: &[OracleRun]) -> Result<IpcTable, SweepError> {
    let psc_ids = runs.first().map(|r| r.psc_ids.clone()).unwrap_or_default();
    let rows = runs
        .iter()
        .map(|r| {
            if r.psc_ids != psc_ids {
                return Err(SweepError::Csv { line: 0, reason: format!("trace {} swept a different PSC set", r.trace_id) });
            }
            Ok((0..psc_ids.len())
                .map(|p| r.windows.iter().map(|w| w.ipc[p]).sum::<f64>() / r.windows.len().max(1) as f64)
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>, _>>()?;
    Ok(IpcTable {
        trace_ids: runs.iter().map(|r| r.trace_id.clone()).collect(),
        psc_ids,
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub trace_id: String,
    pub windows: usize,
    pub oracle_ipc: f64,
    pub best_static_psc: usize,
    pub best_static_ipc: f64,
}

pub fn summarize(run: &OracleRun) -> SweepSummary {
    let s = static_ipc(run);
    let best = crate::forest::argmax(&s).unwrap_or(0);
    SweepSummary {
        trace_id: run.trace_id.clone(),
        windows: run.windows.len(),
        oracle_ipc: oracle_ipc(run),
        best_static_psc: run.psc_ids.get(best).copied().unwrap_or(0),
        best_static_ipc: s.get(best).copied().unwrap_or(f64::NAN),
    }
}

/// One row per (trace, window): features, then cycles per PSC.
pub fn to_csv(runs: &[OracleRun]) -> String {
    let psc_ids = runs.first().map(|r| r.psc_ids.clone()).unwrap_or_default();
    let mut out = String::from("trace_id,benchmark,window_index,instructions");
    for name in FEATURE_NAMES {
        out.push(',');
        out.push_str(name);
    }
    for id in &psc_ids {
        out.push_str(&format!(",cycles_{id}"));
    }
    out.push('\n');
    for r in runs {
        for (w, win) in r.windows.iter().enumerate() {
            out.push_str(&format!("{},{},{w},{}", r.trace_id, r.benchmark, win.instructions));
            for f in win.features.0 {
                out.push_str(&format!(",{f}"));
            }
            for c in &win.cycles {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
    }
    out
}

pub fn from_csv(text: &str) -> Result<Vec<OracleRun>, SweepError> {
    let err = |line: usize, reason: String| SweepError::Csv { line, reason };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty input".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let fixed = 4 + FEATURE_COUNT;
    if cols.len() <= fixed || cols[..4] != ["trace_id", "benchmark", "window_index", "instructions"] || cols[4..fixed] != FEATURE_NAMES[..] {
        return Err(err(1, "unexpected header".into()));
    }
    let psc_ids = cols[fixed..]
        .iter()
        .map(|c| c.strip_prefix("cycles_").and_then(|v| v.parse().ok()).ok_or_else(|| err(1, format!("bad column {c:?}"))))
        .collect::<Result<Vec<usize>, _>>()?;
    let mut runs: Vec<OracleRun> = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(err(n, format!("expected {} fields, got {}", cols.len(), f.len())));
        }
        let window: usize = f[2].parse().map_err(|e| err(n, format!("window_index: {e}")))?;
        let instructions: u64 = f[3].parse().map_err(|e| err(n, format!("instructions: {e}")))?;
        let mut features = [0u16; FEATURE_COUNT];
        for (k, v) in features.iter_mut().enumerate() {
            *v = f[4 + k].parse().map_err(|e| err(n, format!("{}: {e}", FEATURE_NAMES[k])))?;
        }
        let cycles = f[fixed..]
            .iter()
            .map(|c| match c.parse::<u64>() {
                Ok(0) => Err(err(n, "zero cycles".into())),
                Ok(v) => Ok(v),
                Err(e) => Err(err(n, format!("cycles: {e}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ipc = cycles.iter().map(|&c| instructions as f64 / c as f64).collect();
        let new_trace = runs.last().is_none_or(|r| r.trace_id != f[0]);
        if new_trace {
            if runs.iter().any(|r| r.trace_id == f[0]) {
                return Err(err(n, format!("trace {} is not contiguous", f[0])));
            }
            runs.push(OracleRun {
                trace_id: f[0].to_string(),
                benchmark: f[1].to_string(),
                psc_ids: psc_ids.clone(),
                windows: Vec::new(),
            });
        }
        let run = runs.last_mut().expect("pushed above");
        if window != run.windows.len() {
            return Err(err(n, format!("expected window {}, got {window}", run.windows.len())));
        }
        run.windows.push(OracleWindow { features: FeatureVector(features), instructions, cycles, ipc });
    }
    if runs.is_empty() {
        return Err(err(1, "no windows".into()));
    }
    Ok(runs)
}

/// Catalog ids of the whole catalog, for sweeps ahead of pruning.
pub fn all_ids(catalog: &PscCatalog) -> Vec<usize> {
    (0..catalog.len()).collect()
}
