//! Normalized IPC, outliers, scope and accuracy per (trace, manager), plus
//! per-manager summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manager::Totals;
use crate::sim::LevelStats;
use crate::util::{fmt_f64, geometric_mean, mean};
use crate::Level;

pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("baseline ipc for trace {0} is zero")]
    ZeroBaseline(String),
    #[error("no baseline run for trace {0}")]
    MissingBaseline(String),
    #[error("no rows to summarize")]
    Empty,
}

/// Ratio that may have a zero denominator; written as `undefined` in CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio(pub Option<f64>);

impl Ratio {
    pub fn new(num: f64, den: f64) -> Self {
        Ratio((den != 0.0).then(|| num / den))
    }

    fn csv(self) -> String {
        self.0.map_or_else(|| "undefined".to_string(), fmt_f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    /// Fraction of no-prefetch demand misses removed.
    pub scope: Ratio,
    /// Useful prefetches over issued prefetches.
    pub accuracy: Ratio,
    /// Misses removed over misses caused by prefetch pollution.
    pub reduced_per_caused: Ratio,
}

impl LevelMetrics {
    pub fn compute(managed: &LevelStats, no_prefetch: &LevelStats) -> Self {
        let removed = no_prefetch.demand_misses as f64 - managed.demand_misses as f64;
        LevelMetrics {
            scope: Ratio::new(removed, no_prefetch.demand_misses as f64),
            accuracy: Ratio::new(managed.prefetch_useful as f64, managed.prefetch_issued as f64),
            reduced_per_caused: Ratio::new(removed, managed.misses_caused_by_prefetch as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub trace_id: String,
    pub manager: String,
    pub ipc: f64,
    pub normalized: f64,
    pub outlier: bool,
    pub levels: [LevelMetrics; 4],
}

pub fn compute_row(
    trace_id: &str,
    manager: &str,
    totals: &Totals,
    baseline: &Totals,
    no_prefetch: &Totals,
    outlier_threshold: f64,
) -> Result<MetricsRow, MetricsError> {
    if baseline.ipc <= 0.0 {
        return Err(MetricsError::ZeroBaseline(trace_id.to_string()));
    }
    let normalized = totals.ipc / baseline.ipc;
    let levels = std::array::from_fn(|i| LevelMetrics::compute(&totals.levels[i], &no_prefetch.levels[i]));
    Ok(MetricsRow {
        trace_id: trace_id.to_string(),
        manager: manager.to_string(),
        ipc: totals.ipc,
        normalized,
        outlier: normalized < outlier_threshold,
        levels,
    })
}

/// One manager run to be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRun<'a> {
    pub trace_id: &'a str,
    pub manager: &'a str,
    pub totals: &'a Totals,
}

/// `lookup` returns (baseline, no-prefetch) totals for a trace.
pub fn compute_metrics<'a, F>(
    runs: &[ScoredRun<'a>],
    lookup: F,
    outlier_threshold: f64,
) -> Result<(Vec<MetricsRow>, Vec<Summary>), MetricsError>
where
    F: Fn(&str) -> Option<(&'a Totals, &'a Totals)>,
{
    let rows = runs
        .iter()
        .map(|r| {
            let (base, nopf) = lookup(r.trace_id).ok_or_else(|| MetricsError::MissingBaseline(r.trace_id.to_string()))?;
            compute_row(r.trace_id, r.manager, r.totals, base, nopf, outlier_threshold)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&rows)?;
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub manager: String,
    pub traces: usize,
    pub geomean_normalized: f64,
    pub mean_normalized: f64,
    pub outliers: usize,
    pub worst_normalized: f64,
    /// Means over traces where defined.
    pub mean_scope: [Option<f64>; 4],
    pub mean_accuracy: [Option<f64>; 4],
}

/// Per-manager summaries, in order of first appearance.
pub fn summarize(rows: &[MetricsRow]) -> Result<Vec<Summary>, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut managers: Vec<&str> = Vec::new();
    for r in rows {
        if !managers.contains(&r.manager.as_str()) {
            managers.push(&r.manager);
        }
    }
    Ok(managers
        .into_iter()
        .map(|m| {
            let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.manager == m).collect();
            let norm: Vec<f64> = mine.iter().map(|r| r.normalized).collect();
            let level_mean = |i: usize, pick: fn(&LevelMetrics) -> Ratio| {
                let vals: Vec<f64> = mine.iter().filter_map(|r| pick(&r.levels[i]).0).collect();
                mean(&vals)
            };
            Summary {
                manager: m.to_string(),
                traces: mine.len(),
                geomean_normalized: geometric_mean(&norm).unwrap_or(0.0),
                mean_normalized: mean(&norm).unwrap_or(0.0),
                outliers: mine.iter().filter(|r| r.outlier).count(),
                worst_normalized: norm.iter().copied().fold(f64::INFINITY, f64::min),
                mean_scope: std::array::from_fn(|i| level_mean(i, |l| l.scope)),
                mean_accuracy: std::array::from_fn(|i| level_mean(i, |l| l.accuracy)),
            }
        })
        .collect())
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("trace_id,manager,ipc,normalized_ipc,outlier");
    for l in Level::ALL {
        out.push_str(&format!(",scope_{l},accuracy_{l},reduced_per_caused_{l}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}", r.trace_id, r.manager, fmt_f64(r.ipc), fmt_f64(r.normalized), r.outlier));
        for l in &r.levels {
            out.push_str(&format!(",{},{},{}", l.scope.csv(), l.accuracy.csv(), l.reduced_per_caused.csv()));
        }
        out.push('\n');
    }
    out
}

pub fn summary_csv(summaries: &[Summary]) -> String {
    let mut out = String::from("manager,traces,geomean_normalized_ipc,mean_normalized_ipc,outliers,worst_normalized_ipc");
    for l in Level::ALL {
        out.push_str(&format!(",mean_scope_{l},mean_accuracy_{l}"));
    }
    out.push('\n');
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            s.manager,
            s.traces,
            fmt_f64(s.geomean_normalized),
            fmt_f64(s.mean_normalized),
            s.outliers,
            fmt_f64(s.worst_normalized)
        ));
        for i in 0..4 {
            out.push_str(&format!(",{},{}", Ratio(s.mean_scope[i]).csv(), Ratio(s.mean_accuracy[i]).csv()));
        }
        out.push('\n');
    }
    out
}
