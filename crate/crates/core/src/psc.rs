//! Prefetcher system configurations (PSCs): one prefetcher choice per cache
//! level, the dense catalog of all combinations, and top-k pruning of the
//! catalog down to a small deployment set.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::fmt_f64;
use crate::Level;

/// Registry index per level (L1I, L1D, L2, LLC); index 0 is "no prefetcher".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Psc(pub [u8; 4]);

impl Psc {
    pub const NONE: Psc = Psc([0; 4]);

    pub fn new(l1i: u8, l1d: u8, l2: u8, llc: u8) -> Self {
        Psc([l1i, l1d, l2, llc])
    }

    pub fn slot(&self, level: Level) -> usize {
        self.0[level.index()] as usize
    }

    /// Number of levels with a prefetcher switched on.
    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|&&s| s != 0).count()
    }
}

impl fmt::Display for Psc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "({a},{b},{c},{d})")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PscError {
    #[error("registry size at {level} must be between 1 and 255, got {size}")]
    BadSize { level: Level, size: usize },
    #[error("psc id {id} out of range for a catalog of {len}")]
    IdOutOfRange { id: usize, len: usize },
    #[error("psc {psc} does not fit registry sizes {sizes:?}")]
    SlotOutOfRange { psc: Psc, sizes: [usize; 4] },
    #[error("ipc table is incomplete: {0}")]
    IncompleteTable(String),
    #[error("top_k must be at least 1")]
    ZeroTopK,
    #[error("ipc table csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// All PSCs for a set of per-level registry sizes, in lexicographic order so
/// that a PSC's position equals its dense id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PscCatalog {
    sizes: [usize; 4],
}

impl PscCatalog {
    pub fn enumerate(sizes: [usize; 4]) -> Result<Self, PscError> {
        for (level, &size) in Level::ALL.iter().zip(&sizes) {
            if !(1..=255).contains(&size) {
                return Err(PscError::BadSize { level: *level, size });
            }
        }
        Ok(PscCatalog { sizes })
    }

    pub fn sizes(&self) -> [usize; 4] {
        self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, psc: &Psc) -> Result<usize, PscError> {
        let [n0, n1, n2, n3] = self.sizes;
        let [a, b, c, d] = psc.0.map(usize::from);
        if a >= n0 || b >= n1 || c >= n2 || d >= n3 {
            return Err(PscError::SlotOutOfRange {
                psc: *psc,
                sizes: self.sizes,
            });
        }
        Ok(((a * n1 + b) * n2 + c) * n3 + d)
    }

    pub fn decode(&self, id: usize) -> Result<Psc, PscError> {
        if id >= self.len() {
            return Err(PscError::IdOutOfRange { id, len: self.len() });
        }
        let mut rest = id;
        let mut slots = [0u8; 4];
        for i in (0..4).rev() {
            slots[i] = (rest % self.sizes[i]) as u8;
            rest /= self.sizes[i];
        }
        Ok(Psc(slots))
    }

    pub fn iter(&self) -> impl Iterator<Item = Psc> + '_ {
        (0..self.len()).map(|id| self.decode(id).expect("id in range"))
    }
}

/// Mean IPC per (trace, PSC). Columns are catalog ids.
#[derive(Debug, Clone, PartialEq)]
pub struct IpcTable {
    pub trace_ids: Vec<String>,
    pub psc_ids: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

impl IpcTable {
    fn check(&self) -> Result<(), PscError> {
        if self.rows.len() != self.trace_ids.len() {
            return Err(PscError::IncompleteTable(format!(
                "{} rows for {} traces",
                self.rows.len(),
                self.trace_ids.len()
            )));
        }
        for (t, row) in self.trace_ids.iter().zip(&self.rows) {
            if row.len() != self.psc_ids.len() {
                return Err(PscError::IncompleteTable(format!(
                    "trace {t} has {} of {} entries",
                    row.len(),
                    self.psc_ids.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(PscError::IncompleteTable(format!(
                    "trace {t}, psc {} is missing",
                    self.psc_ids[j]
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trace_id");
        for id in &self.psc_ids {
            out.push_str(&format!(",{id}"));
        }
        out.push('\n');
        for (t, row) in self.trace_ids.iter().zip(&self.rows) {
            out.push_str(t);
            for v in row {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, PscError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(PscError::Csv {
            line: 1,
            reason: "empty input".into(),
        })?;
        let mut cols = header.split(',');
        if cols.next().map(str::trim) != Some("trace_id") {
            return Err(PscError::Csv {
                line: 1,
                reason: "first column must be trace_id".into(),
            });
        }
        let psc_ids = cols
            .map(|c| c.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PscError::Csv {
                line: 1,
                reason: e.to_string(),
            })?;
        let mut trace_ids = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or_default().trim().to_string();
            let row = fields
                .map(|f| match f.trim() {
                    "" => Ok(f64::NAN),
                    s => s.parse::<f64>(),
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| PscError::Csv {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            trace_ids.push(id);
            rows.push(row);
        }
        Ok(IpcTable {
            trace_ids,
            psc_ids,
            rows,
        })
    }
}

/// Per-trace top-k column indices, ranked by IPC descending then id.
fn top_k_sets(table: &IpcTable, top_k: usize) -> Vec<BTreeSet<usize>> {
    table
        .rows
        .iter()
        .map(|row| {
            let mut cols: Vec<usize> = (0..row.len()).collect();
            cols.sort_by(|&a, &b| {
                row[b]
                    .total_cmp(&row[a])
                    .then(table.psc_ids[a].cmp(&table.psc_ids[b]))
            });
            cols.into_iter().take(top_k).collect()
        })
        .collect()
}

/// Greedy top-k pruning. Returns catalog ids in the order they were added.
///
/// PSCs are ranked by how many traces have them in their top-k set, then by
/// fewer active prefetchers, then by id; the ranked list is walked once and a
/// PSC is kept when it covers a trace that is not yet covered. A final
/// reverse pass drops picks whose traces are all covered by later ones.
///
/// A cover for a smaller `k` also covers every larger one, so the result is
/// the smallest greedy cover over `1..=top_k` (ties go to the larger `k`).
/// This keeps the selection size non-increasing in `top_k`.
pub fn prune(table: &IpcTable, catalog: &PscCatalog, top_k: usize) -> Result<Vec<usize>, PscError> {
    if top_k == 0 {
        return Err(PscError::ZeroTopK);
    }
    table.check()?;
    let mut best: Option<Vec<usize>> = None;
    for k in 1..=top_k.min(table.psc_ids.len().max(1)) {
        let cover = greedy_cover(table, catalog, &top_k_sets(table, k))?;
        if best.as_ref().is_none_or(|b| cover.len() <= b.len()) {
            best = Some(cover);
        }
    }
    Ok(best.unwrap_or_default())
}

fn greedy_cover(table: &IpcTable, catalog: &PscCatalog, sets: &[BTreeSet<usize>]) -> Result<Vec<usize>, PscError> {
    let mut ranked: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(table.psc_ids.len());
    for (col, &id) in table.psc_ids.iter().enumerate() {
        let score = sets.iter().filter(|s| s.contains(&col)).count();
        let active = catalog.decode(id)?.active_count();
        ranked.push((score, active, id, col));
    }
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut covered = vec![false; sets.len()];
    let mut selection = Vec::new();
    let mut picked = Vec::new();
    for &(score, _, id, col) in &ranked {
        if covered.iter().all(|&c| c) || score == 0 {
            break;
        }
        let mut helps = false;
        for (t, set) in sets.iter().enumerate() {
            if !covered[t] && set.contains(&col) {
                covered[t] = true;
                helps = true;
            }
        }
        if helps {
            selection.push(id);
            picked.push(col);
        }
    }
    // Reverse-delete: a later pick can make an earlier one redundant.
    let mut i = selection.len();
    while i > 0 {
        i -= 1;
        let others: Vec<usize> = (0..selection.len()).filter(|&j| j != i).map(|j| picked[j]).collect();
        if sets.iter().all(|s| others.iter().any(|c| s.contains(c))) {
            selection.remove(i);
            picked.remove(i);
        }
    }
    Ok(selection)
}
