//! Per-level prefetchers and the gate that decides which of them may issue.
//!
//! Every prefetcher in a level's registry observes all demand traffic at its
//! level and keeps training whether or not it is switched on; the active PSC
//! only decides whose requests leave the level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::psc::{Psc, PscCatalog, PscError};
use crate::{Level, LINE_BYTES, LINE_SHIFT};

/// Largest positive line delta the stream detector treats as "still
/// ascending".
pub const STREAM_MAX_GAP_LINES: u64 = 4;
const REGION_TABLE_ENTRIES: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefetcherKind {
    None,
    NextLine,
    IpStride { table_entries: usize, degree: u32 },
    Stream { detect_len: u32, degree: u32 },
    Region { region_bytes: u64 },
}

impl PrefetcherKind {
    pub fn ip_stride() -> Self {
        PrefetcherKind::IpStride {
            table_entries: 256,
            degree: 2,
        }
    }

    pub fn stream() -> Self {
        PrefetcherKind::Stream {
            detect_len: 3,
            degree: 4,
        }
    }

    pub fn region() -> Self {
        PrefetcherKind::Region { region_bytes: 4096 }
    }

    pub fn label(&self) -> String {
        match self {
            PrefetcherKind::None => "none".into(),
            PrefetcherKind::NextLine => "nl".into(),
            PrefetcherKind::IpStride { degree, .. } => format!("ips{degree}"),
            PrefetcherKind::Stream { degree, .. } => format!("str{degree}"),
            PrefetcherKind::Region { .. } => "reg".into(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            PrefetcherKind::IpStride { table_entries, degree } => {
                if degree == 0 {
                    return Err("ip_stride degree must be >= 1".into());
                }
                if !table_entries.is_power_of_two() {
                    return Err(format!("ip_stride table_entries {table_entries} is not a power of two"));
                }
            }
            PrefetcherKind::Stream { detect_len, degree } => {
                if degree == 0 || detect_len == 0 {
                    return Err("stream degree and detect_len must be >= 1".into());
                }
            }
            PrefetcherKind::Region { region_bytes } => {
                if region_bytes == 0 || region_bytes % LINE_BYTES != 0 || region_bytes > 64 * LINE_BYTES {
                    return Err(format!(
                        "region_bytes {region_bytes} must be a nonzero multiple of 64 no larger than 4096"
                    ));
                }
            }
            PrefetcherKind::None | PrefetcherKind::NextLine => {}
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PrefetchError {
    #[error("registry for {level}: {reason}")]
    Registry { level: Level, reason: String },
    #[error("unknown prefetcher id {id} at {level} (registry has {len})")]
    UnknownPrefetcher { level: Level, id: usize, len: usize },
    #[error(transparent)]
    Psc(#[from] PscError),
}

/// Ordered prefetcher options per level; index 0 is always `none`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefetcherRegistry {
    pub l1i: Vec<PrefetcherKind>,
    pub l1d: Vec<PrefetcherKind>,
    pub l2: Vec<PrefetcherKind>,
    pub llc: Vec<PrefetcherKind>,
}

impl Default for PrefetcherRegistry {
    /// 5 × 5 × 6 × 2 = 300 PSCs.
    fn default() -> Self {
        use PrefetcherKind::*;
        PrefetcherRegistry {
            l1i: vec![
                None,
                NextLine,
                Stream { detect_len: 3, degree: 2 },
                PrefetcherKind::stream(),
                PrefetcherKind::region(),
            ],
            l1d: vec![
                None,
                NextLine,
                PrefetcherKind::ip_stride(),
                PrefetcherKind::stream(),
                PrefetcherKind::region(),
            ],
            l2: vec![
                None,
                NextLine,
                PrefetcherKind::ip_stride(),
                IpStride { table_entries: 256, degree: 4 },
                PrefetcherKind::stream(),
                PrefetcherKind::region(),
            ],
            llc: vec![None, NextLine],
        }
    }
}

impl PrefetcherRegistry {
    pub fn level(&self, level: Level) -> &[PrefetcherKind] {
        match level {
            Level::L1i => &self.l1i,
            Level::L1d => &self.l1d,
            Level::L2 => &self.l2,
            Level::Llc => &self.llc,
        }
    }

    pub fn sizes(&self) -> [usize; 4] {
        Level::ALL.map(|l| self.level(l).len())
    }

    pub fn validate(&self) -> Result<(), PrefetchError> {
        for level in Level::ALL {
            let kinds = self.level(level);
            let err = |reason: String| PrefetchError::Registry { level, reason };
            if kinds.first() != Some(&PrefetcherKind::None) {
                return Err(err("index 0 must be `none`".into()));
            }
            if kinds.len() > 255 {
                return Err(err("more than 255 options".into()));
            }
            for k in kinds {
                k.validate().map_err(err)?;
            }
        }
        Ok(())
    }

    pub fn catalog(&self) -> Result<PscCatalog, PrefetchError> {
        Ok(PscCatalog::enumerate(self.sizes())?)
    }

    /// Human-readable PSC name such as `none-ips2-none-nl`.
    pub fn psc_label(&self, psc: &Psc) -> String {
        Level::ALL
            .iter()
            .map(|&l| {
                self.level(l)
                    .get(psc.slot(l))
                    .map(PrefetcherKind::label)
                    .unwrap_or_else(|| "?".into())
            })
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn check_psc(&self, psc: &Psc) -> Result<(), PrefetchError> {
        for level in Level::ALL {
            let len = self.level(level).len();
            if psc.slot(level) >= len {
                return Err(PrefetchError::UnknownPrefetcher {
                    level,
                    id: psc.slot(level),
                    len,
                });
            }
        }
        Ok(())
    }
}

/// Whether `prefetcher_id` at `level` may issue requests under `psc`.
pub fn gate(
    registry: &PrefetcherRegistry,
    psc: &Psc,
    level: Level,
    prefetcher_id: usize,
) -> Result<bool, PrefetchError> {
    let len = registry.level(level).len();
    if prefetcher_id >= len {
        return Err(PrefetchError::UnknownPrefetcher {
            level,
            id: prefetcher_id,
            len,
        });
    }
    Ok(psc.slot(level) == prefetcher_id)
}

/// A demand access as seen by the prefetchers of one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub ip: u64,
    pub addr: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StrideEntry {
    ip: u64,
    last_addr: u64,
    stride: i64,
    confirmations: u8,
    valid: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RegionEntry {
    region: u64,
    bitmap: u64,
    valid: bool,
}

/// Prefetcher state. `observe` always trains; emission is filtered by the
/// caller through [`gate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prefetcher {
    None,
    NextLine,
    IpStride {
        table: Vec<StrideEntry>,
        degree: u32,
    },
    Stream {
        last_line: Option<u64>,
        run: u32,
        detect_len: u32,
        degree: u32,
    },
    Region {
        table: Vec<RegionEntry>,
        last_region: Option<u64>,
        region_bytes: u64,
    },
}

fn push_line(out: &mut Vec<u64>, line: u64) {
    if line <= (u64::MAX >> LINE_SHIFT) && !out.contains(&(line << LINE_SHIFT)) {
        out.push(line << LINE_SHIFT);
    }
}

impl Prefetcher {
    pub fn new(kind: &PrefetcherKind) -> Self {
        match *kind {
            PrefetcherKind::None => Prefetcher::None,
            PrefetcherKind::NextLine => Prefetcher::NextLine,
            PrefetcherKind::IpStride { table_entries, degree } => Prefetcher::IpStride {
                table: vec![StrideEntry::default(); table_entries],
                degree,
            },
            PrefetcherKind::Stream { detect_len, degree } => Prefetcher::Stream {
                last_line: None,
                run: 0,
                detect_len,
                degree,
            },
            PrefetcherKind::Region { region_bytes } => Prefetcher::Region {
                table: vec![RegionEntry::default(); REGION_TABLE_ENTRIES],
                last_region: None,
                region_bytes,
            },
        }
    }

    /// Trains on one demand access and appends line-aligned requests to `out`.
    pub fn observe(&mut self, obs: Observation, out: &mut Vec<u64>) {
        let line = obs.addr >> LINE_SHIFT;
        match self {
            Prefetcher::None => {}
            Prefetcher::NextLine => {
                if let Some(next) = line.checked_add(1) {
                    push_line(out, next);
                }
            }
            Prefetcher::IpStride { table, degree } => {
                let mask = table.len() - 1;
                let idx = ((obs.ip >> 2) ^ (obs.ip >> 12)) as usize & mask;
                let e = &mut table[idx];
                if !e.valid || e.ip != obs.ip {
                    *e = StrideEntry {
                        ip: obs.ip,
                        last_addr: obs.addr,
                        stride: 0,
                        confirmations: 0,
                        valid: true,
                    };
                    return;
                }
                let delta = obs.addr.wrapping_sub(e.last_addr) as i64;
                if delta == 0 {
                    return;
                }
                if delta == e.stride {
                    e.confirmations = (e.confirmations + 1).min(3);
                } else {
                    e.stride = delta;
                    e.confirmations = 1;
                }
                e.last_addr = obs.addr;
                if e.confirmations >= 2 {
                    let mut target = obs.addr;
                    for _ in 0..*degree {
                        match target.checked_add_signed(e.stride) {
                            Some(t) => target = t,
                            None => break,
                        }
                        if t_line(target) != line {
                            push_line(out, t_line(target));
                        }
                    }
                }
            }
            Prefetcher::Stream {
                last_line,
                run,
                detect_len,
                degree,
            } => {
                match *last_line {
                    Some(prev) if prev == line => return,
                    Some(prev) if line > prev && line - prev <= STREAM_MAX_GAP_LINES => *run += 1,
                    _ => *run = 1,
                }
                *last_line = Some(line);
                if *run >= *detect_len {
                    for k in 1..=*degree as u64 {
                        match line.checked_add(k) {
                            Some(l) => push_line(out, l),
                            None => break,
                        }
                    }
                }
            }
            Prefetcher::Region {
                table,
                last_region,
                region_bytes,
            } => {
                let region = obs.addr / *region_bytes;
                let base_line = region * (*region_bytes >> LINE_SHIFT);
                let bit = line - base_line;
                let idx = (region as usize) & (table.len() - 1);
                let e = &mut table[idx];
                if !e.valid || e.region != region {
                    *e = RegionEntry {
                        region,
                        bitmap: 0,
                        valid: true,
                    };
                }
                if *last_region != Some(region) {
                    let mut bits = e.bitmap & !(1u64 << bit);
                    while bits != 0 {
                        let b = bits.trailing_zeros() as u64;
                        push_line(out, base_line + b);
                        bits &= bits - 1;
                    }
                }
                e.bitmap |= 1u64 << bit;
                *last_region = Some(region);
            }
        }
    }

    /// Convenience wrapper returning the requests of one observation.
    pub fn observe_vec(&mut self, ip: u64, addr: u64) -> Vec<u64> {
        let mut out = Vec::new();
        self.observe(Observation { ip, addr }, &mut out);
        out
    }
}

fn t_line(addr: u64) -> u64 {
    addr >> LINE_SHIFT
}

/// All prefetchers of all levels, indexed like the registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefetcherBank {
    levels: [Vec<Prefetcher>; 4],
}

impl PrefetcherBank {
    pub fn new(registry: &PrefetcherRegistry) -> Self {
        PrefetcherBank {
            levels: Level::ALL.map(|l| registry.level(l).iter().map(Prefetcher::new).collect()),
        }
    }

    pub fn sizes(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|i| self.levels[i].len())
    }

    /// Every prefetcher at `level` trains on `obs`; only the one selected by
    /// `active` (registry index) contributes to `out`.
    pub fn observe(&mut self, level: Level, active: usize, obs: Observation, scratch: &mut Vec<u64>, out: &mut Vec<u64>) {
        for (id, pf) in self.levels[level.index()].iter_mut().enumerate() {
            if id == active {
                pf.observe(obs, out);
            } else {
                scratch.clear();
                pf.observe(obs, scratch);
            }
        }
    }

    pub fn prefetcher(&self, level: Level, id: usize) -> Option<&Prefetcher> {
        self.levels[level.index()].get(id)
    }
}
