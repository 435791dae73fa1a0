//! Trace-driven toolchain for runtime prefetcher-configuration management.
//!
//! The pieces, bottom-up:
//!
//! - [`trace`] and [`workload`]: instruction traces, their file formats, and a
//!   deterministic phase-based synthetic generator.
//! - [`sim`], [`cache`] and [`prefetch`]: a four-level LRU hierarchy with
//!   gated per-level prefetchers and a proxy cycle model.
//! - [`psc`]: prefetcher system configurations (one prefetcher choice per
//!   level), catalog enumeration and top-k pruning.
//! - [`dataset`] and [`forest`]: event selection, dataset construction and
//!   CART-trained random-forest suites plus classifier baselines.
//! - [`nodemem`]: the quantized, bit-packed node table with its root index
//!   table, comparator traversal and firmware image format.
//! - [`manager`], [`sweep`], [`metrics`] and [`pipeline`]: runtime managers,
//!   oracle sweeps, evaluation metrics and the staged experiment driver.

pub mod cache;
pub mod dataset;
pub mod experiment;
pub mod forest;
pub mod manager;
pub mod metrics;
pub mod nodemem;
pub mod pipeline;
pub mod prefetch;
pub mod psc;
pub mod sim;
pub mod sweep;
pub mod trace;
pub mod util;
pub mod workload;

use serde::{Deserialize, Serialize};

pub const LINE_BYTES: u64 = 64;
pub const LINE_SHIFT: u32 = 6;
pub const PAGE_SHIFT: u32 = 12;
pub const DEFAULT_WINDOW: usize = 100_000;

/// Cache levels, in lookup order for their address space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    L1i,
    L1d,
    L2,
    Llc,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::L1i, Level::L1d, Level::L2, Level::Llc];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::L1i => "l1i",
            Level::L1d => "l1d",
            Level::L2 => "l2",
            Level::Llc => "llc",
        }
    }

    pub fn from_name(s: &str) -> Option<Level> {
        Level::ALL.into_iter().find(|l| l.name().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Instruction,
    Data,
}

impl Space {
    pub fn first_level(self) -> Level {
        match self {
            Space::Instruction => Level::L1i,
            Space::Data => Level::L1d,
        }
    }
}
