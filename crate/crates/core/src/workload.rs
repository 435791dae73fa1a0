//! Deterministic synthetic workloads built from phases with controlled
//! memory behaviour.
//!
//! Every phase draws its instruction kinds with exact counts (then shuffles
//! them with the phase's seeded generator), so branch fractions and the
//! load/store split hold to rounding. Memory instructions are issued from a
//! small ring of load sites, so each site sees every `LOAD_SITES`-th address
//! of the phase's access stream; a constant global stride therefore appears as
//! a constant per-site stride.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Kind, Trace, TraceRecord};
use crate::util::derive_seed;
use crate::LINE_BYTES;

const CODE_BASE: u64 = 0x40_0000;
const CODE_STRIDE: u64 = 0x10_0000;
const DATA_BASE: u64 = 0x1_0000_0000;
const DATA_STRIDE: u64 = 0x1_0000_0000;
const LOAD_SITES: u64 = 16;
const LOOP_BODY_BYTES: u64 = 1024;
const HOT_ARRAY_BYTES: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Constant-stride sweep.
    Strided { stride: u64 },
    /// Random single-cycle permutation walk over `working_set / node_bytes`
    /// nodes; every line of a node is touched in order before moving on.
    PointerChase {
        working_set: u64,
        #[serde(default = "default_node_bytes")]
        node_bytes: u64,
    },
    /// Forward sweep over `region` (wrapping), advancing a uniform
    /// 1..=`max_step_lines` lines per access.
    Streaming {
        region: u64,
        #[serde(default = "one")]
        max_step_lines: u64,
    },
    /// Straight-line code over `footprint` bytes with an L1-resident data array.
    LoopCode { footprint: u64 },
    /// Each memory access picks a component pattern by weight.
    Mixed { components: Vec<WeightedPattern> },
}

fn default_node_bytes() -> u64 {
    LINE_BYTES
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPattern {
    pub weight: f64,
    pub pattern: Pattern,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchMix {
    #[serde(default)]
    pub conditional: f64,
    #[serde(default, rename = "return")]
    pub ret: f64,
    #[serde(default)]
    pub other: f64,
}

impl BranchMix {
    pub fn total(&self) -> f64 {
        self.conditional + self.ret + self.other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub length: u64,
    pub pattern: Pattern,
    #[serde(default)]
    pub branch_mix: BranchMix,
    /// Fraction of memory operations that are loads.
    pub load_store_ratio: f64,
    /// Fraction of non-branch instructions that access memory.
    #[serde(default = "full")]
    pub mem_fraction: f64,
}

fn full() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub phases: Vec<PhaseSpec>,
    pub seed: u64,
    pub total_instructions: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("phase {0} has zero length")]
    ZeroLength(usize),
    #[error("phase {phase}: {what} of {bytes} bytes is smaller than one cache line")]
    TooSmall {
        phase: usize,
        what: &'static str,
        bytes: u64,
    },
    #[error("phase {phase}: {what} = {value} is outside [0, 1]")]
    Fraction {
        phase: usize,
        what: &'static str,
        value: f64,
    },
    #[error("phase {0}: stride must be nonzero")]
    ZeroStride(usize),
    #[error("phase {0}: mixed pattern needs non-negative weights with a positive sum and no nested code/mixed components")]
    BadMix(usize),
    #[error("phase lengths sum to {sum}, expected {total}")]
    LengthMismatch { sum: u64, total: u64 },
}

impl WorkloadSpec {
    /// A single-phase spec covering the whole trace.
    pub fn single(phase: PhaseSpec, seed: u64) -> Self {
        let total_instructions = phase.length;
        WorkloadSpec {
            phases: vec![phase],
            seed,
            total_instructions,
        }
    }

    /// Builds a spec whose total equals the sum of the phase lengths.
    pub fn from_phases(phases: Vec<PhaseSpec>, seed: u64) -> Self {
        let total_instructions = phases.iter().map(|p| p.length).sum();
        WorkloadSpec {
            phases,
            seed,
            total_instructions,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        for (i, p) in self.phases.iter().enumerate() {
            if p.length == 0 {
                return Err(WorkloadError::ZeroLength(i));
            }
            let fractions = [
                ("branch_mix.conditional", p.branch_mix.conditional),
                ("branch_mix.return", p.branch_mix.ret),
                ("branch_mix.other", p.branch_mix.other),
                ("branch_mix total", p.branch_mix.total()),
                ("load_store_ratio", p.load_store_ratio),
                ("mem_fraction", p.mem_fraction),
            ];
            for (what, value) in fractions {
                if !(0.0..=1.0 + 1e-12).contains(&value) {
                    return Err(WorkloadError::Fraction { phase: i, what, value });
                }
            }
            validate_pattern(i, &p.pattern, true)?;
        }
        let sum: u64 = self.phases.iter().map(|p| p.length).sum();
        if sum != self.total_instructions {
            return Err(WorkloadError::LengthMismatch {
                sum,
                total: self.total_instructions,
            });
        }
        Ok(())
    }
}

fn validate_pattern(phase: usize, pattern: &Pattern, top: bool) -> Result<(), WorkloadError> {
    let too_small = |what, bytes| WorkloadError::TooSmall { phase, what, bytes };
    match pattern {
        Pattern::Strided { stride } => {
            if *stride == 0 {
                return Err(WorkloadError::ZeroStride(phase));
            }
        }
        Pattern::PointerChase {
            working_set,
            node_bytes,
        } => {
            if *working_set < LINE_BYTES {
                return Err(too_small("working set", *working_set));
            }
            if *node_bytes < LINE_BYTES || node_bytes > working_set {
                return Err(too_small("node", *node_bytes));
            }
        }
        Pattern::Streaming {
            region,
            max_step_lines,
        } => {
            if *region < LINE_BYTES {
                return Err(too_small("streaming region", *region));
            }
            if *max_step_lines == 0 {
                return Err(WorkloadError::ZeroStride(phase));
            }
        }
        Pattern::LoopCode { footprint } => {
            if *footprint < LINE_BYTES {
                return Err(too_small("code footprint", *footprint));
            }
            if !top {
                return Err(WorkloadError::BadMix(phase));
            }
        }
        Pattern::Mixed { components } => {
            if !top {
                return Err(WorkloadError::BadMix(phase));
            }
            let total: f64 = components.iter().map(|c| c.weight).sum();
            if components.iter().any(|c| !(c.weight >= 0.0)) || !(total > 0.0) {
                return Err(WorkloadError::BadMix(phase));
            }
            for c in components {
                validate_pattern(phase, &c.pattern, false)?;
            }
        }
    }
    Ok(())
}

/// Per-pattern address cursor.
enum Cursor {
    Strided {
        next: u64,
        stride: u64,
    },
    Chase {
        base: u64,
        order: Vec<u32>,
        node: usize,
        line: u64,
        lines_per_node: u64,
        node_bytes: u64,
    },
    Stream {
        base: u64,
        offset: u64,
        region: u64,
        max_step: u64,
    },
    Hot {
        base: u64,
        offset: u64,
    },
    Mixed {
        cumulative: Vec<f64>,
        parts: Vec<Cursor>,
    },
}

impl Cursor {
    fn new(pattern: &Pattern, base: u64, rng: &mut ChaCha8Rng) -> Cursor {
        match pattern {
            Pattern::Strided { stride } => Cursor::Strided {
                next: base,
                stride: *stride,
            },
            Pattern::PointerChase {
                working_set,
                node_bytes,
            } => {
                let nodes = (working_set / node_bytes).max(1) as usize;
                // Sattolo's shuffle: one cycle through every node.
                let mut order: Vec<u32> = (0..nodes as u32).collect();
                for i in (1..nodes).rev() {
                    let j = rng.gen_range(0..i);
                    order.swap(i, j);
                }
                Cursor::Chase {
                    base,
                    order,
                    node: 0,
                    line: 0,
                    lines_per_node: node_bytes.div_ceil(LINE_BYTES),
                    node_bytes: *node_bytes,
                }
            }
            Pattern::Streaming {
                region,
                max_step_lines,
            } => Cursor::Stream {
                base,
                offset: 0,
                region: region / LINE_BYTES * LINE_BYTES,
                max_step: *max_step_lines,
            },
            Pattern::LoopCode { .. } => Cursor::Hot { base, offset: 0 },
            Pattern::Mixed { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut acc = 0.0;
                let cumulative = components
                    .iter()
                    .map(|c| {
                        acc += c.weight / total;
                        acc
                    })
                    .collect();
                let parts = components
                    .iter()
                    .enumerate()
                    .map(|(i, c)| Cursor::new(&c.pattern, base + (i as u64) * (DATA_STRIDE / 8), rng))
                    .collect();
                Cursor::Mixed { cumulative, parts }
            }
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            Cursor::Strided { next, stride } => {
                let addr = *next;
                *next = next.wrapping_add(*stride);
                addr
            }
            Cursor::Chase {
                base,
                order,
                node,
                line,
                lines_per_node,
                node_bytes,
            } => {
                let addr = *base + order[*node] as u64 * *node_bytes + *line * LINE_BYTES;
                *line += 1;
                if *line == *lines_per_node {
                    *line = 0;
                    *node = order[*node] as usize;
                }
                addr
            }
            Cursor::Stream {
                base,
                offset,
                region,
                max_step,
            } => {
                let addr = *base + *offset;
                let step = if *max_step == 1 {
                    1
                } else {
                    rng.gen_range(1..=*max_step)
                };
                *offset = (*offset + step * LINE_BYTES) % *region;
                addr
            }
            Cursor::Hot { base, offset } => {
                let addr = *base + *offset;
                *offset = (*offset + 8) % HOT_ARRAY_BYTES;
                addr
            }
            Cursor::Mixed { cumulative, parts } => {
                let u: f64 = rng.gen();
                let idx = cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(parts.len() - 1);
                parts[idx].next(rng)
            }
        }
    }
}

fn round_count(fraction: f64, n: u64) -> u64 {
    ((fraction * n as f64).round() as u64).min(n)
}

fn phase_kinds(phase: &PhaseSpec, rng: &mut ChaCha8Rng) -> Vec<Kind> {
    let n = phase.length;
    let mix = &phase.branch_mix;
    let cond = round_count(mix.conditional, n);
    let ret = round_count(mix.ret, n - cond);
    let other_br = round_count(mix.other, n - cond - ret);
    let non_branch = n - cond - ret - other_br;
    let mem = round_count(phase.mem_fraction, non_branch);
    let loads = round_count(phase.load_store_ratio, mem);
    let stores = mem - loads;
    let plain = non_branch - mem;

    let mut kinds = Vec::with_capacity(n as usize);
    for (kind, count) in [
        (Kind::BranchConditional, cond),
        (Kind::BranchReturn, ret),
        (Kind::BranchOther, other_br),
        (Kind::Load, loads),
        (Kind::Store, stores),
        (Kind::Other, plain),
    ] {
        kinds.extend(std::iter::repeat_n(kind, count as usize));
    }
    kinds.shuffle(rng);
    kinds
}

pub fn generate_synthetic(spec: &WorkloadSpec) -> Result<Trace, WorkloadError> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.total_instructions as usize);
    for (index, phase) in spec.phases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
        let code_base = CODE_BASE + index as u64 * CODE_STRIDE;
        let data_base = DATA_BASE + index as u64 * DATA_STRIDE;
        let kinds = phase_kinds(phase, &mut rng);
        let mut cursor = Cursor::new(&phase.pattern, data_base, &mut rng);
        let code_bytes = match phase.pattern {
            Pattern::LoopCode { footprint } => footprint / 4 * 4,
            _ => LOOP_BODY_BYTES,
        };
        let sequential_code = matches!(phase.pattern, Pattern::LoopCode { .. });
        let site_base = code_base + code_bytes;
        let mut mem_index = 0u64;
        for (i, &kind) in kinds.iter().enumerate() {
            let pc = code_base + (i as u64 * 4) % code_bytes;
            let record = if kind.is_memory() {
                let ip = if sequential_code {
                    pc
                } else {
                    site_base + (mem_index % LOAD_SITES) * 4
                };
                mem_index += 1;
                TraceRecord::new(ip, kind, cursor.next(&mut rng))
            } else {
                TraceRecord::op(pc, kind)
            };
            records.push(record);
        }
    }
    Ok(Trace::new(records))
}
