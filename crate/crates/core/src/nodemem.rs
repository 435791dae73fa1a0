//! Fixed-point node table for the suite: 45-bit packed entries, a root index
//! table, comparator traversal, best-PSC selection and the `PMEM` image file.
//!
//! Entry layout (bit 44 is the MSB):
//!
//! ```text
//! [44:42] hpc_id  [41:26] threshold  [25:14] lnv  [13:2] rnv  [1] lnv_type  [0] rnv_type
//! ```
//!
//! A type bit of 1 means the field holds a leaf IPC (×1024); 0 means it holds
//! the index of the next entry.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FeatureVector, FEATURE_COUNT};
use crate::forest::{Node, SuiteModel, Tree};

pub const ENTRY_BITS: u32 = 45;
pub const RIT_ENTRY_BITS: u32 = 13;
pub const MAX_ENTRIES: usize = 1 << 12;
pub const MAGIC: &[u8; 4] = b"PMEM";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 10;
pub const BUDGET_BYTES: u64 = 16 * 1024;

const FIELD12: u64 = (1 << 12) - 1;
const ENTRY_MASK: u64 = (1 << ENTRY_BITS) - 1;
const RIT_VALID: u16 = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantSpec {
    /// Leaf IPC scale; a leaf stores `round(ipc × leaf_scale)`.
    pub leaf_scale: f64,
}

impl Default for QuantSpec {
    fn default() -> Self {
        QuantSpec { leaf_scale: 1024.0 }
    }
}

impl QuantSpec {
    /// Round half up, clamp to the 16-bit threshold field.
    pub fn threshold(&self, t: f64) -> u16 {
        if t.is_nan() {
            return 0;
        }
        (t + 0.5).floor().clamp(0.0, u16::MAX as f64) as u16
    }

    pub fn leaf(&self, ipc: f64) -> u16 {
        if ipc.is_nan() {
            return 0;
        }
        (ipc * self.leaf_scale + 0.5).floor().clamp(0.0, FIELD12 as f64) as u16
    }

    pub fn to_ipc(&self, q: u16) -> f64 {
        q as f64 / self.leaf_scale
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NodeMemError {
    #[error("image needs {0} entries, more than the 4096 a 12-bit index can address")]
    TooManyEntries(usize),
    #[error("feature {feature} does not fit the {limit}-feature schema")]
    BadFeature { feature: usize, limit: usize },
    #[error("too many forests or trees for the header: {0}")]
    HeaderOverflow(String),
    #[error("empty deployment set")]
    EmptyDeployment,
    #[error("psc index {psc} out of range ({n_psc} forests)")]
    PscOutOfRange { psc: usize, n_psc: usize },
    #[error("RIT entry {0} is invalid")]
    InvalidRit(usize),
    #[error("entry {from} references entry {to}, image has {len}")]
    IndexOutOfRange { from: usize, to: usize, len: usize },
    #[error("cycle detected while traversing tree from root {0}")]
    Cycle(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("truncated image: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("nonzero reserved bits in {what} {index}")]
    ReservedBits { what: &'static str, index: usize },
    #[error("{0} trailing bytes after image")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeMemEntry {
    pub hpc_id: u8,
    pub threshold: u16,
    pub lnv: u16,
    pub rnv: u16,
    pub lnv_leaf: bool,
    pub rnv_leaf: bool,
}

impl NodeMemEntry {
    pub fn pack(&self) -> u64 {
        ((self.hpc_id as u64 & 0x7) << 42)
            | ((self.threshold as u64) << 26)
            | ((self.lnv as u64 & FIELD12) << 14)
            | ((self.rnv as u64 & FIELD12) << 2)
            | ((self.lnv_leaf as u64) << 1)
            | self.rnv_leaf as u64
    }

    /// Decodes the low 45 bits; `None` if any higher bit is set.
    pub fn unpack(word: u64) -> Option<Self> {
        if word & !ENTRY_MASK != 0 {
            return None;
        }
        Some(NodeMemEntry {
            hpc_id: (word >> 42) as u8 & 0x7,
            threshold: (word >> 26) as u16,
            lnv: ((word >> 14) & FIELD12) as u16,
            rnv: ((word >> 2) & FIELD12) as u16,
            lnv_leaf: word & 0b10 != 0,
            rnv_leaf: word & 1 != 0,
        })
    }

    fn leaf(value: u16) -> Self {
        NodeMemEntry {
            hpc_id: 0,
            threshold: 0,
            lnv: value,
            rnv: value,
            lnv_leaf: true,
            rnv_leaf: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct RitEntry {
    pub root: u16,
    pub valid: bool,
}

impl RitEntry {
    pub fn pack(&self) -> u16 {
        (self.root & FIELD12 as u16) | if self.valid { RIT_VALID } else { 0 }
    }

    pub fn unpack(word: u16) -> Option<Self> {
        if word >> RIT_ENTRY_BITS != 0 {
            return None;
        }
        Some(RitEntry {
            root: word & FIELD12 as u16,
            valid: word & RIT_VALID != 0,
        })
    }
}

/// Node MEM contents plus the RIT; RIT entry `p × trees_per_forest + t` is
/// tree `t` of forest `p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeMemImage {
    pub feature_count: u8,
    pub n_psc: u8,
    pub trees_per_forest: u8,
    pub entries: Vec<NodeMemEntry>,
    pub rit: Vec<RitEntry>,
}

/// Tree with quantized thresholds and leaves, kept in its original node
/// layout; the reference the packed image must agree with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QNode {
    Split { feature: u8, threshold: u16, left: usize, right: usize },
    Leaf(u16),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedSuite {
    /// `forests[p][t]` is the node list of tree `t` of forest `p`, root first.
    pub forests: Vec<Vec<Vec<QNode>>>,
}

impl QuantizedSuite {
    pub fn evaluate_tree(tree: &[QNode], features: &FeatureVector) -> u16 {
        let mut i = 0;
        loop {
            match tree[i] {
                QNode::Split { feature, threshold, left, right } => {
                    i = if features.get(feature as usize) < threshold { left } else { right };
                }
                QNode::Leaf(v) => return v,
            }
        }
    }

    /// Floor of the mean leaf value over the forest's trees.
    pub fn evaluate(&self, psc: usize, features: &FeatureVector) -> u16 {
        let trees = &self.forests[psc];
        let sum: u32 = trees.iter().map(|t| Self::evaluate_tree(t, features) as u32).sum();
        (sum / trees.len() as u32) as u16
    }

    pub fn best(&self, features: &FeatureVector) -> usize {
        let mut best = 0;
        let mut best_v = None;
        for p in 0..self.forests.len() {
            let v = self.evaluate(p, features);
            if best_v.is_none_or(|b| v > b) {
                best = p;
                best_v = Some(v);
            }
        }
        best
    }
}

fn quantize_tree(tree: &Tree<f64>, spec: &QuantSpec) -> Result<Vec<QNode>, NodeMemError> {
    tree.nodes
        .iter()
        .map(|n| match n {
            Node::Split { feature, threshold, left, right } => {
                if *feature >= FEATURE_COUNT {
                    return Err(NodeMemError::BadFeature { feature: *feature, limit: FEATURE_COUNT });
                }
                Ok(QNode::Split {
                    feature: *feature as u8,
                    threshold: spec.threshold(*threshold),
                    left: *left,
                    right: *right,
                })
            }
            Node::Leaf { value } => Ok(QNode::Leaf(spec.leaf(*value))),
        })
        .collect()
}

/// Appends one tree in breadth-first order over its internal nodes; leaf
/// children are stored inline. Returns the root entry index.
fn lay_out_tree(tree: &[QNode], entries: &mut Vec<NodeMemEntry>) -> Result<u16, NodeMemError> {
    let base = entries.len();
    if let QNode::Leaf(v) = tree[0] {
        entries.push(NodeMemEntry::leaf(v));
        return Ok(base as u16);
    }
    // First pass: BFS order of internal nodes.
    let mut order = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        if let QNode::Split { left, right, .. } = tree[i] {
            order.push(i);
            queue.push_back(left);
            queue.push_back(right);
        }
    }
    let end = base + order.len();
    if end > MAX_ENTRIES {
        return Err(NodeMemError::TooManyEntries(end));
    }
    let mut slot = vec![usize::MAX; tree.len()];
    for (k, &i) in order.iter().enumerate() {
        slot[i] = base + k;
    }
    let child = |c: usize| match tree[c] {
        QNode::Leaf(v) => (v, true),
        QNode::Split { .. } => (slot[c] as u16, false),
    };
    for &i in &order {
        let QNode::Split { feature, threshold, left, right } = tree[i] else { unreachable!() };
        let (lnv, lnv_leaf) = child(left);
        let (rnv, rnv_leaf) = child(right);
        entries.push(NodeMemEntry { hpc_id: feature, threshold, lnv, rnv, lnv_leaf, rnv_leaf });
    }
    Ok(base as u16)
}

/// Quantizes and packs a suite, forest-major then tree-major.
pub fn quantize(suite: &SuiteModel, spec: &QuantSpec) -> Result<(NodeMemImage, QuantizedSuite), NodeMemError> {
    let n_psc = suite.forests.len();
    let trees = suite.forests.first().map_or(0, |f| f.trees.len());
    if n_psc > u8::MAX as usize || trees > u8::MAX as usize {
        return Err(NodeMemError::HeaderOverflow(format!("{n_psc} forests × {trees} trees")));
    }
    if suite.forests.iter().any(|f| f.trees.len() != trees) {
        return Err(NodeMemError::HeaderOverflow("forests differ in tree count".into()));
    }
    let forests = suite
        .forests
        .iter()
        .map(|f| f.trees.iter().map(|t| quantize_tree(t, spec)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    let mut entries = Vec::new();
    let mut rit = Vec::with_capacity(n_psc * trees);
    for forest in &forests {
        for tree in forest {
            let root = lay_out_tree(tree, &mut entries)?;
            rit.push(RitEntry { root, valid: true });
        }
    }
    if entries.len() > MAX_ENTRIES {
        return Err(NodeMemError::TooManyEntries(entries.len()));
    }
    let image = NodeMemImage {
        feature_count: FEATURE_COUNT as u8,
        n_psc: n_psc as u8,
        trees_per_forest: trees as u8,
        entries,
        rit,
    };
    Ok((image, QuantizedSuite { forests }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Traversal {
    /// `floor(Σ tree predictions / trees_per_forest)`, ×1024 fixed point.
    pub ipc: u16,
    pub comparisons: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BestPsc {
    pub psc_index: usize,
    pub ipc: u16,
    pub comparisons: u32,
}

impl NodeMemImage {
    pub fn rit_entry(&self, psc: usize, tree: usize) -> RitEntry {
        self.rit[psc * self.trees_per_forest as usize + tree]
    }

    /// Comparator walk over every tree of forest `psc`.
    pub fn traverse(&self, psc: usize, features: &FeatureVector) -> Result<Traversal, NodeMemError> {
        let n_psc = self.n_psc as usize;
        if psc >= n_psc {
            return Err(NodeMemError::PscOutOfRange { psc, n_psc });
        }
        let trees = self.trees_per_forest as usize;
        let len = self.entries.len();
        let mut sum = 0u32;
        let mut comparisons = 0u32;
        for t in 0..trees {
            let slot = psc * trees + t;
            let rit = self.rit[slot];
            if !rit.valid {
                return Err(NodeMemError::InvalidRit(slot));
            }
            let mut idx = rit.root as usize;
            let mut from = slot;
            let mut steps = 0usize;
            loop {
                if idx >= len {
                    return Err(NodeMemError::IndexOutOfRange { from, to: idx, len });
                }
                steps += 1;
                if steps > len {
                    return Err(NodeMemError::Cycle(rit.root as usize));
                }
                let e = self.entries[idx];
                let feature = e.hpc_id as usize;
                if feature >= (self.feature_count as usize).min(FEATURE_COUNT) {
                    return Err(NodeMemError::BadFeature { feature, limit: self.feature_count as usize });
                }
                comparisons += 1;
                let (value, leaf) = if features.get(feature) < e.threshold {
                    (e.lnv, e.lnv_leaf)
                } else {
                    (e.rnv, e.rnv_leaf)
                };
                if leaf {
                    sum += value as u32;
                    break;
                }
                from = idx;
                idx = value as usize;
            }
        }
        Ok(Traversal {
            ipc: if trees == 0 { 0 } else { (sum / trees as u32) as u16 },
            comparisons,
        })
    }

    /// Forests evaluated in PSC order; a later forest replaces the incumbent
    /// only with a strictly higher prediction.
    pub fn select_best_psc(&self, features: &FeatureVector) -> Result<BestPsc, NodeMemError> {
        if self.n_psc == 0 {
            return Err(NodeMemError::EmptyDeployment);
        }
        let mut best: Option<BestPsc> = None;
        let mut comparisons = 0;
        for p in 0..self.n_psc as usize {
            let r = self.traverse(p, features)?;
            comparisons += r.comparisons;
            if best.is_none_or(|b| r.ipc > b.ipc) {
                best = Some(BestPsc { psc_index: p, ipc: r.ipc, comparisons: 0 });
            }
        }
        let mut best = best.expect("n_psc > 0");
        best.comparisons = comparisons;
        Ok(best)
    }

    /// Checks every reference the hardware would follow.
    pub fn validate(&self) -> Result<(), NodeMemError> {
        let len = self.entries.len();
        if len > MAX_ENTRIES {
            return Err(NodeMemError::TooManyEntries(len));
        }
        if self.rit.len() != self.n_psc as usize * self.trees_per_forest as usize {
            return Err(NodeMemError::HeaderOverflow(format!(
                "{} RIT entries for {} × {}",
                self.rit.len(),
                self.n_psc,
                self.trees_per_forest
            )));
        }
        if self.feature_count as usize > 8 {
            return Err(NodeMemError::BadFeature { feature: self.feature_count as usize, limit: 8 });
        }
        for (i, r) in self.rit.iter().enumerate() {
            if r.valid && r.root as usize >= len {
                return Err(NodeMemError::IndexOutOfRange { from: i, to: r.root as usize, len });
            }
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.hpc_id >= self.feature_count {
                return Err(NodeMemError::BadFeature { feature: e.hpc_id as usize, limit: self.feature_count as usize });
            }
            for (v, leaf) in [(e.lnv, e.lnv_leaf), (e.rnv, e.rnv_leaf)] {
                if !leaf && v as usize >= len {
                    return Err(NodeMemError::IndexOutOfRange { from: i, to: v as usize, len });
                }
            }
        }
        Ok(())
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.rit.len() * 2 + self.entries.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend([VERSION, self.feature_count, self.n_psc, self.trees_per_forest]);
        out.extend((self.entries.len() as u16).to_le_bytes());
        for r in &self.rit {
            out.extend(r.pack().to_le_bytes());
        }
        for e in &self.entries {
            out.extend(e.pack().to_le_bytes());
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, NodeMemError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(NodeMemError::BadMagic);
        }
        if bytes.len() < HEADER_BYTES {
            return Err(NodeMemError::Truncated { needed: HEADER_BYTES, got: bytes.len() });
        }
        if bytes[4] != VERSION {
            return Err(NodeMemError::Version(bytes[4]));
        }
        let (feature_count, n_psc, trees_per_forest) = (bytes[5], bytes[6], bytes[7]);
        let n_entries = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let n_rit = n_psc as usize * trees_per_forest as usize;
        let needed = HEADER_BYTES + n_rit * 2 + n_entries * 8;
        if bytes.len() < needed {
            return Err(NodeMemError::Truncated { needed, got: bytes.len() });
        }
        if bytes.len() > needed {
            return Err(NodeMemError::TrailingBytes(bytes.len() - needed));
        }
        let rit_bytes = &bytes[HEADER_BYTES..HEADER_BYTES + n_rit * 2];
        let rit = rit_bytes
            .chunks_exact(2)
            .enumerate()
            .map(|(i, c)| RitEntry::unpack(u16::from_le_bytes([c[0], c[1]])).ok_or(NodeMemError::ReservedBits { what: "RIT entry", index: i }))
            .collect::<Result<Vec<_>, _>>()?;
        let entries = bytes[HEADER_BYTES + n_rit * 2..]
            .chunks_exact(8)
            .enumerate()
            .map(|(i, c)| {
                let word = u64::from_le_bytes(c.try_into().expect("8-byte chunk"));
                NodeMemEntry::unpack(word).ok_or(NodeMemError::ReservedBits { what: "entry", index: i })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let image = NodeMemImage { feature_count, n_psc, trees_per_forest, entries, rit };
        image.validate()?;
        Ok(image)
    }

    /// One line per RIT slot and per entry, fields spelled out.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "PMEM v{VERSION} features={} n_psc={} trees_per_forest={} entries={}",
            self.feature_count,
            self.n_psc,
            self.trees_per_forest,
            self.entries.len()
        );
        for (i, r) in self.rit.iter().enumerate() {
            let t = self.trees_per_forest.max(1) as usize;
            let _ = writeln!(out, "rit[{i}] psc={} tree={} root={} valid={}", i / t, i % t, r.root, r.valid as u8);
        }
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(
                out,
                "entry[{i}] hpc_id={} threshold={} lnv={} lnv_type={} rnv={} rnv_type={} raw={:#013x}",
                e.hpc_id, e.threshold, e.lnv, e.lnv_leaf as u8, e.rnv, e.rnv_leaf as u8, e.pack()
            );
        }
        out
    }

    pub fn size_report(&self) -> SizeReport {
        SizeReport::for_entries(self.entries.len(), self.rit.len(), self.n_psc as usize, self.trees_per_forest as usize)
    }
}

/// Storage accounting for a node table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub entries: usize,
    pub bits_per_entry: u32,
    pub raw_bits: u64,
    pub raw_kib: f64,
    pub rit_entries: usize,
    pub rit_bits: u64,
    pub file_bytes: usize,
    pub budget_bytes: u64,
    pub within_budget: bool,
    /// Worst-case comparator operations per decision at depth 10.
    pub max_comparisons_depth10: usize,
    pub reference: ReferenceSize,
}

/// The published node-memory figure next to what the field widths imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSize {
    pub entries: usize,
    pub raw_kib_at_45_bits: f64,
    pub stated_kib: f64,
    pub implied_bits_per_entry: f64,
    pub discrepancy: String,
}

impl SizeReport {
    pub fn for_entries(entries: usize, rit_entries: usize, n_psc: usize, trees: usize) -> Self {
        let raw_bits = entries as u64 * ENTRY_BITS as u64;
        let ref_entries = 2250;
        let stated_kib = 10.75;
        let implied = stated_kib * 1024.0 * 8.0 / ref_entries as f64;
        SizeReport {
            entries,
            bits_per_entry: ENTRY_BITS,
            raw_bits,
            raw_kib: raw_bits as f64 / 8.0 / 1024.0,
            rit_entries,
            rit_bits: rit_entries as u64 * RIT_ENTRY_BITS as u64,
            file_bytes: HEADER_BYTES + rit_entries * 2 + entries * 8,
            budget_bytes: BUDGET_BYTES,
            within_budget: raw_bits.div_ceil(8) <= BUDGET_BYTES,
            max_comparisons_depth10: n_psc * trees * 10,
            reference: ReferenceSize {
                entries: ref_entries,
                raw_kib_at_45_bits: (ref_entries as u64 * ENTRY_BITS as u64) as f64 / 8.0 / 1024.0,
                stated_kib,
                implied_bits_per_entry: implied,
                discrepancy: format!(
                    "stated {stated_kib} KiB for {ref_entries} entries implies {implied:.2} bits/entry, \
                     below the {ENTRY_BITS} bits the field widths sum to"
                ),
            },
        }
    }
}

/// Entries that fit in `bytes` of raw 45-bit storage.
pub fn entries_for_budget(bytes: u64) -> usize {
    (bytes * 8 / ENTRY_BITS as u64) as usize
}

/// Per-tree node budget such that `n_psc × trees` trees fit in `entries`
/// (a tree with `k` internal nodes has `2k + 1` nodes and uses `max(k, 1)`
/// entries).
pub fn max_nodes_for_entries(entries: usize, n_psc: usize, trees: usize) -> usize {
    let per_tree = entries / (n_psc * trees).max(1);
    2 * per_tree.max(1) + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{Forest, TrainConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn packing_example() {
        let e = NodeMemEntry { hpc_id: 2, threshold: 500, lnv: 3, rnv: 4, lnv_leaf: false, rnv_leaf: false };
        assert_eq!(e.pack(), 8_829_647_503_376);
        assert_eq!(NodeMemEntry::unpack(e.pack()), Some(e));
        assert_eq!(NodeMemEntry::unpack(1 << 45), None);
    }

    #[test]
    fn quantization_rules() {
        let q = QuantSpec::default();
        assert_eq!(q.leaf(1.5), 1536);
        assert_eq!(q.leaf(4.0), 4095);
        assert_eq!(q.leaf(-1.0), 0);
        assert_eq!(q.threshold(2.5), 3);
        assert_eq!(q.threshold(2.49), 2);
        assert_eq!(q.threshold(1e9), 65535);
        assert_eq!(q.threshold(-3.0), 0);
    }

    fn leaf_suite(values: &[f64]) -> SuiteModel {
        SuiteModel {
            feature_names: vec![],
            psc_ids: (0..values.len()).collect(),
            config: TrainConfig::default(),
            forests: values
                .iter()
                .map(|&v| Forest { trees: vec![Tree { nodes: vec![Node::Leaf { value: v }] }] })
                .collect(),
        }
    }

    #[test]
    fn single_leaf_tree_is_one_degenerate_entry() {
        let (img, _) = quantize(&leaf_suite(&[1.5]), &QuantSpec::default()).unwrap();
        assert_eq!(img.entries, vec![NodeMemEntry::leaf(1536)]);
        let t = img.traverse(0, &FeatureVector::default()).unwrap();
        assert_eq!(t, Traversal { ipc: 1536, comparisons: 1 });
    }

    #[test]
    fn best_psc_strict_update() {
        let vals: Vec<f64> = [1126u16, 1331, 922, 1050, 1200].iter().map(|&v| v as f64 / 1024.0).collect();
        let (img, _) = quantize(&leaf_suite(&vals), &QuantSpec::default()).unwrap();
        let b = img.select_best_psc(&FeatureVector::default()).unwrap();
        assert_eq!((b.psc_index, b.ipc, b.comparisons), (1, 1331, 5));
        let (img, _) = quantize(&leaf_suite(&[1.0; 4]), &QuantSpec::default()).unwrap();
        assert_eq!(img.select_best_psc(&FeatureVector::default()).unwrap().psc_index, 0);
        let (img, _) = quantize(&leaf_suite(&[]), &QuantSpec::default()).unwrap();
        assert_eq!(img.select_best_psc(&FeatureVector::default()), Err(NodeMemError::EmptyDeployment));
    }

    #[test]
    fn empty_image_is_header_only() {
        let img = NodeMemImage { feature_count: 6, n_psc: 0, trees_per_forest: 5, entries: vec![], rit: vec![] };
        let bytes = img.serialize();
        assert_eq!(bytes.len(), HEADER_BYTES);
        assert_eq!(NodeMemImage::deserialize(&bytes).unwrap(), img);
        let img = NodeMemImage { n_psc: 1, rit: vec![RitEntry::default(); 5], ..img };
        assert_eq!(NodeMemImage::deserialize(&img.serialize()).unwrap(), img);
        assert_eq!(img.traverse(0, &FeatureVector::default()), Err(NodeMemError::InvalidRit(0)));
    }

    /// Random trees over integer features, with random leaves.
    pub(crate) fn random_tree(rng: &mut ChaCha8Rng, max_internal: usize, max_depth: usize) -> Tree<f64> {
        let mut nodes = vec![Node::Leaf { value: rng.gen_range(0.1..3.9) }];
        let mut frontier = vec![(0usize, 0usize)];
        let mut internal = 0;
        while internal < max_internal && !frontier.is_empty() {
            let k = rng.gen_range(0..frontier.len());
            let (i, d) = frontier.swap_remove(k);
            if d >= max_depth {
                continue;
            }
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { value: rng.gen_range(0.1..3.9) });
            nodes.push(Node::Leaf { value: rng.gen_range(0.1..3.9) });
            nodes[i] = Node::Split {
                feature: rng.gen_range(0..FEATURE_COUNT),
                threshold: rng.gen_range(0..2000) as f64 + 0.5,
                left: l,
                right: r,
            };
            frontier.push((l, d + 1));
            frontier.push((r, d + 1));
            internal += 1;
        }
        Tree { nodes }
    }

    fn random_suite(rng: &mut ChaCha8Rng, n_psc: usize, trees: usize) -> SuiteModel {
        SuiteModel {
            feature_names: vec![],
            psc_ids: (0..n_psc).collect(),
            config: TrainConfig::default(),
            forests: (0..n_psc)
                .map(|_| Forest { trees: (0..trees).map(|_| random_tree(rng, 49, 10)).collect() })
                .collect(),
        }
    }

    fn random_features(rng: &mut ChaCha8Rng) -> FeatureVector {
        FeatureVector(std::array::from_fn(|_| rng.gen_range(0..2100)))
    }

    #[test]
    fn traversal_matches_reference_and_float() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let suite = random_suite(&mut rng, 5, 5);
        let q = QuantSpec::default();
        let (img, reference) = quantize(&suite, &q).unwrap();
        assert!(img.entries.len() <= 5 * 5 * 49);
        for _ in 0..2000 {
            let f = random_features(&mut rng);
            for p in 0..5 {
                let t = img.traverse(p, &f).unwrap();
                assert_eq!(t.ipc, reference.evaluate(p, &f));
                assert!(t.comparisons <= 50);
                let float = suite.forests[p].predict(&f.to_f64());
                assert!((float - q.to_ipc(t.ipc)).abs() <= 1.0 / 2048.0 + 1.0 / 1024.0 + 1e-12);
            }
            assert_eq!(img.select_best_psc(&f).unwrap().psc_index, reference.best(&f));
        }
    }

    #[test]
    fn breadth_first_layout() {
        let tree = Tree {
            nodes: vec![
                Node::Split { feature: 0, threshold: 10.0, left: 1, right: 2 },
                Node::Split { feature: 1, threshold: 5.0, left: 3, right: 4 },
                Node::Leaf { value: 2.0 },
                Node::Leaf { value: 1.0 },
                Node::Split { feature: 2, threshold: 7.5, left: 5, right: 6 },
                Node::Leaf { value: 0.5 },
                Node::Leaf { value: 0.25 },
            ],
        };
        let suite = SuiteModel {
            feature_names: vec![],
            psc_ids: vec![0],
            config: TrainConfig::default(),
            forests: vec![Forest { trees: vec![tree] }],
        };
        let (img, _) = quantize(&suite, &QuantSpec::default()).unwrap();
        assert_eq!(img.entries.len(), 3);
        assert_eq!(img.entries[0], NodeMemEntry { hpc_id: 0, threshold: 10, lnv: 1, rnv: 2048, lnv_leaf: false, rnv_leaf: true });
        assert_eq!(img.entries[1], NodeMemEntry { hpc_id: 1, threshold: 5, lnv: 1024, rnv: 2, lnv_leaf: true, rnv_leaf: false });
        assert_eq!(img.entries[2], NodeMemEntry { hpc_id: 2, threshold: 8, lnv: 512, rnv: 256, lnv_leaf: true, rnv_leaf: true });
        let f = FeatureVector([3, 9, 8, 0, 0, 0]);
        assert_eq!(img.traverse(0, &f).unwrap(), Traversal { ipc: 256, comparisons: 3 });
        assert!(img.dump().contains("entry[2] hpc_id=2 threshold=8"));
    }

    #[test]
    fn corrupt_images_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (img, _) = quantize(&random_suite(&mut rng, 2, 3), &QuantSpec::default()).unwrap();
        let bytes = img.serialize();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(NodeMemImage::deserialize(&bad), Err(NodeMemError::BadMagic));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(NodeMemImage::deserialize(&bad), Err(NodeMemError::Version(2)));
        assert!(matches!(NodeMemImage::deserialize(&bytes[..bytes.len() - 1]), Err(NodeMemError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad.push(0);
        assert_eq!(NodeMemImage::deserialize(&bad), Err(NodeMemError::TrailingBytes(1)));
        // Top bit of the first RIT word, then of the last entry word.
        let mut bad = bytes.clone();
        bad[HEADER_BYTES + 1] |= 0x80;
        assert_eq!(NodeMemImage::deserialize(&bad), Err(NodeMemError::ReservedBits { what: "RIT entry", index: 0 }));
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] |= 0x01;
        assert!(matches!(NodeMemImage::deserialize(&bad), Err(NodeMemError::ReservedBits { what: "entry", .. })));
        assert_eq!(NodeMemImage::deserialize(&bytes).unwrap(), img);
    }

    #[test]
    fn cycles_are_detected() {
        let img = NodeMemImage {
            feature_count: 6,
            n_psc: 1,
            trees_per_forest: 1,
            entries: vec![
                NodeMemEntry { hpc_id: 0, threshold: 0, lnv: 1, rnv: 1, lnv_leaf: false, rnv_leaf: false },
                NodeMemEntry { hpc_id: 0, threshold: 0, lnv: 0, rnv: 0, lnv_leaf: false, rnv_leaf: false },
            ],
            rit: vec![RitEntry { root: 0, valid: true }],
        };
        assert_eq!(img.traverse(0, &FeatureVector::default()), Err(NodeMemError::Cycle(0)));
    }

    #[test]
    fn size_arithmetic() {
        let r = SizeReport::for_entries(2250, 25, 5, 5);
        assert_eq!(r.raw_bits, 101_250);
        assert!((r.raw_kib - 12.36).abs() < 0.005);
        assert!(r.within_budget);
        assert_eq!(r.max_comparisons_depth10, 250);
        assert!((r.reference.implied_bits_per_entry - 39.14).abs() < 0.01);
        assert_eq!(entries_for_budget(1024), 182);
        assert_eq!(entries_for_budget(10 * 1024), 1820);
        assert_eq!(max_nodes_for_entries(2500, 5, 5), 201);
    }

    #[test]
    fn too_many_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let suite = SuiteModel {
            feature_names: vec![],
            psc_ids: (0..9).collect(),
            config: TrainConfig::default(),
            forests: (0..9).map(|_| Forest { trees: (0..5).map(|_| random_tree(&mut rng, 100, 20)).collect() }).collect(),
        };
        assert!(matches!(quantize(&suite, &QuantSpec::default()), Err(NodeMemError::TooManyEntries(_))));
    }

    proptest! {
        #[test]
        fn image_round_trip(seed in any::<u64>(), n_psc in 0usize..6, trees in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (img, _) = quantize(&random_suite(&mut rng, n_psc, trees), &QuantSpec::default()).unwrap();
            prop_assert_eq!(NodeMemImage::deserialize(&img.serialize()).unwrap(), img);
        }

        #[test]
        fn rit_round_trip(root in 0u16..4096, valid in any::<bool>()) {
            let r = RitEntry { root, valid };
            prop_assert_eq!(RitEntry::unpack(r.pack()), Some(r));
        }
    }
}
