//! CART regression trees grown best-first under a node budget, random
//! forests, the per-PSC suite, and the classifier/regressor baselines.
//!
//! Trees are generic over the leaf payload: regression leaves hold an `f64`,
//! the single multi-class classifier holds a per-PSC frequency vector
//! (SSE over one-hot/multi-hot targets is proportional to Gini impurity).

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, FeatureVector, FEATURE_NAMES};
use crate::util::derive_seed;

/// Relative slack (against the node's SSE) under which gains are treated as
/// zero or as tied.
const GAIN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub trees_per_forest: usize,
    pub max_nodes_per_tree: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            trees_per_forest: 5,
            max_nodes_per_tree: 100,
            max_depth: 10,
            min_samples_leaf: 2,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.trees_per_forest == 0 || self.max_nodes_per_tree == 0 || self.min_samples_leaf == 0 {
            return Err(ForestError::Config("budgets must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error("no training samples")]
    EmptySamples,
    #[error("empty PSC list")]
    EmptyPscList,
    #[error("sample {index} has {got} values, expected {expected}")]
    Shape { index: usize, got: usize, expected: usize },
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("model json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node<L> {
    /// Go left iff `x[feature] < threshold`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: L },
}

/// Binary tree stored as a node vector with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Tree<L> {
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] < *threshold { *left } else { *right };
                }
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> &L {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index stops at a leaf"),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }

    /// Longest root-to-leaf path in edges.
    pub fn depth(&self) -> usize {
        fn walk<L>(t: &Tree<L>, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }

    pub fn map_leaves<M>(&self, f: impl Fn(&L) -> M) -> Tree<M> {
        Tree {
            nodes: self
                .nodes
                .iter()
                .map(|n| match n {
                    Node::Split { feature, threshold, left, right } => Node::Split {
                        feature: *feature,
                        threshold: *threshold,
                        left: *left,
                        right: *right,
                    },
                    Node::Leaf { value } => Node::Leaf { value: f(value) },
                })
                .collect(),
        }
    }
}

/// Training data: rows of features and multi-output targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    columns: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl Matrix {
    pub fn new(rows: &[Vec<f64>], targets: Vec<Vec<f64>>) -> Result<Self, ForestError> {
        if rows.is_empty() {
            return Err(ForestError::EmptySamples);
        }
        let width = rows[0].len();
        let outputs = targets.first().map_or(0, Vec::len);
        if targets.len() != rows.len() {
            return Err(ForestError::Shape { index: targets.len(), got: targets.len(), expected: rows.len() });
        }
        for (i, (r, t)) in rows.iter().zip(&targets).enumerate() {
            if r.len() != width {
                return Err(ForestError::Shape { index: i, got: r.len(), expected: width });
            }
            if t.len() != outputs || outputs == 0 {
                return Err(ForestError::Shape { index: i, got: t.len(), expected: outputs.max(1) });
            }
        }
        let columns = (0..width).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        Ok(Matrix { columns, targets })
    }

    pub fn regression(rows: &[Vec<f64>], labels: &[f64]) -> Result<Self, ForestError> {
        Matrix::new(rows, labels.iter().map(|&y| vec![y]).collect())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    fn outputs(&self) -> usize {
        self.targets[0].len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Mean shifted by the first row, so a pure node's mean is exactly its value.
fn mean_target(m: &Matrix, idx: &[usize]) -> Vec<f64> {
    let origin = &m.targets[idx[0]];
    let mut delta = vec![0.0; m.outputs()];
    for &i in idx {
        for ((acc, y), o) in delta.iter_mut().zip(&m.targets[i]).zip(origin) {
            *acc += y - o;
        }
    }
    origin.iter().zip(delta).map(|(o, d)| o + d / idx.len() as f64).collect()
}

/// Best SSE-reducing split of the rows `idx`, scanning features in order and
/// thresholds ascending; a candidate replaces the incumbent only when its gain
/// is larger by more than the tie slack.
pub fn best_split(m: &Matrix, idx: &[usize], min_samples_leaf: usize) -> Option<SplitChoice> {
    let n = idx.len();
    if n < 2 * min_samples_leaf {
        return None;
    }
    let d = m.outputs();
    let mean = mean_target(m, idx);
    // Centered targets keep the prefix-sum SSE free of cancellation.
    let centered: Vec<f64> = idx
        .iter()
        .flat_map(|&i| m.targets[i].iter().zip(&mean).map(|(y, mu)| y - mu))
        .collect();
    let total_sq: f64 = centered.iter().map(|v| v * v).sum();
    let mut total = vec![0.0; d];
    for row in centered.chunks(d) {
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }
    let eps = GAIN_EPS * total_sq;
    if total_sq <= 1e-12 * n as f64 {
        return None;
    }
    let mut best: Option<SplitChoice> = None;
    let mut order: Vec<usize> = (0..n).collect();
    let mut left = vec![0.0; d];
    for (f, col) in m.columns.iter().enumerate() {
        order.sort_by(|&a, &b| col[idx[a]].total_cmp(&col[idx[b]]).then(a.cmp(&b)));
        left.iter_mut().for_each(|v| *v = 0.0);
        let mut left_sq = 0.0;
        for k in 0..n - 1 {
            let row = &centered[order[k] * d..(order[k] + 1) * d];
            for (l, v) in left.iter_mut().zip(row) {
                *l += v;
            }
            left_sq += row.iter().map(|v| v * v).sum::<f64>();
            let (a, b) = (col[idx[order[k]]], col[idx[order[k + 1]]]);
            let nl = k + 1;
            let nr = n - nl;
            if a == b || nl < min_samples_leaf || nr < min_samples_leaf {
                continue;
            }
            let l_norm: f64 = left.iter().map(|v| v * v).sum();
            let r_norm: f64 = left.iter().zip(&total).map(|(l, t)| (t - l) * (t - l)).sum();
            let sse_l = left_sq - l_norm / nl as f64;
            let sse_r = (total_sq - left_sq) - r_norm / nr as f64;
            let gain = total_sq - sse_l - sse_r;
            let better = match &best {
                None => gain > eps,
                Some(b) => gain > b.gain + eps,
            };
            if better {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: a + (b - a) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

struct Frontier {
    node: usize,
    depth: usize,
    idx: Vec<usize>,
    split: Option<SplitChoice>,
}

/// Grows one tree over the rows `idx` (duplicates allowed, as drawn by a
/// bootstrap). Leaves hold the mean target vector of their rows.
pub fn grow(m: &Matrix, idx: Vec<usize>, config: &TrainConfig) -> Result<Tree<Vec<f64>>, ForestError> {
    if idx.is_empty() {
        return Err(ForestError::EmptySamples);
    }
    config.validate()?;
    let candidate = |node: usize, depth: usize, idx: Vec<usize>| {
        let split = if depth < config.max_depth {
            best_split(m, &idx, config.min_samples_leaf)
        } else {
            None
        };
        Frontier { node, depth, idx, split }
    };
    let mut nodes = vec![Node::Leaf { value: mean_target(m, &idx) }];
    let mut frontier = vec![candidate(0, 0, idx)];
    while nodes.len() + 2 <= config.max_nodes_per_tree {
        let pick = frontier
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.split.as_ref().map(|s| (i, s.gain, c.node)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)));
        let Some((pos, _, _)) = pick else { break };
        let leaf = frontier.swap_remove(pos);
        let split = leaf.split.expect("picked leaves have a split");
        let col = &m.columns[split.feature];
        let (li, ri): (Vec<usize>, Vec<usize>) = leaf.idx.iter().partition(|&&i| col[i] < split.threshold);
        let (l, r) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { value: mean_target(m, &li) });
        nodes.push(Node::Leaf { value: mean_target(m, &ri) });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        frontier.push(candidate(l, leaf.depth + 1, li));
        frontier.push(candidate(r, leaf.depth + 1, ri));
    }
    Ok(Tree { nodes })
}

fn scalar(tree: Tree<Vec<f64>>) -> Tree<f64> {
    tree.map_leaves(|v| v[0])
}

/// Regression tree on every row of `m` (no bootstrap).
pub fn fit_tree(m: &Matrix, config: &TrainConfig) -> Result<Tree<f64>, ForestError> {
    grow(m, (0..m.len()).collect(), config).map(scalar)
}

pub fn features_to_rows(features: &[FeatureVector]) -> Vec<Vec<f64>> {
    features.iter().map(|f| f.to_f64().to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree<f64>>,
}

impl Forest {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| *t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn node_count(&self) -> usize {
        self.trees.iter().map(Tree::node_count).sum()
    }
}

fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Forest of `trees_per_forest` trees; tree `t` draws its bootstrap sample
/// from a generator seeded by `(seed, t)`.
pub fn fit_forest(m: &Matrix, config: &TrainConfig, seed: u64) -> Result<Forest, ForestError> {
    config.validate()?;
    if m.is_empty() {
        return Err(ForestError::EmptySamples);
    }
    let trees = (0..config.trees_per_forest)
        .map(|t| {
            let idx = if config.bootstrap {
                bootstrap_indices(m.len(), derive_seed(seed, t as u64))
            } else {
                (0..m.len()).collect()
            };
            grow(m, idx, config).map(scalar)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Forest { trees })
}

/// One regression forest per deployment PSC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteModel {
    pub feature_names: Vec<String>,
    /// Deployment PSCs as catalog ids, in forest order.
    pub psc_ids: Vec<usize>,
    pub config: TrainConfig,
    pub forests: Vec<Forest>,
}

/// Index of the first maximum (strictly greater replaces).
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

impl SuiteModel {
    pub fn predict_all(&self, features: &FeatureVector) -> Vec<f64> {
        let x = features.to_f64();
        self.forests.iter().map(|f| f.predict(&x)).collect()
    }

    /// Deployment index with the highest predicted IPC.
    pub fn best(&self, features: &FeatureVector) -> usize {
        argmax(&self.predict_all(features)).unwrap_or(0)
    }

    pub fn node_count(&self) -> usize {
        self.forests.iter().map(Forest::node_count).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suite model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ForestError> {
        let s: SuiteModel = serde_json::from_str(text).map_err(|e| ForestError::Json(e.to_string()))?;
        if s.forests.len() != s.psc_ids.len() || s.forests.iter().any(|f| f.trees.is_empty()) {
            return Err(ForestError::Json("forest count must match psc_ids and forests must be non-empty".into()));
        }
        for f in &s.forests {
            for t in &f.trees {
                check_tree(t, s.feature_names.len())?;
            }
        }
        Ok(s)
    }
}

/// Structural check for deserialized trees: child links point forward and
/// features exist, so traversal terminates.
fn check_tree<L>(t: &Tree<L>, features: usize) -> Result<(), ForestError> {
    if t.nodes.is_empty() {
        return Err(ForestError::Json("empty tree".into()));
    }
    for (i, n) in t.nodes.iter().enumerate() {
        if let Node::Split { feature, left, right, threshold } = n {
            if *feature >= features || *left <= i || *right <= i || *left >= t.nodes.len() || *right >= t.nodes.len() || threshold.is_nan() {
                return Err(ForestError::Json(format!("node {i} is malformed")));
            }
        }
    }
    Ok(())
}

fn dataset_rows(train: &Dataset) -> Result<Vec<Vec<f64>>, ForestError> {
    if train.psc_ids.is_empty() {
        return Err(ForestError::EmptyPscList);
    }
    if train.samples.is_empty() {
        return Err(ForestError::EmptySamples);
    }
    for (i, s) in train.samples.iter().enumerate() {
        if s.labels.len() != train.psc_ids.len() {
            return Err(ForestError::Shape { index: i, got: s.labels.len(), expected: train.psc_ids.len() });
        }
    }
    Ok(train.samples.iter().map(|s| s.features.to_f64().to_vec()).collect())
}

pub fn fit_suite(train: &Dataset, config: &TrainConfig) -> Result<SuiteModel, ForestError> {
    let rows = dataset_rows(train)?;
    let forests = (0..train.psc_ids.len())
        .map(|p| {
            let labels: Vec<f64> = train.samples.iter().map(|s| s.labels[p]).collect();
            let m = Matrix::regression(&rows, &labels)?;
            fit_forest(&m, config, derive_seed(config.seed, p as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SuiteModel {
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        psc_ids: train.psc_ids.clone(),
        config: *config,
        forests,
    })
}

/// PSC `p` is labeled 1 iff `ipc_p ≥ (1 − threshold)·max_q ipc_q`.
pub fn threshold_labels(ipc: &[f64], threshold: f64) -> Vec<bool> {
    let max = ipc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ipc.iter().map(|&v| v >= (1.0 - threshold) * max).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierVariants {
    pub psc_ids: Vec<usize>,
    pub label_threshold: f64,
    /// One tree whose leaves hold, per PSC, the fraction of its windows
    /// labeled 1; its class is the first maximum.
    pub single_classifier: Tree<Vec<f64>>,
    /// One forest over `features ⊕ one_hot(psc)`.
    pub single_regressor: Forest,
    /// Per-PSC trees whose leaves hold the probability of label 1.
    pub suite_classifiers: Vec<Tree<f64>>,
}

pub fn one_hot_row(features: &[f64], psc: usize, n_psc: usize) -> Vec<f64> {
    let mut row = features.to_vec();
    row.extend((0..n_psc).map(|q| if q == psc { 1.0 } else { 0.0 }));
    row
}

impl ClassifierVariants {
    pub fn classify(&self, features: &FeatureVector) -> usize {
        argmax(self.single_classifier.predict(&features.to_f64())).unwrap_or(0)
    }

    pub fn regress(&self, features: &FeatureVector) -> usize {
        let x = features.to_f64();
        let n = self.psc_ids.len();
        let preds: Vec<f64> = (0..n).map(|p| self.single_regressor.predict(&one_hot_row(&x, p, n))).collect();
        argmax(&preds).unwrap_or(0)
    }

    pub fn suite_probabilities(&self, features: &FeatureVector) -> Vec<f64> {
        let x = features.to_f64();
        self.suite_classifiers.iter().map(|t| *t.predict(&x)).collect()
    }

    pub fn suite_classify(&self, features: &FeatureVector) -> usize {
        argmax(&self.suite_probabilities(features)).unwrap_or(0)
    }
}

pub fn fit_classifier_variants(
    train: &Dataset,
    config: &TrainConfig,
    label_threshold: f64,
) -> Result<ClassifierVariants, ForestError> {
    let rows = dataset_rows(train)?;
    let n_psc = train.psc_ids.len();
    let labels: Vec<Vec<f64>> = train
        .samples
        .iter()
        .map(|s| threshold_labels(&s.labels, label_threshold).into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect())
        .collect();
    let all: Vec<usize> = (0..rows.len()).collect();

    let single_classifier = grow(&Matrix::new(&rows, labels.clone())?, all.clone(), config)?;

    let mut reg_rows = Vec::with_capacity(rows.len() * n_psc);
    let mut reg_labels = Vec::with_capacity(rows.len() * n_psc);
    for (row, s) in rows.iter().zip(&train.samples) {
        for p in 0..n_psc {
            reg_rows.push(one_hot_row(row, p, n_psc));
            reg_labels.push(s.labels[p]);
        }
    }
    let single_regressor = fit_forest(&Matrix::regression(&reg_rows, &reg_labels)?, config, derive_seed(config.seed, 0x5157))?;

    let suite_classifiers = (0..n_psc)
        .map(|p| {
            let y: Vec<f64> = labels.iter().map(|l| l[p]).collect();
            grow(&Matrix::regression(&rows, &y)?, all.clone(), config).map(scalar)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ClassifierVariants {
        psc_ids: train.psc_ids.clone(),
        label_threshold,
        single_classifier,
        single_regressor,
        suite_classifiers,
    })
}

/// Mean squared error of `predict` over the rows of `m` (first output).
pub fn training_mse(m: &Matrix, predict: impl Fn(&[f64]) -> f64) -> f64 {
    let mut row = vec![0.0; m.width()];
    let mut sum = 0.0;
    for i in 0..m.len() {
        for (f, col) in m.columns.iter().enumerate() {
            row[f] = col[i];
        }
        let e = predict(&row) - m.targets[i][0];
        sum += e * e;
    }
    sum / m.len() as f64
}

/// Orders two gains the way the split search does: larger wins unless the
/// difference is within the tie slack of `scale`.
pub fn compare_gain(a: f64, b: f64, scale: f64) -> Ordering {
    if (a - b).abs() <= GAIN_EPS * scale {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}
