//! Piecewise-constant regression trees with leaf-wise (best-first) or
//! level-wise growth. Split gain is variance (sum of squared errors)
//! reduction; thresholds are midpoints between sorted unique values.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Gains closer than this (relative) are treated as ties.
pub const GAIN_TIE_TOL: f64 = 1e-9;
/// Smallest gain that counts as an improvement at all.
pub const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthPolicy {
    LeafWise,
    LevelWise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafValueRule {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureSampling {
    All,
    /// One seeded subset of `ceil(fraction * m)` features for the whole tree.
    PerTree(f64),
    /// A fresh subset of this many features for every candidate split.
    PerSplit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeLimits {
    pub max_leaves: usize,
    /// `None` means unbounded depth.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_gain: f64,
}

impl Default for TreeLimits {
    fn default() -> Self {
        Self {
            max_leaves: 31,
            max_depth: None,
            min_samples_leaf: 1,
            min_gain: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub policy: GrowthPolicy,
    pub limits: TreeLimits,
    pub leaf_value: LeafValueRule,
    pub features: FeatureSampling,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            policy: GrowthPolicy::LeafWise,
            limits: TreeLimits::default(),
            leaf_value: LeafValueRule::Mean,
            features: FeatureSampling::All,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        count: usize,
    },
}

/// One node expansion, in the order it happened.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub node: usize,
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_features: usize,
    expansions: Vec<Expansion>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

fn sse(sum: f64, sumsq: f64, n: f64) -> f64 {
    (sumsq - sum * sum / n).max(0.0)
}

/// `a` beats `b` by more than the tie tolerance.
pub fn gain_exceeds(a: f64, b: f64) -> bool {
    a > b + GAIN_TIE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Best admissible split of `rows` over `features` (ascending order), or
/// `None`. Ties keep the lower feature index, then the lower threshold.
pub fn best_split(
    x: &[Vec<f64>],
    targets: &[f64],
    rows: &[usize],
    features: &[usize],
    min_samples_leaf: usize,
    min_gain: f64,
) -> Option<SplitCandidate> {
    let n = rows.len();
    let min_leaf = min_samples_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&r| targets[r]).sum();
    let total_sq: f64 = rows.iter().map(|&r| targets[r] * targets[r]).sum();
    let parent = sse(total, total_sq, n as f64);
    let mut best: Option<SplitCandidate> = None;
    let mut order: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &f in features {
        order.clear();
        order.extend(rows.iter().map(|&r| (x[r][f], targets[r])));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut ls, mut lsq) = (0.0, 0.0);
        for i in 0..n - 1 {
            ls += order[i].1;
            lsq += order[i].1 * order[i].1;
            let nl = i + 1;
            let nr = n - nl;
            if order[i].0 == order[i + 1].0 || nl < min_leaf || nr < min_leaf {
                continue;
            }
            let gain = parent - sse(ls, lsq, nl as f64) - sse(total - ls, total_sq - lsq, nr as f64);
            if gain < min_gain || gain <= GAIN_EPS {
                continue;
            }
            if best.map_or(true, |b| gain_exceeds(gain, b.gain)) {
                let (lo, hi) = (order[i].0, order[i + 1].0);
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold <= lo {
                    threshold = hi;
                }
                best = Some(SplitCandidate {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

fn leaf_value(rule: LeafValueRule, values: &[f64], rows: &[usize]) -> f64 {
    match rule {
        LeafValueRule::Mean => rows.iter().map(|&r| values[r]).sum::<f64>() / rows.len() as f64,
        LeafValueRule::Median => {
            let mut v: Vec<f64> = rows.iter().map(|&r| values[r]).collect();
            median_in_place(&mut v)
        }
    }
}

/// Median of a non-empty slice; even counts average the two middle values.
pub fn median_in_place(v: &mut [f64]) -> f64 {
    assert!(!v.is_empty(), "median of empty slice");
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Frontier {
    node: usize,
    rows: Vec<usize>,
    depth: usize,
    split: Option<SplitCandidate>,
}

/// Fits a tree on all rows of `x`, with leaf values taken from `targets`.
pub fn fit_regression_tree(
    x: &[Vec<f64>],
    targets: &[f64],
    config: &TreeConfig,
) -> Result<RegressionTree> {
    let rows: Vec<usize> = (0..x.len()).collect();
    fit_tree_on(x, targets, targets, &rows, config)
}

/// General form: splits chosen on `split_targets`, leaf values computed
/// from `leaf_source`, both restricted to `rows`.
pub fn fit_tree_on(
    x: &[Vec<f64>],
    split_targets: &[f64],
    leaf_source: &[f64],
    rows: &[usize],
    config: &TreeConfig,
) -> Result<RegressionTree> {
    if x.is_empty() || rows.is_empty() {
        return Err(Error::argument("cannot fit a tree on empty input"));
    }
    if split_targets.len() != x.len() || leaf_source.len() != x.len() {
        return Err(Error::argument("feature rows and targets differ in length"));
    }
    let m = x[0].len();
    if x.iter().any(|r| r.len() != m) {
        return Err(Error::argument("ragged feature rows"));
    }
    if let Some(r) = rows.iter().find(|&&r| r >= x.len()) {
        return Err(Error::argument(format!("row index {r} out of range")));
    }
    if rows
        .iter()
        .any(|&r| !split_targets[r].is_finite() || !leaf_source[r].is_finite())
    {
        return Err(Error::argument("targets must be finite"));
    }
    let limits = config.limits;
    if limits.max_leaves < 1 {
        return Err(Error::argument("max_leaves must be at least 1"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let all: Vec<usize> = (0..m).collect();
    let tree_features: Vec<usize> = match config.features {
        FeatureSampling::PerTree(frac) if frac < 1.0 => {
            if !(frac > 0.0) {
                return Err(Error::argument("feature fraction must be in (0, 1]"));
            }
            let k = ((frac * m as f64).ceil() as usize).clamp(1, m);
            let mut shuffled = all.clone();
            shuffled.shuffle(&mut rng);
            let mut pick = shuffled[..k].to_vec();
            pick.sort_unstable();
            pick
        }
        _ => all.clone(),
    };
    let candidate = |rows: &[usize], rng: &mut ChaCha8Rng| -> Option<SplitCandidate> {
        let feats = match config.features {
            FeatureSampling::PerSplit(k) if k < m => {
                let mut shuffled = all.clone();
                shuffled.shuffle(rng);
                let mut pick = shuffled[..k.max(1)].to_vec();
                pick.sort_unstable();
                pick
            }
            _ => tree_features.clone(),
        };
        best_split(
            x,
            split_targets,
            rows,
            &feats,
            limits.min_samples_leaf,
            limits.min_gain,
        )
    };
    let depth_ok = |d: usize| limits.max_depth.map_or(true, |md| d < md);

    let mut nodes = vec![Node::Leaf {
        value: 0.0,
        count: rows.len(),
    }];
    let mut expansions = Vec::new();
    let root_split = if depth_ok(0) {
        candidate(rows, &mut rng)
    } else {
        None
    };
    let mut frontier = vec![Frontier {
        node: 0,
        rows: rows.to_vec(),
        depth: 0,
        split: root_split,
    }];
    let mut finished: Vec<Frontier> = Vec::new();
    let mut n_leaves = 1;

    while n_leaves < limits.max_leaves {
        let pick = match config.policy {
            GrowthPolicy::LeafWise => {
                let mut best: Option<usize> = None;
                for (i, f) in frontier.iter().enumerate() {
                    let Some(s) = f.split else { continue };
                    let better = match best {
                        None => true,
                        Some(b) => {
                            let bs = frontier[b].split.unwrap();
                            gain_exceeds(s.gain, bs.gain)
                                || (!gain_exceeds(bs.gain, s.gain) && f.node < frontier[b].node)
                        }
                    };
                    if better {
                        best = Some(i);
                    }
                }
                best
            }
            GrowthPolicy::LevelWise => frontier.iter().position(|f| f.split.is_some()),
        };
        let Some(i) = pick else { break };
        let leaf = frontier.remove(i);
        if config.policy == GrowthPolicy::LevelWise {
            // breadth-first: leaves before `i` had no admissible split
            finished.extend(frontier.drain(..i));
        }
        let split = leaf.split.expect("picked leaf has a split");
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = leaf
            .rows
            .iter()
            .partition(|&&r| x[r][split.feature] < split.threshold);
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf {
            value: 0.0,
            count: left_rows.len(),
        });
        nodes.push(Node::Leaf {
            value: 0.0,
            count: right_rows.len(),
        });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        expansions.push(Expansion {
            node: leaf.node,
            feature: split.feature,
            threshold: split.threshold,
            gain: split.gain,
            depth: leaf.depth,
        });
        n_leaves += 1;
        let depth = leaf.depth + 1;
        for (node, child_rows) in [(left, left_rows), (right, right_rows)] {
            let split = if depth_ok(depth) {
                candidate(&child_rows, &mut rng)
            } else {
                None
            };
            frontier.push(Frontier {
                node,
                rows: child_rows,
                depth,
                split,
            });
        }
    }
    for leaf in frontier.iter().chain(finished.iter()) {
        nodes[leaf.node] = Node::Leaf {
            value: leaf_value(config.leaf_value, leaf_source, &leaf.rows),
            count: leaf.rows.len(),
        };
    }
    Ok(RegressionTree {
        nodes,
        n_features: m,
        expansions,
    })
}

impl RegressionTree {
    /// A one-leaf tree; used for degenerate boosting rounds.
    pub fn constant(value: f64, count: usize, n_features: usize) -> Self {
        Self {
            nodes: vec![Node::Leaf { value, count }],
            n_features,
            expansions: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn expansions(&self) -> &[Expansion] {
        &self.expansions
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn leaf_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, .. } => Some(*value),
            _ => None,
        })
    }

    pub fn max_abs_leaf(&self) -> f64 {
        self.leaf_values().map(f64::abs).fold(0.0, f64::max)
    }

    /// Index of the leaf reached by `x`; strictly-less goes left.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::argument(format!(
                "tree expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    /// Whether `node` lies on the path taken by `x`.
    pub fn visits(&self, x: &[f64], node: usize) -> bool {
        let mut i = 0;
        loop {
            if i == node {
                return true;
            }
            match &self.nodes[i] {
                Node::Leaf { .. } => return false,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    /// Total split gain credited to each feature.
    pub fn feature_gains(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.n_features];
        for e in &self.expansions {
            g[e.feature] += e.gain;
        }
        g
    }

    pub fn to_json(&self) -> Value {
        self.node_json(0)
    }

    fn node_json(&self, i: usize) -> Value {
        match &self.nodes[i] {
            Node::Leaf { value, count } => json!({ "leaf": value, "count": count }),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => json!({
                "feature": feature,
                "threshold": threshold,
                "left": self.node_json(*left),
                "right": self.node_json(*right),
            }),
        }
    }
}

pub fn predict_tree(tree: &RegressionTree, x: &[f64]) -> Result<f64> {
    tree.predict(x)
}
