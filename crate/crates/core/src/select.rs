//! Random-forest feature ranking averaged over expanding time-ordered folds.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::seed;
use crate::tree::{
    fit_tree_on, FeatureSampling, GrowthPolicy, LeafValueRule, RegressionTree, TreeConfig,
    TreeLimits,
};

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_SPLITS: usize = 5;
pub const DEFAULT_TOP_K: usize = 10;
/// Forest trees stop splitting below this many rows per leaf.
pub const FOREST_MIN_LEAF: usize = 5;

/// Fold `i` trains on rows `[0, train_end)`; `[train_end, test_end)` is the
/// held-out block that follows it in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fold {
    pub train_end: usize,
    pub test_end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub features: Vec<String>,
    /// `per_split[i][j]`: share of total gain credited to feature `j` in fold `i`.
    pub per_split: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub folds: Vec<Fold>,
}

/// Expanding folds over `n` rows: fold `i` (1-based) trains on the first
/// `floor(i * n / (n_splits + 1))` rows.
pub fn expanding_folds(n: usize, n_splits: usize) -> Result<Vec<Fold>> {
    if n_splits < 2 {
        return Err(Error::argument("need at least 2 splits"));
    }
    let min_train = 2 * FOREST_MIN_LEAF;
    let folds: Vec<Fold> = (1..=n_splits)
        .map(|i| Fold {
            train_end: i * n / (n_splits + 1),
            test_end: (i + 1) * n / (n_splits + 1),
        })
        .collect();
    if folds[0].train_end < min_train {
        return Err(Error::argument(format!(
            "{n} rows are too few for {n_splits} splits (first fold needs {min_train} rows)"
        )));
    }
    Ok(folds)
}

/// Bootstrap forest of mean-leaf trees with sqrt(m) features per split.
pub fn fit_forest(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    n_trees: usize,
    seed: u64,
) -> Result<Vec<RegressionTree>> {
    if rows.is_empty() {
        return Err(Error::argument("forest needs training rows"));
    }
    let m = x.first().map_or(0, Vec::len);
    let mtry = ((m as f64).sqrt().ceil() as usize).clamp(1, m.max(1));
    (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = seed::derive(seed, &[t as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
            let sample: Vec<usize> = (0..rows.len())
                .map(|_| rows[rng.random_range(0..rows.len())])
                .collect();
            let config = TreeConfig {
                policy: GrowthPolicy::LevelWise,
                limits: TreeLimits {
                    max_leaves: sample.len(),
                    max_depth: None,
                    min_samples_leaf: FOREST_MIN_LEAF,
                    min_gain: 0.0,
                },
                leaf_value: LeafValueRule::Mean,
                features: FeatureSampling::PerSplit(mtry),
                seed: rng.random(),
            };
            fit_tree_on(x, y, y, &sample, &config)
        })
        .collect()
}

pub fn forest_predict(trees: &[RegressionTree], x: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for t in trees {
        s += t.predict(x)?;
    }
    Ok(s / trees.len() as f64)
}

/// Gain shares over a forest; uniform when no tree split at all.
pub fn gain_shares(trees: &[RegressionTree], m: usize) -> Vec<f64> {
    let mut g = vec![0.0; m];
    for t in trees {
        for (acc, v) in g.iter_mut().zip(t.feature_gains()) {
            *acc += v;
        }
    }
    let total: f64 = g.iter().sum();
    if total > 0.0 {
        g.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / m as f64; m]
    }
}

/// `y[i]` is the one-step-ahead target for row `i` of `x`.
pub fn rf_importance(
    x: &FeatureMatrix,
    y: &[f64],
    n_splits: usize,
    n_trees: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if y.len() != x.len() {
        return Err(Error::argument(format!(
            "feature matrix has {} rows, target has {}",
            x.len(),
            y.len()
        )));
    }
    if n_trees == 0 {
        return Err(Error::argument("need at least one tree"));
    }
    if x.width() == 0 {
        return Err(Error::argument("feature matrix has no columns"));
    }
    let folds = expanding_folds(x.len(), n_splits)?;
    let rows: Vec<Vec<f64>> = (0..x.len()).map(|i| x.row(i)).collect();
    let m = x.width();
    let mut per_split = Vec::with_capacity(folds.len());
    for (i, fold) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..fold.train_end).collect();
        let trees = fit_forest(&rows, y, &train, n_trees, seed::derive(seed, &[i as u64]))?;
        per_split.push(gain_shares(&trees, m));
    }
    let scores = (0..m)
        .map(|j| per_split.iter().map(|s| s[j]).sum::<f64>() / folds.len() as f64)
        .collect();
    Ok(ImportanceReport {
        features: x.names(),
        per_split,
        scores,
        folds,
    })
}

impl ImportanceReport {
    /// Feature indices by descending score; ties by name.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.features.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .total_cmp(&self.scores[a])
                .then_with(|| self.features[a].cmp(&self.features[b]))
        });
        idx
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["feature".to_string()];
        header.extend((1..=self.per_split.len()).map(|i| format!("split_{i}")));
        header.push("mean".into());
        header.push("rank".into());
        w.write_record(&header)?;
        for (rank, j) in self.ranking().into_iter().enumerate() {
            let mut row = vec![self.features[j].clone()];
            row.extend(self.per_split.iter().map(|s| s[j].to_string()));
            row.push(self.scores[j].to_string());
            row.push((rank + 1).to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<importance>", e))?;
        Ok(())
    }
}

pub fn select_top_k(report: &ImportanceReport, k: usize) -> Result<Vec<String>> {
    if k == 0 || k > report.features.len() {
        return Err(Error::argument(format!(
            "k = {k} must be in [1, {}]",
            report.features.len()
        )));
    }
    Ok(report
        .ranking()
        .into_iter()
        .take(k)
        .map(|j| report.features[j].clone())
        .collect())
}
