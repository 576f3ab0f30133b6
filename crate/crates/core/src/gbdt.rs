//! Gradient boosting with an absolute-error objective.
//!
//! Each round fits a leaf-wise tree to the sign of the current residuals,
//! then replaces every leaf value with the median residual of the rows in
//! that leaf, and adds the tree with constant shrinkage.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tree::{
    fit_tree_on, median_in_place, FeatureSampling, GrowthPolicy, LeafValueRule, RegressionTree,
    TreeConfig, TreeLimits,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbdtParams {
    pub learning_rate: f64,
    pub min_gain_to_split: f64,
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    /// Negative means unbounded.
    pub max_depth: i32,
    pub feature_fraction: f64,
    pub bagging_fraction: f64,
    /// Resample rows every this many rounds; 0 disables bagging.
    pub bagging_freq: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            min_gain_to_split: 0.01,
            num_leaves: 100,
            min_data_in_leaf: 20,
            max_depth: -1,
            feature_fraction: 0.5,
            bagging_fraction: 0.9,
            bagging_freq: 1,
            rounds: 200,
            seed: 0,
        }
    }
}

impl GbdtParams {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::argument("learning rate must be in (0, 1]"));
        }
        for (name, f) in [
            ("feature fraction", self.feature_fraction),
            ("bagging fraction", self.bagging_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::argument(format!("{name} must be in (0, 1], got {f}")));
            }
        }
        if self.num_leaves < 2 {
            return Err(Error::argument("num_leaves must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    pub params: GbdtParams,
    n_features: usize,
}

impl GbdtModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::argument(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(self.predict_rounds(x, self.trees.len()))
    }

    /// Prediction using only the first `rounds` trees.
    pub fn predict_rounds(&self, x: &[f64], rounds: usize) -> f64 {
        self.base_score
            + self.learning_rate
                * self.trees[..rounds]
                    .iter()
                    .map(|t| t.predict_unchecked(x))
                    .sum::<f64>()
    }

    /// Interval that contains every possible prediction.
    pub fn output_bounds(&self) -> (f64, f64) {
        let reach = self.learning_rate * self.trees.iter().map(|t| t.max_abs_leaf()).sum::<f64>();
        (self.base_score - reach, self.base_score + reach)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Text dump: header with shrinkage and base score, then one JSON tree per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "learning_rate={}", self.learning_rate);
        let _ = writeln!(out, "base_score={}", self.base_score);
        let _ = writeln!(out, "trees={}", self.trees.len());
        for (i, t) in self.trees.iter().enumerate() {
            let _ = writeln!(out, "tree[{i}]={}", t.to_json());
        }
        out
    }
}

pub fn fit_gbdt(x: &[Vec<f64>], y: &[f64], params: &GbdtParams) -> Result<GbdtModel> {
    params.validate()?;
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::argument(format!(
            "boosting needs at least 2 rows with matching targets, got {n} rows and {} targets",
            y.len()
        )));
    }
    let m = x[0].len();
    if x.iter().any(|r| r.len() != m) {
        return Err(Error::argument("ragged feature rows"));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::argument("boosting inputs must be finite"));
    }

    let base_score = median_in_place(&mut y.to_vec());
    let mut fitted = vec![base_score; n];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let all_rows: Vec<usize> = (0..n).collect();
    let bag_size = ((params.bagging_fraction * n as f64).floor() as usize).clamp(1, n);
    let mut rows = all_rows.clone();
    let limits = TreeLimits {
        max_leaves: params.num_leaves,
        max_depth: usize::try_from(params.max_depth).ok(),
        min_samples_leaf: params.min_data_in_leaf,
        min_gain: params.min_gain_to_split,
    };

    let mut trees = Vec::with_capacity(params.rounds);
    for round in 0..params.rounds {
        if params.bagging_fraction < 1.0 && params.bagging_freq > 0 && round % params.bagging_freq == 0 {
            let mut shuffled = all_rows.clone();
            shuffled.shuffle(&mut rng);
            rows = shuffled[..bag_size].to_vec();
            rows.sort_unstable();
        }
        let residual: Vec<f64> = y.iter().zip(&fitted).map(|(t, f)| t - f).collect();
        let direction: Vec<f64> = residual
            .iter()
            .map(|r| if *r > 0.0 { 1.0 } else if *r < 0.0 { -1.0 } else { 0.0 })
            .collect();
        let config = TreeConfig {
            policy: GrowthPolicy::LeafWise,
            limits,
            leaf_value: LeafValueRule::Median,
            features: FeatureSampling::PerTree(params.feature_fraction),
            seed: rand::Rng::random(&mut rng),
        };
        let tree = fit_tree_on(x, &direction, &residual, &rows, &config)?;
        for (f, row) in fitted.iter_mut().zip(x) {
            *f += params.learning_rate * tree.predict_unchecked(row);
        }
        trees.push(tree);
    }
    Ok(GbdtModel {
        base_score,
        learning_rate: params.learning_rate,
        trees,
        params: *params,
        n_features: m,
    })
}

pub fn predict_gbdt(model: &GbdtModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}
