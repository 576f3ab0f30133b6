//! Regressor kinds, hyperparameter grids and the common fit/predict contract.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ScalerState, SequencedDataset};
use crate::gbdt::{fit_gbdt, GbdtParams};
use crate::net::{self, NetConfig};
use crate::svr::{fit_svr, Gamma, KernelKind, SvrParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    Svr,
    Gbdt,
    AttnGru,
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputShape {
    Flat,
    Tensor,
}

impl RegressorKind {
    pub const ALL: [RegressorKind; 4] = [
        RegressorKind::Svr,
        RegressorKind::Gbdt,
        RegressorKind::AttnGru,
        RegressorKind::Naive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegressorKind::Svr => "svr",
            RegressorKind::Gbdt => "gbdt",
            RegressorKind::AttnGru => "attn_gru",
            RegressorKind::Naive => "naive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::argument(format!("unknown model kind `{s}`")))
    }

    pub fn input_shape(self) -> InputShape {
        match self {
            RegressorKind::AttnGru => InputShape::Tensor,
            _ => InputShape::Flat,
        }
    }

    /// Grid axes in enumeration order; the last axis varies fastest.
    pub fn axes(self) -> Vec<(&'static str, Vec<&'static str>)> {
        match self {
            RegressorKind::Svr => vec![
                ("kernel", vec!["poly", "rbf", "sigmoid"]),
                ("gamma", vec!["scale", "auto", "0.1", "0.15", "0.2"]),
                ("epsilon", vec!["0.05", "0.1", "0.15"]),
            ],
            RegressorKind::Gbdt => vec![
                ("num_leaves", vec!["75", "100", "125"]),
                ("min_data_in_leaf", vec!["10", "20", "30"]),
                ("max_depth", vec!["-1", "5", "10"]),
                ("feature_fraction", vec!["0.4", "0.5", "0.6"]),
            ],
            RegressorKind::AttnGru => vec![
                ("conv_channels", vec!["64"]),
                ("dilation", vec!["2"]),
                ("heads", vec!["4"]),
                ("head_size", vec!["16"]),
                ("fc_width", vec!["64"]),
                ("dropout", vec!["0.1"]),
                ("gru1_units", vec!["64"]),
                ("gru2_units", vec!["32"]),
                ("learning_rate", vec!["0.07"]),
                ("epochs", vec!["32"]),
                ("batch_size", vec!["32"]),
                ("patience", vec!["5"]),
            ],
            RegressorKind::Naive => vec![],
        }
    }
}

impl fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One grid point: ordered `key=value` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ParamState {
    entries: Vec<(String, String)>,
}

impl ParamState {
    pub fn new(entries: Vec<(String, String)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::argument(format!("parameter state lacks `{key}`")))
    }

    fn number<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| Error::argument(format!("parameter `{key}` has invalid value `{v}`")))
    }

    /// Text form `k1=v1;k2=v2`; the empty state is the empty string.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.is_empty() {
            return Ok(Self::default());
        }
        let entries = text
            .split(';')
            .map(|kv| {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::argument(format!("`{kv}` is not key=value")))?;
                if k.is_empty() || v.is_empty() || v.contains('=') {
                    return Err(Error::argument(format!("`{kv}` is not key=value")));
                }
                Ok((k.to_string(), v.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }
}

impl fmt::Display for ParamState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Replacement value lists keyed by axis name.
pub type GridOverrides = BTreeMap<String, Vec<String>>;

/// Cartesian product of the kind's axes with the last axis varying fastest.
pub fn enumerate_grid(kind: RegressorKind, overrides: &GridOverrides) -> Result<Vec<ParamState>> {
    let mut axes: Vec<(String, Vec<String>)> = kind
        .axes()
        .into_iter()
        .map(|(k, vs)| (k.to_string(), vs.into_iter().map(str::to_string).collect()))
        .collect();
    for (key, values) in overrides {
        let axis = axes
            .iter_mut()
            .find(|(k, _)| k == key)
            .ok_or_else(|| Error::Config(format!("`{key}` is not a {kind} grid axis")))?;
        if values.is_empty() {
            return Err(Error::Config(format!("override for `{key}` is empty")));
        }
        axis.1 = values.clone();
    }
    let mut states = vec![Vec::new()];
    for (key, values) in &axes {
        states = states
            .into_iter()
            .flat_map(|prefix: Vec<(String, String)>| {
                values.iter().map(move |v| {
                    let mut s = prefix.clone();
                    s.push((key.clone(), v.clone()));
                    s
                })
            })
            .collect();
    }
    let states: Vec<ParamState> = states.into_iter().map(ParamState::new).collect();
    for s in &states {
        check_state(kind, s)?;
    }
    Ok(states)
}

fn check_state(kind: RegressorKind, s: &ParamState) -> Result<()> {
    let bad = |e: Error| Error::Config(format!("grid state `{s}`: {e}"));
    match kind {
        RegressorKind::Svr => svr_params(s).map(drop).map_err(bad),
        RegressorKind::Gbdt => gbdt_params(s, &GbdtParams::default()).map(drop).map_err(bad),
        RegressorKind::AttnGru => net_config(s, 1, 0).and_then(|c| c.validate()).map_err(bad),
        RegressorKind::Naive => Ok(()),
    }
}

pub fn svr_params(s: &ParamState) -> Result<SvrParams> {
    let p = SvrParams {
        kernel: KernelKind::parse(s.require("kernel")?)?,
        gamma: Gamma::parse(s.require("gamma")?)?,
        epsilon: s.number("epsilon")?,
        ..SvrParams::default()
    };
    if !(p.epsilon >= 0.0) {
        return Err(Error::argument("epsilon must be nonnegative"));
    }
    Ok(p)
}

/// Grid values laid over `base` (which supplies the fixed settings).
pub fn gbdt_params(s: &ParamState, base: &GbdtParams) -> Result<GbdtParams> {
    let p = GbdtParams {
        num_leaves: s.number("num_leaves")?,
        min_data_in_leaf: s.number("min_data_in_leaf")?,
        max_depth: s.number("max_depth")?,
        feature_fraction: s.number("feature_fraction")?,
        ..*base
    };
    if !(p.feature_fraction > 0.0 && p.feature_fraction <= 1.0) || p.num_leaves < 2 {
        return Err(Error::argument("invalid leaves or feature fraction"));
    }
    Ok(p)
}

pub fn net_config(s: &ParamState, n_features: usize, seed: u64) -> Result<NetConfig> {
    Ok(NetConfig {
        conv_channels: s.number("conv_channels")?,
        dilation: s.number("dilation")?,
        heads: s.number("heads")?,
        head_size: s.number("head_size")?,
        fc_width: s.number("fc_width")?,
        dropout: s.number("dropout")?,
        gru1_units: s.number("gru1_units")?,
        gru2_units: s.number("gru2_units")?,
        learning_rate: s.number("learning_rate")?,
        epochs: s.number("epochs")?,
        batch_size: s.number("batch_size")?,
        patience: s.number("patience")?,
        seed,
        ..NetConfig::standard(n_features)
    })
}

/// Random walk in levels: the next log-diff is zero.
pub fn naive_predict(_history: &[f64]) -> f64 {
    0.0
}

/// Fit on `train`, predict every row of `queries`.
///
/// Both datasets arrive standardized by `scaler` (targets included);
/// predictions are returned in raw target units.
pub trait Learner: Sync {
    fn name(&self) -> &str;

    fn grid(&self) -> &[ParamState];

    fn fit_predict(
        &self,
        state: &ParamState,
        train: &SequencedDataset,
        queries: &SequencedDataset,
        scaler: &ScalerState,
        seed: u64,
    ) -> Result<Vec<f64>>;

    /// Whether the walk-forward layer should perturb training features.
    fn wants_noise(&self) -> bool {
        true
    }
}

/// The built-in regressors.
#[derive(Debug, Clone)]
pub struct ModelLearner {
    pub kind: RegressorKind,
    pub grid: Vec<ParamState>,
    /// Fixed boosting settings (learning rate, rounds, bagging).
    pub gbdt_base: GbdtParams,
}

impl ModelLearner {
    pub fn new(kind: RegressorKind, overrides: &GridOverrides) -> Result<Self> {
        Ok(Self {
            kind,
            grid: enumerate_grid(kind, overrides)?,
            gbdt_base: GbdtParams::default(),
        })
    }
}

impl Learner for ModelLearner {
    fn name(&self) -> &str {
        self.kind.as_str()
    }

    fn grid(&self) -> &[ParamState] {
        &self.grid
    }

    fn wants_noise(&self) -> bool {
        self.kind != RegressorKind::Naive
    }

    fn fit_predict(
        &self,
        state: &ParamState,
        train: &SequencedDataset,
        queries: &SequencedDataset,
        scaler: &ScalerState,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let flat = |ds: &SequencedDataset| ds.flat_rows();
        let scaled: Vec<f64> = match self.kind {
            RegressorKind::Naive => return Ok(vec![naive_predict(&[]); queries.len()]),
            RegressorKind::Svr => {
                let model = fit_svr(&flat(train), train.targets(), &svr_params(state)?)?;
                flat(queries).iter().map(|x| model.predict(x)).collect()
            }
            RegressorKind::Gbdt => {
                let params = GbdtParams {
                    seed,
                    ..gbdt_params(state, &self.gbdt_base)?
                };
                let model = fit_gbdt(&flat(train), train.targets(), &params)?;
                flat(queries).iter().map(|x| model.predict(x)).collect()
            }
            RegressorKind::AttnGru => {
                let cfg = net_config(state, train.n_features(), seed)?;
                let outcome = net::train(&cfg, train, None)?;
                let blocks: Vec<&[f64]> = (0..queries.len()).map(|i| queries.flat(i)).collect();
                net::predict(&outcome.params, &cfg, &blocks, queries.seq_len())
            }
        }?;
        Ok(scaled.into_iter().map(|z| scaler.unscale_target(z)).collect())
    }
}
