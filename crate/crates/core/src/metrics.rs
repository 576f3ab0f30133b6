//! Point-forecast accuracy and the Diebold-Mariano equal-accuracy test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::record::ForecastRecord;

/// MAE and RMSE are on the log-diff scale; MAPE (percent), log loss (x100)
/// and the coefficient of variation (percent) are on levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub log_loss: f64,
    pub cov: f64,
    pub actual_min: f64,
    pub actual_max: f64,
}

pub fn mae(errors: &[f64]) -> f64 {
    errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64
}

pub fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

pub fn mape(actual: &[f64], predicted: &[f64]) -> f64 {
    100.0
        * actual
            .iter()
            .zip(predicted)
            .map(|(y, p)| (p - y).abs() / y)
            .sum::<f64>()
        / actual.len() as f64
}

/// Mean squared log ratio, scaled by 100.
pub fn log_loss(actual: &[f64], predicted: &[f64]) -> f64 {
    100.0
        * actual
            .iter()
            .zip(predicted)
            .map(|(y, p)| (p.ln() - y.ln()).powi(2))
            .sum::<f64>()
        / actual.len() as f64
}

/// Sample standard deviation over the mean, in percent.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    100.0 * var.sqrt() / mean
}

pub fn compute_metrics(records: &[ForecastRecord]) -> Result<MetricTable> {
    if records.is_empty() {
        return Err(Error::argument("metrics need at least one record"));
    }
    let errors: Vec<f64> = records.iter().map(ForecastRecord::logdiff_error).collect();
    let actual: Vec<f64> = records.iter().map(|r| r.actual_level).collect();
    let predicted: Vec<f64> = records.iter().map(|r| r.pred_level).collect();
    if let Some(r) = records
        .iter()
        .find(|r| !(r.actual_level > 0.0 && r.pred_level > 0.0))
    {
        return Err(Error::domain(format!(
            "non-positive level on {} (actual {}, predicted {})",
            r.date, r.actual_level, r.pred_level
        )));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::domain("non-finite log-diff error"));
    }
    Ok(MetricTable {
        n: records.len(),
        mae: mae(&errors),
        rmse: rmse(&errors),
        mape: mape(&actual, &predicted),
        log_loss: log_loss(&actual, &predicted),
        cov: coefficient_of_variation(&actual),
        actual_min: actual.iter().copied().fold(f64::INFINITY, f64::min),
        actual_max: actual.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Squared,
    Absolute,
}

impl LossKind {
    pub fn loss(self, e: f64) -> f64 {
        match self {
            LossKind::Squared => e * e,
            LossKind::Absolute => e.abs(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Squared => "squared",
            LossKind::Absolute => "absolute",
        }
    }
}

/// Positive statistic: the first forecast has the larger loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
    pub horizon: usize,
    pub loss: LossKind,
    pub n: usize,
}

pub const DM_MIN_N: usize = 8;

pub fn dm_test(e1: &[f64], e2: &[f64], h: usize) -> Result<DmResult> {
    dm_test_with(e1, e2, h, LossKind::Squared)
}

pub fn dm_test_with(e1: &[f64], e2: &[f64], h: usize, loss: LossKind) -> Result<DmResult> {
    if e1.len() != e2.len() {
        return Err(Error::argument(format!(
            "error sequences differ in length ({} vs {})",
            e1.len(),
            e2.len()
        )));
    }
    let d: Vec<f64> = e1
        .iter()
        .zip(e2)
        .map(|(a, b)| loss.loss(*a) - loss.loss(*b))
        .collect();
    let mut r = dm_from_differential(&d, h)?;
    r.loss = loss;
    Ok(r)
}

/// DM test on a precomputed loss differential.
///
/// Long-run variance sums autocovariances (1/n denominators) up to lag
/// h-1; the statistic carries the small-sample correction and is compared
/// against Student-t with n-1 degrees of freedom.
pub fn dm_from_differential(d: &[f64], h: usize) -> Result<DmResult> {
    let n = d.len();
    if n < DM_MIN_N {
        return Err(Error::argument(format!("DM test needs n >= {DM_MIN_N}, got {n}")));
    }
    if h == 0 || h >= n {
        return Err(Error::argument(format!("horizon must be in [1, {n}), got {h}")));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite loss differential"));
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let autocov = |lag: usize| -> f64 {
        (lag..n).map(|t| (d[t] - mean) * (d[t - lag] - mean)).sum::<f64>() / nf
    };
    let lrv = autocov(0) + 2.0 * (1..h).map(autocov).sum::<f64>();
    let scale = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(lrv > 1e-24 * scale * scale) {
        return Err(Error::Degenerate(format!(
            "long-run variance of the loss differential is {lrv:e}"
        )));
    }
    let hf = h as f64;
    let correction = ((nf + 1.0 - 2.0 * hf + hf * (hf - 1.0) / nf) / nf).sqrt();
    let statistic = correction * mean / (lrv / nf).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| Error::numeric("dm", e.to_string()))?;
    let p_value = (2.0 * (1.0 - t.cdf(statistic.abs()))).clamp(0.0, 1.0);
    Ok(DmResult {
        statistic,
        p_value,
        horizon: h,
        loss: LossKind::Squared,
        n,
    })
}
