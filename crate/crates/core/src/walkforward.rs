//! Per-prediction batch protocol: for every test date a fresh batch of the
//! preceding `W` sequenced rows is scaled, each grid state is scored by
//! expanding-window one-step validation, the winner is refit on the whole
//! batch and one forecast is emitted. Nothing survives between tasks.

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{add_uniform_noise, fit_scaler, sequence, FeatureMatrix, ScalerState, SequencedDataset};
use crate::models::{Learner, ParamState};
use crate::record::ForecastRecord;
use crate::seed;

/// Sequenced rows used to seed expanding-window validation.
pub const VALIDATION_SEED_ROWS: usize = 10;
pub const NOISE_LO: f64 = -0.02;
pub const NOISE_HI: f64 = 0.02;
pub const DEFAULT_HORIZON: usize = 63;

/// Sequenced features with raw next-step log-diff targets, plus the target
/// level on each row's window-end date and target date.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub dataset: SequencedDataset,
    /// Level on the date each row is forecasting.
    pub levels: Vec<f64>,
    /// Level on the last date inside each row's window.
    pub prev_levels: Vec<f64>,
}

impl ExperimentData {
    /// `levels` is the target's level series on `matrix.dates`.
    pub fn new(matrix: &FeatureMatrix, levels: &[f64], seq_len: usize) -> Result<Self> {
        if levels.len() != matrix.len() {
            return Err(Error::argument(format!(
                "target levels ({}) and feature rows ({}) differ in length",
                levels.len(),
                matrix.len()
            )));
        }
        if let Some(v) = levels.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::domain(format!("target level {v} is not positive")));
        }
        // slot 0 has no predecessor; sequencing never reads it
        let mut diffs = vec![0.0; levels.len()];
        for i in 1..levels.len() {
            diffs[i] = levels[i].ln() - levels[i - 1].ln();
        }
        let dataset = sequence(matrix, &diffs, seq_len)?;
        let ends = dataset.end_index().to_vec();
        Ok(Self {
            levels: ends.iter().map(|&e| levels[e + 1]).collect(),
            prev_levels: ends.iter().map(|&e| levels[e]).collect(),
            dataset,
        })
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn date(&self, row: usize) -> NaiveDate {
        self.dataset.target_dates()[row]
    }

    /// Rows whose target date falls in `[start, end]`.
    pub fn rows_between(&self, start: NaiveDate, end: NaiveDate) -> Vec<usize> {
        (0..self.len())
            .filter(|&r| (start..=end).contains(&self.date(r)))
            .collect()
    }
}

/// One forecast: the batch is rows `[row - window, row)`, all dated before
/// the target date of `row`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchTask {
    pub row: usize,
    pub window: usize,
    pub seed: u64,
}

impl BatchTask {
    pub fn new(data: &ExperimentData, learner_name: &str, window: usize, row: usize, root_seed: u64) -> Result<Self> {
        if row >= data.len() {
            return Err(Error::argument(format!("row {row} is past the data")));
        }
        if row < window {
            return Err(Error::argument(format!(
                "forecast for {} needs {window} prior sequenced rows, only {row} available",
                data.date(row)
            )));
        }
        Ok(Self {
            row,
            window,
            seed: task_seed(root_seed, learner_name, window, data.date(row)),
        })
    }
}

/// Stable in the model name, window and test date, not in the row index.
pub fn task_seed(root: u64, learner_name: &str, window: usize, date: NaiveDate) -> u64 {
    seed::derive(
        root,
        &[
            seed::fnv1a(learner_name.as_bytes()),
            window as u64,
            date.num_days_from_ce() as u64,
        ],
    )
}

fn noisy(learner: &dyn Learner, ds: &SequencedDataset, seed: u64) -> Result<SequencedDataset> {
    if learner.wants_noise() {
        add_uniform_noise(ds, NOISE_LO, NOISE_HI, seed)
    } else {
        Ok(ds.clone())
    }
}

/// Mean absolute one-step error of `state` over the batch: fit on the first
/// `k` rows, predict row `k`, for `k = 10 .. len - 1`.
///
/// `scaled` is the batch after scaling; `raw_targets` its unscaled targets.
pub fn validate_params(
    learner: &dyn Learner,
    state: &ParamState,
    scaled: &SequencedDataset,
    raw_targets: &[f64],
    scaler: &ScalerState,
    seed: u64,
) -> Result<f64> {
    let n = scaled.len();
    if n <= VALIDATION_SEED_ROWS {
        return Err(Error::argument(format!(
            "validation needs more than {VALIDATION_SEED_ROWS} sequenced rows, batch has {n}"
        )));
    }
    let mut total = 0.0;
    for k in VALIDATION_SEED_ROWS..n {
        let train = noisy(learner, &scaled.slice(0..k), seed::derive(seed, &[k as u64]))?;
        let pred = learner.fit_predict(state, &train, &scaled.slice(k..k + 1), scaler, seed::derive(seed, &[k as u64, 1]))?;
        total += (pred[0] - raw_targets[k]).abs();
    }
    Ok(total / (n - VALIDATION_SEED_ROWS) as f64)
}

/// Index of the smallest score; the first one wins ties. NaN never wins.
pub fn argmin_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.map_or(true, |b| *s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn run_batch(data: &ExperimentData, learner: &dyn Learner, task: &BatchTask) -> Result<ForecastRecord> {
    let date = data.date(task.row);
    let context = || format!("{} W={} {}", learner.name(), task.window, date);
    run_batch_inner(data, learner, task).map_err(|e| e.with_context(context()))
}

fn run_batch_inner(data: &ExperimentData, learner: &dyn Learner, task: &BatchTask) -> Result<ForecastRecord> {
    let row = task.row;
    let batch = data.dataset.slice(row - task.window..row);
    // the query's own target lies on the test date; it never reaches a model
    let query = data.dataset.slice(row..row + 1).with_targets(vec![0.0])?;
    let scaler = fit_scaler(&batch)?;
    let scaled = scaler.apply(&batch)?;
    let scaled_query = scaler.apply(&query)?;
    let grid = learner.grid();
    if grid.is_empty() {
        return Err(Error::Config(format!("{} has an empty grid", learner.name())));
    }
    let (chosen, val_mae) = if grid.len() == 1 {
        (0, None)
    } else {
        let scores = grid
            .iter()
            .enumerate()
            .map(|(i, state)| {
                validate_params(
                    learner,
                    state,
                    &scaled,
                    batch.targets(),
                    &scaler,
                    seed::derive(task.seed, &[i as u64]),
                )
            })
            .collect::<Result<Vec<f64>>>()?;
        let best = argmin_first(&scores)
            .ok_or_else(|| Error::numeric("validation", "every grid state scored NaN"))?;
        (best, Some(scores[best]))
    };
    let state = &grid[chosen];
    let fit_seed = seed::derive(task.seed, &[u64::MAX]);
    let train = noisy(learner, &scaled, fit_seed)?;
    let pred = learner.fit_predict(state, &train, &scaled_query, &scaler, seed::derive(fit_seed, &[1]))?[0];
    if !pred.is_finite() {
        return Err(Error::numeric(learner.name(), format!("non-finite forecast {pred}")));
    }
    let prev = data.prev_levels[row];
    Ok(ForecastRecord {
        date: data.date(row),
        actual_logdiff: data.dataset.targets()[row],
        pred_logdiff: pred,
        actual_level: data.levels[row],
        pred_level: prev * pred.exp(),
        model: learner.name().to_string(),
        window: task.window,
        params: state.to_text(),
        val_mae,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Serial,
    Parallel,
}

/// One independent task per row, records in row order.
pub fn run_rows(
    data: &ExperimentData,
    learner: &dyn Learner,
    window: usize,
    rows: &[usize],
    root_seed: u64,
    schedule: Schedule,
) -> Result<Vec<ForecastRecord>> {
    if rows.is_empty() {
        return Err(Error::argument("no test rows"));
    }
    if rows.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::argument("test rows must be strictly increasing"));
    }
    let tasks = rows
        .iter()
        .map(|&r| BatchTask::new(data, learner.name(), window, r, root_seed))
        .collect::<Result<Vec<_>>>()?;
    match schedule {
        Schedule::Serial => tasks.iter().map(|t| run_batch(data, learner, t)).collect(),
        Schedule::Parallel => tasks.par_iter().map(|t| run_batch(data, learner, t)).collect(),
    }
}

/// Forecasts for the last `horizon` rows.
pub fn run_experiment(
    data: &ExperimentData,
    learner: &dyn Learner,
    window: usize,
    horizon: usize,
    root_seed: u64,
) -> Result<Vec<ForecastRecord>> {
    if horizon == 0 || horizon > data.len() || data.len() - horizon < window {
        return Err(Error::argument(format!(
            "{} sequenced rows cannot hold a {window}-row window plus a {horizon}-step horizon",
            data.len()
        )));
    }
    let rows: Vec<usize> = (data.len() - horizon..data.len()).collect();
    run_rows(data, learner, window, &rows, root_seed, Schedule::Parallel)
}
