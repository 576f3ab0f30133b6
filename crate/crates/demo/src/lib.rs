//! Browser bindings: a synthetic index with its realized volatility, the
//! credit VIX calculator, and a boosted-tree fit probed outside its data.
//!
//! Every export returns a JSON string; failures come back as `{"error": ...}`
//! so the page never has to catch a JS exception.

use ivlab::creditvix::CreditVixInputs;
use ivlab::data::{generate_synthetic, SYNTHETIC_TARGET};
use ivlab::features::{log_diff, rolling_rv, RV_WINDOW};
use ivlab::gbdt::{fit_gbdt, GbdtParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(r: ivlab::Result<Value>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

/// Synthetic target levels and their annualized 21-day realized volatility
/// (percent), aligned so `rv[i]` uses returns up to `level[i]`.
#[wasm_bindgen]
pub fn synthetic_index(seed: u32, days: u32) -> String {
    respond(synthetic_index_value(seed as u64, days as usize))
}

fn synthetic_index_value(seed: u64, days: usize) -> ivlab::Result<Value> {
    let frame = generate_synthetic(seed, days, 1)?;
    let level = frame.column(SYNTHETIC_TARGET).expect("synthetic target column").to_vec();
    let rv = rolling_rv(&log_diff(&level)?, RV_WINDOW)?;
    let annualized: Vec<f64> = rv.iter().map(|s| 100.0 * s * 252f64.sqrt()).collect();
    Ok(json!({
        "dates": frame.dates().iter().map(|d| d.to_string()).collect::<Vec<_>>(),
        "level": level,
        "rv": annualized,
        "rv_offset": RV_WINDOW,
    }))
}

/// Credit VIX from whitespace- or comma-separated `K P dK` triples, one
/// strike per line.
#[wasm_bindgen]
pub fn credit_vix(k0: f64, cdsi: f64, t: f64, rpv01: f64, rows: &str) -> String {
    respond(credit_vix_value(k0, cdsi, t, rpv01, rows))
}

fn credit_vix_value(k0: f64, cdsi: f64, t: f64, rpv01: f64, rows: &str) -> ivlab::Result<Value> {
    let mut inputs = CreditVixInputs {
        strikes: Vec::new(),
        prices: Vec::new(),
        intervals: Vec::new(),
        k0,
        cdsi,
        t,
        rpv01,
    };
    for (i, line) in rows.lines().enumerate() {
        let cells: Vec<&str> = line.split([',', ' ', '\t']).filter(|c| !c.is_empty()).collect();
        if cells.is_empty() {
            continue;
        }
        let nums: Vec<f64> = cells.iter().filter_map(|c| c.parse().ok()).collect();
        if cells.len() != 3 || nums.len() != 3 {
            return Err(ivlab::Error::Parse {
                line: i + 1,
                message: "expected three numbers `K P dK`".into(),
            });
        }
        inputs.strikes.push(nums[0]);
        inputs.prices.push(nums[1]);
        inputs.intervals.push(nums[2]);
    }
    let terms = inputs.terms()?;
    let variance = terms.variance();
    Ok(json!({
        "price_term": terms.price_term,
        "correction": terms.correction,
        "variance": variance,
        "vol": if variance >= 0.0 { Some(variance.sqrt()) } else { None },
    }))
}

/// Fits boosted trees to a noisy sine on [0, 1] and evaluates on
/// [-span, 1 + span]; outside the data the curve is flat and stays inside
/// the model's leaf-sum bounds.
#[wasm_bindgen]
pub fn gbdt_extrapolation(seed: u32, rounds: u32, span: f64) -> String {
    respond(gbdt_value(seed as u64, rounds as usize, span))
}

fn gbdt_value(seed: u64, rounds: usize, span: f64) -> ivlab::Result<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 80;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| (std::f64::consts::TAU * x).sin() + rng.random_range(-0.15..0.15))
        .collect();
    let params = GbdtParams {
        learning_rate: 0.1,
        min_gain_to_split: 0.0,
        num_leaves: 8,
        min_data_in_leaf: 3,
        feature_fraction: 1.0,
        bagging_fraction: 1.0,
        bagging_freq: 0,
        rounds: rounds.clamp(1, 500),
        seed,
        ..GbdtParams::default()
    };
    let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
    let model = fit_gbdt(&rows, &ys, &params)?;
    let span = span.clamp(0.0, 20.0);
    let grid: Vec<f64> = (0..=400).map(|i| -span + (1.0 + 2.0 * span) * i as f64 / 400.0).collect();
    let pred = grid.iter().map(|x| model.predict(&[*x])).collect::<ivlab::Result<Vec<_>>>()?;
    let (lo, hi) = model.output_bounds();
    Ok(json!({
        "train_x": xs,
        "train_y": ys,
        "grid": grid,
        "pred": pred,
        "bounds": [lo, hi],
    }))
}
