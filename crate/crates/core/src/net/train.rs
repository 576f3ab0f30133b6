use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{backward, forward, predict};
use super::{NetConfig, NetParams};
use crate::error::{Error, Result};
use crate::features::SequencedDataset;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: NetParams,
    v: NetParams,
}

impl Adam {
    pub fn new(params: &NetParams, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut NetParams, grads: &NetParams) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.m.tensors.iter_mut().zip(self.v.tensors.iter_mut()))
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut NetParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

pub fn mae_loss(pred: &[f64], targets: &[f64]) -> f64 {
    pred.iter()
        .zip(targets)
        .map(|(p, y)| (p - y).abs())
        .sum::<f64>()
        / pred.len().max(1) as f64
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MAE.
    pub params: NetParams,
    /// 1-based epoch of `params`.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_history: Vec<f64>,
}

fn blocks_of(ds: &SequencedDataset) -> Vec<&[f64]> {
    (0..ds.len()).map(|i| ds.flat(i)).collect()
}

pub fn train(
    cfg: &NetConfig,
    train_set: &SequencedDataset,
    val_set: Option<&SequencedDataset>,
) -> Result<TrainOutcome> {
    train_with_observer(cfg, train_set, val_set, |_, _, _| {})
}

/// Training loop; `observer(epoch, val_mae, params)` runs after every epoch.
pub fn train_with_observer(
    cfg: &NetConfig,
    train_set: &SequencedDataset,
    val_set: Option<&SequencedDataset>,
    mut observer: impl FnMut(usize, f64, &NetParams),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.n_features() != cfg.n_features {
        return Err(Error::argument(format!(
            "network expects {} features, dataset has {}",
            cfg.n_features,
            train_set.n_features()
        )));
    }
    let (fit, held_out);
    let (fit_set, val_set) = match val_set {
        Some(v) => (train_set, v),
        None => {
            let n = train_set.len();
            if n < 2 {
                return Err(Error::argument("need at least 2 rows to hold out validation"));
            }
            let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
            fit = train_set.slice(0..n - n_val);
            held_out = train_set.slice(n - n_val..n);
            (&fit, &held_out)
        }
    };
    if fit_set.is_empty() || val_set.is_empty() {
        return Err(Error::argument("training and validation sets must be non-empty"));
    }
    let steps = fit_set.seq_len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetParams::init(cfg, rng.random());
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let val_blocks = blocks_of(val_set);
    let mut order: Vec<usize> = (0..fit_set.len()).collect();

    let mut best: Option<(f64, usize, NetParams)> = None;
    let mut since_best = 0;
    let mut val_history = Vec::new();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let blocks: Vec<&[f64]> = chunk.iter().map(|&i| fit_set.flat(i)).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| fit_set.targets()[i]).collect();
            let (_, trace) = forward(&params, cfg, &blocks, steps, true, rng.random())?;
            let (loss, mut grads) = backward(&params, cfg, &trace, &blocks, &targets)?;
            if !loss.is_finite() {
                return Err(Error::numeric("loss", format!("non-finite training loss at epoch {epoch}")));
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.update(&mut params, &grads);
            if !params.all_finite() {
                return Err(Error::numeric("optimizer", format!("non-finite parameters at epoch {epoch}")));
            }
        }
        epochs_run = epoch;
        let val_pred = predict(&params, cfg, &val_blocks, steps)?;
        let val_mae = mae_loss(&val_pred, val_set.targets());
        if !val_mae.is_finite() {
            return Err(Error::numeric("validation", "non-finite validation loss"));
        }
        val_history.push(val_mae);
        observer(epoch, val_mae, &params);
        if best.as_ref().map_or(true, |(b, _, _)| val_mae < *b) {
            best = Some((val_mae, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.ok_or_else(|| Error::argument("zero epochs configured"))?;
    Ok(TrainOutcome {
        params,
        best_epoch,
        epochs_run,
        val_history,
    })
}
