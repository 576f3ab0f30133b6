//! Hybrid sequence regressor: dilated Conv1D, multi-head self-attention,
//! a second Conv1D with a residual sum and LayerNorm, a feed-forward
//! Add&Norm block, two bidirectional GRUs and a scalar head on the last
//! time step. Gradients are derived by hand (reverse mode) and checked
//! against finite differences in the tests.

mod model;
mod ops;
mod params;
mod train;

pub use model::{backward, forward, predict, ForwardTrace, SampleTrace};
pub use params::{NetParams, Tensor};
pub use train::{clip_global_norm, mae_loss, train, train_with_observer, Adam, TrainOutcome};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub n_features: usize,
    pub conv_channels: usize,
    pub kernel_width: usize,
    pub dilation: usize,
    pub heads: usize,
    pub head_size: usize,
    pub fc_width: usize,
    pub dropout: f64,
    pub gru1_units: usize,
    pub gru2_units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub clip_norm: f64,
    /// Fraction of the training rows held out (tail) when no validation set is given.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl NetConfig {
    /// The fixed production architecture for `n_features` inputs.
    pub fn standard(n_features: usize) -> Self {
        Self {
            n_features,
            conv_channels: 64,
            kernel_width: 3,
            dilation: 2,
            heads: 4,
            head_size: 16,
            fc_width: 64,
            dropout: 0.1,
            gru1_units: 64,
            gru2_units: 32,
            learning_rate: 0.07,
            epochs: 32,
            batch_size: 32,
            patience: 5,
            clip_norm: 1.0,
            validation_fraction: 0.2,
            seed: 0,
        }
    }

    /// A small configuration for gradient checks and quick tests.
    pub fn tiny(n_features: usize) -> Self {
        Self {
            conv_channels: 8,
            heads: 2,
            head_size: 4,
            fc_width: 8,
            gru1_units: 8,
            gru2_units: 4,
            ..Self::standard(n_features)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads * self.head_size != self.conv_channels {
            return Err(Error::argument(format!(
                "heads x head size ({} x {}) must equal conv channels {}",
                self.heads, self.head_size, self.conv_channels
            )));
        }
        if self.fc_width != self.conv_channels {
            return Err(Error::argument(
                "feed-forward width must equal conv channels for the residual sum",
            ));
        }
        if self.kernel_width % 2 == 0 {
            return Err(Error::argument("kernel width must be odd for same-length padding"));
        }
        if self.n_features == 0 || self.gru1_units == 0 || self.gru2_units == 0 {
            return Err(Error::argument("layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::argument("dropout rate must be in [0, 1)"));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::argument("batch size and learning rate must be positive"));
        }
        Ok(())
    }
}
