//! Implied-volatility forecasting laboratory.
//!
//! Feature engineering for daily index series, three regressor families
//! (kernel SVR, leaf-wise gradient boosting, a convolution/attention/GRU
//! network), a per-prediction batch walk-forward protocol and forecast
//! comparison statistics.

pub mod config;
pub mod creditvix;
pub mod data;
pub mod error;
pub mod features;
pub mod gbdt;
pub mod metrics;
pub mod models;
pub mod net;
pub mod pipeline;
pub mod plot;
pub mod record;
pub mod report;
pub mod seed;
pub mod select;
pub mod svr;
pub mod tree;
pub mod walkforward;

pub use error::{Error, Result};
