//! Implied variance of a credit index from an option chain on its spread.
//!
//! Strikes and spreads are in basis points, the horizon in years:
//!
//! ```text
//! sigma^2 = 2 / (T * RPV01) * sum P(K) dK / K^2  -  (CDSI / K0 - 1)^2 / T
//! ```

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditVixInputs {
    pub strikes: Vec<f64>,
    pub prices: Vec<f64>,
    pub intervals: Vec<f64>,
    pub k0: f64,
    pub cdsi: f64,
    pub t: f64,
    pub rpv01: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VixTerms {
    pub price_term: f64,
    pub correction: f64,
}

impl VixTerms {
    pub fn variance(&self) -> f64 {
        self.price_term - self.correction
    }
}

impl CreditVixInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) || !(self.rpv01 > 0.0) {
            return Err(Error::argument(format!(
                "T and RPV01 must be positive (T = {}, RPV01 = {})",
                self.t, self.rpv01
            )));
        }
        if !(self.k0 > 0.0) || !(self.cdsi > 0.0) {
            return Err(Error::argument("K0 and CDSI must be positive"));
        }
        let n = self.strikes.len();
        if self.prices.len() != n || self.intervals.len() != n {
            return Err(Error::argument(format!(
                "chain arrays differ in length (K {n}, P {}, dK {})",
                self.prices.len(),
                self.intervals.len()
            )));
        }
        if self.strikes.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(Error::argument("strikes must be positive"));
        }
        if self.strikes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::argument("strikes must be strictly increasing"));
        }
        if self.prices.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::argument("option prices must be nonnegative"));
        }
        if self.intervals.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::argument("strike intervals must be positive"));
        }
        Ok(())
    }

    /// The two terms of the variance, before the sign guard.
    pub fn terms(&self) -> Result<VixTerms> {
        self.validate()?;
        let sum = price_sum(&self.strikes, &self.prices, &self.intervals);
        Ok(VixTerms {
            price_term: 2.0 / (self.t * self.rpv01) * sum,
            correction: (self.cdsi / self.k0 - 1.0).powi(2) / self.t,
        })
    }
}

/// `sum P(K) dK / K^2`, unvalidated. Rows are independent, so repeated
/// strikes are allowed here even though a chain rejects them.
pub fn price_sum(strikes: &[f64], prices: &[f64], intervals: &[f64]) -> f64 {
    strikes
        .iter()
        .zip(prices)
        .zip(intervals)
        .map(|((k, p), dk)| p * dk / (k * k))
        .sum()
}

pub fn implied_variance(inputs: &CreditVixInputs) -> Result<f64> {
    let terms = inputs.terms()?;
    let variance = terms.variance();
    if variance < 0.0 {
        return Err(Error::NegativeVariance {
            variance,
            price_term: terms.price_term,
            correction: terms.correction,
        });
    }
    Ok(variance)
}

pub fn implied_vol(inputs: &CreditVixInputs) -> Result<f64> {
    implied_variance(inputs).map(f64::sqrt)
}

/// Option-chain CSV: a header block of `key,value` lines for `K0`, `CDSI`,
/// `T` and `RPV01` (any order), then a `K,P,dK` header and one row per strike.
/// Blank lines and lines starting with `#` are ignored.
pub fn read_chain<R: Read>(mut reader: R) -> Result<CreditVixInputs> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::io("<chain>", e))?;
    let (mut k0, mut cdsi, mut t, mut rpv01) = (None, None, None, None);
    let mut in_rows = false;
    let (mut strikes, mut prices, mut intervals) = (Vec::new(), Vec::new(), Vec::new());
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let err = |message: String| Error::Parse { line, message };
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| err(format!("`{s}` is not a number")))
        };
        if !in_rows {
            if cells == ["K", "P", "dK"] {
                in_rows = true;
                continue;
            }
            if cells.len() != 2 {
                return Err(err("expected `key,value` or the `K,P,dK` header".into()));
            }
            let v = num(cells[1])?;
            let slot = match cells[0] {
                "K0" => &mut k0,
                "CDSI" => &mut cdsi,
                "T" => &mut t,
                "RPV01" => &mut rpv01,
                other => return Err(err(format!("unknown key `{other}`"))),
            };
            if slot.replace(v).is_some() {
                return Err(err(format!("duplicate key `{}`", cells[0])));
            }
        } else {
            if cells.len() != 3 {
                return Err(err(format!("expected 3 cells, found {}", cells.len())));
            }
            strikes.push(num(cells[0])?);
            prices.push(num(cells[1])?);
            intervals.push(num(cells[2])?);
        }
    }
    let missing = |k: &str| Error::Parse {
        line: 0,
        message: format!("missing header key `{k}`"),
    };
    if !in_rows {
        return Err(Error::EmptyInput("chain has no `K,P,dK` section".into()));
    }
    let inputs = CreditVixInputs {
        strikes,
        prices,
        intervals,
        k0: k0.ok_or_else(|| missing("K0"))?,
        cdsi: cdsi.ok_or_else(|| missing("CDSI"))?,
        t: t.ok_or_else(|| missing("T"))?,
        rpv01: rpv01.ok_or_else(|| missing("RPV01"))?,
    };
    Ok(inputs)
}

pub fn load_chain(path: impl AsRef<Path>) -> Result<CreditVixInputs> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_chain(file)
}
