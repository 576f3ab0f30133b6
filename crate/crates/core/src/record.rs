//! One out-of-sample forecast and its CSV stream form.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORD_HEADER: [&str; 9] = [
    "date",
    "actual_logdiff",
    "pred_logdiff",
    "actual_level",
    "pred_level",
    "model",
    "window",
    "params",
    "val_mae",
];

/// `pred_level = previous actual level * exp(pred_logdiff)`.
///
/// `val_mae` is `None` when no grid selection took place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub date: NaiveDate,
    pub actual_logdiff: f64,
    pub pred_logdiff: f64,
    pub actual_level: f64,
    pub pred_level: f64,
    pub model: String,
    pub window: usize,
    pub params: String,
    pub val_mae: Option<f64>,
}

impl ForecastRecord {
    pub fn logdiff_error(&self) -> f64 {
        self.pred_logdiff - self.actual_logdiff
    }

    pub fn level_error(&self) -> f64 {
        self.pred_level - self.actual_level
    }
}

/// Floats are written in shortest round-trip form so a reread is bit-exact.
pub fn write_records<W: Write>(writer: W, records: &[ForecastRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.date.to_string(),
            r.actual_logdiff.to_string(),
            r.pred_logdiff.to_string(),
            r.actual_level.to_string(),
            r.pred_level.to_string(),
            r.model.clone(),
            r.window.to_string(),
            r.params.clone(),
            r.val_mae.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<records>", e))?;
    Ok(())
}

pub fn save_records(path: impl AsRef<Path>, records: &[ForecastRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(std::io::BufWriter::new(file), records)
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<ForecastRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RECORD_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", RECORD_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |field: &str| Error::Parse {
            line,
            message: format!("invalid {field}"),
        };
        let num = |k: usize| -> Result<f64> {
            row.get(k)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| bad(RECORD_HEADER[k]))
        };
        let date = row
            .get(0)
            .and_then(|s| NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok())
            .ok_or_else(|| bad("date"))?;
        let val_mae = match row.get(8).map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<f64>().map_err(|_| bad("val_mae"))?),
        };
        out.push(ForecastRecord {
            date,
            actual_logdiff: num(1)?,
            pred_logdiff: num(2)?,
            actual_level: num(3)?,
            pred_level: num(4)?,
            model: row.get(5).ok_or_else(|| bad("model"))?.to_string(),
            window: row
                .get(6)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad("window"))?,
            params: row.get(7).ok_or_else(|| bad("params"))?.to_string(),
            val_mae,
        });
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<ForecastRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file).map_err(|e| e.with_context(path.display().to_string()))
}
