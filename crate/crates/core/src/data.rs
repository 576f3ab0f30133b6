//! Daily time-series ingestion: CSV loading, multi-source alignment,
//! date partitions and a seeded synthetic market generator.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Date-indexed named columns of daily observations.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    dates: Vec<NaiveDate>,
    columns: Vec<(String, Vec<f64>)>,
}

impl TimeSeriesFrame {
    /// Builds a frame, checking every invariant: strictly increasing dates,
    /// equal column lengths, unique names and finite values.
    pub fn new(dates: Vec<NaiveDate>, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Integrity("dates must be strictly increasing".into()));
        }
        let mut seen = HashSet::new();
        for (name, values) in &columns {
            if !seen.insert(name.as_str()) {
                return Err(Error::Integrity(format!("duplicate column `{name}`")));
            }
            if values.len() != dates.len() {
                return Err(Error::Integrity(format!(
                    "column `{name}` has {} values for {} dates",
                    values.len(),
                    dates.len()
                )));
            }
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!(
                    "column `{name}` has a non-finite value at {}",
                    dates[i]
                )));
            }
        }
        Ok(Self { dates, columns })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn columns(&self) -> &[(String, Vec<f64>)] {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// Returns a copy with `name` removed; the column values are returned alongside.
    pub fn split_column(&self, name: &str) -> Result<(Vec<f64>, TimeSeriesFrame)> {
        let values = self
            .column(name)
            .ok_or_else(|| Error::argument(format!("unknown column `{name}`")))?
            .to_vec();
        let rest = self
            .columns
            .iter()
            .filter(|(n, _)| n != name)
            .cloned()
            .collect();
        Ok((
            values,
            TimeSeriesFrame {
                dates: self.dates.clone(),
                columns: rest,
            },
        ))
    }

    /// Applies `f(date, column, value)` to every cell, returning a new frame.
    pub fn map_values(&self, mut f: impl FnMut(NaiveDate, &str, f64) -> f64) -> Result<Self> {
        let columns = self
            .columns
            .iter()
            .map(|(name, values)| {
                let mapped = self
                    .dates
                    .iter()
                    .zip(values)
                    .map(|(&d, &v)| f(d, name, v))
                    .collect();
                (name.clone(), mapped)
            })
            .collect();
        Self::new(self.dates.clone(), columns)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        w.write_record(&header)?;
        for (i, d) in self.dates.iter().enumerate() {
            let mut row = vec![d.format("%Y-%m-%d").to_string()];
            row.extend(self.columns.iter().map(|(_, v)| format!("{}", v[i])));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Named inclusive date range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub name: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl PartitionSpec {
    pub fn new(name: impl Into<String>, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::argument(format!(
                "partition start {start} is after end {end}"
            )));
        }
        Ok(Self {
            name: name.into(),
            start,
            end,
        })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

/// Parses `date,<name>...` CSV text. Rows may arrive in any order.
pub fn read_csv<R: Read>(reader: R) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(Error::EmptyInput("CSV file has no header row".into())),
        Some(h) => h?,
    };
    if header.get(0).map(|h| h.to_ascii_lowercase()) != Some("date".into()) {
        return Err(Error::Parse {
            line: 1,
            message: "first header cell must be `date`".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no value columns".into(),
        });
    }

    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for (idx, rec) in records.enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != names.len() + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} cells, found {}", names.len() + 1, rec.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{}`: {e}", &rec[0]),
        })?;
        let mut values = Vec::with_capacity(names.len());
        for (cell, name) in rec.iter().skip(1).zip(&names) {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric value `{cell}` in column `{name}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite value in column `{name}`"),
                });
            }
            values.push(v);
        }
        rows.push((date, values));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("CSV file has no data rows".into()));
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Integrity(format!("duplicate date {}", w[0].0)));
    }
    let dates = rows.iter().map(|(d, _)| *d).collect();
    let columns = names
        .into_iter()
        .enumerate()
        .map(|(j, n)| (n, rows.iter().map(|(_, v)| v[j]).collect()))
        .collect();
    TimeSeriesFrame::new(dates, columns)
}

/// Joins frames on the dates they share in their common span.
///
/// The output calendar is every date of any input that lies inside the
/// overlap of all date ranges. A frame lacking a date takes its last earlier
/// observation (forward fill); leading rows that cannot be filled are dropped.
pub fn align(frames: &[TimeSeriesFrame]) -> Result<TimeSeriesFrame> {
    if frames.is_empty() {
        return Err(Error::argument("align needs at least one frame"));
    }
    if let Some(f) = frames.iter().find(|f| f.is_empty()) {
        let names: Vec<_> = f.column_names().collect();
        return Err(Error::Alignment(format!("frame {names:?} has no dates")));
    }
    let lo = frames.iter().map(|f| f.dates[0]).max().unwrap();
    let hi = frames.iter().map(|f| *f.dates.last().unwrap()).min().unwrap();
    if lo > hi {
        return Err(Error::Alignment(format!(
            "date ranges do not overlap (latest start {lo}, earliest end {hi})"
        )));
    }
    let calendar: BTreeSet<NaiveDate> = frames
        .iter()
        .flat_map(|f| f.dates.iter().copied())
        .filter(|d| (lo..=hi).contains(d))
        .collect();
    let calendar: Vec<NaiveDate> = calendar.into_iter().collect();

    let mut columns: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for frame in frames {
        for (name, values) in &frame.columns {
            let mut out = Vec::with_capacity(calendar.len());
            let mut cursor = 0usize;
            let mut last: Option<f64> = None;
            for d in &calendar {
                while cursor < frame.dates.len() && frame.dates[cursor] <= *d {
                    last = Some(values[cursor]);
                    cursor += 1;
                }
                out.push(last);
            }
            columns.push((name.clone(), out));
        }
    }
    let first_full = (0..calendar.len())
        .find(|&i| columns.iter().all(|(_, v)| v[i].is_some()))
        .ok_or_else(|| Error::Alignment("no date has values for every column".into()))?;
    let dates = calendar[first_full..].to_vec();
    let columns = columns
        .into_iter()
        .map(|(n, v)| (n, v[first_full..].iter().map(|x| x.unwrap()).collect()))
        .collect();
    TimeSeriesFrame::new(dates, columns)
}

pub fn partition(frame: &TimeSeriesFrame, spec: &PartitionSpec) -> Result<TimeSeriesFrame> {
    let idx: Vec<usize> = (0..frame.len())
        .filter(|&i| spec.contains(frame.dates[i]))
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyPartition {
            name: spec.name.clone(),
            start: spec.start,
            end: spec.end,
        });
    }
    let dates = idx.iter().map(|&i| frame.dates[i]).collect();
    let columns = frame
        .columns
        .iter()
        .map(|(n, v)| (n.clone(), idx.iter().map(|&i| v[i]).collect()))
        .collect();
    Ok(TimeSeriesFrame { dates, columns })
}

/// Monday-to-Friday calendar of `n` dates starting at the first business day
/// on or after `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

pub const SYNTHETIC_TARGET: &str = "vol_index";
pub const VOLUME_SUFFIX: &str = "_volume";

/// Seeded synthetic market.
///
/// `vol_index` follows an exponentiated AR(1) in logs with occasional upward
/// jumps. Each of the `n_series` assets gets a price column `asset_<i>` whose
/// daily volatility tracks the index, and a volume column `asset_<i>_volume`
/// that rises with absolute returns.
pub fn generate_synthetic(seed: u64, n_days: usize, n_series: usize) -> Result<TimeSeriesFrame> {
    if n_days < 2 {
        return Err(Error::argument(format!(
            "n_days must be at least 2, got {n_days}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mean_log = 20f64.ln();
    let phi = 0.97;
    let shock = 0.055;
    let jump_prob = 0.02;

    let mut log_vol = mean_log;
    let mut vol = Vec::with_capacity(n_days);
    for _ in 0..n_days {
        let mut innovation = shock * std_normal.sample(&mut rng);
        if rng.random::<f64>() < jump_prob {
            innovation += 0.15 + 0.15 * rng.random::<f64>();
        }
        log_vol = mean_log + phi * (log_vol - mean_log) + innovation;
        vol.push(log_vol.exp());
    }

    let mut columns = vec![(SYNTHETIC_TARGET.to_string(), vol.clone())];
    for s in 0..n_series {
        let beta = 0.6 + 0.8 * rng.random::<f64>();
        let base_volume = 1e5 * (1.0 + 9.0 * rng.random::<f64>());
        let mut price = 50.0 + 100.0 * rng.random::<f64>();
        let mut idio = 0.0f64;
        let mut prices = Vec::with_capacity(n_days);
        let mut volumes = Vec::with_capacity(n_days);
        for v in &vol {
            // log-AR(1) idiosyncratic volatility factor on top of the index level
            idio = 0.9 * idio + 0.1 * std_normal.sample(&mut rng);
            let sigma = beta * v / 100.0 / 252f64.sqrt() * idio.exp();
            let ret = sigma * std_normal.sample(&mut rng) - 0.5 * sigma * sigma;
            price *= ret.exp();
            prices.push(price);
            let turnover = 1.0 + 40.0 * ret.abs() + 0.3 * std_normal.sample(&mut rng).abs();
            volumes.push((base_volume * turnover).round());
        }
        columns.push((format!("asset_{}", s + 1), prices));
        columns.push((format!("asset_{}{VOLUME_SUFFIX}", s + 1), volumes));
    }
    let start = NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date");
    TimeSeriesFrame::new(business_days(start, n_days), columns)
}
