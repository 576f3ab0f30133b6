//! Combined metric tables over a directory of forecast record files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, dm_test_with, DmResult, LossKind, MetricTable};
use crate::record::{load_records, ForecastRecord};

pub const NAIVE: &str = "naive";

/// One model/window row of the combined table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub window: usize,
    pub metrics: MetricTable,
    /// Against the naive forecasts of the same window; `Err` holds the
    /// reason when the test could not be run.
    pub dm: std::result::Result<DmResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Over the union of forecast dates.
    pub actual: MetricTable,
}

/// `<model>_w<window>.csv`
pub fn record_file_name(model: &str, window: usize) -> String {
    format!("{model}_w{window}.csv")
}

/// Record files in `dir` (or `dir/records` when present), sorted by name.
pub fn record_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let records = dir.join("records");
    let dir = if records.is_dir() { records } else { dir.to_path_buf() };
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every record file; `expected` names files that must be present.
pub fn load_record_sets(dir: &Path, expected: &[String]) -> Result<Vec<(String, Vec<ForecastRecord>)>> {
    let files = record_files(dir)?;
    let names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let missing: Vec<&String> = expected.iter().filter(|e| !names.contains(e)).collect();
    if !missing.is_empty() {
        return Err(Error::Report(format!(
            "missing record files: {}",
            missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    if files.is_empty() {
        return Err(Error::Report(format!("no record files in {}", dir.display())));
    }
    let mut sets = Vec::new();
    let mut empty = Vec::new();
    for (path, name) in files.iter().zip(names) {
        let recs = load_records(path)?;
        if recs.is_empty() {
            empty.push(name);
        } else {
            sets.push((name, recs));
        }
    }
    if !empty.is_empty() {
        return Err(Error::Report(format!("record files without rows: {}", empty.join(", "))));
    }
    Ok(sets)
}

pub fn build_report(sets: &[(String, Vec<ForecastRecord>)], loss: LossKind, dm_horizon: usize) -> Result<Report> {
    if sets.is_empty() {
        return Err(Error::Report("no records to report".into()));
    }
    let mut by_key: BTreeMap<(usize, String), &Vec<ForecastRecord>> = BTreeMap::new();
    for (name, recs) in sets {
        let first = &recs[0];
        if recs.iter().any(|r| r.model != first.model || r.window != first.window) {
            return Err(Error::Report(format!("{name} mixes models or windows")));
        }
        if by_key.insert((first.window, first.model.clone()), recs).is_some() {
            return Err(Error::Report(format!(
                "{} W={} appears in more than one file",
                first.model, first.window
            )));
        }
    }
    let mut rows = Vec::new();
    for ((window, model), recs) in &by_key {
        let metrics = compute_metrics(recs)?;
        let dm = match by_key.get(&(*window, NAIVE.to_string())) {
            _ if model == NAIVE => Err("baseline".to_string()),
            None => Err("no naive forecasts for this window".to_string()),
            Some(naive) => dm_against(recs, naive, loss, dm_horizon),
        };
        rows.push(ReportRow {
            model: model.clone(),
            window: *window,
            metrics,
            dm,
        });
    }
    let mut actual: BTreeMap<chrono::NaiveDate, ForecastRecord> = BTreeMap::new();
    for recs in by_key.values() {
        for r in recs.iter() {
            actual.entry(r.date).or_insert_with(|| r.clone());
        }
    }
    let union: Vec<ForecastRecord> = actual
        .into_values()
        .map(|mut r| {
            r.pred_level = r.actual_level;
            r.pred_logdiff = r.actual_logdiff;
            r
        })
        .collect();
    Ok(Report {
        rows,
        actual: compute_metrics(&union)?,
    })
}

fn dm_against(
    recs: &[ForecastRecord],
    naive: &[ForecastRecord],
    loss: LossKind,
    h: usize,
) -> std::result::Result<DmResult, String> {
    let lookup: BTreeMap<_, _> = naive.iter().map(|r| (r.date, r)).collect();
    let mut e1 = Vec::new();
    let mut e2 = Vec::new();
    for r in recs {
        match lookup.get(&r.date) {
            Some(n) => {
                e1.push(r.logdiff_error());
                e2.push(n.logdiff_error());
            }
            None => return Err(format!("naive has no forecast for {}", r.date)),
        }
    }
    dm_test_with(&e1, &e2, h, loss).map_err(|e| e.to_string())
}

fn f3(v: f64) -> String {
    format!("{v:.3}")
}

impl Report {
    /// Full-precision values; `dm_note` explains missing DM cells.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model", "window", "n", "mae", "rmse", "mape", "log_loss_x100", "dm_stat", "dm_p", "dm_note",
        ])?;
        for r in &self.rows {
            let m = &r.metrics;
            let (stat, p, note) = match &r.dm {
                Ok(d) => (d.statistic.to_string(), d.p_value.to_string(), String::new()),
                Err(e) => (String::new(), String::new(), e.clone()),
            };
            w.write_record([
                r.model.clone(),
                r.window.to_string(),
                m.n.to_string(),
                m.mae.to_string(),
                m.rmse.to_string(),
                m.mape.to_string(),
                m.log_loss.to_string(),
                stat,
                p,
                note,
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Aligned plain text, rounded to 3 decimals.
    pub fn to_text(&self) -> String {
        let a = &self.actual;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Actual levels: n = {}, range {} - {}, coefficient of variation {}%",
            a.n,
            f3(a.actual_min),
            f3(a.actual_max),
            f3(a.cov)
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "Log-differences");
        let header = ["Model", "Window", "MAE", "RMSE", "DM stat", "DM p"];
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let (s, p) = match &r.dm {
                    Ok(d) => (f3(d.statistic), f3(d.p_value)),
                    Err(_) => ("-".into(), "-".into()),
                };
                vec![r.model.clone(), r.window.to_string(), f3(r.metrics.mae), f3(r.metrics.rmse), s, p]
            })
            .collect();
        table(&mut out, &header, &body);
        let _ = writeln!(out);
        let _ = writeln!(out, "Index levels (log loss x 10^2)");
        let header = ["Model", "Window", "MAPE", "Log loss"];
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![r.model.clone(), r.window.to_string(), f3(r.metrics.mape), f3(r.metrics.log_loss)]
            })
            .collect();
        table(&mut out, &header, &body);
        out
    }
}

fn table(out: &mut String, header: &[&str], body: &[Vec<String>]) {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let _ = writeln!(out, "{}", line(header.to_vec()));
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for row in body {
        let _ = writeln!(out, "{}", line(row.iter().map(String::as_str).collect()));
    }
}

/// Reads records under `dir` and writes `report.csv` and `report.txt` there.
pub fn report_dir(dir: &Path, expected: &[String], loss: LossKind, dm_horizon: usize) -> Result<Report> {
    let sets = load_record_sets(dir, expected)?;
    let report = build_report(&sets, loss, dm_horizon)?;
    let write = |name: &str, text: &str| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    };
    write("report.csv", &report.to_csv()?)?;
    write("report.txt", &report.to_text())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn recs(model: &str, errs: &[f64]) -> Vec<ForecastRecord> {
        errs.iter()
            .enumerate()
            .map(|(i, e)| ForecastRecord {
                date: NaiveDate::from_ymd_opt(2024, 5, 14).unwrap() + chrono::Duration::days(i as i64),
                actual_logdiff: 0.01 * i as f64,
                pred_logdiff: 0.01 * i as f64 + e,
                actual_level: 30.0 + i as f64,
                pred_level: (30.0 + i as f64) * e.exp(),
                model: model.into(),
                window: 63,
                params: String::new(),
                val_mae: None,
            })
            .collect()
    }

    #[test]
    fn single_model_gives_one_row() {
        let sets = vec![("svr_w63.csv".to_string(), recs("svr", &[0.1, -0.1]))];
        let r = build_report(&sets, LossKind::Squared, 1).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.rows[0].dm.is_err());
        assert!((r.rows[0].metrics.mae - 0.1).abs() < 1e-12);
    }

    #[test]
    fn dm_against_naive_and_text_layout() {
        let a = [0.1, -0.2, 0.05, 0.3, -0.1, 0.0, 0.2, -0.05, 0.1];
        let b = [0.2, -0.1, 0.15, 0.1, -0.3, 0.1, 0.1, -0.25, 0.05];
        let sets = vec![
            ("naive_w63.csv".to_string(), recs("naive", &b)),
            ("svr_w63.csv".to_string(), recs("svr", &a)),
        ];
        let r = build_report(&sets, LossKind::Squared, 1).unwrap();
        let svr = r.rows.iter().find(|x| x.model == "svr").unwrap();
        let direct = crate::metrics::dm_test(&a, &b, 1).unwrap();
        let got = svr.dm.as_ref().unwrap();
        // errors pass through f64 subtraction, so compare closely not exactly
        assert!((got.statistic - direct.statistic).abs() < 1e-9);
        let text = r.to_text();
        assert!(text.starts_with("Actual levels: n = 9, range 30.000 - 38.000"));
        assert!(text.contains(&format!("{:.3}", svr.metrics.mae)));
        let csv = r.to_csv().unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("naive,63,9,"));
    }

    #[test]
    fn empty_or_incomplete_dirs_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_record_sets(dir.path(), &[]), Err(Error::Report(_))));
        crate::record::save_records(dir.path().join("svr_w63.csv"), &recs("svr", &[0.1])).unwrap();
        let err = load_record_sets(dir.path(), &["gbdt_w63.csv".to_string()]).unwrap_err();
        assert!(err.to_string().contains("gbdt_w63.csv"));
        assert_eq!(load_record_sets(dir.path(), &[]).unwrap().len(), 1);
    }
}
