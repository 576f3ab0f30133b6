//! End-to-end run: ingest, engineer, rank features, walk forward for every
//! (model, window) pair, then write records, reports and the manifest.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::config::{Provenance, RunConfig};
use crate::data::{align, generate_synthetic, load_csv, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::features::{engineer, FeatureMatrix};
use crate::models::{Learner, ModelLearner};
use crate::record::save_records;
use crate::report::{record_file_name, report_dir};
use crate::select::{rf_importance, select_top_k, ImportanceReport};
use crate::walkforward::{run_rows, ExperimentData, Schedule};

pub const MANIFEST: &str = "manifest.toml";
pub const SEED_RULE: &str =
    "task seed = splitmix64 chain over (root seed, fnv1a(model name), window, days since 0001-01-01 of the test date)";

pub fn load_frame(cfg: &RunConfig) -> Result<TimeSeriesFrame> {
    match &cfg.data.synthetic {
        Some(s) => generate_synthetic(s.seed.unwrap_or(cfg.seed), s.days, s.series),
        None => {
            let frames = cfg
                .data
                .paths
                .iter()
                .map(|p| load_csv(p).map_err(|e| e.with_context(p.display().to_string())))
                .collect::<Result<Vec<_>>>()?;
            align(&frames)
        }
    }
}

/// Engineered features (target excluded, zero-variance columns dropped),
/// the target's levels on the feature dates, and the dropped names.
pub struct Prepared {
    pub matrix: FeatureMatrix,
    pub levels: Vec<f64>,
    pub dropped: Vec<String>,
}

pub fn prepare(cfg: &RunConfig, frame: &TimeSeriesFrame) -> Result<Prepared> {
    let (target, rest) = frame.split_column(&cfg.data.target)?;
    if rest.columns().is_empty() {
        return Err(Error::argument("no feature columns besides the target"));
    }
    let volumes = cfg.volume_columns(rest.column_names());
    let full = engineer(&rest, &volumes)?;
    let dropped = full.zero_variance();
    let keep: Vec<String> = full.names().into_iter().filter(|n| !dropped.contains(n)).collect();
    let matrix = full.select(&keep)?;
    let offset = frame.len() - matrix.len();
    Ok(Prepared {
        levels: target[offset..].to_vec(),
        matrix,
        dropped,
    })
}

/// Target-date rows to forecast: the test partition, or the last `horizon`.
pub fn test_rows(cfg: &RunConfig, data: &ExperimentData) -> Result<Vec<usize>> {
    let rows: Vec<usize> = match &cfg.partitions.test {
        Some(t) => data.rows_between(t.start, t.end),
        None => (data.len().saturating_sub(cfg.horizon)..data.len()).collect(),
    };
    if rows.is_empty() {
        return Err(Error::argument("the test partition contains no forecastable dates"));
    }
    Ok(rows)
}

/// Feature ranking on rows whose next-step target is dated before `cutoff`
/// (and inside the selection partition when one is configured).
pub fn rank_features(cfg: &RunConfig, prepared: &Prepared, cutoff: NaiveDate) -> Result<ImportanceReport> {
    let m = &prepared.matrix;
    let dates = &m.dates;
    let rows: Vec<usize> = (0..m.len().saturating_sub(1))
        .filter(|&i| dates[i + 1] < cutoff)
        .filter(|&i| {
            cfg.partitions
                .selection
                .as_ref()
                .is_none_or(|s| (s.start..=s.end).contains(&dates[i]) && dates[i + 1] <= s.end)
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::argument("no rows available for feature selection"));
    }
    let sub = FeatureMatrix {
        dates: rows.iter().map(|&i| dates[i]).collect(),
        columns: m
            .columns
            .iter()
            .map(|(n, v)| (n.clone(), rows.iter().map(|&i| v[i]).collect()))
            .collect(),
    };
    let y: Vec<f64> = rows
        .iter()
        .map(|&i| prepared.levels[i + 1].ln() - prepared.levels[i].ln())
        .collect();
    rf_importance(&sub, &y, cfg.selection.n_splits, cfg.selection.n_trees, cfg.seed)
}

/// First test date for `cfg`; selection only ever sees rows before it.
pub fn first_test_date(cfg: &RunConfig, prepared: &Prepared) -> Result<NaiveDate> {
    let probe = ExperimentData::new(&prepared.matrix, &prepared.levels, cfg.seq_len)?;
    Ok(probe.date(test_rows(cfg, &probe)?[0]))
}

/// Feature ranking exactly as `run` computes it.
pub fn select(cfg: &RunConfig) -> Result<ImportanceReport> {
    cfg.validate()?;
    let prepared = prepare(cfg, &load_frame(cfg)?)?;
    let cutoff = first_test_date(cfg, &prepared)?;
    rank_features(cfg, &prepared, cutoff)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output: PathBuf,
    pub record_files: Vec<String>,
    pub selected: Vec<String>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Executes a full run into `cfg.output`. On failure the manifest is still
/// written, with status `incomplete` and the error message.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out = cfg.output.clone();
    std::fs::create_dir_all(out.join("records")).map_err(|e| Error::io(&out, e))?;
    let mut provenance = Provenance {
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: "incomplete".into(),
        seed_rule: SEED_RULE.into(),
        ..Provenance::default()
    };
    let result = run_inner(cfg, &out, &mut provenance);
    if let Err(e) = &result {
        provenance.error = Some(e.to_string());
    } else {
        provenance.status = "complete".into();
    }
    let mut manifest = cfg.resolved();
    manifest.provenance = Some(provenance);
    write(&out.join(MANIFEST), &manifest.to_toml()?)?;
    result
}

fn run_inner(cfg: &RunConfig, out: &Path, prov: &mut Provenance) -> Result<RunSummary> {
    let frame = load_frame(cfg)?;
    let prepared = prepare(cfg, &frame)?;
    prov.dropped_features = prepared.dropped.clone();

    // test dates are fixed before any selection so ranking never sees them
    let probe = ExperimentData::new(&prepared.matrix, &prepared.levels, cfg.seq_len)?;
    let rows = test_rows(cfg, &probe)?;
    let first_test = probe.date(rows[0]);
    prov.first_test_date = Some(first_test);
    prov.last_test_date = Some(probe.date(*rows.last().unwrap()));

    let selected = match &cfg.selection.features {
        Some(f) => f.clone(),
        None => {
            let report = rank_features(cfg, &prepared, first_test)?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            write(&out.join("importance.csv"), &String::from_utf8_lossy(&buf))?;
            select_top_k(&report, cfg.selection.top_k.min(report.features.len()))?
        }
    };
    prov.selected_features = selected.clone();
    let matrix = prepared.matrix.select(&selected)?;
    let data = ExperimentData::new(&matrix, &prepared.levels, cfg.seq_len)?;

    let mut files = Vec::new();
    for &window in &cfg.windows {
        for &kind in &cfg.models {
            let mut learner = ModelLearner::new(kind, &cfg.overrides(kind))?;
            learner.gbdt_base = cfg.boosting.base();
            let records = run_rows(&data, &learner as &dyn Learner, window, &rows, cfg.seed, Schedule::Parallel)?;
            let name = record_file_name(kind.as_str(), window);
            save_records(out.join("records").join(&name), &records)?;
            files.push(name.clone());
            prov.record_files.push(name);
        }
    }
    report_dir(out, &files, cfg.dm.loss, cfg.dm.horizon)?;
    Ok(RunSummary {
        output: out.to_path_buf(),
        record_files: files,
        selected,
    })
}

/// Record files a manifest says a run produced.
pub fn expected_records(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let cfg = RunConfig::load(&path)?;
    Ok(cfg
        .windows
        .iter()
        .flat_map(|w| cfg.models.iter().map(move |k| record_file_name(k.as_str(), *w)))
        .collect())
}
