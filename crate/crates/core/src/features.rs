//! Engineered feature matrix (levels, log-differences, 21-day realized
//! volatility), sequencing into overlapping windows, noise augmentation and
//! train-only standardization.

use std::io::Write;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::data::TimeSeriesFrame;
use crate::error::{Error, Result};

pub const RV_WINDOW: usize = 21;
pub const SUFFIX_LEVEL: &str = ".lvl";
pub const SUFFIX_LOGDIFF: &str = ".lnd";
pub const SUFFIX_RV: &str = ".rv21";

/// `ln(y[t+1]) - ln(y[t])` for every consecutive pair.
pub fn log_diff(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::argument(format!(
            "log_diff needs at least 2 values, got {}",
            series.len()
        )));
    }
    if let Some((i, v)) = series.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::domain(format!(
            "log_diff needs positive values, found {v} at position {i}"
        )));
    }
    Ok(series.windows(2).map(|w| w[1].ln() - w[0].ln()).collect())
}

/// Trailing population standard deviation over `window` returns.
///
/// Output element `i` covers `returns[i..i + window]`.
pub fn rolling_rv(returns: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::argument("rolling window must be positive"));
    }
    if returns.len() < window {
        return Err(Error::argument(format!(
            "rolling_rv needs at least {window} returns, got {}",
            returns.len()
        )));
    }
    let w = window as f64;
    Ok(returns
        .windows(window)
        .map(|chunk| {
            // shifted by the first element; exact zero for flat windows
            let pivot = chunk[0];
            let mean = chunk.iter().map(|r| r - pivot).sum::<f64>() / w;
            (chunk
                .iter()
                .map(|r| (r - pivot - mean) * (r - pivot - mean))
                .sum::<f64>()
                / w)
                .sqrt()
        })
        .collect())
}

/// Chains `level[t] = level[t-1] * exp(diff[t])` forward from `prev_level`.
pub fn levels_from_logdiffs(prev_level: f64, diffs: &[f64]) -> Result<Vec<f64>> {
    if !(prev_level > 0.0) || !prev_level.is_finite() {
        return Err(Error::domain(format!(
            "previous level must be positive, got {prev_level}"
        )));
    }
    let mut level = prev_level;
    Ok(diffs
        .iter()
        .map(|d| {
            level *= d.exp();
            level
        })
        .collect())
}

/// Date-aligned engineered columns. Names carry a transform suffix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// Row `i` across all columns.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|(_, v)| v[i]).collect()
    }

    /// Names of columns with no variation at all.
    pub fn zero_variance(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|(_, v)| v.iter().all(|x| *x == v[0]))
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Keeps the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureMatrix> {
        let columns = names
            .iter()
            .map(|n| {
                self.column(n)
                    .map(|v| (n.clone(), v.to_vec()))
                    .ok_or_else(|| Error::argument(format!("unknown feature `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMatrix {
            dates: self.dates.clone(),
            columns,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.names());
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

/// Emits `.lvl`, `.lnd` and `.rv21` for every frame column.
///
/// Volume columns are shifted by +1 before differencing so zero-volume days
/// stay finite. The first `RV_WINDOW` rows are consumed by the warm-up, so
/// a frame of `n` dates yields `n - RV_WINDOW` aligned rows.
pub fn engineer(frame: &TimeSeriesFrame, volume_columns: &[String]) -> Result<FeatureMatrix> {
    let n = frame.len();
    if n < RV_WINDOW + 1 {
        return Err(Error::argument(format!(
            "engineer needs at least {} dates, got {n}",
            RV_WINDOW + 1
        )));
    }
    let offset = RV_WINDOW;
    let mut columns = Vec::with_capacity(3 * frame.columns().len());
    for (name, values) in frame.columns() {
        let is_volume = volume_columns.iter().any(|v| v == name);
        let source: Vec<f64> = if is_volume {
            if let Some(v) = values.iter().find(|v| **v < 0.0) {
                return Err(Error::domain(format!(
                    "column `{name}`: negative volume {v}"
                )));
            }
            values.iter().map(|v| v + 1.0).collect()
        } else {
            values.clone()
        };
        let diffs =
            log_diff(&source).map_err(|e| Error::domain(format!("column `{name}`: {e}")))?;
        let rv = rolling_rv(&diffs, RV_WINDOW)?;
        columns.push((format!("{name}{SUFFIX_LEVEL}"), values[offset..].to_vec()));
        columns.push((format!("{name}{SUFFIX_LOGDIFF}"), diffs[offset - 1..].to_vec()));
        columns.push((format!("{name}{SUFFIX_RV}"), rv));
    }
    Ok(FeatureMatrix {
        dates: frame.dates()[offset..].to_vec(),
        columns,
    })
}

/// Overlapping `s`-step windows of a feature matrix paired with the target
/// one step past each window.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencedDataset {
    seq_len: usize,
    n_features: usize,
    feature_names: Vec<String>,
    /// `len × seq_len × n_features`, time-major within each block.
    data: Vec<f64>,
    targets: Vec<f64>,
    /// Index (into the source date axis) of each window's last observation.
    end_index: Vec<usize>,
    target_dates: Vec<NaiveDate>,
}

impl SequencedDataset {
    /// Builds a dataset directly from blocks. Used by tests and by model code
    /// that already holds windows.
    pub fn from_blocks(
        seq_len: usize,
        n_features: usize,
        blocks: Vec<Vec<f64>>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if blocks.len() != targets.len() {
            return Err(Error::argument("blocks and targets differ in length"));
        }
        if blocks.iter().any(|b| b.len() != seq_len * n_features) {
            return Err(Error::argument(format!(
                "every block must hold {seq_len}x{n_features} values"
            )));
        }
        let k = blocks.len();
        let epoch = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        Ok(Self {
            seq_len,
            n_features,
            feature_names: (0..n_features).map(|j| format!("f{j}")).collect(),
            data: blocks.concat(),
            targets,
            end_index: (0..k).map(|i| i + seq_len - 1).collect(),
            target_dates: (0..k)
                .map(|i| epoch + chrono::Duration::days((i + seq_len) as i64))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Length of the flattened view of one block.
    pub fn flat_width(&self) -> usize {
        self.seq_len * self.n_features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Block `i` flattened time-major: the last time step occupies the tail.
    pub fn flat(&self, i: usize) -> &[f64] {
        let w = self.flat_width();
        &self.data[i * w..(i + 1) * w]
    }

    /// Entry at window `i`, time step `t`, feature `j`.
    pub fn at(&self, i: usize, t: usize, j: usize) -> f64 {
        self.data[i * self.flat_width() + t * self.n_features + j]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn end_index(&self) -> &[usize] {
        &self.end_index
    }

    pub fn target_dates(&self) -> &[NaiveDate] {
        &self.target_dates
    }

    pub fn flat_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.flat(i).to_vec()).collect()
    }

    /// Windows `range`, as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SequencedDataset {
        let w = self.flat_width();
        SequencedDataset {
            seq_len: self.seq_len,
            n_features: self.n_features,
            feature_names: self.feature_names.clone(),
            data: self.data[range.start * w..range.end * w].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            end_index: self.end_index[range.clone()].to_vec(),
            target_dates: self.target_dates[range].to_vec(),
        }
    }

    /// Windows at `indices`, in that order.
    pub fn pick(&self, indices: &[usize]) -> SequencedDataset {
        let mut data = Vec::with_capacity(indices.len() * self.flat_width());
        for &i in indices {
            data.extend_from_slice(self.flat(i));
        }
        SequencedDataset {
            seq_len: self.seq_len,
            n_features: self.n_features,
            feature_names: self.feature_names.clone(),
            data,
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            end_index: indices.iter().map(|&i| self.end_index[i]).collect(),
            target_dates: indices.iter().map(|&i| self.target_dates[i]).collect(),
        }
    }

    pub fn with_targets(mut self, targets: Vec<f64>) -> Result<Self> {
        if targets.len() != self.len() {
            return Err(Error::argument("replacement targets differ in length"));
        }
        self.targets = targets;
        Ok(self)
    }
}

/// Windows of `s` consecutive matrix rows; the window ending at row `e`
/// is paired with `target[e + 1]`.
pub fn sequence(matrix: &FeatureMatrix, target: &[f64], s: usize) -> Result<SequencedDataset> {
    let n = matrix.len();
    if target.len() != n {
        return Err(Error::argument(format!(
            "target has {} values for {n} feature rows",
            target.len()
        )));
    }
    if s == 0 || n <= s {
        return Err(Error::argument(format!(
            "sequence length {s} needs more than {s} rows, got {n}"
        )));
    }
    let m = matrix.width();
    let k = n - s;
    let mut data = Vec::with_capacity(k * s * m);
    for e in (s - 1)..(n - 1) {
        for t in (e + 1 - s)..=e {
            data.extend(matrix.columns.iter().map(|(_, v)| v[t]));
        }
    }
    Ok(SequencedDataset {
        seq_len: s,
        n_features: m,
        feature_names: matrix.names(),
        data,
        targets: ((s - 1)..(n - 1)).map(|e| target[e + 1]).collect(),
        end_index: ((s - 1)..(n - 1)).collect(),
        target_dates: ((s - 1)..(n - 1)).map(|e| matrix.dates[e + 1]).collect(),
    })
}

/// Perturbs every feature entry with an independent uniform draw on `[lo, hi)`.
pub fn add_uniform_noise(
    dataset: &SequencedDataset,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<SequencedDataset> {
    if !(lo < hi) {
        return Err(Error::argument(format!(
            "noise bounds need lo < hi, got [{lo}, {hi})"
        )));
    }
    let dist = Uniform::new(lo, hi).map_err(|e| Error::argument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    for v in &mut out.data {
        *v += dist.sample(&mut rng);
    }
    Ok(out)
}

/// Per-feature standardization statistics plus the target's.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerState {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

pub fn fit_scaler(train: &SequencedDataset) -> Result<ScalerState> {
    if train.is_empty() {
        return Err(Error::argument("cannot fit a scaler on an empty dataset"));
    }
    let m = train.n_features;
    let count = (train.len() * train.seq_len) as f64;
    let mut mean = vec![0.0; m];
    for i in 0..train.len() {
        for t in 0..train.seq_len {
            for (j, mu) in mean.iter_mut().enumerate() {
                *mu += train.at(i, t, j);
            }
        }
    }
    mean.iter_mut().for_each(|v| *v /= count);
    let mut var = vec![0.0; m];
    for i in 0..train.len() {
        for t in 0..train.seq_len {
            for j in 0..m {
                let d = train.at(i, t, j) - mean[j];
                var[j] += d * d;
            }
        }
    }
    let mut std = Vec::with_capacity(m);
    for (j, v) in var.iter().enumerate() {
        let sd = (v / count).sqrt();
        if !(sd > 1e-12 * mean[j].abs().max(1.0)) {
            return Err(Error::domain(format!(
                "feature `{}` has zero variance in the training rows",
                train.feature_names[j]
            )));
        }
        std.push(sd);
    }
    let n = train.len() as f64;
    let target_mean = train.targets.iter().sum::<f64>() / n;
    let target_var = train
        .targets
        .iter()
        .map(|y| (y - target_mean).powi(2))
        .sum::<f64>()
        / n;
    let target_std = if target_var > 0.0 { target_var.sqrt() } else { 1.0 };
    Ok(ScalerState {
        feature_mean: mean,
        feature_std: std,
        target_mean,
        target_std,
    })
}

impl ScalerState {
    fn check(&self, ds: &SequencedDataset) -> Result<()> {
        if ds.n_features != self.feature_mean.len() {
            return Err(Error::argument(format!(
                "scaler fitted on {} features, dataset has {}",
                self.feature_mean.len(),
                ds.n_features
            )));
        }
        Ok(())
    }

    pub fn apply(&self, ds: &SequencedDataset) -> Result<SequencedDataset> {
        self.check(ds)?;
        let m = ds.n_features;
        let mut out = ds.clone();
        for (idx, v) in out.data.iter_mut().enumerate() {
            let j = idx % m;
            *v = (*v - self.feature_mean[j]) / self.feature_std[j];
        }
        out.targets.iter_mut().for_each(|y| *y = self.scale_target(*y));
        Ok(out)
    }

    pub fn invert(&self, ds: &SequencedDataset) -> Result<SequencedDataset> {
        self.check(ds)?;
        let m = ds.n_features;
        let mut out = ds.clone();
        for (idx, v) in out.data.iter_mut().enumerate() {
            let j = idx % m;
            *v = *v * self.feature_std[j] + self.feature_mean[j];
        }
        out.targets.iter_mut().for_each(|y| *y = self.unscale_target(*y));
        Ok(out)
    }

    pub fn scale_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn unscale_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }
}

pub fn apply_scaler(state: &ScalerState, ds: &SequencedDataset) -> Result<SequencedDataset> {
    state.apply(ds)
}

pub fn invert_scaler(state: &ScalerState, ds: &SequencedDataset) -> Result<SequencedDataset> {
    state.invert(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{business_days, generate_synthetic};

    fn dates(n: usize) -> Vec<NaiveDate> {
        business_days(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), n)
    }

    #[test]
    fn log_diff_examples() {
        assert_eq!(log_diff(&[3.0, 3.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let e = log_diff(&[1.0, std::f64::consts::E]).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-15);
        // ln(1.1) = 0.09531017980432486, ln(0.9) = -0.10536051565782628
        let v = log_diff(&[100.0, 110.0, 99.0]).unwrap();
        assert!((v[0] - 0.0953102).abs() < 1e-6);
        assert!((v[1] + 0.1053605).abs() < 1e-6);
        assert!(matches!(log_diff(&[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(log_diff(&[1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn rolling_rv_examples() {
        assert_eq!(rolling_rv(&[0.01; 21], 21).unwrap(), vec![0.0]);
        assert_eq!(rolling_rv(&[0.5; 22], 21).unwrap().len(), 2);
        assert!(rolling_rv(&[0.5; 20], 21).is_err());

        // 11 of +a and 10 of -a: mean a/21, two-pass variance by hand
        let a = 0.02;
        let r: Vec<f64> = (0..21).map(|i| if i % 2 == 0 { a } else { -a }).collect();
        let mean = a / 21.0;
        let var = (11.0 * (a - mean).powi(2) + 10.0 * (-a - mean).powi(2)) / 21.0;
        let rv = rolling_rv(&r, 21).unwrap();
        assert!((rv[0] - var.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn levels_examples() {
        assert_eq!(levels_from_logdiffs(7.0, &[0.0, 0.0]).unwrap(), vec![7.0, 7.0]);
        let l = levels_from_logdiffs(50.0, &[0.1, -0.1]).unwrap();
        assert!((l[0] - 55.258546).abs() < 1e-5);
        assert!((l[1] - 50.0).abs() < 1e-5);
        assert!(levels_from_logdiffs(0.0, &[0.1]).is_err());
        let y = [20.0, 21.5, 19.0, 30.0];
        let back = levels_from_logdiffs(y[0], &log_diff(&y).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&y[1..]) {
            assert!(((a - b) / b).abs() < 1e-12);
        }
    }

    #[test]
    fn engineer_shapes_and_names() {
        let vals: Vec<f64> = (0..100).map(|i| 10.0 + (i as f64 * 0.3).sin()).collect();
        let f = TimeSeriesFrame::new(dates(100), vec![("px".into(), vals)]).unwrap();
        let m = engineer(&f, &[]).unwrap();
        assert_eq!(m.width(), 3);
        assert_eq!(m.len(), 79);
        assert_eq!(m.names(), vec!["px.lvl", "px.lnd", "px.rv21"]);
        assert_eq!(m.dates[0], f.dates()[21]);
        // `.lnd` on date index 21 is ln(y21/y20)
        let raw = f.column("px").unwrap();
        assert_eq!(m.column("px.lnd").unwrap()[0], raw[21].ln() - raw[20].ln());
    }

    #[test]
    fn constant_column_is_flagged() {
        let f = TimeSeriesFrame::new(dates(40), vec![("c".into(), vec![5.0; 40])]).unwrap();
        let m = engineer(&f, &[]).unwrap();
        assert!(m.column("c.lnd").unwrap().iter().all(|v| *v == 0.0));
        assert!(m.column("c.rv21").unwrap().iter().all(|v| *v == 0.0));
        let flagged = m.zero_variance();
        assert!(flagged.contains(&"c.lnd".to_string()));
        assert!(flagged.contains(&"c.rv21".to_string()));
    }

    #[test]
    fn zero_volumes_are_shifted_and_errors_name_column() {
        let mut v = vec![100.0; 40];
        v[10] = 0.0;
        let f = TimeSeriesFrame::new(dates(40), vec![("x_volume".into(), v.clone())]).unwrap();
        assert!(engineer(&f, &["x_volume".into()]).is_ok());
        let err = engineer(&f, &[]).unwrap_err();
        assert!(err.to_string().contains("x_volume"));
    }

    #[test]
    fn engineer_table_style_suffixes() {
        let f = generate_synthetic(5, 300, 4).unwrap();
        let vols: Vec<String> = f
            .column_names()
            .filter(|n| n.ends_with("_volume"))
            .map(String::from)
            .collect();
        let m = engineer(&f, &vols).unwrap();
        let picked: Vec<String> = m.names().into_iter().take(10).collect();
        let sel = m.select(&picked).unwrap();
        assert_eq!(sel.width(), 10);
        assert!(sel
            .names()
            .iter()
            .all(|n| n.ends_with(".lvl") || n.ends_with(".lnd") || n.ends_with(".rv21")));
    }

    fn toy_matrix(n: usize, m: usize) -> FeatureMatrix {
        FeatureMatrix {
            dates: dates(n),
            columns: (0..m)
                .map(|j| {
                    (
                        format!("f{j}"),
                        (0..n).map(|i| (i * 10 + j) as f64).collect(),
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn sequence_counts_and_layout() {
        let mat = toy_matrix(6, 10);
        let target: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
        let ds = sequence(&mat, &target, 5).unwrap();
        assert_eq!(ds.len(), 1);
        let flat = ds.flat(0);
        assert_eq!(flat.len(), 50);
        // time-major: step t feature j at t*10+j; last step last
        assert_eq!(flat[0], 0.0);
        assert_eq!(flat[49], 49.0);
        assert_eq!(flat[40..50], mat.row(4)[..]);
        assert!(sequence(&toy_matrix(5, 2), &[0.0; 5], 5).is_err());
    }

    #[test]
    fn sequence_target_is_next_step() {
        let mat = toy_matrix(30, 2);
        let target: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let ds = sequence(&mat, &target, 5).unwrap();
        assert_eq!(ds.len(), 25);
        for i in 0..ds.len() {
            let e = ds.end_index()[i];
            assert_eq!(ds.targets()[i], target[e + 1]);
            assert_eq!(ds.target_dates()[i], mat.dates[e + 1]);
            assert_eq!(ds.at(i, 4, 0), mat.columns[0].1[e]);
            assert_eq!(ds.at(i, 0, 1), mat.columns[1].1[e - 4]);
        }
    }

    #[test]
    fn noise_bounds_and_determinism() {
        let ds = sequence(&toy_matrix(20, 3), &[0.0; 20], 5).unwrap();
        assert!(add_uniform_noise(&ds, 0.0, 0.0, 1).is_err());
        let tiny = add_uniform_noise(&ds, -1e-12, 1e-12, 1).unwrap();
        let max = tiny
            .data
            .iter()
            .zip(&ds.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max < 1e-11);
        assert_eq!(tiny.targets, ds.targets);
        let a = add_uniform_noise(&ds, -0.02, 0.02, 9).unwrap();
        let b = add_uniform_noise(&ds, -0.02, 0.02, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_mean_matches_uniform_moment() {
        // 1000 windows x 5 steps x 200 features = 10^6 draws
        let blocks = vec![vec![0.0; 5 * 200]; 1000];
        let ds = SequencedDataset::from_blocks(5, 200, blocks, vec![0.0; 1000]).unwrap();
        let (lo, hi) = (-0.02, 0.02);
        let noisy = add_uniform_noise(&ds, lo, hi, 77).unwrap();
        let n = noisy.data.len() as f64;
        let mean = noisy.data.iter().sum::<f64>() / n;
        let sigma = (hi - lo) / 12f64.sqrt();
        assert!((mean - (lo + hi) / 2.0).abs() < 3.0 * sigma / n.sqrt());
        assert!(noisy.data.iter().all(|v| *v >= lo && *v < hi));
    }

    #[test]
    fn scaler_standardizes_and_round_trips() {
        let f = generate_synthetic(8, 200, 2).unwrap();
        let m = engineer(&f, &[]).unwrap();
        let target = vec![0.1; m.len()];
        let ds = sequence(&m, &target, 5).unwrap();
        let train = ds.slice(0..100);
        let sc = fit_scaler(&train).unwrap();
        let z = sc.apply(&train).unwrap();
        for j in 0..z.n_features() {
            let vals: Vec<f64> = (0..z.len())
                .flat_map(|i| (0..5).map(move |t| (i, t)))
                .map(|(i, t)| z.at(i, t, j))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64)
                .sqrt();
            assert!(mean.abs() < 1e-10);
            assert!((sd - 1.0).abs() < 1e-10);
        }
        let back = sc.invert(&z).unwrap();
        for (a, b) in back.data.iter().zip(&train.data) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
        // applying to later rows does not re-standardize them
        let later = sc.apply(&ds.slice(100..ds.len())).unwrap();
        let col0: Vec<f64> = (0..later.len()).map(|i| later.at(i, 0, 0)).collect();
        let mean0 = col0.iter().sum::<f64>() / col0.len() as f64;
        assert!(mean0.abs() > 1e-6);
    }

    #[test]
    fn scaler_rejects_constant_feature() {
        let blocks = vec![vec![1.0, 2.0]; 4];
        let ds = SequencedDataset::from_blocks(1, 2, blocks, vec![0.0; 4]).unwrap();
        let err = fit_scaler(&ds).unwrap_err();
        assert!(err.to_string().contains("f0"));
    }
}
