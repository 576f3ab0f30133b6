//! Run configuration (TOML). Unknown keys are rejected; `resolve` fills
//! every default so the emitted manifest alone reproduces a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{PartitionSpec, SYNTHETIC_TARGET, VOLUME_SUFFIX};
use crate::error::{Error, Result};
use crate::gbdt::GbdtParams;
use crate::metrics::LossKind;
use crate::models::{enumerate_grid, GridOverrides, RegressorKind};
use crate::select::{DEFAULT_SPLITS, DEFAULT_TOP_K, DEFAULT_TREES};
use crate::walkforward::DEFAULT_HORIZON;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub days: usize,
    pub series: usize,
    /// Defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV files aligned on date; exclusive with `synthetic`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default = "default_target")]
    pub target: String,
    /// Defaults to every column ending in `_volume`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_columns: Option<Vec<String>>,
}

fn default_target() -> String {
    SYNTHETIC_TARGET.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn spec(&self, name: &str) -> Result<PartitionSpec> {
        PartitionSpec::new(name, self.start, self.end)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partitions {
    /// Rows used for feature ranking. Defaults to everything whose target
    /// precedes the first test date.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<DateRange>,
    /// Forecast dates. Defaults to the last `horizon` dates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<DateRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_splits")]
    pub n_splits: usize,
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    /// Skip ranking and use these columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_splits() -> usize {
    DEFAULT_SPLITS
}
fn default_trees() -> usize {
    DEFAULT_TREES
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            n_splits: DEFAULT_SPLITS,
            n_trees: DEFAULT_TREES,
            features: None,
        }
    }
}

/// Boosting settings that are not grid axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostingConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub min_gain_to_split: f64,
    pub bagging_fraction: f64,
    pub bagging_freq: usize,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        let d = GbdtParams::default();
        Self {
            rounds: d.rounds,
            learning_rate: d.learning_rate,
            min_gain_to_split: d.min_gain_to_split,
            bagging_fraction: d.bagging_fraction,
            bagging_freq: d.bagging_freq,
        }
    }
}

impl BoostingConfig {
    pub fn base(&self) -> GbdtParams {
        GbdtParams {
            rounds: self.rounds,
            learning_rate: self.learning_rate,
            min_gain_to_split: self.min_gain_to_split,
            bagging_fraction: self.bagging_fraction,
            bagging_freq: self.bagging_freq,
            ..GbdtParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmConfig {
    pub loss: LossKind,
    pub horizon: usize,
}

impl Default for DmConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Squared,
            horizon: 1,
        }
    }
}

/// Facts about a finished run, appended to the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub version: String,
    pub status: String,
    pub seed_rule: String,
    pub selected_features: Vec<String>,
    pub dropped_features: Vec<String>,
    pub first_test_date: Option<NaiveDate>,
    pub last_test_date: Option<NaiveDate>,
    pub record_files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_windows")]
    pub windows: Vec<usize>,
    #[serde(default = "default_models")]
    pub models: Vec<RegressorKind>,
    pub data: DataConfig,
    #[serde(default)]
    pub partitions: Partitions,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub boosting: BoostingConfig,
    #[serde(default)]
    pub dm: DmConfig,
    /// Per-kind grid axis replacements, e.g. `[grid.svr] kernel = ["rbf"]`.
    #[serde(default)]
    pub grid: BTreeMap<RegressorKind, GridOverrides>,
    /// Present only in emitted manifests; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

fn default_output() -> PathBuf {
    PathBuf::from("ivlab-out")
}
fn default_seq_len() -> usize {
    5
}
fn default_horizon() -> usize {
    DEFAULT_HORIZON
}
fn default_windows() -> Vec<usize> {
    vec![63, 126, 252]
}
fn default_models() -> Vec<RegressorKind> {
    RegressorKind::ALL.to_vec()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (&self.data.synthetic, self.data.paths.is_empty()) {
            (Some(_), false) => return bad("data: give either `paths` or `synthetic`, not both".into()),
            (None, true) => return bad("data: one of `paths` or `synthetic` is required".into()),
            (Some(s), true) if s.days < 300 => {
                return bad(format!("data.synthetic.days must be at least 300, got {}", s.days))
            }
            _ => {}
        }
        if self.seq_len == 0 {
            return bad("seq_len must be positive".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if self.windows.is_empty() || self.windows.iter().any(|w| *w <= crate::walkforward::VALIDATION_SEED_ROWS) {
            return bad("windows must be non-empty and each larger than 10".into());
        }
        if self.models.is_empty() {
            return bad("models must not be empty".into());
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(k) = self.models.iter().find(|k| !seen.insert(**k)) {
            return bad(format!("model `{k}` listed twice"));
        }
        if self.selection.top_k == 0 || self.selection.n_trees == 0 || self.selection.n_splits < 2 {
            return bad("selection: top_k and n_trees must be positive, n_splits at least 2".into());
        }
        if self.dm.horizon == 0 {
            return bad("dm.horizon must be positive".into());
        }
        let b = &self.boosting;
        if !(b.learning_rate > 0.0 && b.learning_rate <= 1.0)
            || !(b.bagging_fraction > 0.0 && b.bagging_fraction <= 1.0)
        {
            return bad("boosting: learning_rate and bagging_fraction must be in (0, 1]".into());
        }
        if let Some(s) = &self.partitions.selection {
            s.spec("selection")?;
        }
        if let Some(t) = &self.partitions.test {
            t.spec("test")?;
            if let Some(s) = &self.partitions.selection {
                if s.end >= t.start {
                    return bad("partitions: selection must end before test starts".into());
                }
            }
        }
        for (kind, overrides) in &self.grid {
            enumerate_grid(*kind, overrides)?;
        }
        Ok(())
    }

    pub fn overrides(&self, kind: RegressorKind) -> GridOverrides {
        self.grid.get(&kind).cloned().unwrap_or_default()
    }

    /// Volume columns given the frame's column names.
    pub fn volume_columns<'a>(&self, names: impl Iterator<Item = &'a str>) -> Vec<String> {
        match &self.data.volume_columns {
            Some(v) => v.clone(),
            None => names
                .filter(|n| n.ends_with(VOLUME_SUFFIX))
                .map(str::to_string)
                .collect(),
        }
    }

    /// Copy with every optional default made explicit.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Some(s) = &mut c.data.synthetic {
            s.seed.get_or_insert(self.seed);
        }
        c.provenance = None;
        c
    }
}
