//! TOML run configuration shared by every subcommand.
//!
//! `examples/run.toml` lists every key with its default. Single keys can be
//! overridden with dotted paths (`train.epochs=3`, `quant.steps=[2.5,1,2]`).

use std::path::{Path, PathBuf};

use placerec_core::cloud::{Square, SplitSpec};
use placerec_core::retrieval::EvalConfig;
use placerec_core::synth::SynthConfig;
use placerec_core::trainer::TrainConfig;
use placerec_core::{ArchConfig, QuantConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::io::ScanFormat;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{what} does not exist: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for every random stream (required).
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub synthetic: SynthConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub quant: QuantSection,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub ablate: AblateConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Processed dataset directory (written by `preprocess`, read by the rest).
    pub root: PathBuf,
    /// Raw scan directory holding `<cloud_id>.bin`; with `poses`, replaces
    /// the synthetic world as preprocessing input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scans: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poses: Option<PathBuf>,
    pub format: ScanFormat,
    /// Minimum travel between kept scans of a run; 0 keeps every scan.
    pub spacing: f64,
    /// Divide intensities by the dataset maximum instead of only clamping.
    pub rescale_intensity: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { root: PathBuf::from("data"), scans: None, poses: None, format: ScanFormat::Kitti, spacing: 0.0, rescale_intensity: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_squares: Vec<Square>,
    pub buffer_width: f64,
    /// Every cloud of this run is a test cloud; the others train.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_run: Option<u32>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_squares: Vec::new(), buffer_width: 10.0, holdout_run: None }
    }
}

impl SplitConfig {
    pub fn spec(&self) -> SplitSpec {
        SplitSpec { test_squares: self.test_squares.clone(), buffer_width: self.buffer_width }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantPreset {
    #[default]
    Spherical,
    Spherical64Beam,
    Cartesian,
}

/// A quantization preset with optional per-key replacements.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantSection {
    pub preset: QuantPreset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[[f64; 2]; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intensity: Option<bool>,
}

impl QuantSection {
    pub fn resolve(&self) -> QuantConfig {
        let mut q = match self.preset {
            QuantPreset::Spherical => QuantConfig::spherical(),
            QuantPreset::Spherical64Beam => QuantConfig::spherical_64_beam(),
            QuantPreset::Cartesian => QuantConfig::cartesian(),
        };
        if let Some(s) = self.steps {
            q.steps = s;
        }
        if let Some(b) = self.bounds {
            q.bounds = b;
        }
        if let Some(i) = self.intensity {
            q.intensity_enabled = i;
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    #[serde(flatten)]
    pub core: TrainConfig,
    /// Write `checkpoints/epoch_NNNN.ckpt` every this many epochs; 0 only
    /// writes the final checkpoint.
    pub checkpoint_every: u32,
    /// Continue from this checkpoint (weights, optimizer state, epoch).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    /// Evaluate AR@1 on the test split after every epoch.
    pub validate: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { core: TrainConfig::default(), checkpoint_every: 1, resume: None, validate: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Database {
    /// Test clouds are both queries and database.
    #[default]
    Test,
    /// Test clouds query every non-dropped cloud.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    #[serde(flatten)]
    pub core: EvalConfig,
    pub database: Database,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Also write the per-query detail CSV.
    pub details: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { core: EvalConfig::default(), database: Database::Test, checkpoint: None, details: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblateAxis {
    /// First quantization step (range in spherical mode).
    RStep,
    /// Second quantization step (azimuth in spherical mode).
    ThetaStep,
    MaxRange,
    Points,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Number(f64),
    /// Only `"all"`: no range limit or subsampling.
    Word(String),
}

impl AxisValue {
    pub fn number(&self) -> Option<f64> {
        match self {
            AxisValue::Number(v) => Some(*v),
            AxisValue::Word(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            AxisValue::Number(v) => format!("{v}"),
            AxisValue::Word(w) => w.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<AblateAxis>,
    pub values: Vec<AxisValue>,
    /// Train a fresh network per sweep value instead of evaluating
    /// `eval.checkpoint`.
    pub train_per_point: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Timed repetitions of the benchmark cloud.
    pub repeats: usize,
    /// Point counts of the subsampling sweep.
    pub point_counts: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { repeats: 10, point_counts: vec![2048, 4096, 8192, 16384, 23000] }
    }
}

/// Which command a path check is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Preprocess,
    Train,
    Eval,
    Ablate,
    Bench,
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Sets `key.path = value` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let parts: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = entry.as_table_mut().ok_or_else(|| ConfigError::Override(format!("{assignment} ({p} is not a section)")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// First key of `given` that the parsed configuration does not know.
fn unknown_key(given: &Table, known: &Table, prefix: &str) -> Option<String> {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => return Some(path),
            (Value::Table(g), Some(Value::Table(kn))) => {
                if let Some(p) = unknown_key(g, kn, &path) {
                    return Some(p);
                }
            }
            (Value::Array(g), Some(Value::Array(kn))) => {
                for (i, (a, b)) in g.iter().zip(kn).enumerate() {
                    if let (Value::Table(a), Value::Table(b)) = (a, b) {
                        if let Some(p) = unknown_key(a, b, &format!("{path}[{i}]")) {
                            return Some(p);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    None
}

impl RunConfig {
    /// Parses TOML text, applies `key=value` overrides in order and
    /// validates the result.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = Value::Table(table.clone()).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let known = Table::try_from(&cfg).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(k) = unknown_key(&table, &known, "") {
            return Err(ConfigError::UnknownKey(k));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.root);
        [&mut self.dataset.scans, &mut self.dataset.poses, &mut self.train.resume, &mut self.eval.checkpoint]
            .into_iter()
            .flatten()
            .for_each(fix);
    }

    pub fn quant(&self) -> QuantConfig {
        self.quant.resolve()
    }

    /// Checks every value invariant; paths are checked by [`Self::check_paths`].
    pub fn validate(&self) -> Result<(), ConfigError> {
        let core = |r: placerec_core::Result<()>| r.map_err(|e| ConfigError::Invalid(e.to_string()));
        core(self.quant().validate())?;
        core(self.arch.validate())?;
        core(self.train.core.validate())?;
        core(self.eval.core.validate())?;
        core(self.synthetic.validate())?;
        core(self.split.spec().validate())?;
        if !(self.dataset.spacing >= 0.0) || !self.dataset.spacing.is_finite() {
            return Err(ConfigError::Invalid("dataset.spacing must be a finite value >= 0".into()));
        }
        if self.dataset.scans.is_some() != self.dataset.poses.is_some() {
            return Err(ConfigError::Invalid("dataset.scans and dataset.poses must be given together".into()));
        }
        if self.split.holdout_run.is_some() && !self.split.test_squares.is_empty() {
            return Err(ConfigError::Invalid("use either split.holdout_run or split.test_squares, not both".into()));
        }
        if self.bench.repeats == 0 || self.bench.point_counts.contains(&0) {
            return Err(ConfigError::Invalid("bench.repeats and bench.point_counts must be >= 1".into()));
        }
        for v in &self.ablate.values {
            match (v, self.ablate.axis) {
                (AxisValue::Word(w), Some(AblateAxis::MaxRange | AblateAxis::Points)) if w == "all" => {}
                (AxisValue::Word(w), _) => return Err(ConfigError::Invalid(format!("ablate value `{w}` is not allowed on this axis"))),
                (AxisValue::Number(x), Some(AblateAxis::Points)) if !(*x >= 1.0 && x.fract() == 0.0) => {
                    return Err(ConfigError::Invalid(format!("point count {x} must be a positive integer")))
                }
                (AxisValue::Number(x), _) if !(*x > 0.0 && x.is_finite()) => {
                    return Err(ConfigError::Invalid(format!("ablate value {x} must be positive")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Checks that every input path `stage` reads exists.
    pub fn check_paths(&self, stage: Stage) -> Result<(), ConfigError> {
        let exists = |what: &'static str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::MissingPath { what, path: p.to_path_buf() })
            }
        };
        match stage {
            Stage::Preprocess => {
                if let (Some(s), Some(p)) = (&self.dataset.scans, &self.dataset.poses) {
                    exists("scan directory", s)?;
                    exists("pose CSV", p)?;
                }
                if self.split.holdout_run.is_none() && self.split.test_squares.is_empty() {
                    return Err(ConfigError::Invalid("preprocess needs split.holdout_run or split.test_squares".into()));
                }
                Ok(())
            }
            _ => {
                exists("dataset root", &self.dataset.root)?;
                let needs_checkpoint = match stage {
                    Stage::Eval | Stage::Bench => true,
                    Stage::Ablate => !self.ablate.train_per_point,
                    _ => false,
                };
                if needs_checkpoint {
                    let p = self.eval.checkpoint.as_ref().ok_or(ConfigError::Invalid("eval.checkpoint is required".into()))?;
                    exists("checkpoint", p)?;
                }
                if stage == Stage::Train {
                    if let Some(p) = &self.train.resume {
                        exists("resume checkpoint", p)?;
                    }
                }
                if stage == Stage::Ablate && (self.ablate.axis.is_none() || self.ablate.values.is_empty()) {
                    return Err(ConfigError::Invalid("ablate needs ablate.axis and ablate.values".into()));
                }
                Ok(())
            }
        }
    }
}
