//! Experiment configuration files.

use std::path::{Path, PathBuf};

use np2m2::{
    dataset::DEFAULT_TAU, FlipRule, KernelSpec, LrSettings, MapSpec, PerformativeMask, RrmSettings, SolveSettings,
    ViolatorFilter,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Relative paths resolve against the working directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub map: MapConfig,
    #[serde(default)]
    pub rrm: RrmConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub lr: LrConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_methods() -> Vec<Method> {
    vec![Method::Np2m2]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Np2m2,
    RrmLr,
    RgdLr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Np2m2 => "np2m2",
            Method::RrmLr => "rrm_lr",
            Method::RgdLr => "rgd_lr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Circles {
        n_per_class: usize,
        noise: f64,
    },
    Linear {
        n_per_class: usize,
        dim: usize,
        informative: usize,
        #[serde(default = "one")]
        class_sep: f64,
    },
    Csv {
        /// Relative paths resolve against the config file's directory.
        path: PathBuf,
        label_column: String,
        positive_label: String,
        #[serde(default)]
        negative_label: Option<String>,
        #[serde(default)]
        feature_columns: Vec<String>,
        #[serde(default = "yes")]
        standardize: bool,
        #[serde(default)]
        nearmiss: Option<NearMissConfig>,
    },
}

impl DatasetConfig {
    /// Short label used in summary rows.
    pub fn label(&self) -> String {
        match self {
            DatasetConfig::Circles { .. } => "circles".into(),
            DatasetConfig::Linear { .. } => "linear".into(),
            DatasetConfig::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NearMissConfig {
    /// `1` or `-1`.
    pub minority_label: f64,
    #[serde(default = "three")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelChoice,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub squared_exponent: bool,
    /// Augmentation constant appended to every point.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            kind: KernelChoice::Rbf,
            sigma: default_sigma(),
            squared_exponent: false,
            tau: DEFAULT_TAU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub kind: MapChoice,
    pub d: Vec<f64>,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    #[serde(default)]
    pub flip_rule: FlipChoice,
    /// Bankruptcy label intensity per `d`; defaults to `-0.01 d + 15`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    /// Bankruptcy only: 0-based feature indices agents cannot change.
    #[serde(default)]
    pub non_performative: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapChoice {
    FeatureLinear,
    FeatureSimulated,
    LabelFlip,
    Bankruptcy,
}

impl MapChoice {
    pub fn name(self) -> &'static str {
        match self {
            MapChoice::FeatureLinear => "feature_linear",
            MapChoice::FeatureSimulated => "feature_simulated",
            MapChoice::LabelFlip => "label_flip",
            MapChoice::Bankruptcy => "bankruptcy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipChoice {
    #[default]
    Retain,
    Flip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RrmConfig {
    pub alpha: f64,
    pub t_max: usize,
    pub trials: usize,
    pub burn_in: usize,
    pub c_init: f64,
    pub convergence_consistency: f64,
    pub violator_filter: FilterChoice,
    pub resample_each_iteration: bool,
    pub stop_on_convergence: bool,
}

impl Default for RrmConfig {
    fn default() -> Self {
        let s = RrmSettings::default();
        Self {
            alpha: s.alpha,
            t_max: s.t_max,
            trials: s.trials,
            burn_in: s.burn_in,
            c_init: s.c_init,
            convergence_consistency: s.convergence_consistency,
            violator_filter: FilterChoice::Previous,
            resample_each_iteration: s.resample_each_iteration,
            stop_on_convergence: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterChoice {
    Previous,
    Current,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_passes: usize,
    pub shrink: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolveSettings::default();
        Self {
            tol: s.tol,
            max_passes: s.max_passes,
            shrink: s.shrink,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrConfig {
    pub l2: f64,
    pub lr: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Step size of the repeated-gradient baseline.
    pub rgd_step: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        let s = LrSettings::default();
        Self {
            l2: s.l2,
            lr: s.lr,
            max_iters: s.max_iters,
            tol: s.tol,
            rgd_step: 0.1,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn three() -> usize {
    3
}
fn default_sigma() -> f64 {
    0.1
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_candidates() -> usize {
    np2m2::shift::DEFAULT_CANDIDATES
}

impl ExperimentConfig {
    /// Reads, parses and validates a config file. Relative dataset paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let source = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            line: None,
            message: e.to_string(),
        })?;
        let mut config = Self::parse(&source).map_err(|e| e.with_path(path))?;
        if let DatasetConfig::Csv { path: csv, .. } = &mut config.dataset {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(config)
    }

    pub fn parse(source: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(source).map_err(|e| CliError::Config {
            path: PathBuf::new(),
            line: e.span().map(|s| line_of(source, s.start)),
            message: e.message().to_string(),
        })?;
        config.validate().map_err(|(table, key, message)| CliError::Config {
            path: PathBuf::new(),
            line: locate(source, table, key),
            message: format!("{}: {message}", qualified(table, key)),
        })?;
        Ok(config)
    }

    /// Semantic checks; errors carry `(table, key, message)`.
    pub fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        let fail = |table, key, message: String| Err((table, key, message));
        if self.methods.is_empty() {
            return fail("", "methods", "at least one method is required".into());
        }
        match &self.dataset {
            DatasetConfig::Circles { n_per_class, noise } => {
                if *n_per_class == 0 {
                    return fail("dataset", "n_per_class", "must be at least 1".into());
                }
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return fail("dataset", "noise", format!("must be >= 0, got {noise}"));
                }
            }
            DatasetConfig::Linear {
                n_per_class,
                dim,
                informative,
                ..
            } => {
                if *n_per_class == 0 {
                    return fail("dataset", "n_per_class", "must be at least 1".into());
                }
                if *informative == 0 || informative > dim {
                    return fail(
                        "dataset",
                        "informative",
                        format!("must lie in 1..={dim}, got {informative}"),
                    );
                }
            }
            DatasetConfig::Csv { nearmiss, .. } => {
                if let Some(nm) = nearmiss {
                    if nm.minority_label != 1.0 && nm.minority_label != -1.0 {
                        return fail("dataset.nearmiss", "minority_label", "must be 1 or -1".into());
                    }
                    if nm.k == 0 {
                        return fail("dataset.nearmiss", "k", "must be at least 1".into());
                    }
                }
            }
        }
        if let Err(e) = self.kernel_spec() {
            return fail("kernel", "sigma", e.to_string());
        }
        if !(self.kernel.tau > 0.0 && self.kernel.tau.is_finite()) {
            return fail("kernel", "tau", format!("must be positive, got {}", self.kernel.tau));
        }
        if self.map.d.is_empty() {
            return fail("map", "d", "at least one value is required".into());
        }
        if let Some(d) = self.map.d.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return fail("map", "d", format!("values must be >= 0, got {d}"));
        }
        if self.map.n_candidates == 0 {
            return fail("map", "n_candidates", "must be at least 1".into());
        }
        if let Some(b) = &self.map.b {
            if self.map.kind != MapChoice::Bankruptcy {
                return fail("map", "b", "only applies to the bankruptcy map".into());
            }
            if b.len() != self.map.d.len() {
                return fail("map", "b", format!("needs one value per d ({})", self.map.d.len()));
            }
        }
        if !self.map.non_performative.is_empty() && self.map.kind != MapChoice::Bankruptcy {
            return fail("map", "non_performative", "only applies to the bankruptcy map".into());
        }
        if let Err(e) = self.rrm_settings(self.rrm.alpha, 0).validate() {
            let message = match &e {
                np2m2::Error::InvalidArgument(m) => m.clone(),
                other => other.to_string(),
            };
            let first = message.split_whitespace().next().unwrap_or("");
            let (table, key) = match first {
                "alpha" => ("rrm", "alpha"),
                "burn_in" => ("rrm", "burn_in"),
                "t_max" => ("rrm", "t_max"),
                "trials" => ("rrm", "trials"),
                "c_init" | "C" => ("rrm", "c_init"),
                "max_passes" => ("solver", "max_passes"),
                _ => ("solver", "tol"),
            };
            return fail(table, key, message);
        }
        if let Err(e) = self.lr_settings().validate() {
            return fail("lr", "l2", e.to_string());
        }
        if !(self.lr.rgd_step > 0.0 && self.lr.rgd_step.is_finite()) {
            return fail("lr", "rgd_step", format!("must be positive, got {}", self.lr.rgd_step));
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> np2m2::Result<KernelSpec> {
        match self.kernel.kind {
            KernelChoice::Linear => Ok(KernelSpec::linear()),
            KernelChoice::Rbf => Ok(KernelSpec::rbf(self.kernel.sigma)?.with_squared_exponent(self.kernel.squared_exponent)),
        }
    }

    pub fn rrm_settings(&self, alpha: f64, seed: u64) -> RrmSettings {
        RrmSettings {
            alpha,
            t_max: self.rrm.t_max,
            trials: self.rrm.trials,
            burn_in: self.rrm.burn_in,
            c_init: self.rrm.c_init,
            convergence_consistency: self.rrm.convergence_consistency,
            seed,
            solver: SolveSettings {
                c: self.rrm.c_init,
                tol: self.solver.tol,
                max_passes: self.solver.max_passes,
                shrink: self.solver.shrink,
            },
            violator_filter: match self.rrm.violator_filter {
                FilterChoice::Previous => ViolatorFilter::Previous,
                FilterChoice::Current => ViolatorFilter::Current,
            },
            resample_each_iteration: self.rrm.resample_each_iteration,
            stop_on_convergence: self.rrm.stop_on_convergence,
        }
    }

    pub fn lr_settings(&self) -> LrSettings {
        LrSettings {
            l2: self.lr.l2,
            lr: self.lr.lr,
            max_iters: self.lr.max_iters,
            tol: self.lr.tol,
        }
    }

    /// The map for one value of `d` on data of raw width `width`.
    pub fn map_spec(&self, d: f64, index: usize, width: usize) -> np2m2::Result<MapSpec> {
        let rule = match self.map.flip_rule {
            FlipChoice::Retain => FlipRule::Retain,
            FlipChoice::Flip => FlipRule::Flip,
        };
        Ok(match self.map.kind {
            MapChoice::FeatureLinear => MapSpec::feature_linear(d),
            MapChoice::FeatureSimulated => MapSpec::feature_simulated(d, self.map.n_candidates),
            MapChoice::LabelFlip => MapSpec::label_flip(d).with_flip_rule(rule),
            MapChoice::Bankruptcy => {
                let b = match &self.map.b {
                    Some(bs) => bs.get(index).copied().unwrap_or_else(|| np2m2::shift::bankruptcy_intensity(d)),
                    None => np2m2::shift::bankruptcy_intensity(d),
                };
                let performative: Vec<usize> = (0..width).filter(|c| !self.map.non_performative.contains(c)).collect();
                let mask = PerformativeMask::from_indices(width, &performative)?;
                let mut spec = MapSpec::bankruptcy(d, b, mask).with_flip_rule(rule);
                spec.n_candidates = self.map.n_candidates;
                spec
            }
        })
    }
}

fn qualified(table: &str, key: &str) -> String {
    if table.is_empty() {
        key.to_string()
    } else {
        format!("{table}.{key}")
    }
}

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// 1-based line of `key = ...` inside `[table]` (top level when `table` is
/// empty), if present.
fn locate(source: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
