//! Pipeline configuration.
//!
//! A run is described by one TOML document. Scalar fields can be overridden
//! from the environment with variables named `WINDCAST__<SECTION>__<FIELD>`
//! (nested tables add more `__` segments; names are case-insensitive). The
//! precedence is: command-line flags, then environment, then the file, then
//! built-in defaults. Relative paths are resolved against the directory of the
//! config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use windcast::reservoir::EsnHyperParams;
use windcast::simbench::Lorenz96Spec;
use windcast::spde::CovarianceKind;
use windcast::trend::DEFAULT_PERIODS;

use crate::error::ConfigError;

pub const ENV_PREFIX: &str = "WINDCAST__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub run: RunConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub trend: TrendConfig,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub knots: KnotConfig,
    #[serde(default)]
    pub esn: EsnHyperParams,
    #[serde(default)]
    pub spde: SpdeConfig,
    #[serde(default)]
    pub calibrate: CalibrateConfig,
    #[serde(default)]
    pub power: PowerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// Speeds read from `field` with coordinates from `locations`.
    Files,
    /// A simulated Lorenz-96 trajectory laid out on a square lattice.
    Lorenz96,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    pub field: Option<PathBuf>,
    pub locations: Option<PathBuf>,
    #[serde(default)]
    pub lorenz96: Lorenz96Spec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrendConfig {
    pub enabled: bool,
    /// Harmonic periods in time steps.
    pub periods: Vec<f64>,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            periods: DEFAULT_PERIODS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastConfig {
    /// Training length; `None` takes the Lorenz-96 split or 80% of the series.
    pub n_train: Option<usize>,
    pub max_lead: usize,
    /// Refit the readout every `esn.batch` origins.
    pub batched: bool,
    /// Optional TOML grid for hyper-parameter search.
    pub tune_grid: Option<PathBuf>,
    /// Trailing training steps held out when tuning.
    pub validation: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            n_train: None,
            max_lead: 3,
            batched: true,
            tune_grid: None,
            validation: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnotConfig {
    pub n_red: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KnotConfig {
    fn default() -> Self {
        Self {
            n_red: 3173,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpdeConfig {
    pub mesh_vertices: usize,
    pub basis_order: usize,
    pub alpha: u8,
    /// 0 means the optimizer default.
    pub max_evals: usize,
    /// Training snapshots used for the fit, evenly spaced; 0 uses all of them.
    pub fit_snapshots: usize,
}

impl Default for SpdeConfig {
    fn default() -> Self {
        Self {
            mesh_vertices: 2000,
            basis_order: 0,
            alpha: 2,
            max_evals: 0,
            fit_snapshots: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateConfig {
    /// Level at which the shrinkage weight is tuned.
    pub level: f64,
    /// Levels reported in the coverage table.
    pub levels: Vec<f64>,
    /// Center of the expanding squares; `None` uses the bounding-box center.
    pub center: Option<[f64; 2]>,
    pub delta_step: f64,
    pub delta_max: f64,
    pub covariance: CovarianceKind,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            level: 0.95,
            levels: vec![0.60, 0.80, 0.95],
            center: None,
            delta_step: 0.05,
            delta_max: 0.5,
            covariance: CovarianceKind::Prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerConfig {
    /// Path to a curve CSV, or `builtin:nordex-like` / `builtin:ge-like`.
    pub curve: String,
    pub hub_height: f64,
    /// Constant shear exponent used when no hub-height series is given.
    pub shear: f64,
    /// Optional speeds measured at `hub_height`, aligned with the input field.
    pub hub_field: Option<PathBuf>,
    pub price_usd_per_mwh: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            curve: "builtin:nordex-like".into(),
            hub_height: 80.0,
            shear: windcast::power::DEFAULT_SHEAR,
            hub_field: None,
            price_usd_per_mwh: 70.0,
        }
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    // Reuse the TOML grammar for numbers, booleans and quoted strings; fall
    // back to a bare string.
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply `WINDCAST__A__B=value` style overrides to a parsed document.
pub fn apply_overrides<I>(doc: &mut toml::Table, vars: I) -> Result<Vec<String>, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut applied = Vec::new();
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(String::is_empty) {
            return Err(ConfigError(format!("malformed override variable {key}")));
        }
        let mut table = &mut *doc;
        for seg in &path[..path.len() - 1] {
            let entry = table.entry(seg.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = match entry {
                toml::Value::Table(t) => t,
                _ => return Err(ConfigError(format!("{key}: `{seg}` is not a table"))),
            };
        }
        let leaf = &path[path.len() - 1];
        if let Some(toml::Value::Table(_) | toml::Value::Array(_)) = table.get(leaf) {
            return Err(ConfigError(format!("{key}: only scalar fields can be overridden")));
        }
        table.insert(leaf.clone(), parse_scalar(&raw));
        applied.push(path.join("."));
    }
    Ok(applied)
}

impl PipelineConfig {
    /// Parse a document, apply environment overrides and resolve paths
    /// relative to `base_dir`.
    pub fn from_str_with<I>(text: &str, base_dir: &Path, vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut doc: toml::Table = text.parse().map_err(|e| ConfigError(format!("config is not valid TOML: {e}")))?;
        for key in apply_overrides(&mut doc, vars)? {
            log::info!("config field {key} overridden from the environment");
        }
        let mut cfg: PipelineConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e| ConfigError(format!("config schema: {e}")))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    /// Load from a file with overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str_with(&text, &base, std::env::vars())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run.output_dir);
        for p in [&mut self.data.field, &mut self.data.locations, &mut self.forecast.tune_grid, &mut self.power.hub_field]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if !self.power.curve.starts_with("builtin:") {
            let mut p = PathBuf::from(&self.power.curve);
            fix(&mut p);
            self.power.curve = p.to_string_lossy().into_owned();
        }
    }

    /// Training length after defaults.
    pub fn n_train(&self, n_times: usize) -> usize {
        match (self.forecast.n_train, self.data.source) {
            (Some(n), _) => n,
            (None, Source::Lorenz96) => self.data.lorenz96.n_train,
            (None, Source::Files) => n_times * 4 / 5,
        }
    }

    /// Semantic checks that do not need the data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        match self.data.source {
            Source::Files => {
                for (name, p) in [("data.field", &self.data.field), ("data.locations", &self.data.locations)] {
                    match p {
                        None => return err(format!("{name} is required when data.source = \"files\"")),
                        Some(p) if !p.exists() => return err(format!("{name}: {} does not exist", p.display())),
                        _ => {}
                    }
                }
            }
            Source::Lorenz96 => {
                let spec = &self.data.lorenz96;
                spec.validate().map_err(|e| ConfigError(e.to_string()))?;
                let side = (spec.n as f64).sqrt().round() as usize;
                if side * side != spec.n {
                    return err(format!("data.lorenz96.n = {} must be a perfect square for the lattice layout", spec.n));
                }
                if self.trend.enabled {
                    return err("Lorenz-96 values can be negative; set trend.enabled = false".into());
                }
            }
        }
        for (name, p) in [("forecast.tune_grid", &self.forecast.tune_grid), ("power.hub_field", &self.power.hub_field)] {
            if let Some(p) = p {
                if !p.exists() {
                    return err(format!("{name}: {} does not exist", p.display()));
                }
            }
        }
        if !self.power.curve.starts_with("builtin:") && !Path::new(&self.power.curve).exists() {
            return err(format!("power.curve: {} does not exist", self.power.curve));
        }
        if self.forecast.max_lead == 0 {
            return err("forecast.max_lead must be at least 1".into());
        }
        if self.knots.n_red == 0 {
            return err("knots.n_red must be at least 1".into());
        }
        self.esn.validate().map_err(|e| ConfigError(format!("esn: {e}")))?;
        if !matches!(self.spde.alpha, 1 | 2) {
            return err("spde.alpha must be 1 or 2".into());
        }
        let c = &self.calibrate;
        if !(c.level > 0.0 && c.level < 1.0) || c.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return err("calibration levels must lie in (0, 1)".into());
        }
        if !(c.delta_step > 0.0 && c.delta_max >= c.delta_step) {
            return err("calibrate.delta_step must be positive and not exceed delta_max".into());
        }
        if !(self.power.hub_height > 0.0) {
            return err("power.hub_height must be positive".into());
        }
        Ok(())
    }
}
