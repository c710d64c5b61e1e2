//! Command-line interface: argument definitions and their handlers.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use windcast::field::{read_field, write_field, FieldFormat, LocationTable, SpaceTimeField};
use windcast::power::{energy_difference, fit_shear, ShearModel, DEFAULT_SHEAR};
use windcast::reservoir::{fit_esn, EsnHyperParams};
use windcast::simbench::{
    run_lorenz_bench, run_spatial_bench, summarize, write_records_csv, BenchRecord, LorenzBenchConfig, Scheme,
    SpatialBenchConfig,
};
use windcast::spde::{build_mesh, fit_spde, CovarianceKind, SpdeFitOptions};

use crate::config::PipelineConfig;
use crate::error::ConfigError;
use crate::pipeline::{run_pipeline, run_until};
use crate::report::{emit_report, BENCH_RECORDS};
use crate::stages::{self, load_curve, read_esn, read_spde, speeds_to_power, write_json};

#[derive(Debug, Parser)]
#[command(name = "windcast", version, about = "Spatio-temporal wind speed forecasting with calibrated uncertainty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the harmonic trend and write standardized residuals (pipeline stage).
    Trend(TrendArgs),
    /// Choose forecasting knots by support points (pipeline stage).
    SelectKnots(KnotArgs),
    /// Echo-state forecasting on a field file.
    #[command(subcommand)]
    Esn(EsnCommand),
    /// Fit or apply the SPDE interpolator.
    #[command(subcommand)]
    Spde(SpdeCommand),
    /// Calibrate prediction intervals (pipeline stage).
    Calibrate(CalibrateArgs),
    /// Convert speeds to power or score forecasts in energy terms.
    #[command(subcommand)]
    Power(PowerCommand),
    /// Simulation benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Run the whole pipeline described by a config file.
    Run(RunArgs),
    /// Tables and plot-ready CSVs from a run or bench directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Pipeline config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Recompute even if the manifest says the stage is current.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrendArgs {
    #[command(flatten)]
    pub cfg: ConfigArg,
    /// Harmonic periods in time steps, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub periods: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct KnotArgs {
    #[command(flatten)]
    pub cfg: ConfigArg,
    #[arg(long)]
    pub n_red: Option<usize>,
    /// Root seed (overrides `run.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub cfg: ConfigArg,
    /// Nominal level used to select the shrinkage weight.
    #[arg(long)]
    pub level: Option<f64>,
    /// Centre of the nested squares, as `x,y`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub center: Option<Vec<f64>>,
    /// Largest square half-side tried.
    #[arg(long)]
    pub delta_max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub cfg: ConfigArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run or bench output directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Where to write the report (default: `<run>/report`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeriesArgs {
    /// Field file (`.csv` or flat binary).
    #[arg(long)]
    pub series: PathBuf,
    /// Training rows at the start of the series (default: 80%).
    #[arg(long)]
    pub n_train: Option<usize>,
}

impl SeriesArgs {
    fn load(&self) -> Result<(SpaceTimeField, usize)> {
        let f = read_field(&self.series, FieldFormat::from_path(&self.series))
            .with_context(|| format!("reading {}", self.series.display()))?;
        let n_train = self.n_train.unwrap_or(f.n_times() * 4 / 5);
        if n_train == 0 || n_train > f.n_times() {
            bail!(ConfigError(format!("--n-train {n_train} does not fit a series of {} steps", f.n_times())));
        }
        Ok((f, n_train))
    }
}

#[derive(Debug, Subcommand)]
pub enum EsnCommand {
    /// Fit on the training rows of a series and save the model.
    Fit {
        #[command(flatten)]
        series: SeriesArgs,
        /// Hyper-parameters (TOML or JSON); defaults are used when omitted.
        #[arg(long)]
        hyper: Option<PathBuf>,
        /// Number of ensemble members (overrides the hyper-parameter file).
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rolling forecasts over the test rows of a series.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        /// The series the model was fitted on, continued past the training rows.
        #[arg(long)]
        series: PathBuf,
        /// Maximum lead.
        #[arg(long, default_value_t = 3)]
        lead: usize,
        /// Refit the readout every this many origins.
        #[arg(long)]
        batch: Option<usize>,
        /// Also write every ensemble member.
        #[arg(long)]
        ensemble: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid search on the tail of the training rows.
    Tune {
        #[command(flatten)]
        series: SeriesArgs,
        /// Grid file (TOML lists per hyper-parameter).
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 100)]
        validation: usize,
        #[arg(long, default_value_t = 3)]
        lead: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SpdeCommand {
    /// Fit the interpolator to knot values.
    Fit {
        /// Knot values, one column per knot.
        #[arg(long)]
        field: PathBuf,
        /// Knot coordinates (`id,x,y`).
        #[arg(long)]
        knots: PathBuf,
        /// Locations the mesh must cover (default: the knots).
        #[arg(long)]
        domain: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        mesh_vertices: usize,
        /// Fourier order of the nonstationary parameters (0 = stationary).
        #[arg(long, default_value_t = 0)]
        basis_order: usize,
        #[arg(long, default_value_t = 2)]
        alpha: u8,
        /// Optimizer budget (0 = automatic).
        #[arg(long, default_value_t = 0)]
        max_evals: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpolate knot values to target locations.
    Interpolate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        field: PathBuf,
        /// Target coordinates (`id,x,y`).
        #[arg(long)]
        targets: PathBuf,
        /// Also write the covariance at the targets to this CSV.
        #[arg(long)]
        covariance: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TurbineArgs {
    /// `builtin:nordex-like`, `builtin:ge-like` or a curve CSV.
    #[arg(long, default_value = "builtin:nordex-like")]
    pub curve: String,
    #[arg(long, default_value_t = 80.0)]
    pub hub_height: f64,
    /// Shear exponent used at every location.
    #[arg(long, default_value_t = DEFAULT_SHEAR)]
    pub shear: f64,
    /// Hub-height observations to fit per-location shear instead.
    #[arg(long)]
    pub hub_field: Option<PathBuf>,
}

impl TurbineArgs {
    fn shear(&self, surface: &SpaceTimeField) -> Result<ShearModel> {
        match &self.hub_field {
            Some(p) => {
                let hub = read_field(p, FieldFormat::from_path(p))?;
                Ok(fit_shear(surface.values(), hub.values(), self.hub_height)?)
            }
            None => Ok(ShearModel::constant(surface.n_locations(), self.shear)),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum PowerCommand {
    /// Speeds at 10 m to turbine power in kW.
    Convert {
        #[arg(long)]
        speeds: PathBuf,
        #[command(flatten)]
        turbine: TurbineArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Energy difference between forecast and observed speeds.
    Score {
        #[arg(long)]
        forecast: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[command(flatten)]
        turbine: TurbineArgs,
        /// USD per MWh.
        #[arg(long, default_value_t = 70.0)]
        price: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Knot-selection study on simulated bi-resolution fields.
    Spatial {
        #[arg(long, default_value = "chessboard")]
        scheme: String,
        /// Optional TOML with the full bench settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        nsim: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Temporal study on Lorenz-96 trajectories.
    Lorenz96 {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Maximum lead.
        #[arg(long)]
        leads: Option<usize>,
        #[arg(long)]
        nsim: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(a: &ConfigArg) -> Result<PipelineConfig> {
    Ok(PipelineConfig::load(&a.config)?)
}

fn read_toml_or_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
    } else {
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
    }
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Trend(a) => {
            let mut cfg = load_config(&a.cfg)?;
            if let Some(p) = a.periods {
                cfg.trend.periods = p;
            }
            print_json(&run_until(&cfg, a.cfg.force, Some("trend"))?);
        }
        Command::SelectKnots(a) => {
            let mut cfg = load_config(&a.cfg)?;
            if let Some(v) = a.n_red {
                cfg.knots.n_red = v;
            }
            if let Some(v) = a.seed {
                cfg.run.seed = v;
            }
            if let Some(v) = a.tol {
                cfg.knots.tol = v;
            }
            if let Some(v) = a.max_iter {
                cfg.knots.max_iter = v;
            }
            print_json(&run_until(&cfg, a.cfg.force, Some("knots"))?);
        }
        Command::Calibrate(a) => {
            let mut cfg = load_config(&a.cfg)?;
            if let Some(v) = a.level {
                cfg.calibrate.level = v;
            }
            if let Some(c) = a.center {
                cfg.calibrate.center = Some([c[0], c[1]]);
            }
            if let Some(v) = a.delta_max {
                cfg.calibrate.delta_max = v;
            }
            print_json(&run_until(&cfg, a.cfg.force, Some("calibrate"))?);
        }
        Command::Run(a) => {
            let cfg = load_config(&a.cfg)?;
            print_json(&run_pipeline(&cfg, a.cfg.force)?);
        }
        Command::Report(a) => {
            let out = a.out.unwrap_or_else(|| a.run.join("report"));
            print_json(&emit_report(&a.run, &out)?);
        }
        Command::Esn(c) => esn(c)?,
        Command::Spde(c) => spde(c)?,
        Command::Power(c) => power(c)?,
        Command::Bench(c) => bench(c)?,
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn esn(cmd: EsnCommand) -> Result<()> {
    match cmd {
        EsnCommand::Fit { series, hyper, ensemble, seed, out } => {
            let (field, n_train) = series.load()?;
            let mut hp: EsnHyperParams = match hyper {
                Some(p) => read_toml_or_json(&p)?,
                None => EsnHyperParams::default(),
            };
            if let Some(e) = ensemble {
                hp.ensemble = e;
            }
            hp.validate().map_err(|e| ConfigError(e.to_string()))?;
            let model = fit_esn(&hp, &field.values().rows(0, n_train).into_owned(), seed)?;
            ensure_parent(&out)?;
            model.to_container().write(&out)?;
            log::info!("wrote {}", out.display());
        }
        EsnCommand::Forecast { model, series, lead, batch, ensemble, out } => {
            let model = read_esn(&model)?;
            let field = read_field(&series, FieldFormat::from_path(&series))?;
            let sets = match batch {
                Some(b) => model.forecast_batched(field.values(), lead, b)?,
                None => model.forecast(field.values(), lead)?,
            };
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for f in &sets {
                let t0 = field.time(f.origins[0] + f.lead);
                let point = SpaceTimeField::new(f.point.clone(), field.locations().clone(), t0, field.dt())?;
                write_field(&point, out.join(format!("lead{}.bin", f.lead)), FieldFormat::FlatBinary)?;
                write_field(&point, out.join(format!("lead{}.csv", f.lead)), FieldFormat::Csv)?;
                if ensemble {
                    for (j, m) in f.ensemble.iter().enumerate() {
                        let member = SpaceTimeField::new(m.clone(), field.locations().clone(), t0, field.dt())?;
                        write_field(&member, out.join(format!("lead{}_member{j}.bin", f.lead)), FieldFormat::FlatBinary)?;
                    }
                }
            }
        }
        EsnCommand::Tune { series, grid, validation, lead, seed, out } => {
            let (field, n_train) = series.load()?;
            let (best, scores) = stages::tune_from_grid(&grid, field.values(), n_train, validation, lead, seed)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_json(&best, &out.join("best.json"))?;
            let scored: Vec<serde_json::Value> = scores
                .iter()
                .map(|(hp, s)| serde_json::json!({ "hyper": hp, "mspe": s }))
                .collect();
            write_json(&scored, &out.join("scores.json"))?;
            print_json(&best);
        }
    }
    Ok(())
}

fn spde(cmd: SpdeCommand) -> Result<()> {
    match cmd {
        SpdeCommand::Fit { field, knots, domain, mesh_vertices, basis_order, alpha, max_evals, out } => {
            let values = read_field(&field, FieldFormat::from_path(&field))?;
            let knot_locs = LocationTable::read_csv(&knots)?;
            if knot_locs.len() != values.n_locations() {
                bail!(windcast::Error::Shape(format!(
                    "{} knots but the field has {} columns",
                    knot_locs.len(),
                    values.n_locations()
                )));
            }
            let cover = match domain {
                Some(p) => LocationTable::read_csv(&p)?,
                None => knot_locs.clone(),
            };
            let mesh = build_mesh(&cover, mesh_vertices)?;
            let opts = SpdeFitOptions { order: basis_order, alpha, max_evals };
            let model = fit_spde(knot_locs.coords(), values.values(), mesh, &opts)?;
            ensure_parent(&out)?;
            model.to_container().write(&out)?;
            print_json(model.params());
        }
        SpdeCommand::Interpolate { model, field, targets, covariance, out } => {
            let model = read_spde(&model)?;
            let values = read_field(&field, FieldFormat::from_path(&field))?;
            let targets = LocationTable::read_csv(&targets)?;
            let interp = model.interpolate_many(values.values(), targets.coords())?;
            let result = SpaceTimeField::new(interp, targets.clone(), values.t0(), values.dt())?;
            ensure_parent(&out)?;
            write_field(&result, &out, FieldFormat::from_path(&out))?;
            if let Some(p) = covariance {
                let cov = model.covariance(targets.coords(), CovarianceKind::Prior)?;
                write_matrix_csv(&cov, &p)?;
            }
        }
    }
    Ok(())
}

fn write_matrix_csv(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut s = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    ensure_parent(path)?;
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn power(cmd: PowerCommand) -> Result<()> {
    match cmd {
        PowerCommand::Convert { speeds, turbine, out } => {
            let f = read_field(&speeds, FieldFormat::from_path(&speeds))?;
            let curve = load_curve(&turbine.curve)?;
            let shear = turbine.shear(&f)?;
            let p = speeds_to_power(f.values(), &shear, turbine.hub_height, &curve)?;
            ensure_parent(&out)?;
            write_field(&f.map_values(p)?, &out, FieldFormat::from_path(&out))?;
        }
        PowerCommand::Score { forecast, truth, turbine, price } => {
            let f = read_field(&forecast, FieldFormat::from_path(&forecast))?;
            let t = read_field(&truth, FieldFormat::from_path(&truth))?;
            let curve = load_curve(&turbine.curve)?;
            let shear = turbine.shear(&t)?;
            let pf = speeds_to_power(f.values(), &shear, turbine.hub_height, &curve)?;
            let pt = speeds_to_power(t.values(), &shear, turbine.hub_height, &curve)?;
            let kwh = energy_difference(&pf, &pt)? * t.dt();
            print_json(&serde_json::json!({ "energy_kwh": kwh, "cost_usd": kwh / 1000.0 * price }));
        }
    }
    Ok(())
}

fn write_bench(out: &Path, records: &[BenchRecord], settings: &impl serde::Serialize) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&records, &out.join(BENCH_RECORDS))?;
    write_records_csv(records, out.join("records.csv"))?;
    let summary = summarize(records);
    write_json(&serde_json::json!({ "settings": settings, "summary": summary }), &out.join("summary.json"))?;
    print_json(&summary);
    Ok(())
}

fn bench(cmd: BenchCommand) -> Result<()> {
    match cmd {
        BenchCommand::Spatial { scheme, config, nsim, seed, out } => {
            let mut cfg: SpatialBenchConfig = match config {
                Some(p) => read_toml_or_json(&p)?,
                None => SpatialBenchConfig::default(),
            };
            let scheme: Scheme = scheme.parse().map_err(|e: windcast::Error| ConfigError(e.to_string()))?;
            cfg = cfg.with_scheme(scheme);
            if let Some(n) = nsim {
                cfg.n_sim = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let records = run_spatial_bench(&cfg)?;
            write_bench(&out, &records, &cfg)?;
        }
        BenchCommand::Lorenz96 { config, leads, nsim, seed, out } => {
            let mut cfg: LorenzBenchConfig = match config {
                Some(p) => read_toml_or_json(&p)?,
                None => LorenzBenchConfig::default(),
            };
            if let Some(l) = leads {
                cfg.max_lead = l;
            }
            if let Some(n) = nsim {
                cfg.n_sim = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let records = run_lorenz_bench(&cfg)?;
            write_bench(&out, &records, &cfg)?;
        }
    }
    Ok(())
}
