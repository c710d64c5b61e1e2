//! The six pipeline stages. Each reads its inputs from the run directory,
//! writes its outputs there and returns their paths relative to it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use windcast::calibrate::{
    build_residual_panel, default_delta_grid, diagnostics_csv, empirical_covariance, location_coverage,
    marginal_half_widths, normal_multiplier, select_delta, shrink_covariance, DeltaProblem,
};
use windcast::container::Container;
use windcast::field::{read_field, FieldFormat, ForecastSet, LocationTable, SpaceTimeField};
use windcast::knots::{support_points, KnotSet, SupportPointOptions};
use windcast::power::{energy_difference, extrapolate, fit_shear, to_power, PowerCurve, ShearModel};
use windcast::reservoir::{fit_esn, tune, EsnGrid, EsnHyperParams, EsnModel};
use windcast::rng::sub_seed;
use windcast::simbench::{quantile, score_mspe, simulate_lorenz96};
use windcast::spde::{build_mesh, fit_spde, SpdeFitOptions, SpdeModel};
use windcast::trend::{fit_trend, TrendModel};

use crate::config::{PipelineConfig, Source};

pub const OBSERVED: &str = "trend/observed.bin";
pub const LOCATIONS: &str = "trend/locations.csv";
pub const TREND_MODEL: &str = "trend/trend.csv";
pub const RESIDUALS: &str = "trend/residuals.bin";
/// Per-location training means, removed when the harmonic trend is disabled.
pub const MEANS: &str = "trend/means.json";
pub const KNOTS: &str = "knots/knots.csv";
pub const ESN_MODEL: &str = "esn/model.bin";
pub const ESN_HYPER: &str = "esn/hyper.json";
pub const SPDE_MODEL: &str = "spde/model.bin";
pub const SPDE_METRICS: &str = "spde/metrics.json";
pub const CALIBRATION: &str = "calibrate/calibration.json";
pub const COVERAGE: &str = "calibrate/coverage.csv";
pub const POWER_SUMMARY: &str = "power/power_summary.csv";

pub fn esn_forecast(lead: usize) -> String {
    format!("esn/knots_lead{lead}.bin")
}

pub fn spde_residual(lead: usize) -> String {
    format!("spde/residual_lead{lead}.bin")
}

pub fn spde_forecast(lead: usize) -> String {
    format!("spde/forecast_lead{lead}.bin")
}

pub fn spde_forecast_csv(lead: usize) -> String {
    format!("spde/forecast_lead{lead}.csv")
}

pub fn delta_diagnostics(lead: usize) -> String {
    format!("calibrate/delta_lead{lead}.csv")
}

/// Everything a stage needs.
pub struct StageContext<'a> {
    pub cfg: &'a PipelineConfig,
    pub run_dir: &'a Path,
}

impl StageContext<'_> {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    fn read(&self, rel: &str) -> Result<SpaceTimeField> {
        read_field(self.path(rel), FieldFormat::FlatBinary).with_context(|| format!("reading {rel}"))
    }

    /// Observed speeds with their coordinates (flat binary files carry none).
    fn observed(&self) -> Result<SpaceTimeField> {
        Ok(self.read(OBSERVED)?.with_locations(self.locations()?)?)
    }

    fn locations(&self) -> Result<LocationTable> {
        LocationTable::read_csv(self.path(LOCATIONS)).with_context(|| format!("reading {LOCATIONS}"))
    }

    fn seed(&self, label: &str) -> u64 {
        sub_seed(self.cfg.run.seed, label, 0)
    }

    fn mkdir(&self, dir: &str) -> Result<()> {
        let p = self.path(dir);
        std::fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))
    }
}

pub fn write_bin(field: &SpaceTimeField, path: &Path) -> Result<()> {
    field.write(path, FieldFormat::FlatBinary).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Square lattice over the unit square, row by row.
pub fn lattice(n: usize) -> LocationTable {
    let side = (n as f64).sqrt().round() as usize;
    let step = 1.0 / (side.max(2) - 1) as f64;
    let coords = (0..n).map(|i| [(i % side) as f64 * step, (i / side) as f64 * step]).collect();
    LocationTable::new(coords).expect("lattice points are distinct")
}

/// Observed speeds with coordinates attached.
pub fn load_source(cfg: &PipelineConfig) -> Result<SpaceTimeField> {
    match cfg.data.source {
        Source::Files => {
            let fp = cfg.data.field.as_ref().context("data.field missing")?;
            let lp = cfg.data.locations.as_ref().context("data.locations missing")?;
            let field = read_field(fp, FieldFormat::from_path(fp)).with_context(|| format!("reading {}", fp.display()))?;
            let locs = LocationTable::read_csv(lp).with_context(|| format!("reading {}", lp.display()))?;
            Ok(field.with_locations(locs)?)
        }
        Source::Lorenz96 => {
            let spec = &cfg.data.lorenz96;
            let field = simulate_lorenz96(spec, sub_seed(cfg.run.seed, "lorenz96-source", 0))?;
            Ok(field.with_locations(lattice(spec.n))?)
        }
    }
}

fn check_split(n_train: usize, max_lead: usize, n_times: usize) -> Result<()> {
    if n_train < 2 || n_train + max_lead > n_times {
        return Err(windcast::Error::Argument(format!(
            "a series of {n_times} steps cannot hold {n_train} training steps plus lead {max_lead}"
        ))
        .into());
    }
    Ok(())
}

pub fn stage_trend(ctx: &StageContext) -> Result<Vec<String>> {
    let cfg = ctx.cfg;
    let field = load_source(cfg)?;
    if field.has_mask() {
        return Err(windcast::Error::Domain(
            "the forecasting stages need a complete field; fill or drop masked cells first".into(),
        )
        .into());
    }
    let n_train = cfg.n_train(field.n_times());
    check_split(n_train, cfg.forecast.max_lead, field.n_times())?;
    ctx.mkdir("trend")?;
    write_bin(&field, &ctx.path(OBSERVED))?;
    field.locations().write_csv(ctx.path(LOCATIONS))?;
    let mut out = vec![OBSERVED.to_string(), LOCATIONS.to_string()];
    let residuals = if cfg.trend.enabled {
        let model = fit_trend(&field.slice_times(0, n_train)?, &cfg.trend.periods)?;
        model.write(ctx.path(TREND_MODEL))?;
        out.push(TREND_MODEL.to_string());
        out.push(format!("{TREND_MODEL}.json"));
        model.detrend(&field)?
    } else {
        // Kriging assumes zero-mean residuals, so signed data is at least centred.
        let train = field.values().rows(0, n_train);
        let means: Vec<f64> = train.column_iter().map(|c| c.mean()).collect();
        write_json(&means, &ctx.path(MEANS))?;
        out.push(MEANS.to_string());
        let centred = DMatrix::from_fn(field.n_times(), field.n_locations(), |r, c| field.values()[(r, c)] - means[c]);
        field.map_values(centred)?
    };
    write_bin(&residuals, &ctx.path(RESIDUALS))?;
    out.push(RESIDUALS.to_string());
    Ok(out)
}

pub fn stage_knots(ctx: &StageContext) -> Result<Vec<String>> {
    let locs = ctx.locations()?;
    let k = &ctx.cfg.knots;
    let opts = SupportPointOptions {
        seed: ctx.seed("knots"),
        max_iter: k.max_iter,
        tol: k.tol,
    };
    let knots = support_points(&locs, k.n_red, &opts)?;
    ctx.mkdir("knots")?;
    knots.write(ctx.path(KNOTS), &locs)?;
    Ok(vec![KNOTS.to_string(), format!("{KNOTS}.json")])
}

fn read_knots(ctx: &StageContext, locs: &LocationTable) -> Result<KnotSet> {
    KnotSet::read(ctx.path(KNOTS), locs).with_context(|| format!("reading {KNOTS}"))
}

/// Hyper-parameter search over a TOML grid on the tail of the training period.
pub fn tune_from_grid(
    grid_path: &Path,
    series: &DMatrix<f64>,
    n_train: usize,
    validation: usize,
    max_lead: usize,
    seed: u64,
) -> Result<(EsnHyperParams, Vec<(EsnHyperParams, f64)>)> {
    let text = std::fs::read_to_string(grid_path).with_context(|| format!("reading {}", grid_path.display()))?;
    let grid: EsnGrid = toml::from_str(&text).map_err(|e| crate::error::ConfigError(format!("{}: {e}", grid_path.display())))?;
    let candidates = grid.expand();
    if validation == 0 || validation + 2 > n_train {
        bail!(crate::error::ConfigError(format!(
            "validation length {validation} does not fit in {n_train} training steps"
        )));
    }
    let fit_len = n_train - validation;
    let train = series.rows(0, fit_len).into_owned();
    let val = series.rows(fit_len, validation).into_owned();
    let (best, scores) = tune(&candidates, &train, &val, max_lead, seed)?;
    Ok((best, candidates.into_iter().zip(scores).collect()))
}

fn forecast_field(f: &ForecastSet, locs: LocationTable, template: &SpaceTimeField) -> Result<SpaceTimeField> {
    let first = f.origins[0] + f.lead;
    Ok(SpaceTimeField::new(f.point.clone(), locs, template.time(first), template.dt())?)
}

/// Row index of the first target of a forecast field within the observed series.
fn first_row(forecast: &SpaceTimeField, observed: &SpaceTimeField) -> Result<usize> {
    let r = (forecast.t0() - observed.t0()) / observed.dt();
    if r < 0.0 || (r - r.round()).abs() > 1e-6 || r.round() as usize + forecast.n_times() > observed.n_times() {
        bail!(windcast::Error::Shape("forecast times do not line up with the observed series".into()));
    }
    Ok(r.round() as usize)
}

/// Rebuild a forecast set from a stored forecast field.
pub fn forecast_set(forecast: &SpaceTimeField, lead: usize, observed: &SpaceTimeField) -> Result<ForecastSet> {
    let first = first_row(forecast, observed)?;
    if first < lead {
        bail!(windcast::Error::Shape(format!("lead {lead} forecast starts before the series")));
    }
    let origins = (0..forecast.n_times()).map(|r| first - lead + r).collect();
    Ok(ForecastSet::new(lead, origins, forecast.values().clone())?)
}

pub fn stage_esn(ctx: &StageContext) -> Result<Vec<String>> {
    let cfg = ctx.cfg;
    let residuals = ctx.read(RESIDUALS)?;
    let locs = ctx.locations()?;
    let knots = read_knots(ctx, &locs)?;
    let at_knots = residuals.select_locations(&knots.indices)?;
    let series = at_knots.values();
    let n_train = cfg.n_train(series.nrows());
    let max_lead = cfg.forecast.max_lead;
    check_split(n_train, max_lead, series.nrows())?;
    ctx.mkdir("esn")?;
    let mut out = Vec::new();
    let hp = match &cfg.forecast.tune_grid {
        Some(grid) => {
            let (best, scores) =
                tune_from_grid(grid, series, n_train, cfg.forecast.validation, max_lead, ctx.seed("esn-tune"))?;
            let mut csv = String::from("candidate,n_h,m,nu,lambda,eta_w,eta_in,pi_w,pi_in,alpha,mspe\n");
            for (i, (hp, s)) in scores.iter().enumerate() {
                let l = hp.layers.last().expect("validated");
                csv.push_str(&format!(
                    "{i},{},{},{},{},{},{},{},{},{},{s}\n",
                    l.n_h, hp.m, l.nu, hp.lambda, l.eta_w, l.eta_in, l.pi_w, l.pi_in, hp.alpha
                ));
            }
            let p = "esn/tune_scores.csv";
            std::fs::write(ctx.path(p), csv).with_context(|| format!("writing {p}"))?;
            out.push(p.to_string());
            best
        }
        None => cfg.esn.clone(),
    };
    let model = fit_esn(&hp, &series.rows(0, n_train).into_owned(), ctx.seed("esn"))?;
    model.to_container().write(ctx.path(ESN_MODEL))?;
    write_json(&hp, &ctx.path(ESN_HYPER))?;
    out.extend([ESN_MODEL.to_string(), ESN_HYPER.to_string()]);
    let sets = if cfg.forecast.batched {
        model.forecast_batched(series, max_lead, hp.batch)?
    } else {
        model.forecast(series, max_lead)?
    };
    for f in &sets {
        let rel = esn_forecast(f.lead);
        write_bin(&forecast_field(f, at_knots.locations().clone(), &residuals)?, &ctx.path(&rel))?;
        out.push(rel);
    }
    Ok(out)
}

/// Evenly spaced row indices, `count` of them (all rows when `count` is 0 or too large).
pub fn spaced_rows(n: usize, count: usize) -> Vec<usize> {
    if count == 0 || count >= n {
        return (0..n).collect();
    }
    (0..count).map(|i| i * n / count).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub lead: usize,
    pub mean: f64,
    pub median: f64,
    pub iqr: f64,
}

pub fn method_label(cfg: &PipelineConfig) -> &'static str {
    if cfg.forecast.batched {
        "B-ESN"
    } else {
        "ESN"
    }
}

fn truth_rows(observed: &SpaceTimeField, rows: impl Iterator<Item = usize>) -> DMatrix<f64> {
    let rows: Vec<usize> = rows.collect();
    DMatrix::from_fn(rows.len(), observed.n_locations(), |r, c| observed.values()[(rows[r], c)])
}

pub fn stage_spde(ctx: &StageContext) -> Result<Vec<String>> {
    let cfg = ctx.cfg;
    let residuals = ctx.read(RESIDUALS)?;
    let observed = ctx.read(OBSERVED)?;
    let locs = ctx.locations()?;
    let knots = read_knots(ctx, &locs)?;
    let knot_xy: Vec<[f64; 2]> = knots.indices.iter().map(|&i| locs.get(i)).collect();
    let n_train = cfg.n_train(residuals.n_times());
    let rows = spaced_rows(n_train, cfg.spde.fit_snapshots);
    let snapshots = DMatrix::from_fn(rows.len(), knot_xy.len(), |r, c| residuals.values()[(rows[r], knots.indices[c])]);
    let mesh = build_mesh(&locs, cfg.spde.mesh_vertices)?;
    let opts = SpdeFitOptions {
        order: cfg.spde.basis_order,
        alpha: cfg.spde.alpha,
        max_evals: cfg.spde.max_evals,
    };
    let model = fit_spde(&knot_xy, &snapshots, mesh, &opts)?;
    if !model.converged {
        log::warn!("SPDE optimizer stopped after {} evaluations without converging", model.evaluations);
    }
    ctx.mkdir("spde")?;
    model.to_container().write(ctx.path(SPDE_MODEL))?;
    model.mesh().write(ctx.path("spde/mesh_vertices.csv"), ctx.path("spde/mesh_triangles.csv"))?;
    write_json(model.params(), &ctx.path("spde/params.json"))?;
    let mut out: Vec<String> =
        [SPDE_MODEL, "spde/mesh_vertices.csv", "spde/mesh_triangles.csv", "spde/params.json"].map(String::from).into();

    let trend = if cfg.trend.enabled { Some(TrendModel::read(ctx.path(TREND_MODEL))?) } else { None };
    let means: Vec<f64> = if cfg.trend.enabled { Vec::new() } else { read_json(&ctx.path(MEANS))? };
    let mut metrics = Vec::new();
    let label = method_label(cfg);
    for lead in 1..=cfg.forecast.max_lead {
        let at_knots = ctx.read(&esn_forecast(lead))?;
        let mut interp = model.interpolate_many(at_knots.values(), locs.coords())?;
        // Knot sites keep their own forecasts; the posterior mean would shrink
        // them by the fitted nugget.
        for (j, &site) in knots.indices.iter().enumerate() {
            interp.set_column(site, &at_knots.values().column(j));
        }
        let resid_field = SpaceTimeField::new(interp, locs.clone(), at_knots.t0(), at_knots.dt())?;
        write_bin(&resid_field, &ctx.path(&spde_residual(lead)))?;
        let speeds = match &trend {
            Some(t) => t.retrend(&resid_field)?,
            None => {
                let v = resid_field.values();
                resid_field.map_values(DMatrix::from_fn(v.nrows(), v.ncols(), |r, c| v[(r, c)] + means[c]))?
            }
        };
        write_bin(&speeds, &ctx.path(&spde_forecast(lead)))?;
        speeds.write(ctx.path(&spde_forecast_csv(lead)), FieldFormat::Csv)?;
        out.extend([spde_residual(lead), spde_forecast(lead), spde_forecast_csv(lead)]);

        let first = first_row(&speeds, &observed)?;
        let truth = truth_rows(&observed, first..first + speeds.n_times());
        let persistence = truth_rows(&observed, first - lead..first - lead + speeds.n_times());
        for (method, pred) in [(label, speeds.values()), ("PER", &persistence)] {
            let s = score_mspe(pred, &truth)?;
            metrics.push(MetricRow {
                method: method.to_string(),
                lead,
                mean: s.mean,
                median: s.median,
                iqr: s.iqr,
            });
        }
    }
    write_json(&metrics, &ctx.path(SPDE_METRICS))?;
    out.push(SPDE_METRICS.to_string());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadCalibration {
    pub lead: usize,
    pub delta: f64,
    pub half_side: f64,
    pub skipped_half_sides: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub level: f64,
    pub center: [f64; 2],
    pub leads: Vec<LeadCalibration>,
}

/// Median and interquartile range of per-location coverage.
fn coverage_stats(residuals: &DMatrix<f64>, variances: &[f64], z: f64) -> (f64, f64) {
    let hw: Vec<f64> = variances.iter().map(|v| z * v.max(0.0).sqrt()).collect();
    let cov = location_coverage(residuals, &hw);
    (quantile(&cov, 0.5), quantile(&cov, 0.75) - quantile(&cov, 0.25))
}

pub fn half_side_grid(step: f64, max: f64) -> Vec<f64> {
    let n = (max / step + 1e-9).floor() as usize;
    // Rounded so that printed half-sides read 0.3 rather than 0.30000000000000004.
    (1..=n).map(|i| (i as f64 * step * 1e9).round() / 1e9).collect()
}

/// Calibrate forecasts against the observed series: per lead, select the
/// shrinkage weight and tabulate coverage at each requested level.
pub fn calibrate_forecasts(
    observed: &SpaceTimeField,
    forecasts: &[(usize, SpaceTimeField)],
    spde_cov: &DMatrix<f64>,
    settings: &crate::config::CalibrateConfig,
) -> Result<(CalibrationSummary, String, Vec<(usize, String)>)> {
    let locs = observed.locations();
    let sets = forecasts
        .iter()
        .map(|(lead, f)| forecast_set(f, *lead, observed))
        .collect::<Result<Vec<_>>>()?;
    let panel = build_residual_panel(&sets, observed.values())?;
    let center = settings.center.unwrap_or_else(|| {
        let [x0, y0, x1, y1] = locs.bbox();
        [0.5 * (x0 + x1), 0.5 * (y0 + y1)]
    });
    let half_sides = half_side_grid(settings.delta_step, settings.delta_max);
    let mut leads = Vec::new();
    let mut diag_files = Vec::new();
    let mut table = String::from(
        "lead,expected,calibrated_median,calibrated_iqr,spatial_median,spatial_iqr,empirical_median,empirical_iqr,marginal_median,marginal_iqr\n",
    );
    for lr in &panel.leads {
        let centered = lr.centered();
        let emp = empirical_covariance(&centered)?;
        let p = DeltaProblem {
            residuals: &centered,
            spde: spde_cov,
            emp: &emp,
            locations: locs.coords(),
            center,
        };
        let sel = select_delta(&p, &half_sides, &default_delta_grid(), settings.level)?;
        let combined = shrink_covariance(spde_cov, &emp, sel.delta)?;
        diag_files.push((lr.lead, diagnostics_csv(&sel)));
        let diag = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m[(i, i)]).collect::<Vec<f64>>();
        let (d_star, d_spde, d_emp) = (diag(&combined), diag(spde_cov), diag(&emp));
        for &level in &settings.levels {
            let z = normal_multiplier(level)?;
            let (cm, ci) = coverage_stats(&centered, &d_star, z);
            let (sm, si) = coverage_stats(&centered, &d_spde, z);
            let (em, ei) = coverage_stats(&centered, &d_emp, z);
            let hw = marginal_half_widths(lr, level)?;
            let mc = location_coverage(&centered, &hw);
            let (mm, mi) = (quantile(&mc, 0.5), quantile(&mc, 0.75) - quantile(&mc, 0.25));
            table.push_str(&format!("{},{level},{cm},{ci},{sm},{si},{em},{ei},{mm},{mi}\n", lr.lead));
        }
        leads.push(LeadCalibration {
            lead: lr.lead,
            delta: sel.delta,
            half_side: sel.half_side,
            skipped_half_sides: sel.skipped,
        });
    }
    let summary = CalibrationSummary {
        level: settings.level,
        center,
        leads,
    };
    Ok((summary, table, diag_files))
}

pub fn stage_calibrate(ctx: &StageContext) -> Result<Vec<String>> {
    let cfg = ctx.cfg;
    let observed = ctx.observed()?;
    let model = SpdeModel::from_container(&Container::read(ctx.path(SPDE_MODEL))?)?;
    let locs = observed.locations().clone();
    let forecasts = (1..=cfg.forecast.max_lead)
        .map(|lead| Ok((lead, ctx.read(&spde_forecast(lead))?)))
        .collect::<Result<Vec<_>>>()?;
    let spde_cov = model.covariance(locs.coords(), cfg.calibrate.covariance)?;
    let (summary, table, diags) = calibrate_forecasts(&observed, &forecasts, &spde_cov, &cfg.calibrate)?;
    ctx.mkdir("calibrate")?;
    write_json(&summary, &ctx.path(CALIBRATION))?;
    std::fs::write(ctx.path(COVERAGE), table).with_context(|| format!("writing {COVERAGE}"))?;
    let mut out = vec![CALIBRATION.to_string(), COVERAGE.to_string()];
    for (lead, csv) in diags {
        let rel = delta_diagnostics(lead);
        std::fs::write(ctx.path(&rel), csv).with_context(|| format!("writing {rel}"))?;
        out.push(rel);
    }
    Ok(out)
}

pub fn load_curve(spec: &str) -> Result<PowerCurve> {
    Ok(match spec {
        "builtin:nordex-like" => PowerCurve::nordex_like(),
        "builtin:ge-like" => PowerCurve::ge_like(),
        s if s.starts_with("builtin:") => bail!(crate::error::ConfigError(format!("unknown built-in curve {s}"))),
        path => PowerCurve::read(path).with_context(|| format!("reading curve {path}"))?,
    })
}

/// Speeds at hub height converted to power. Negative inputs, which only the
/// synthetic sources produce, are treated as calm.
pub fn speeds_to_power(speeds: &DMatrix<f64>, shear: &ShearModel, hub_height: f64, curve: &PowerCurve) -> Result<DMatrix<f64>> {
    let hub = extrapolate(&speeds.map(|v| v.max(0.0)), shear, hub_height)?;
    Ok(to_power(&hub, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub model: String,
    pub lead: usize,
    pub energy_kwh: f64,
    pub cost_usd: f64,
}

pub fn stage_power(ctx: &StageContext) -> Result<Vec<String>> {
    let cfg = ctx.cfg;
    let pc = &cfg.power;
    let observed = ctx.read(OBSERVED)?;
    let curve = load_curve(&pc.curve)?;
    let n = observed.n_locations();
    let shear = match &pc.hub_field {
        Some(p) => {
            let hub = read_field(p, FieldFormat::from_path(p)).with_context(|| format!("reading {}", p.display()))?;
            let n_train = cfg.n_train(observed.n_times());
            let surface = observed.values().rows(0, n_train).into_owned();
            if hub.n_times() < n_train {
                bail!(windcast::Error::Shape("hub-height series is shorter than the training period".into()));
            }
            fit_shear(&surface, &hub.values().rows(0, n_train).into_owned(), pc.hub_height)?
        }
        None => ShearModel::constant(n, pc.shear),
    };
    let mut rows = Vec::new();
    let label = method_label(cfg);
    for lead in 1..=cfg.forecast.max_lead {
        let f = ctx.read(&spde_forecast(lead))?;
        let first = first_row(&f, &observed)?;
        let m = f.n_times();
        let truth = speeds_to_power(&truth_rows(&observed, first..first + m), &shear, pc.hub_height, &curve)?;
        let per = speeds_to_power(&truth_rows(&observed, first - lead..first - lead + m), &shear, pc.hub_height, &curve)?;
        let model = speeds_to_power(f.values(), &shear, pc.hub_height, &curve)?;
        for (name, pred) in [(label, &model), ("PER", &per)] {
            let kwh = energy_difference(pred, &truth)? * observed.dt();
            rows.push(EnergyRow {
                model: name.to_string(),
                lead,
                energy_kwh: kwh,
                cost_usd: kwh / 1000.0 * pc.price_usd_per_mwh,
            });
        }
    }
    ctx.mkdir("power")?;
    let mut csv = String::from("model,lead,energy_kwh,cost_usd\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.model, r.lead, r.energy_kwh, r.cost_usd));
    }
    std::fs::write(ctx.path(POWER_SUMMARY), csv).with_context(|| format!("writing {POWER_SUMMARY}"))?;
    write_json(&shear, &ctx.path("power/shear.json"))?;
    write_json(&rows, &ctx.path("power/energy.json"))?;
    Ok(vec![POWER_SUMMARY.to_string(), "power/shear.json".into(), "power/energy.json".into()])
}

/// Read an ESN model container.
pub fn read_esn(path: &Path) -> Result<EsnModel> {
    Ok(EsnModel::from_container(&Container::read(path)?)?)
}

pub fn read_spde(path: &Path) -> Result<SpdeModel> {
    Ok(SpdeModel::from_container(&Container::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_layout() {
        let l = lattice(9);
        assert_eq!(l.get(0), [0.0, 0.0]);
        assert_eq!(l.get(5), [1.0, 0.5]);
        assert_eq!(l.get(8), [1.0, 1.0]);
    }

    #[test]
    fn spaced_rows_cover_the_range() {
        assert_eq!(spaced_rows(10, 0), (0..10).collect::<Vec<_>>());
        assert_eq!(spaced_rows(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(spaced_rows(3, 7).len(), 3);
    }

    #[test]
    fn half_side_grid_includes_the_maximum() {
        let g = half_side_grid(0.05, 0.5);
        assert_eq!(g.len(), 10);
        assert!((g[9] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn forecast_sets_round_trip_through_fields() {
        let obs = SpaceTimeField::new(DMatrix::from_fn(10, 2, |r, c| (r + c) as f64), lattice(4).subset(&[0, 1]).unwrap(), 5.0, 1.0).unwrap();
        let f = ForecastSet::new(2, vec![4, 5, 6], DMatrix::zeros(3, 2)).unwrap();
        let field = forecast_field(&f, obs.locations().clone(), &obs).unwrap();
        assert_eq!(field.t0(), 11.0);
        let back = forecast_set(&field, 2, &obs).unwrap();
        assert_eq!(back.origins, vec![4, 5, 6]);
    }
}
