use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{baseline_per, baseline_var1};
use super::lorenz::{simulate_lorenz96, Lorenz96Spec};
use super::score::{forecast_set_mspe, median, quantile};
use super::spatial::{knot_selector_baseline, simulate_biresolution, BiResolutionSpec, KnotBaseline, Scheme};
use crate::error::{Error, Result};
use crate::field::ForecastSet;
use crate::knots::{support_points, KnotSet, SupportPointOptions};
use crate::reservoir::{fit_esn, EsnHyperParams, LayerSpec};
use crate::rng::sub_seed;
use crate::spde::{build_mesh, fit_spde, SpdeFitOptions};

/// One score: `lead` is 0 for the spatial study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: String,
    pub lead: usize,
    pub seed: u64,
    pub mspe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub lead: usize,
    pub median: f64,
    pub iqr: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialBenchConfig {
    pub field: BiResolutionSpec,
    pub n_red: usize,
    pub n_sim: usize,
    pub seed: u64,
    pub mesh_vertices: usize,
    pub spde: SpdeFitOptions,
    pub support: SupportPointOptions,
}

impl Default for SpatialBenchConfig {
    fn default() -> Self {
        Self {
            field: BiResolutionSpec::default(),
            n_red: 100,
            n_sim: 20,
            seed: 1,
            mesh_vertices: 400,
            spde: SpdeFitOptions::default(),
            support: SupportPointOptions::default(),
        }
    }
}

impl SpatialBenchConfig {
    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.field.scheme = scheme;
        self
    }
}

pub const SPATIAL_METHODS: [&str; 4] = ["SP", "Grid", "Rand", "SF"];

fn select(method: &str, data: &crate::field::LocationTable, n_red: usize, seed: u64, sp: &SupportPointOptions) -> Result<KnotSet> {
    match method {
        "SP" => support_points(
            data,
            n_red,
            &SupportPointOptions {
                seed: sub_seed(seed, "support-points", 0),
                ..*sp
            },
        ),
        "Grid" => knot_selector_baseline(data, n_red, KnotBaseline::Grid, seed),
        "Rand" => knot_selector_baseline(data, n_red, KnotBaseline::Rand, seed),
        "SF" => knot_selector_baseline(data, n_red, KnotBaseline::Sf, seed),
        other => Err(Error::Argument(format!("unknown spatial method `{other}`"))),
    }
}

/// Interpolation MSPE at the non-knot locations of one snapshot.
pub fn spatial_replicate(cfg: &SpatialBenchConfig, seed: u64) -> Result<Vec<BenchRecord>> {
    let field = simulate_biresolution(&cfg.field, seed)?;
    let locs = field.locations();
    let y: Vec<f64> = field.values().row(0).iter().copied().collect();
    let mesh = build_mesh(locs, cfg.mesh_vertices)?;
    SPATIAL_METHODS
        .iter()
        .map(|&method| {
            let knots = select(method, locs, cfg.n_red, seed, &cfg.support)?;
            let pts: Vec<[f64; 2]> = knots.indices.iter().map(|&i| locs.get(i)).collect();
            let vals: Vec<f64> = knots.indices.iter().map(|&i| y[i]).collect();
            let snapshot = DMatrix::from_row_slice(1, vals.len(), &vals);
            let model = fit_spde(&pts, &snapshot, mesh.clone(), &cfg.spde)?;
            let mut is_knot = vec![false; y.len()];
            for &i in &knots.indices {
                is_knot[i] = true;
            }
            let test: Vec<usize> = (0..y.len()).filter(|&i| !is_knot[i]).collect();
            let targets: Vec<[f64; 2]> = test.iter().map(|&i| locs.get(i)).collect();
            let pred = model.interpolate(&vals, &targets)?;
            let mspe = test.iter().zip(&pred).map(|(&i, p)| (y[i] - p).powi(2)).sum::<f64>() / test.len().max(1) as f64;
            Ok(BenchRecord {
                method: method.to_string(),
                lead: 0,
                seed,
                mspe,
            })
        })
        .collect()
}

pub fn run_spatial_bench(cfg: &SpatialBenchConfig) -> Result<Vec<BenchRecord>> {
    let runs = (0..cfg.n_sim)
        .into_par_iter()
        .map(|r| spatial_replicate(cfg, sub_seed(cfg.seed, "spatial-replicate", r as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(runs.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LorenzBenchConfig {
    pub system: Lorenz96Spec,
    pub esn: EsnHyperParams,
    pub max_lead: usize,
    pub n_sim: usize,
    pub seed: u64,
}

/// Reservoir settings used by the Lorenz-96 bench.
pub fn lorenz_esn_defaults() -> EsnHyperParams {
    EsnHyperParams {
        layers: vec![LayerSpec {
            n_h: 1000,
            n_reduced: 1000,
            nu: 0.9,
            eta_w: 0.05,
            eta_in: 0.05,
            pi_w: 0.1,
            pi_in: 0.1,
        }],
        lambda: 100.0,
        ..EsnHyperParams::default()
    }
}

impl Default for LorenzBenchConfig {
    fn default() -> Self {
        Self {
            system: Lorenz96Spec::default(),
            esn: lorenz_esn_defaults(),
            max_lead: 3,
            n_sim: 20,
            seed: 1,
        }
    }
}

pub const LORENZ_METHODS: [&str; 4] = ["B-ESN", "ESN", "VAR", "PER"];

fn records(method: &str, seed: u64, sets: &[ForecastSet], series: &DMatrix<f64>) -> Result<Vec<BenchRecord>> {
    sets.iter()
        .map(|f| {
            Ok(BenchRecord {
                method: method.to_string(),
                lead: f.lead,
                seed,
                mspe: forecast_set_mspe(f, series)?,
            })
        })
        .collect()
}

pub fn lorenz_replicate(cfg: &LorenzBenchConfig, seed: u64) -> Result<Vec<BenchRecord>> {
    let field = simulate_lorenz96(&cfg.system, seed)?;
    let series = field.values();
    let n_train = cfg.system.n_train;
    let train = series.rows(0, n_train).into_owned();
    let model = fit_esn(&cfg.esn, &train, sub_seed(seed, "esn", 0))?;
    let mut out = records("B-ESN", seed, &model.forecast_batched(series, cfg.max_lead, cfg.esn.batch)?, series)?;
    out.extend(records("ESN", seed, &model.forecast(series, cfg.max_lead)?, series)?);
    out.extend(records("VAR", seed, &baseline_var1(series, n_train, cfg.max_lead)?, series)?);
    out.extend(records("PER", seed, &baseline_per(series, n_train, cfg.max_lead)?, series)?);
    Ok(out)
}

pub fn run_lorenz_bench(cfg: &LorenzBenchConfig) -> Result<Vec<BenchRecord>> {
    let runs = (0..cfg.n_sim)
        .into_par_iter()
        .map(|r| lorenz_replicate(cfg, sub_seed(cfg.seed, "lorenz-replicate", r as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(runs.into_iter().flatten().collect())
}

/// Median and IQR of MSPE per (method, lead), in first-seen method order.
pub fn summarize(records: &[BenchRecord]) -> Vec<MethodSummary> {
    let mut order: Vec<(String, usize)> = Vec::new();
    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        let key = (r.method.clone(), r.lead);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r.mspe);
    }
    order
        .into_iter()
        .map(|key| {
            let v = &groups[&key];
            MethodSummary {
                method: key.0,
                lead: key.1,
                median: median(v),
                iqr: quantile(v, 0.75) - quantile(v, 0.25),
                runs: v.len(),
            }
        })
        .collect()
}

/// Median MSPE for one method and lead, if present.
pub fn median_of(summary: &[MethodSummary], method: &str, lead: usize) -> Option<f64> {
    summary.iter().find(|s| s.method == method && s.lead == lead).map(|s| s.median)
}

/// CSV with columns `method,seed,lead,mspe`.
pub fn write_records_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("method,seed,lead,mspe\n");
    for r in records {
        s.push_str(&format!("{},{},{},{}\n", r.method, r.seed, r.lead, r.mspe));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
