//! Simulation benches: bi-resolution spatial
//! fields for comparing knot selectors, and Lorenz-96 for comparing
//! forecasters, with persistence and VAR(1) baselines and MSPE scoring.

pub mod baselines;
pub mod bench;
pub mod lorenz;
pub mod matern;
pub mod score;
pub mod spatial;

pub use baselines::{baseline_per, baseline_var1, fit_var1, rolling_origins, Var1Model};
pub use bench::{
    lorenz_esn_defaults, median_of, run_lorenz_bench, run_spatial_bench, summarize, write_records_csv, BenchRecord,
    LorenzBenchConfig, MethodSummary, SpatialBenchConfig, LORENZ_METHODS, SPATIAL_METHODS,
};
pub use lorenz::{integrate, mean_abs_correlation, rk4_step, simulate_lorenz96, simulate_lorenz96_from, Lorenz96Spec};
pub use matern::{bessel_k, bessel_k0, bessel_k1, correlation_matrix, matern_correlation, spde_matern_covariance};
pub use score::{forecast_set_mspe, median, mspe_by_time, quantile, score_mspe, truth_for, MspeSummary};
pub use spatial::{
    block_of, knot_selector_baseline, sample_scheme, simulate_biresolution, BiResolutionSpec, KnotBaseline, Scheme,
};
