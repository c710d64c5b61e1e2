//! Synthetic wind data for examples and tests.
//!
//! Square-root speeds follow a harmonic daily cycle plus a spatially
//! correlated AR(1) anomaly, so every pipeline stage has something to fit.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use windcast::field::{LocationTable, SpaceTimeField};
use windcast::rng::child_rng;

/// Hourly speeds at `side * side` jittered lattice sites over `n_times` hours.
pub fn synthetic_wind(side: usize, n_times: usize, seed: u64) -> windcast::Result<SpaceTimeField> {
    let mut rng = child_rng(seed, "sample-sites", 0);
    let step = 1.0 / side as f64;
    let coords: Vec<[f64; 2]> = (0..side * side)
        .map(|i| {
            let (cx, cy) = ((i % side) as f64 + 0.5, (i / side) as f64 + 0.5);
            [
                (cx + 0.3 * (rng.random::<f64>() - 0.5)) * step,
                (cy + 0.3 * (rng.random::<f64>() - 0.5)) * step,
            ]
        })
        .collect();
    let n = coords.len();
    let corr = DMatrix::from_fn(n, n, |i, j| {
        let d = ((coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2)).sqrt();
        (-d / 0.3).exp()
    });
    let l = corr.cholesky().expect("exponential correlation is positive definite").l();
    let mut rng = child_rng(seed, "sample-values", 0);
    let phi: f64 = 0.85;
    let innov = (1.0 - phi * phi).sqrt();
    let mut anomaly = vec![0.0; n];
    let mut values = DMatrix::zeros(n_times, n);
    for t in 0..n_times {
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..n {
            let shock: f64 = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
            anomaly[i] = phi * anomaly[i] + innov * shock;
        }
        let tt = t as f64;
        for (i, c) in coords.iter().enumerate() {
            let level = 2.2 + 0.4 * c[0] - 0.2 * c[1];
            let cycle = 0.35 * (2.0 * std::f64::consts::PI * tt / 24.0).cos() + 0.1 * (2.0 * std::f64::consts::PI * tt / 12.0).sin();
            let root = (level + cycle + 0.45 * anomaly[i]).max(0.0);
            values[(t, i)] = root * root;
        }
    }
    SpaceTimeField::new(values, LocationTable::new(coords)?, 0.0, 1.0)
}
