use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{LocationTable, SpaceTimeField};
use crate::rng::child_rng;

/// Any state component above this magnitude counts as a blow-up.
pub const BLOW_UP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lorenz96Spec {
    pub n: usize,
    pub forcing: f64,
    /// RK4 step in model time units.
    pub dt: f64,
    /// Integration steps per recorded time point.
    pub thin: usize,
    /// Recorded time points kept.
    pub n_times: usize,
    pub n_train: usize,
    /// Recorded time points discarded before the kept ones.
    pub transient: usize,
    /// Standard deviation of the initial perturbation around the forcing.
    pub perturbation: f64,
}

impl Default for Lorenz96Spec {
    fn default() -> Self {
        Self {
            n: 81,
            forcing: 4.5,
            dt: 0.01,
            thin: 10,
            n_times: 1000,
            n_train: 800,
            transient: 500,
            perturbation: 1.0,
        }
    }
}

impl Lorenz96Spec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::Argument(format!("Lorenz-96 needs at least 4 components, got {}", self.n)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Argument("step size must be positive".into()));
        }
        if self.thin == 0 || self.n_times == 0 {
            return Err(Error::Argument("thinning and series length must be positive".into()));
        }
        if self.n_train == 0 || self.n_train >= self.n_times {
            return Err(Error::Argument("training length must lie strictly inside the series".into()));
        }
        Ok(())
    }
}

/// Time derivative of the Lorenz-96 system with cyclic indexing.
pub fn lorenz96_rhs(y: &[f64], forcing: f64, out: &mut [f64]) {
    let n = y.len();
    for i in 0..n {
        let ip1 = y[(i + 1) % n];
        let im1 = y[(i + n - 1) % n];
        let im2 = y[(i + n - 2) % n];
        out[i] = (ip1 - im2) * im1 - y[i] + forcing;
    }
}

/// One classical fourth-order Runge-Kutta step, in place.
pub fn rk4_step(y: &mut [f64], forcing: f64, dt: f64) {
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    lorenz96_rhs(y, forcing, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    lorenz96_rhs(&tmp, forcing, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    lorenz96_rhs(&tmp, forcing, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    lorenz96_rhs(&tmp, forcing, &mut k4);
    for i in 0..n {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrate `steps` RK4 steps from `y0`.
pub fn integrate(y0: &[f64], forcing: f64, dt: f64, steps: usize) -> Result<Vec<f64>> {
    let mut y = y0.to_vec();
    for s in 0..steps {
        rk4_step(&mut y, forcing, dt);
        if y.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
            return Err(Error::Numerical(format!("Lorenz-96 integration blew up at step {s}")));
        }
    }
    Ok(y)
}

/// Simulate a series from a random start near the forcing value. Locations
/// are the component indices on a line.
pub fn simulate_lorenz96(spec: &Lorenz96Spec, seed: u64) -> Result<SpaceTimeField> {
    spec.validate()?;
    let mut rng = child_rng(seed, "lorenz96", 0);
    let y0: Vec<f64> = (0..spec.n)
        .map(|_| spec.forcing + spec.perturbation * rng.sample::<f64, _>(StandardNormal))
        .collect();
    simulate_lorenz96_from(spec, &y0)
}

/// As [`simulate_lorenz96`] from a given initial state.
pub fn simulate_lorenz96_from(spec: &Lorenz96Spec, y0: &[f64]) -> Result<SpaceTimeField> {
    spec.validate()?;
    if y0.len() != spec.n {
        return Err(Error::Shape(format!("initial state has {} components, expected {}", y0.len(), spec.n)));
    }
    let mut y = integrate(y0, spec.forcing, spec.dt, spec.transient * spec.thin)?;
    let mut values = DMatrix::zeros(spec.n_times, spec.n);
    for t in 0..spec.n_times {
        y = integrate(&y, spec.forcing, spec.dt, spec.thin)?;
        for (c, &v) in y.iter().enumerate() {
            values[(t, c)] = v;
        }
    }
    SpaceTimeField::new(values, LocationTable::indexed(spec.n), 0.0, spec.dt * spec.thin as f64)
}

/// Mean absolute correlation between distinct component series.
pub fn mean_abs_correlation(values: &DMatrix<f64>) -> f64 {
    let (t, n) = values.shape();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let col: Vec<f64> = values.column(c).iter().copied().collect();
            let m = col.iter().sum::<f64>() / t as f64;
            let centered: Vec<f64> = col.iter().map(|v| v - m).collect();
            let s = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
            centered.into_iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
        })
        .collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum::<f64>().abs();
            count += 1;
        }
    }
    total / count.max(1) as f64
}
