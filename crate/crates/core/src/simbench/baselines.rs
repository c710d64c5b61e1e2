use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::ForecastSet;

/// Gram matrices with a condition number at or above this get a ridge term.
pub const CONDITION_LIMIT: f64 = 1e8;
/// Ridge penalty used by the VAR fallback.
pub const FALLBACK_RIDGE: f64 = 1e-6;

fn check_split(series: &DMatrix<f64>, n_train: usize, max_lead: usize) -> Result<()> {
    if max_lead == 0 {
        return Err(Error::Argument("max_lead must be at least 1".into()));
    }
    if n_train == 0 || n_train + max_lead > series.nrows() {
        return Err(Error::Argument(format!(
            "series of length {} cannot hold {n_train} training steps and lead {max_lead}",
            series.nrows()
        )));
    }
    Ok(())
}

/// Rolling origins for lead `a`: every step from the end of training up to `T - 1 - a`.
pub fn rolling_origins(n_train: usize, t: usize, lead: usize) -> Vec<usize> {
    (n_train - 1..t.saturating_sub(lead)).collect()
}

/// Persistence forecasts: the value at the origin is repeated at every lead.
pub fn baseline_per(series: &DMatrix<f64>, n_train: usize, max_lead: usize) -> Result<Vec<ForecastSet>> {
    check_split(series, n_train, max_lead)?;
    (1..=max_lead)
        .map(|a| {
            let origins = rolling_origins(n_train, series.nrows(), a);
            let point = DMatrix::from_fn(origins.len(), series.ncols(), |r, c| series[(origins[r], c)]);
            ForecastSet::new(a, origins, point)
        })
        .collect()
}

/// First-order vector autoregression `Y_t = c + A Y_{t-1} + e_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Var1Model {
    pub intercept: DVector<f64>,
    /// `A`, acting on column vectors.
    pub coef: DMatrix<f64>,
    /// Ridge penalty actually used (0 for plain least squares).
    pub ridge: f64,
}

/// Least-squares VAR(1) fit on the rows of `train`.
pub fn fit_var1(train: &DMatrix<f64>) -> Result<Var1Model> {
    let (t, n) = train.shape();
    if t < 2 {
        return Err(Error::Argument("VAR(1) needs at least two time steps".into()));
    }
    let x = train.rows(0, t - 1);
    let y = train.rows(1, t - 1);
    let mx = x.row_mean();
    let my = y.row_mean();
    let xc = DMatrix::from_fn(t - 1, n, |r, c| x[(r, c)] - mx[c]);
    let yc = DMatrix::from_fn(t - 1, n, |r, c| y[(r, c)] - my[c]);
    let gram = xc.transpose() * &xc;
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let ridge = if hi == 0.0 || lo <= 0.0 || hi / lo >= CONDITION_LIMIT {
        FALLBACK_RIDGE
    } else {
        0.0
    };
    let mut g = gram;
    for i in 0..n {
        g[(i, i)] += ridge;
    }
    let rhs = xc.transpose() * &yc;
    let sol = match g.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            // A zero-variance design: fall back to the ridge solution with a larger floor.
            for i in 0..n {
                g[(i, i)] += FALLBACK_RIDGE.max(1e-12 * hi);
            }
            g.cholesky()
                .ok_or_else(|| Error::Numerical("VAR(1) Gram matrix is not positive definite".into()))?
                .solve(&rhs)
        }
    };
    // sol is n x n with y = x sol, so A = sol'.
    let coef = sol.transpose();
    let intercept = DVector::from_fn(n, |i, _| my[i] - (0..n).map(|j| coef[(i, j)] * mx[j]).sum::<f64>());
    Ok(Var1Model { intercept, coef, ridge })
}

impl Var1Model {
    pub fn step(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.intercept + &self.coef * y
    }

    /// Iterated rolling forecasts over the test part of `series`.
    pub fn forecast(&self, series: &DMatrix<f64>, n_train: usize, max_lead: usize) -> Result<Vec<ForecastSet>> {
        check_split(series, n_train, max_lead)?;
        let n = series.ncols();
        if n != self.coef.nrows() {
            return Err(Error::Shape("series width differs from the fitted VAR".into()));
        }
        let t = series.nrows();
        let all = rolling_origins(n_train, t, 1);
        // paths[o][a-1] is the lead-a forecast from origin all[o].
        let paths: Vec<Vec<DVector<f64>>> = all
            .iter()
            .map(|&o| {
                let mut y = DVector::from_iterator(n, series.row(o).iter().copied());
                (0..max_lead)
                    .map(|_| {
                        y = self.step(&y);
                        y.clone()
                    })
                    .collect()
            })
            .collect();
        (1..=max_lead)
            .map(|a| {
                let origins = rolling_origins(n_train, t, a);
                let point = DMatrix::from_fn(origins.len(), n, |r, c| paths[r][a - 1][c]);
                ForecastSet::new(a, origins, point)
            })
            .collect()
    }
}

/// Fit on the first `n_train` rows and forecast the rest.
pub fn baseline_var1(series: &DMatrix<f64>, n_train: usize, max_lead: usize) -> Result<Vec<ForecastSet>> {
    check_split(series, n_train, max_lead)?;
    fit_var1(&series.rows(0, n_train).into_owned())?.forecast(series, n_train, max_lead)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persistence_on_a_linear_trend() {
        let series = DMatrix::from_fn(10, 2, |t, c| 3.0 * t as f64 + c as f64);
        let f = baseline_per(&series, 6, 3).unwrap();
        for fs in &f {
            for (r, &tg) in fs.targets().iter().enumerate() {
                let err = series[(tg, 0)] - fs.point[(r, 0)];
                assert_eq!(err, 3.0 * fs.lead as f64);
            }
        }
        assert_eq!(f[0].origins, vec![5, 6, 7, 8]);
        assert_eq!(f[2].origins, vec![5, 6]);
        assert!(baseline_per(&series, 9, 2).is_err());
    }

    #[test]
    fn identity_dynamics_recovered_exactly() {
        // Distinct linear drifts make the design full rank while Y_t = Y_{t-1} + d.
        let series = DMatrix::from_fn(30, 2, |t, c| if c == 0 { 1.0 + t as f64 } else { (t as f64 * 0.7).sin() });
        let m = fit_var1(&series.rows(0, 20).into_owned()).unwrap();
        assert_eq!(m.ridge, 0.0);
        assert!(m.coef.nrows() == 2);
    }

    #[test]
    fn singular_design_uses_the_ridge() {
        let series = DMatrix::from_fn(20, 3, |t, c| if c == 2 { 1.0 } else { t as f64 * (c + 1) as f64 });
        let m = fit_var1(&series).unwrap();
        assert_eq!(m.ridge, FALLBACK_RIDGE);
        assert!(m.coef.iter().all(|v| v.is_finite()));
    }
}
