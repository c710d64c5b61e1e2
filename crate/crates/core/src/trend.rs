//! Spatially varying harmonic trend on the square-root scale:
//! `sqrt(Z_t(s)) = b0(s) + sum_p [b_p1(s) cos(2 pi t / T_p) + b_p2(s) sin(2 pi t / T_p)] + gamma(s) Y_t(s)`.
//!
//! Every location is an independent least-squares problem. Locations without
//! masked cells share one QR factorization of the harmonic design.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SpaceTimeField;

/// Default harmonic periods in hours for hourly wind data.
pub const DEFAULT_PERIODS: [f64; 5] = [4380.0, 2920.0, 1460.0, 8.0, 4.0];

#[derive(Debug, Clone, PartialEq)]
pub struct TrendModel {
    periods: Vec<f64>,
    /// `n x (2P + 1)`: intercept, then `(cos, sin)` pairs in period order.
    coefficients: DMatrix<f64>,
    gamma: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrendSidecar {
    periods: Vec<f64>,
    n_locations: usize,
}

fn validate_periods(periods: &[f64]) -> Result<()> {
    for (i, &p) in periods.iter().enumerate() {
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::Argument(format!("period {i} must be positive, got {p}")));
        }
        if periods[..i].contains(&p) {
            return Err(Error::Argument(format!("period {p} listed twice")));
        }
    }
    Ok(())
}

/// Design matrix with columns `1, cos(2 pi t/T_1), sin(2 pi t/T_1), ...`.
pub fn harmonic_design(times: &[f64], periods: &[f64]) -> DMatrix<f64> {
    let k = 2 * periods.len() + 1;
    DMatrix::from_fn(times.len(), k, |r, c| {
        if c == 0 {
            1.0
        } else {
            let p = periods[(c - 1) / 2];
            let arg = 2.0 * PI * times[r] / p;
            if c % 2 == 1 {
                arg.cos()
            } else {
                arg.sin()
            }
        }
    })
}

struct LocationFit {
    coef: Vec<f64>,
    gamma: f64,
}

fn solve_columns(design: &DMatrix<f64>, y: DMatrix<f64>, first_location: usize) -> Result<DMatrix<f64>> {
    let k = design.ncols();
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    for i in 0..k {
        if r[(i, i)].abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Rank {
                location: first_location,
                msg: format!(
                    "harmonic column {i} is linearly dependent on the others (aliased period?)"
                ),
            });
        }
    }
    let mut qty = y;
    qr.q_tr_mul(&mut qty);
    let top = qty.rows(0, k).into_owned();
    r.solve_upper_triangular(&top)
        .ok_or_else(|| Error::Rank {
            location: first_location,
            msg: "triangular solve failed".into(),
        })
}

fn residual_sd(y: &[f64], fitted: &[f64]) -> f64 {
    let n = y.len() as f64;
    let res: Vec<f64> = y.iter().zip(fitted).map(|(a, b)| a - b).collect();
    let mean = res.iter().sum::<f64>() / n;
    let sd = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    // Residuals at rounding level count as an exact fit.
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if sd <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        0.0
    } else {
        sd
    }
}

/// Fit the harmonic trend independently at every location.
pub fn fit_trend(field: &SpaceTimeField, periods: &[f64]) -> Result<TrendModel> {
    validate_periods(periods)?;
    let (t, n) = field.values().shape();
    let k = 2 * periods.len() + 1;
    for r in 0..t {
        for c in 0..n {
            if !field.is_masked(r, c) && field.values()[(r, c)] < 0.0 {
                return Err(Error::Domain(format!(
                    "negative value {} at time step {r}, location {c}; the square-root transform needs Z >= 0",
                    field.values()[(r, c)]
                )));
            }
        }
    }
    let times: Vec<f64> = (0..t).map(|r| field.time(r)).collect();
    let sqrt_z = field.values().map(|v| v.sqrt());

    let (full, partial): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&c| (0..t).all(|r| !field.is_masked(r, c)));

    let mut fits: Vec<Option<LocationFit>> = (0..n).map(|_| None).collect();

    if !full.is_empty() {
        if t <= k {
            return Err(Error::Argument(format!(
                "need more than {k} time steps for {} harmonics, got {t}",
                periods.len()
            )));
        }
        let design = harmonic_design(&times, periods);
        let y = DMatrix::from_fn(t, full.len(), |r, j| sqrt_z[(r, full[j])]);
        let coef = solve_columns(&design, y.clone(), full[0])?;
        let fitted = &design * &coef;
        let per: Vec<LocationFit> = (0..full.len())
            .into_par_iter()
            .map(|j| {
                let yj: Vec<f64> = y.column(j).iter().copied().collect();
                let fj: Vec<f64> = fitted.column(j).iter().copied().collect();
                LocationFit {
                    coef: coef.column(j).iter().copied().collect(),
                    gamma: residual_sd(&yj, &fj),
                }
            })
            .collect();
        for (j, f) in per.into_iter().enumerate() {
            fits[full[j]] = Some(f);
        }
    }

    let partial_fits: Vec<Result<LocationFit>> = partial
        .par_iter()
        .map(|&c| {
            let rows: Vec<usize> = (0..t).filter(|&r| !field.is_masked(r, c)).collect();
            if rows.len() <= k {
                return Err(Error::Rank {
                    location: c,
                    msg: format!("only {} observed time steps for {k} coefficients", rows.len()),
                });
            }
            let ts: Vec<f64> = rows.iter().map(|&r| times[r]).collect();
            let design = harmonic_design(&ts, periods);
            let yv: Vec<f64> = rows.iter().map(|&r| sqrt_z[(r, c)]).collect();
            let coef = solve_columns(&design, DMatrix::from_column_slice(rows.len(), 1, &yv), c)?;
            let fitted = &design * &coef;
            Ok(LocationFit {
                coef: coef.column(0).iter().copied().collect(),
                gamma: residual_sd(&yv, fitted.as_slice()),
            })
        })
        .collect();
    for (&c, f) in partial.iter().zip(partial_fits) {
        fits[c] = Some(f?);
    }

    let mut coefficients = DMatrix::zeros(n, k);
    let mut gamma = Vec::with_capacity(n);
    for (c, f) in fits.into_iter().enumerate() {
        let f = f.expect("every location fitted");
        coefficients.row_mut(c).copy_from(&DVector::from_vec(f.coef).transpose());
        if f.gamma > 0.0 && f.gamma.is_finite() {
            gamma.push(f.gamma);
        } else {
            log::warn!("location {c} has zero residual variance; using gamma = 1");
            gamma.push(1.0);
        }
    }
    Ok(TrendModel {
        periods: periods.to_vec(),
        coefficients,
        gamma,
    })
}

impl TrendModel {
    pub fn new(periods: Vec<f64>, coefficients: DMatrix<f64>, gamma: Vec<f64>) -> Result<Self> {
        validate_periods(&periods)?;
        if coefficients.ncols() != 2 * periods.len() + 1 || coefficients.nrows() != gamma.len() {
            return Err(Error::Shape(format!(
                "coefficients {:?} inconsistent with {} periods and {} locations",
                coefficients.shape(),
                periods.len(),
                gamma.len()
            )));
        }
        if let Some(i) = gamma.iter().position(|g| !(*g > 0.0)) {
            return Err(Error::Argument(format!("gamma must be positive at location {i}")));
        }
        Ok(Self {
            periods,
            coefficients,
            gamma,
        })
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn n_locations(&self) -> usize {
        self.gamma.len()
    }

    pub fn intercept(&self, loc: usize) -> f64 {
        self.coefficients[(loc, 0)]
    }

    /// `(cos, sin)` coefficients of harmonic `p` at `loc`.
    pub fn harmonic(&self, loc: usize, p: usize) -> (f64, f64) {
        (self.coefficients[(loc, 1 + 2 * p)], self.coefficients[(loc, 2 + 2 * p)])
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// Restrict to a subset of locations.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            periods: self.periods.clone(),
            coefficients: DMatrix::from_fn(idx.len(), self.coefficients.ncols(), |r, c| {
                self.coefficients[(idx[r], c)]
            }),
            gamma: idx.iter().map(|&i| self.gamma[i]).collect(),
        }
    }

    /// Fitted square-root-scale mean, `T x n`, at the given times.
    pub fn fitted_mean(&self, times: &[f64]) -> DMatrix<f64> {
        harmonic_design(times, &self.periods) * self.coefficients.transpose()
    }

    fn check(&self, field: &SpaceTimeField) -> Result<()> {
        if field.n_locations() != self.n_locations() {
            return Err(Error::Shape(format!(
                "trend model has {} locations, field has {}",
                self.n_locations(),
                field.n_locations()
            )));
        }
        Ok(())
    }

    /// Standardized residuals `(sqrt(Z) - mean) / gamma`.
    pub fn detrend(&self, field: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.check(field)?;
        let (t, n) = field.values().shape();
        let times: Vec<f64> = (0..t).map(|r| field.time(r)).collect();
        let mean = self.fitted_mean(&times);
        let mut out = DMatrix::zeros(t, n);
        for c in 0..n {
            for r in 0..t {
                if field.is_masked(r, c) {
                    out[(r, c)] = f64::NAN;
                    continue;
                }
                let z = field.values()[(r, c)];
                if z < 0.0 {
                    return Err(Error::Domain(format!("negative value {z} at ({r}, {c})")));
                }
                out[(r, c)] = (z.sqrt() - mean[(r, c)]) / self.gamma[c];
            }
        }
        field.map_values(out)
    }

    /// Inverse of [`detrend`](Self::detrend): `Z = (mean + gamma Y)^2`.
    pub fn retrend(&self, residuals: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.check(residuals)?;
        let t = residuals.n_times();
        let times: Vec<f64> = (0..t).map(|r| residuals.time(r)).collect();
        let out = self.retrend_values(residuals.values(), &times)?;
        residuals.map_values(out)
    }

    /// Retrend a raw `T x n` matrix whose rows sit at `times`.
    pub fn retrend_values(&self, residuals: &DMatrix<f64>, times: &[f64]) -> Result<DMatrix<f64>> {
        if residuals.ncols() != self.n_locations() || residuals.nrows() != times.len() {
            return Err(Error::Shape(format!(
                "residual matrix {:?} vs {} times and {} locations",
                residuals.shape(),
                times.len(),
                self.n_locations()
            )));
        }
        let mean = self.fitted_mean(times);
        Ok(DMatrix::from_fn(residuals.nrows(), residuals.ncols(), |r, c| {
            let s = mean[(r, c)] + self.gamma[c] * residuals[(r, c)];
            s * s
        }))
    }

    /// CSV with one row per location (`loc,beta0,cos_1,sin_1,...,gamma`) plus a
    /// JSON sidecar `<path>.json` holding the periods.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = String::from("loc,beta0");
        for p in 0..self.periods.len() {
            s.push_str(&format!(",cos_{},sin_{}", p + 1, p + 1));
        }
        s.push_str(",gamma\n");
        for i in 0..self.n_locations() {
            s.push_str(&i.to_string());
            for c in 0..self.coefficients.ncols() {
                s.push_str(&format!(",{}", self.coefficients[(i, c)]));
            }
            s.push_str(&format!(",{}\n", self.gamma[i]));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&TrendSidecar {
            periods: self.periods.clone(),
            n_locations: self.n_locations(),
        })
        .expect("serializable");
        fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let json = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: TrendSidecar =
            serde_json::from_str(&json).map_err(|e| Error::schema(0, 0, format!("trend sidecar: {e}")))?;
        let k = 2 * meta.periods.len() + 1;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut coef = Vec::new();
        let mut gamma = Vec::new();
        for (row, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != k + 2 {
                return Err(Error::schema(row, cells.len(), format!("expected {} columns", k + 2)));
            }
            for (c, cell) in cells[1..=k].iter().enumerate() {
                coef.push(cell.trim().parse::<f64>().map_err(|_| Error::schema(row, c + 1, "bad number"))?);
            }
            gamma.push(
                cells[k + 1]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::schema(row, k + 1, "bad number"))?,
            );
        }
        if gamma.len() != meta.n_locations {
            return Err(Error::schema(0, 0, "location count differs from sidecar"));
        }
        Self::new(meta.periods, DMatrix::from_row_slice(gamma.len(), k, &coef), gamma)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
