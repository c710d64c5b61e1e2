//! Uncertainty calibration: per-lead marginal Gaussian intervals from forecast
//! residuals, and a convex shrinkage between a model-implied spatial
//! covariance and the empirical residual covariance, tuned on the coverage of
//! spatial means over expanding squares.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::field::ForecastSet;

/// Residuals of one lead: rows are forecast origins, columns are locations.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadResiduals {
    pub lead: usize,
    pub residuals: DMatrix<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl LeadResiduals {
    /// Summaries of a residual matrix; the standard deviation divides by
    /// `count - 1` (0 when there is a single origin).
    pub fn new(lead: usize, residuals: DMatrix<f64>) -> Self {
        let (w, n) = residuals.shape();
        let mean: Vec<f64> = (0..n).map(|c| residuals.column(c).sum() / w.max(1) as f64).collect();
        let sd = (0..n)
            .map(|c| {
                if w < 2 {
                    return 0.0;
                }
                let ss: f64 = residuals.column(c).iter().map(|r| (r - mean[c]).powi(2)).sum();
                (ss / (w - 1) as f64).sqrt()
            })
            .collect();
        Self {
            lead,
            residuals,
            mean,
            sd,
        }
    }

    pub fn n_origins(&self) -> usize {
        self.residuals.nrows()
    }

    pub fn n_locations(&self) -> usize {
        self.residuals.ncols()
    }

    /// Residuals minus their per-location mean.
    pub fn centered(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_origins(), self.n_locations(), |r, c| self.residuals[(r, c)] - self.mean[c])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPanel {
    pub leads: Vec<LeadResiduals>,
}

impl ResidualPanel {
    pub fn lead(&self, lead: usize) -> Option<&LeadResiduals> {
        self.leads.iter().find(|l| l.lead == lead)
    }
}

/// Group forecasts by lead and subtract them from the matching rows of `truth`.
pub fn build_residual_panel(forecasts: &[ForecastSet], truth: &DMatrix<f64>) -> Result<ResidualPanel> {
    let leads = forecasts
        .iter()
        .map(|f| {
            if f.point.ncols() != truth.ncols() {
                return Err(Error::Shape(format!(
                    "lead {} forecasts have {} locations, truth has {}",
                    f.lead,
                    f.point.ncols(),
                    truth.ncols()
                )));
            }
            let targets = f.targets();
            if let Some(&t) = targets.iter().find(|&&t| t >= truth.nrows()) {
                return Err(Error::Shape(format!(
                    "lead {} targets step {t} but truth has {} steps",
                    f.lead,
                    truth.nrows()
                )));
            }
            let r = DMatrix::from_fn(targets.len(), truth.ncols(), |i, c| truth[(targets[i], c)] - f.point[(i, c)]);
            Ok(LeadResiduals::new(f.lead, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualPanel { leads })
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("coverage level must lie in (0, 1), got {level}")))
    }
}

/// Two-sided standard normal quantile `z_{(1+q)/2}`.
pub fn normal_multiplier(level: f64) -> Result<f64> {
    check_level(level)?;
    Ok(Normal::standard().inverse_cdf(0.5 * (1.0 + level)))
}

/// Gaussian interval half-widths `z * sd` for each location of one lead.
pub fn marginal_half_widths(lead: &LeadResiduals, level: f64) -> Result<Vec<f64>> {
    let z = normal_multiplier(level)?;
    Ok(lead.sd.iter().map(|s| z * s).collect())
}

/// Half-widths for every lead (rows follow `panel.leads`, columns are locations).
pub fn marginal_intervals(panel: &ResidualPanel, level: f64) -> Result<DMatrix<f64>> {
    let n = panel.leads.first().map_or(0, |l| l.n_locations());
    if panel.leads.iter().any(|l| l.n_locations() != n) {
        return Err(Error::Shape("leads disagree on the number of locations".into()));
    }
    let rows = panel
        .leads
        .iter()
        .map(|l| marginal_half_widths(l, level))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]))
}

/// Fraction of origins at each location whose residual lies within the half-width.
pub fn location_coverage(residuals: &DMatrix<f64>, half_widths: &[f64]) -> Vec<f64> {
    let w = residuals.nrows().max(1) as f64;
    (0..residuals.ncols())
        .map(|c| residuals.column(c).iter().filter(|r| r.abs() <= half_widths[c]).count() as f64 / w)
        .collect()
}

/// Empirical covariance across locations with `count - 1` normalization.
pub fn empirical_covariance(residuals: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (w, n) = residuals.shape();
    if w < 2 {
        return Err(Error::Argument("an empirical covariance needs at least two origins".into()));
    }
    let mean = residuals.row_mean();
    let centered = DMatrix::from_fn(w, n, |r, c| residuals[(r, c)] - mean[c]);
    let mut s = centered.transpose() * centered / (w - 1) as f64;
    symmetrize(&mut s);
    Ok(s)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedCovariance {
    pub delta: f64,
    pub lead: usize,
    pub covariance: DMatrix<f64>,
}

/// `delta * spde + (1 - delta) * emp`, symmetrized.
pub fn shrink_covariance(spde: &DMatrix<f64>, emp: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    if spde.shape() != emp.shape() || spde.nrows() != spde.ncols() {
        return Err(Error::Shape(format!(
            "covariances must be square and equal in shape, got {:?} and {:?}",
            spde.shape(),
            emp.shape()
        )));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Argument(format!("shrinkage weight must lie in [0, 1], got {delta}")));
    }
    let mut c = if delta == 1.0 {
        spde.clone()
    } else if delta == 0.0 {
        emp.clone()
    } else {
        spde * delta + emp * (1.0 - delta)
    };
    symmetrize(&mut c);
    Ok(c)
}

/// `{0, 0.01, ..., 1}`.
pub fn default_delta_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaDiagnostic {
    pub half_side: f64,
    pub n_inside: usize,
    pub delta: f64,
    pub mean_coverage: f64,
    pub median_marginal_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSelection {
    pub delta: f64,
    pub half_side: f64,
    pub diagnostics: Vec<DeltaDiagnostic>,
    /// Half-sides whose square contained no location.
    pub skipped: Vec<f64>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn closest(values: &[f64], target: f64) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if (v - target).abs() < (values[best] - target).abs() {
            best = i;
        }
    }
    best
}

/// Inputs to [`select_delta`].
pub struct DeltaProblem<'a> {
    /// Calibrated residuals of one lead (origins x locations).
    pub residuals: &'a DMatrix<f64>,
    pub spde: &'a DMatrix<f64>,
    pub emp: &'a DMatrix<f64>,
    pub locations: &'a [[f64; 2]],
    pub center: [f64; 2],
}

/// For each half-side, pick the weight whose Gaussian interval for the mean
/// over the square attains empirical coverage closest to `level`; then keep
/// the half-side whose weight gives median marginal coverage closest to
/// `level`. Ties go to the smaller weight and the smaller half-side.
pub fn select_delta(p: &DeltaProblem, half_sides: &[f64], deltas: &[f64], level: f64) -> Result<DeltaSelection> {
    let z = normal_multiplier(level)?;
    let n = p.locations.len();
    if half_sides.is_empty() || deltas.is_empty() {
        return Err(Error::Argument("half-side and weight grids must be non-empty".into()));
    }
    if p.residuals.ncols() != n || p.spde.shape() != (n, n) || p.emp.shape() != (n, n) {
        return Err(Error::Shape("residuals, covariances and locations disagree in size".into()));
    }
    if deltas.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(Error::Argument("weights must lie in [0, 1]".into()));
    }
    let w = p.residuals.nrows().max(1) as f64;
    let diag_spde: Vec<f64> = (0..n).map(|i| p.spde[(i, i)]).collect();
    let diag_emp: Vec<f64> = (0..n).map(|i| p.emp[(i, i)]).collect();
    let marginal_median = |delta: f64| {
        let hw: Vec<f64> = (0..n)
            .map(|i| z * (delta * diag_spde[i] + (1.0 - delta) * diag_emp[i]).max(0.0).sqrt())
            .collect();
        median(&mut location_coverage(p.residuals, &hw))
    };

    let rows: Vec<Option<DeltaDiagnostic>> = half_sides
        .par_iter()
        .map(|&d| {
            let inside: Vec<usize> = (0..n)
                .filter(|&i| {
                    let q = p.locations[i];
                    (q[0] - p.center[0]).abs() <= d && (q[1] - p.center[1]).abs() <= d
                })
                .collect();
            if inside.is_empty() {
                return None;
            }
            let k = inside.len() as f64;
            let quad = |m: &DMatrix<f64>| inside.iter().map(|&i| inside.iter().map(|&j| m[(i, j)]).sum::<f64>()).sum::<f64>() / (k * k);
            let (vs, ve) = (quad(p.spde), quad(p.emp));
            let means: Vec<f64> = (0..p.residuals.nrows())
                .map(|r| inside.iter().map(|&i| p.residuals[(r, i)]).sum::<f64>() / k)
                .collect();
            let coverage: Vec<f64> = deltas
                .iter()
                .map(|&delta| {
                    let hw = z * (delta * vs + (1.0 - delta) * ve).max(0.0).sqrt();
                    means.iter().filter(|m| m.abs() <= hw).count() as f64 / w
                })
                .collect();
            // Smallest weight among those closest to the level.
            let mut best = 0;
            for i in 0..deltas.len() {
                let (e, eb) = ((coverage[i] - level).abs(), (coverage[best] - level).abs());
                if e < eb || (e == eb && deltas[i] < deltas[best]) {
                    best = i;
                }
            }
            Some(DeltaDiagnostic {
                half_side: d,
                n_inside: inside.len(),
                delta: deltas[best],
                mean_coverage: coverage[best],
                median_marginal_coverage: marginal_median(deltas[best]),
            })
        })
        .collect();
    let skipped: Vec<f64> = half_sides.iter().zip(&rows).filter(|(_, r)| r.is_none()).map(|(d, _)| *d).collect();
    for d in &skipped {
        log::info!("square of half-side {d} contains no location; skipped");
    }
    let diagnostics: Vec<DeltaDiagnostic> = rows.into_iter().flatten().collect();
    if diagnostics.is_empty() {
        return Err(Error::Argument("no square around the center contains a location".into()));
    }
    let med: Vec<f64> = diagnostics.iter().map(|d| d.median_marginal_coverage).collect();
    let chosen = diagnostics[closest(&med, level)];
    Ok(DeltaSelection {
        delta: chosen.delta,
        half_side: chosen.half_side,
        diagnostics,
        skipped,
    })
}

/// Diagnostics CSV: `half_side,n_inside,delta,mean_coverage,median_marginal_coverage`.
pub fn diagnostics_csv(sel: &DeltaSelection) -> String {
    let mut s = String::from("half_side,n_inside,delta,mean_coverage,median_marginal_coverage\n");
    for d in &sel.diagnostics {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            d.half_side, d.n_inside, d.delta, d.mean_coverage, d.median_marginal_coverage
        ));
    }
    s
}

/// Variance of the uniform average over `idx` under `cov`.
pub fn mean_variance(cov: &DMatrix<f64>, idx: &[usize]) -> f64 {
    let u = DVector::from_element(idx.len(), 1.0 / idx.len() as f64);
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| cov[(idx[i], idx[j])]);
    (u.transpose() * sub * &u)[(0, 0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let l = LeadResiduals::new(1, DMatrix::from_column_slice(3, 1, &[1.0, -1.0, 0.0]));
        assert_eq!(l.mean, vec![0.0]);
        assert!((l.sd[0] - 1.0).abs() < 1e-15);
        let c = LeadResiduals::new(1, DMatrix::from_element(4, 2, 3.5));
        assert_eq!(c.sd, vec![0.0, 0.0]);
    }

    #[test]
    fn ninety_five_percent_multiplier() {
        assert!((normal_multiplier(0.95).unwrap() - 1.959964).abs() < 1e-5);
        assert!(normal_multiplier(1.0).is_err());
    }

    #[test]
    fn panel_from_perfect_forecasts() {
        let truth = DMatrix::from_fn(10, 3, |t, c| (t * c) as f64);
        let f = ForecastSet::new(2, vec![4, 5, 6], truth.rows(6, 3).into_owned()).unwrap();
        let p = build_residual_panel(&[f], &truth).unwrap();
        assert!(p.leads[0].residuals.iter().all(|&r| r == 0.0));
        assert!(p.leads[0].sd.iter().all(|&s| s == 0.0));
        let hw = marginal_intervals(&p, 0.9).unwrap();
        assert!(hw.iter().all(|&h| h == 0.0));
        let bad = ForecastSet::new(5, vec![6], DMatrix::zeros(1, 3)).unwrap();
        assert!(build_residual_panel(&[bad], &truth).is_err());
    }

    #[test]
    fn shrinkage_endpoints_are_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 3.0]);
        assert_eq!(shrink_covariance(&a, &b, 1.0).unwrap(), a);
        assert_eq!(shrink_covariance(&a, &b, 0.0).unwrap(), b);
        assert!(shrink_covariance(&a, &DMatrix::zeros(3, 3), 0.5).is_err());
        assert!(shrink_covariance(&a, &b, 1.5).is_err());
    }

    #[test]
    fn equal_parents_pick_the_smallest_weight() {
        let locs: Vec<[f64; 2]> = (0..9).map(|i| [(i % 3) as f64, (i / 3) as f64]).collect();
        let cov = DMatrix::identity(9, 9);
        let res = DMatrix::from_fn(50, 9, |r, c| ((r * 7 + c * 3) % 11) as f64 / 5.0 - 1.0);
        let p = DeltaProblem {
            residuals: &res,
            spde: &cov,
            emp: &cov,
            locations: &locs,
            center: [1.0, 1.0],
        };
        let s = select_delta(&p, &[0.5, 1.0, 5.0, -1.0], &default_delta_grid(), 0.8).unwrap();
        assert_eq!(s.delta, 0.0);
        assert_eq!(s.skipped, vec![-1.0]);
        assert_eq!(s.diagnostics.len(), 3);
        assert!(diagnostics_csv(&s).lines().count() == 4);
    }
}
