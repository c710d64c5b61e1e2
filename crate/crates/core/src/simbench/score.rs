use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ForecastSet;

/// Mean over all cells plus median and interquartile range of the per-time MSPE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MspeSummary {
    pub mean: f64,
    pub median: f64,
    pub iqr: f64,
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Squared error per time step, averaged over locations.
pub fn mspe_by_time(forecast: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Vec<f64>> {
    if forecast.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "forecast {:?} and truth {:?} differ",
            forecast.shape(),
            truth.shape()
        )));
    }
    if forecast.ncols() == 0 {
        return Err(Error::Shape("panels have no locations".into()));
    }
    Ok((0..forecast.nrows())
        .map(|r| {
            (0..forecast.ncols()).map(|c| (forecast[(r, c)] - truth[(r, c)]).powi(2)).sum::<f64>() / forecast.ncols() as f64
        })
        .collect())
}

pub fn score_mspe(forecast: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<MspeSummary> {
    let per_t = mspe_by_time(forecast, truth)?;
    Ok(MspeSummary {
        mean: per_t.iter().sum::<f64>() / per_t.len().max(1) as f64,
        median: median(&per_t),
        iqr: quantile(&per_t, 0.75) - quantile(&per_t, 0.25),
    })
}

/// Rows of `series` that a forecast set targets.
pub fn truth_for(f: &ForecastSet, series: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let targets = f.targets();
    if targets.iter().any(|&t| t >= series.nrows()) || series.ncols() != f.point.ncols() {
        return Err(Error::Shape("forecast targets fall outside the series".into()));
    }
    Ok(DMatrix::from_fn(targets.len(), series.ncols(), |r, c| series[(targets[r], c)]))
}

/// Mean-over-cells MSPE of a forecast set against the series it forecasts.
pub fn forecast_set_mspe(f: &ForecastSet, series: &DMatrix<f64>) -> Result<f64> {
    Ok(score_mspe(&f.point, &truth_for(f, series)?)?.mean)
}
