//! Wind power conversion: power-law shear extrapolation from 10 m to hub
//! height, turbine power curves, and the absolute energy-difference score.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Height in metres of the surface wind speeds.
pub const REFERENCE_HEIGHT: f64 = 10.0;
/// Shear exponent used when no paired-height data are available.
pub const DEFAULT_SHEAR: f64 = 1.0 / 7.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShearModel {
    pub alpha: Vec<f64>,
    /// Residual variance of the log-ratio regression per location.
    pub sigma2: Vec<f64>,
}

impl ShearModel {
    /// The same exponent everywhere.
    pub fn constant(n_locations: usize, alpha: f64) -> Self {
        Self {
            alpha: vec![alpha; n_locations],
            sigma2: vec![0.0; n_locations],
        }
    }
}

fn non_positive(m: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let mut bad = Vec::new();
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !(m[(r, c)] > 0.0) {
                bad.push((r, c));
            }
        }
    }
    bad
}

fn describe(bad: &[(usize, usize)]) -> String {
    let shown: Vec<String> = bad.iter().take(10).map(|(r, c)| format!("({r}, {c})")).collect();
    let more = if bad.len() > 10 { format!(" and {} more", bad.len() - 10) } else { String::new() };
    format!("{}{more}", shown.join(", "))
}

/// Per-location least squares through the origin of `log(hub / surface)` on
/// `log(h / 10)`.
pub fn fit_shear(surface: &DMatrix<f64>, hub: &DMatrix<f64>, hub_height: f64) -> Result<ShearModel> {
    if surface.shape() != hub.shape() {
        return Err(Error::Shape(format!(
            "surface {:?} and hub {:?} series differ",
            surface.shape(),
            hub.shape()
        )));
    }
    if !(hub_height > 0.0) || hub_height == REFERENCE_HEIGHT {
        return Err(Error::Argument(format!(
            "hub height must be positive and differ from {REFERENCE_HEIGHT} m, got {hub_height}"
        )));
    }
    let mut bad = non_positive(surface);
    bad.extend(non_positive(hub));
    if !bad.is_empty() {
        bad.sort_unstable();
        bad.dedup();
        return Err(Error::Domain(format!(
            "shear fit needs strictly positive speeds; offending (time, location): {}",
            describe(&bad)
        )));
    }
    let x = (hub_height / REFERENCE_HEIGHT).ln();
    let t = surface.nrows();
    let mut alpha = Vec::with_capacity(surface.ncols());
    let mut sigma2 = Vec::with_capacity(surface.ncols());
    for c in 0..surface.ncols() {
        let y: Vec<f64> = (0..t).map(|r| (hub[(r, c)] / surface[(r, c)]).ln()).collect();
        let a = y.iter().map(|v| v * x).sum::<f64>() / (t as f64 * x * x);
        let ss: f64 = y.iter().map(|v| (v - a * x).powi(2)).sum();
        alpha.push(a);
        sigma2.push(if t > 1 { ss / (t - 1) as f64 } else { 0.0 });
    }
    Ok(ShearModel { alpha, sigma2 })
}

/// `Z (h / 10)^alpha`, column by column.
pub fn extrapolate(speeds: &DMatrix<f64>, shear: &ShearModel, hub_height: f64) -> Result<DMatrix<f64>> {
    if speeds.ncols() != shear.alpha.len() {
        return Err(Error::Shape(format!(
            "{} locations but {} shear exponents",
            speeds.ncols(),
            shear.alpha.len()
        )));
    }
    if !(hub_height > 0.0) {
        return Err(Error::Argument(format!("hub height must be positive, got {hub_height}")));
    }
    if speeds.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain("wind speeds must be non-negative".into()));
    }
    let ratio = hub_height / REFERENCE_HEIGHT;
    let factors: Vec<f64> = shear.alpha.iter().map(|a| ratio.powf(*a)).collect();
    Ok(DMatrix::from_fn(speeds.nrows(), speeds.ncols(), |r, c| speeds[(r, c)] * factors[c]))
}

/// Turbine power curve.
///
/// Power is zero below `cut_in` and from `cut_out` upward, equals
/// `rated_power` on `[rated_speed, cut_out)`, and is linear between the ramp
/// nodes in between. The ramp starts at `(cut_in, 0)` and ends at
/// `(rated_speed, rated_power)` unless nodes are given at those speeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub name: String,
    pub cut_in: f64,
    pub rated_speed: f64,
    pub cut_out: f64,
    pub rated_power: f64,
    pub nodes: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct CurveHeader {
    #[serde(default)]
    name: String,
    cut_in: f64,
    rated_speed: f64,
    cut_out: f64,
    rated_power: f64,
}

impl PowerCurve {
    pub fn new(name: impl Into<String>, cut_in: f64, rated_speed: f64, cut_out: f64, rated_power: f64, nodes: Vec<(f64, f64)>) -> Result<Self> {
        let mut c = Self {
            name: name.into(),
            cut_in,
            rated_speed,
            cut_out,
            rated_power,
            nodes,
        };
        c.normalize()?;
        Ok(c)
    }

    fn normalize(&mut self) -> Result<()> {
        if !(0.0 < self.cut_in && self.cut_in < self.rated_speed && self.rated_speed < self.cut_out) {
            return Err(Error::Argument("power curve needs 0 < cut-in < rated < cut-out".into()));
        }
        if !(self.rated_power > 0.0) {
            return Err(Error::Argument("rated power must be positive".into()));
        }
        let mut nodes = std::mem::take(&mut self.nodes);
        if nodes.first().is_none_or(|n| n.0 > self.cut_in) {
            nodes.insert(0, (self.cut_in, 0.0));
        }
        if nodes.last().is_none_or(|n| n.0 < self.rated_speed) {
            nodes.push((self.rated_speed, self.rated_power));
        }
        for w in nodes.windows(2) {
            if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                return Err(Error::Argument("ramp nodes must increase in speed and not decrease in power".into()));
            }
        }
        let first = nodes[0];
        let last = nodes[nodes.len() - 1];
        if first.0 < self.cut_in || last.0 > self.rated_speed || first.1 < 0.0 || last.1 > self.rated_power {
            return Err(Error::Argument("ramp nodes must lie within [cut-in, rated] and [0, rated power]".into()));
        }
        if last.1 != self.rated_power {
            return Err(Error::Argument("the ramp must reach rated power at the rated speed".into()));
        }
        self.nodes = nodes;
        Ok(())
    }

    /// Output in kW at hub-height speed `v` (m/s).
    pub fn power(&self, v: f64) -> f64 {
        if !(v >= self.cut_in) || v >= self.cut_out {
            return 0.0;
        }
        if v >= self.rated_speed {
            return self.rated_power;
        }
        let i = self.nodes.partition_point(|n| n.0 <= v);
        let (a, b) = (self.nodes[i - 1], self.nodes[i]);
        a.1 + (v - a.0) / (b.0 - a.0) * (b.1 - a.1)
    }

    /// Invented curve shaped like a 2.5 MW class turbine with a 3 m/s cut-in.
    pub fn nordex_like() -> Self {
        Self::new(
            "nordex-like (illustrative values)",
            3.0,
            12.5,
            25.0,
            2500.0,
            vec![(3.0, 0.0), (4.0, 60.0), (5.0, 160.0), (6.0, 310.0), (7.0, 520.0), (8.0, 800.0), (9.0, 1150.0), (10.0, 1560.0), (11.0, 1990.0), (12.0, 2380.0), (12.5, 2500.0)],
        )
        .expect("valid bundled curve")
    }

    /// Invented curve shaped like a 1.5 MW class turbine with a 3.5 m/s cut-in.
    pub fn ge_like() -> Self {
        Self::new(
            "ge-like (illustrative values)",
            3.5,
            12.0,
            25.0,
            1500.0,
            vec![(3.5, 0.0), (4.0, 25.0), (5.0, 90.0), (6.0, 190.0), (7.0, 330.0), (8.0, 520.0), (9.0, 760.0), (10.0, 1030.0), (11.0, 1300.0), (12.0, 1500.0)],
        )
        .expect("valid bundled curve")
    }

    /// First line `# {json header}`, then a `speed_mps,power_kw` table.
    pub fn to_csv(&self) -> String {
        let header = CurveHeader {
            name: self.name.clone(),
            cut_in: self.cut_in,
            rated_speed: self.rated_speed,
            cut_out: self.cut_out,
            rated_power: self.rated_power,
        };
        let mut s = format!("# {}\nspeed_mps,power_kw\n", serde_json::to_string(&header).expect("serializable"));
        for (v, p) in &self.nodes {
            s.push_str(&format!("{v},{p}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| Error::schema(0, 0, "empty power curve file"))?;
        let json = first
            .strip_prefix('#')
            .ok_or_else(|| Error::schema(0, 0, "first line must be `# {json header}`"))?;
        let h: CurveHeader = serde_json::from_str(json.trim()).map_err(|e| Error::schema(0, 0, format!("curve header: {e}")))?;
        let (_, cols) = lines.next().ok_or_else(|| Error::schema(1, 0, "missing column header"))?;
        if cols.trim() != "speed_mps,power_kw" {
            return Err(Error::schema(1, 0, "expected columns speed_mps,power_kw"));
        }
        let mut nodes = Vec::new();
        for (row, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(Error::schema(row, parts.len(), "expected 2 columns"));
            }
            let v: f64 = parts[0].parse().map_err(|_| Error::schema(row, 0, "bad speed"))?;
            let p: f64 = parts[1].parse().map_err(|_| Error::schema(row, 1, "bad power"))?;
            nodes.push((v, p));
        }
        Self::new(h.name, h.cut_in, h.rated_speed, h.cut_out, h.rated_power, nodes)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Power in kW for every cell of a hub-height speed panel.
pub fn to_power(speeds: &DMatrix<f64>, curve: &PowerCurve) -> DMatrix<f64> {
    speeds.map(|v| curve.power(v))
}

/// Sum over hours and sites of `|forecast - truth|` for hourly power panels, in kWh.
pub fn energy_difference(forecast: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if forecast.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "forecast {:?} and truth {:?} power panels differ",
            forecast.shape(),
            truth.shape()
        )));
    }
    Ok(forecast.iter().zip(truth.iter()).map(|(a, b)| (a - b).abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shear_example_value() {
        let s = ShearModel::constant(1, DEFAULT_SHEAR);
        let z = extrapolate(&DMatrix::from_element(1, 1, 5.0), &s, 80.0).unwrap();
        assert!((z[(0, 0)] - 6.729_501).abs() < 1e-6);
        let same = extrapolate(&DMatrix::from_element(1, 1, 5.0), &s, 10.0).unwrap();
        assert_eq!(same[(0, 0)], 5.0);
        assert_eq!(extrapolate(&DMatrix::zeros(1, 1), &s, 120.0).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn identical_heights_give_zero_exponent() {
        let z = DMatrix::from_fn(5, 2, |r, c| 3.0 + r as f64 + c as f64);
        let m = fit_shear(&z, &z, 80.0).unwrap();
        assert_eq!(m.alpha, vec![0.0, 0.0]);
        let mut bad = z.clone();
        bad[(2, 1)] = 0.0;
        let err = fit_shear(&bad, &z, 80.0).unwrap_err().to_string();
        assert!(err.contains("(2, 1)"), "{err}");
    }

    #[test]
    fn curve_regimes() {
        let c = PowerCurve::nordex_like();
        assert_eq!(c.power(2.9), 0.0);
        assert_eq!(c.power(c.cut_out), 0.0);
        assert_eq!(c.power(c.rated_speed), c.rated_power);
        assert_eq!(c.power(20.0), c.rated_power);
        assert!((c.power(4.5) - 110.0).abs() < 1e-12);
        assert!(PowerCurve::new("x", 5.0, 4.0, 25.0, 10.0, vec![]).is_err());
        assert!(PowerCurve::new("x", 3.0, 12.0, 25.0, 10.0, vec![(5.0, 6.0), (6.0, 5.0)]).is_err());
    }

    #[test]
    fn curve_csv_round_trip() {
        let c = PowerCurve::ge_like();
        assert_eq!(PowerCurve::from_csv(&c.to_csv()).unwrap(), c);
        assert!(PowerCurve::from_csv("speed_mps,power_kw\n").is_err());
    }

    #[test]
    fn energy_difference_arithmetic() {
        let a = DMatrix::from_column_slice(2, 1, &[100.0, 50.0]);
        assert_eq!(energy_difference(&a, &DMatrix::zeros(2, 1)).unwrap(), 150.0);
        assert_eq!(energy_difference(&a, &a).unwrap(), 0.0);
        assert!(energy_difference(&a, &DMatrix::zeros(1, 2)).is_err());
    }
}
