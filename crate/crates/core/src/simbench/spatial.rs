use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::matern::{correlation_matrix, distance};
use crate::error::{Error, Result};
use crate::field::{LocationTable, SpaceTimeField};
use crate::knots::{snap_to_data, KnotSet};
use crate::rng::child_rng;

/// Largest location count for which the dense covariance is built.
pub const MAX_DENSE_LOCATIONS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// 4 x 4 blocks of the unit square; the 8 blocks with even `i + j` are
    /// nine times as likely to receive a location as the others.
    Chessboard,
    /// Nested squares anchored at the origin with equal counts per ring.
    Ray,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chessboard" => Ok(Scheme::Chessboard),
            "ray" => Ok(Scheme::Ray),
            other => Err(Error::Argument(format!("unknown sampling scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiResolutionSpec {
    /// Weight of the local effect in quadrant blocks, ordered lower-left,
    /// lower-right, upper-left, upper-right.
    pub omega: [f64; 4],
    /// Range and smoothness of the local effect.
    pub local: (f64, f64),
    /// Range and smoothness of the regional effect.
    pub regional: (f64, f64),
    pub n: usize,
    pub scheme: Scheme,
    /// Side lengths of the nested squares of the ray scheme.
    pub ray_sides: [f64; 3],
}

impl Default for BiResolutionSpec {
    fn default() -> Self {
        Self {
            omega: [0.70, 0.6, 0.9, 0.55],
            local: (0.1, 0.5),
            regional: (0.03, 1.0),
            n: 3200,
            scheme: Scheme::Chessboard,
            ray_sides: [0.25, 0.5, 1.0],
        }
    }
}

impl BiResolutionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.omega.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Argument("block weights must lie in [0, 1]".into()));
        }
        for (beta, nu) in [self.local, self.regional] {
            if !(beta > 0.0 && nu > 0.0) {
                return Err(Error::Argument("Matérn range and smoothness must be positive".into()));
            }
        }
        if self.n < 3 {
            return Err(Error::Argument("at least 3 locations are needed".into()));
        }
        if self.n > MAX_DENSE_LOCATIONS {
            return Err(Error::Argument(format!(
                "{} locations exceed the dense simulation limit of {MAX_DENSE_LOCATIONS}; reduce n",
                self.n
            )));
        }
        let s = self.ray_sides;
        if !(0.0 < s[0] && s[0] < s[1] && s[1] < s[2] && s[2] <= 1.0) {
            return Err(Error::Argument("ray sides must increase within (0, 1]".into()));
        }
        Ok(())
    }
}

/// Quadrant block (0..4) of a point in the unit square.
pub fn block_of(p: [f64; 2]) -> usize {
    usize::from(p[0] >= 0.5) + 2 * usize::from(p[1] >= 0.5)
}

fn chessboard(n: usize, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    let dense: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|(i, j)| (i + j) % 2 == 0).collect();
    let sparse: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|(i, j)| (i + j) % 2 == 1).collect();
    (0..n)
        .map(|_| {
            let group = if rng.random::<f64>() < 0.9 { &dense } else { &sparse };
            let (i, j) = group[rng.random_range(0..group.len())];
            [(i as f64 + rng.random::<f64>()) / 4.0, (j as f64 + rng.random::<f64>()) / 4.0]
        })
        .collect()
}

fn ray(n: usize, sides: [f64; 3], rng: &mut impl Rng) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(n);
    for r in 0..3 {
        let count = n / 3 + usize::from(r < n % 3);
        let outer = sides[r];
        let inner = if r == 0 { 0.0 } else { sides[r - 1] };
        let mut k = 0;
        while k < count {
            let p = [outer * rng.random::<f64>(), outer * rng.random::<f64>()];
            if p[0] >= inner || p[1] >= inner {
                out.push(p);
                k += 1;
            }
        }
    }
    out
}

/// Draw `n` locations in the unit square according to `scheme`.
pub fn sample_scheme(scheme: Scheme, n: usize, ray_sides: [f64; 3], seed: u64) -> Result<LocationTable> {
    let mut rng = child_rng(seed, "scheme", 0);
    let pts = match scheme {
        Scheme::Chessboard => chessboard(n, &mut rng),
        Scheme::Ray => ray(n, ray_sides, &mut rng),
    };
    LocationTable::new(pts)
}

/// Zero-mean Gaussian draw with the given correlation matrix. A small
/// diagonal jitter is added only if the matrix is numerically indefinite.
pub fn gaussian_draw(corr: DMatrix<f64>, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let n = corr.nrows();
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut c = corr.clone();
        for i in 0..n {
            c[(i, i)] += jitter;
        }
        if let Some(ch) = c.cholesky() {
            let l = ch.l();
            return Ok((0..n).map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum()).collect());
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
    }
    Err(Error::Numerical("correlation matrix is not positive definite".into()))
}

/// One bi-resolution snapshot `Y = Omega H_loc + (I - Omega) H_reg`, where
/// `H_reg` is constant on each quadrant block.
pub fn simulate_biresolution(spec: &BiResolutionSpec, seed: u64) -> Result<SpaceTimeField> {
    spec.validate()?;
    let locs = sample_scheme(spec.scheme, spec.n, spec.ray_sides, seed)?;
    let pts = locs.coords();
    let mut rng = child_rng(seed, "biresolution", 0);
    let h_loc = gaussian_draw(correlation_matrix(pts, spec.local.0, spec.local.1)?, &mut rng)?;
    let centers = [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]];
    let h_reg = gaussian_draw(correlation_matrix(&centers, spec.regional.0, spec.regional.1)?, &mut rng)?;
    let y: Vec<f64> = pts
        .iter()
        .zip(&h_loc)
        .map(|(&p, &hl)| {
            let b = block_of(p);
            let w = spec.omega[b];
            w * hl + (1.0 - w) * h_reg[b]
        })
        .collect();
    SpaceTimeField::new(DMatrix::from_row_slice(1, y.len(), &y), locs, 0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnotBaseline {
    /// Nearest data points to a regular lattice over the bounding box.
    Grid,
    /// Uniform sample without replacement.
    Rand,
    /// Greedy maximin space-filling design.
    Sf,
}

impl std::str::FromStr for KnotBaseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grid" => Ok(Self::Grid),
            "rand" => Ok(Self::Rand),
            "sf" => Ok(Self::Sf),
            other => Err(Error::Argument(format!("unknown knot baseline `{other}`"))),
        }
    }
}

fn grid_indices(data: &LocationTable, n_red: usize) -> Vec<usize> {
    let k = (n_red as f64).sqrt().ceil() as usize;
    let [x0, y0, x1, y1] = data.bbox();
    let mut lattice = Vec::with_capacity(k * k);
    for j in 0..k {
        for i in 0..k {
            lattice.push([x0 + (i as f64 + 0.5) / k as f64 * (x1 - x0), y0 + (j as f64 + 0.5) / k as f64 * (y1 - y0)]);
        }
    }
    // Thin an oversized lattice evenly so exactly n_red nodes remain.
    let total = lattice.len();
    let chosen: Vec<[f64; 2]> = (0..n_red).map(|r| lattice[r * total / n_red]).collect();
    snap_to_data(&chosen, data)
}

fn maximin_indices(data: &LocationTable, n_red: usize) -> Vec<usize> {
    let pts = data.coords();
    let c = data.centroid();
    let first = (0..pts.len())
        .min_by(|&a, &b| distance(pts[a], c).total_cmp(&distance(pts[b], c)))
        .expect("non-empty table");
    let mut chosen = vec![first];
    let mut min_d: Vec<f64> = pts.iter().map(|&p| distance(p, pts[first])).collect();
    while chosen.len() < n_red {
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (i, &d) in min_d.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        chosen.push(best);
        for (i, &p) in pts.iter().enumerate() {
            min_d[i] = min_d[i].min(distance(p, pts[best]));
        }
    }
    chosen
}

/// Baseline knot selectors used for comparison with support points.
pub fn knot_selector_baseline(data: &LocationTable, n_red: usize, method: KnotBaseline, seed: u64) -> Result<KnotSet> {
    if n_red == 0 || n_red > data.len() {
        return Err(Error::Argument(format!(
            "n_red must lie in 1..={}, got {n_red}",
            data.len()
        )));
    }
    let indices = match method {
        KnotBaseline::Grid => grid_indices(data, n_red),
        KnotBaseline::Rand => {
            let mut rng = child_rng(seed, "knots-rand", 0);
            rand::seq::index::sample(&mut rng, data.len(), n_red).into_vec()
        }
        KnotBaseline::Sf => maximin_indices(data, n_red),
    };
    KnotSet::from_indices(data, indices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chessboard_dense_fraction() {
        let locs = sample_scheme(Scheme::Chessboard, 3200, [0.25, 0.5, 1.0], 3).unwrap();
        let dense = locs
            .coords()
            .iter()
            .filter(|p| {
                let i = (p[0] * 4.0).floor() as usize;
                let j = (p[1] * 4.0).floor() as usize;
                (i + j) % 2 == 0
            })
            .count();
        let frac = dense as f64 / 3200.0;
        assert!((frac - 0.9).abs() < 0.02, "dense fraction {frac}");
    }

    #[test]
    fn ray_counts_per_region() {
        let locs = sample_scheme(Scheme::Ray, 3000, [0.25, 0.5, 1.0], 5).unwrap();
        let mut counts = [0usize; 3];
        for p in locs.coords() {
            assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
            let m = p[0].max(p[1]);
            counts[if m < 0.25 { 0 } else if m < 0.5 { 1 } else { 2 }] += 1;
        }
        assert_eq!(counts, [1000, 1000, 1000]);
    }

    #[test]
    fn identity_weights_give_the_local_effect() {
        let mut spec = BiResolutionSpec {
            n: 200,
            ..Default::default()
        };
        let a = simulate_biresolution(&spec, 9).unwrap();
        spec.omega = [1.0; 4];
        let b = simulate_biresolution(&spec, 9).unwrap();
        // Recompute H_loc directly with the same stream.
        let mut rng = child_rng(9, "biresolution", 0);
        let h = gaussian_draw(correlation_matrix(b.locations().coords(), 0.1, 0.5).unwrap(), &mut rng).unwrap();
        for (c, &hv) in h.iter().enumerate() {
            assert_eq!(b.values()[(0, c)], hv);
        }
        assert_ne!(a.values(), b.values());
        spec.n = 6000;
        assert!(simulate_biresolution(&spec, 1).is_err());
    }

    #[test]
    fn baselines_on_a_regular_lattice() {
        let pts: Vec<[f64; 2]> = (0..20).flat_map(|j| (0..20).map(move |i| [(i as f64 + 0.5) / 20.0, (j as f64 + 0.5) / 20.0])).collect();
        let data = LocationTable::new(pts).unwrap();
        let g = knot_selector_baseline(&data, 100, KnotBaseline::Grid, 0).unwrap();
        let mut idx = g.indices.clone();
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), 100);
        // A 10 x 10 lattice on a 20 x 20 one picks one point of each 2 x 2 cell.
        let mut cells: Vec<(usize, usize)> = g.indices.iter().map(|&i| (i % 20 / 2, i / 20 / 2)).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 100);

        let r1 = knot_selector_baseline(&data, 30, KnotBaseline::Rand, 4).unwrap();
        let r2 = knot_selector_baseline(&data, 30, KnotBaseline::Rand, 4).unwrap();
        assert_eq!(r1.indices, r2.indices);
        let sf = knot_selector_baseline(&data, 4, KnotBaseline::Sf, 0).unwrap();
        assert_eq!(sf.len(), 4);
        assert!(knot_selector_baseline(&data, 401, KnotBaseline::Sf, 0).is_err());
    }
}
