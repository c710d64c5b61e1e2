//! Support points: a reduced set of locations minimizing the energy distance
//! to the empirical distribution of all locations, snapped back onto the
//! original locations.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::LocationTable;
use crate::rng::child_rng;

/// Denominator floor for coincident points.
pub const DISTANCE_FLOOR: f64 = 1e-9;
/// Above this many locations the attraction terms use a fresh subsample each iteration.
pub const SUBSAMPLE_THRESHOLD: usize = 10_000;

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

fn mean_pair_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let s: f64 = a
        .iter()
        .map(|&x| b.iter().map(|&y| dist(x, y)).sum::<f64>())
        .sum();
    s / (a.len() as f64 * b.len() as f64)
}

/// Energy distance between the empirical distributions of `candidate` and `data`.
pub fn energy_distance(candidate: &[[f64; 2]], data: &[[f64; 2]]) -> Result<f64> {
    if candidate.is_empty() || data.is_empty() {
        return Err(Error::Argument("energy distance needs two non-empty point sets".into()));
    }
    Ok(2.0 * mean_pair_distance(candidate, data)
        - mean_pair_distance(data, data)
        - mean_pair_distance(candidate, candidate))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSet {
    /// Optimized (unsnapped) coordinates.
    pub continuous: Vec<[f64; 2]>,
    /// Indices into the parent location table, all distinct.
    pub indices: Vec<usize>,
    /// Energy distance of the snapped set to the parent locations.
    pub energy: f64,
}

#[derive(Serialize, Deserialize)]
struct KnotSidecar {
    n_red: usize,
    energy_distance: f64,
}

impl KnotSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Build from already-chosen parent indices (continuous = snapped).
    pub fn from_indices(data: &LocationTable, indices: Vec<usize>) -> Result<Self> {
        validate_indices(data, &indices)?;
        let pts: Vec<[f64; 2]> = indices.iter().map(|&i| data.get(i)).collect();
        let energy = energy_of(&pts, data.coords(), 0)?;
        Ok(Self {
            continuous: pts,
            indices,
            energy,
        })
    }

    pub fn validate(&self, data: &LocationTable) -> Result<()> {
        if self.continuous.len() != self.indices.len() {
            return Err(Error::Shape("continuous and snapped knot counts differ".into()));
        }
        validate_indices(data, &self.indices)
    }

    pub fn locations(&self, data: &LocationTable) -> Result<LocationTable> {
        data.subset(&self.indices)
    }

    /// CSV `index,x_cont,y_cont,x_snap,y_snap` plus `<path>.json` with the energy distance.
    pub fn write(&self, path: impl AsRef<Path>, data: &LocationTable) -> Result<()> {
        let path = path.as_ref();
        let mut s = String::from("index,x_cont,y_cont,x_snap,y_snap\n");
        for (c, &i) in self.continuous.iter().zip(&self.indices) {
            let p = data.get(i);
            s.push_str(&format!("{i},{},{},{},{}\n", c[0], c[1], p[0], p[1]));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))?;
        let side = sidecar(path);
        let json = serde_json::to_string_pretty(&KnotSidecar {
            n_red: self.len(),
            energy_distance: self.energy,
        })
        .expect("serializable");
        fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    pub fn read(path: impl AsRef<Path>, data: &LocationTable) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar(path);
        let meta: KnotSidecar = serde_json::from_str(&fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?)
            .map_err(|e| Error::schema(0, 0, format!("knot sidecar: {e}")))?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut continuous = Vec::new();
        let mut indices = Vec::new();
        for (row, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let c: Vec<&str> = line.split(',').map(str::trim).collect();
            if c.len() != 5 {
                return Err(Error::schema(row, c.len(), "expected 5 columns"));
            }
            indices.push(c[0].parse().map_err(|_| Error::schema(row, 0, "bad index"))?);
            let x: f64 = c[1].parse().map_err(|_| Error::schema(row, 1, "bad number"))?;
            let y: f64 = c[2].parse().map_err(|_| Error::schema(row, 2, "bad number"))?;
            continuous.push([x, y]);
        }
        let k = Self {
            continuous,
            indices,
            energy: meta.energy_distance,
        };
        k.validate(data)?;
        Ok(k)
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

fn validate_indices(data: &LocationTable, indices: &[usize]) -> Result<()> {
    let mut seen = vec![false; data.len()];
    for &i in indices {
        if i >= data.len() {
            return Err(Error::Argument(format!("knot index {i} outside table of {}", data.len())));
        }
        if seen[i] {
            return Err(Error::Argument(format!("knot index {i} repeated")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Energy distance, computed on a seeded subsample of the data when it is large.
fn energy_of(points: &[[f64; 2]], data: &[[f64; 2]], seed: u64) -> Result<f64> {
    if data.len() <= SUBSAMPLE_THRESHOLD {
        energy_distance(points, data)
    } else {
        let mut rng = child_rng(seed, "energy-subsample", 0);
        let sub: Vec<[f64; 2]> = sample(&mut rng, data.len(), SUBSAMPLE_THRESHOLD)
            .into_iter()
            .map(|i| data[i])
            .collect();
        energy_distance(points, &sub)
    }
}

/// Options for [`support_points`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportPointOptions {
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SupportPointOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

/// Result of the optimizer before snapping, with the objective per iteration.
#[derive(Debug, Clone)]
pub struct SupportPointTrace {
    pub points: Vec<[f64; 2]>,
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// One majorize-minimize update of all points against `data`.
///
/// Each point moves to the inverse-distance-weighted mean of the data plus a
/// repulsion term `(N/m) sum_k (x_i - x_k)/|x_i - x_k|` from the other points,
/// normalized by `sum_m 1/|x_i - y_m|`. A data point coinciding with `x_i`
/// contributes nothing.
fn mm_step(points: &[[f64; 2]], data: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let m = points.len() as f64;
    let big_n = data.len() as f64;
    points
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut q = 0.0;
            let mut ax = 0.0;
            let mut ay = 0.0;
            for &y in data {
                let d = dist(x, y);
                if d < DISTANCE_FLOOR {
                    continue;
                }
                q += 1.0 / d;
                ax += y[0] / d;
                ay += y[1] / d;
            }
            let mut rx = 0.0;
            let mut ry = 0.0;
            for (k, &z) in points.iter().enumerate() {
                if k == i {
                    continue;
                }
                let d = dist(x, z).max(DISTANCE_FLOOR);
                rx += (x[0] - z[0]) / d;
                ry += (x[1] - z[1]) / d;
            }
            if q == 0.0 {
                return x;
            }
            let s = big_n / m;
            [(ax + s * rx) / q, (ay + s * ry) / q]
        })
        .collect()
}

/// Run the support-point iteration from a seeded random subset of `data`.
pub fn optimize_support_points(
    data: &LocationTable,
    n_red: usize,
    opts: &SupportPointOptions,
) -> Result<SupportPointTrace> {
    let n = data.len();
    if n_red == 0 || n_red > n {
        return Err(Error::Argument(format!("n_red must be in 1..={n}, got {n_red}")));
    }
    let all = data.coords();
    let mut rng = child_rng(opts.seed, "support-points-init", 0);
    let mut init: Vec<usize> = sample(&mut rng, n, n_red).into_vec();
    init.sort_unstable();
    let mut points: Vec<[f64; 2]> = init.iter().map(|&i| all[i]).collect();

    let exact = n <= SUBSAMPLE_THRESHOLD;
    let mut objective = Vec::new();
    // The data-data term is constant across iterations; compute it once.
    let data_term = if exact { mean_pair_distance(all, all) } else { f64::NAN };
    let energy = |p: &[[f64; 2]]| 2.0 * mean_pair_distance(p, all) - data_term - mean_pair_distance(p, p);
    let mut current = if exact { energy(&points) } else { f64::NAN };
    if exact {
        objective.push(current);
    }
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let target: Vec<[f64; 2]> = if exact {
            mm_step(&points, all)
        } else {
            let mut r = child_rng(opts.seed, "support-points-subsample", it as u64);
            let sub: Vec<[f64; 2]> = sample(&mut r, n, SUBSAMPLE_THRESHOLD)
                .into_iter()
                .map(|i| all[i])
                .collect();
            mm_step(&points, &sub)
        };
        let mut next = target;
        if exact {
            // Backtrack toward the previous iterate if a coincident-point step overshoots.
            let mut value = energy(&next);
            let mut frac = 1.0;
            while value > current + 1e-12 * current.abs().max(1e-300) && frac > 1.0 / 1024.0 {
                frac *= 0.5;
                next = points
                    .iter()
                    .zip(&next)
                    .map(|(p, q)| [p[0] + 0.5 * (q[0] - p[0]), p[1] + 0.5 * (q[1] - p[1])])
                    .collect();
                value = energy(&next);
            }
            if value > current {
                next = points.clone();
                value = current;
            }
            current = value;
            objective.push(current);
        }
        let change = points
            .iter()
            .zip(&next)
            .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
            .fold(0.0, f64::max);
        points = next;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(SupportPointTrace {
        points,
        objective,
        iterations,
        converged,
    })
}

/// Select `n_red` support points and snap them onto distinct parent locations.
pub fn support_points(data: &LocationTable, n_red: usize, opts: &SupportPointOptions) -> Result<KnotSet> {
    let trace = optimize_support_points(data, n_red, opts)?;
    if !trace.converged {
        log::warn!(
            "support points stopped after {} iterations without reaching tol {}",
            trace.iterations,
            opts.tol
        );
    }
    let indices = snap_to_data(&trace.points, data);
    let snapped: Vec<[f64; 2]> = indices.iter().map(|&i| data.get(i)).collect();
    let energy = energy_of(&snapped, data.coords(), opts.seed)?;
    Ok(KnotSet {
        continuous: trace.points,
        indices,
        energy,
    })
}

/// Nearest data location for each point; later points that collide with an
/// already-used location take their nearest unused one. Ties go to the lowest index.
pub fn snap_to_data(points: &[[f64; 2]], data: &LocationTable) -> Vec<usize> {
    let all = data.coords();
    let mut used = vec![false; all.len()];
    let mut out = Vec::with_capacity(points.len());
    for &p in points {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (i, &y) in all.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = dist(p, y);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        if best == usize::MAX {
            break;
        }
        used[best] = true;
        out.push(best);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> LocationTable {
        let mut rng = crate::rng::rng_from(seed);
        LocationTable::new((0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()).unwrap()
    }

    #[test]
    fn energy_of_identical_sets_is_zero() {
        let d = cloud(40, 1);
        assert!(energy_distance(d.coords(), d.coords()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn energy_hand_example() {
        let e = energy_distance(&[[0.5, 0.0]], &[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
    }

    #[test]
    fn energy_rotation_invariant() {
        let d = cloud(30, 2);
        let c: Vec<[f64; 2]> = cloud(7, 3).coords().to_vec();
        let (s, co) = 0.7f64.sin_cos();
        let rot = |p: &[f64; 2]| [co * p[0] - s * p[1], s * p[0] + co * p[1]];
        let dr: Vec<_> = d.coords().iter().map(rot).collect();
        let cr: Vec<_> = c.iter().map(rot).collect();
        let a = energy_distance(&c, d.coords()).unwrap();
        let b = energy_distance(&cr, &dr).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn empty_sets_rejected() {
        assert!(energy_distance(&[], &[[0.0, 0.0]]).is_err());
    }

    #[test]
    fn full_selection_has_zero_energy() {
        let d = cloud(25, 4);
        let k = support_points(&d, 25, &SupportPointOptions::default()).unwrap();
        assert!(k.energy.abs() < 1e-12);
        let mut idx = k.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn square_corners_single_point_goes_to_center() {
        let d = LocationTable::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let opts = SupportPointOptions {
            tol: 1e-10,
            max_iter: 2000,
            ..Default::default()
        };
        let t = optimize_support_points(&d, 1, &opts).unwrap();
        assert!((t.points[0][0] - 0.5).abs() < 1e-8);
        assert!((t.points[0][1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn objective_is_monotone() {
        let d = cloud(300, 5);
        for seed in 0..3 {
            let opts = SupportPointOptions {
                seed,
                max_iter: 100,
                tol: 1e-9,
            };
            let t = optimize_support_points(&d, 15, &opts).unwrap();
            for w in t.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
            }
            assert!(t.objective.last().unwrap() < &t.objective[0]);
        }
    }

    #[test]
    fn deterministic_and_translation_equivariant() {
        let d = cloud(200, 6);
        let opts = SupportPointOptions {
            seed: 3,
            max_iter: 300,
            tol: 1e-9,
        };
        let a = optimize_support_points(&d, 10, &opts).unwrap();
        let b = optimize_support_points(&d, 10, &opts).unwrap();
        assert_eq!(a.points, b.points);
        let shifted = LocationTable::new(d.coords().iter().map(|p| [p[0] + 3.0, p[1] - 2.0]).collect()).unwrap();
        let c = optimize_support_points(&shifted, 10, &opts).unwrap();
        for (p, q) in a.points.iter().zip(&c.points) {
            assert!((p[0] + 3.0 - q[0]).abs() < 1e-6);
            assert!((p[1] - 2.0 - q[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn n_red_too_large() {
        let d = cloud(5, 7);
        assert!(support_points(&d, 6, &SupportPointOptions::default()).is_err());
        assert!(support_points(&d, 0, &SupportPointOptions::default()).is_err());
    }

    #[test]
    fn snapping_rules() {
        let d = LocationTable::new(vec![[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]]).unwrap();
        assert_eq!(snap_to_data(&[[1.0, 0.0]], &d), vec![1]);
        assert_eq!(snap_to_data(&[[0.9, 0.0], [1.1, 0.0]], &d), vec![1, 0]);
        // tie goes to the lower index
        assert_eq!(snap_to_data(&[[0.5, 0.0]], &d), vec![0]);
    }

    #[test]
    fn snapped_indices_distinct_over_seeds() {
        for seed in 0..20 {
            let d = cloud(50, 100 + seed);
            let mut rng = crate::rng::rng_from(seed);
            let pts: Vec<[f64; 2]> = (0..30).map(|_| [rng.random::<f64>() * 0.3, rng.random::<f64>() * 0.3]).collect();
            let mut idx = snap_to_data(&pts, &d);
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), 30);
        }
    }

    #[test]
    fn knot_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = cloud(60, 8);
        let k = support_points(&d, 6, &SupportPointOptions::default()).unwrap();
        let p = dir.path().join("knots.csv");
        k.write(&p, &d).unwrap();
        let r = KnotSet::read(&p, &d).unwrap();
        assert_eq!(r.indices, k.indices);
        assert_eq!(r.continuous, k.continuous);
    }
}
