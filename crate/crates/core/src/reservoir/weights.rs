use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::hyper::{EsnHyperParams, LayerSpec};
use crate::error::Result;
use crate::linalg::CsrMatrix;
use crate::rng::child_rng;

/// Above this size the spectral radius comes from power iteration instead of
/// a dense Schur decomposition.
pub const DENSE_EIGEN_LIMIT: usize = 800;

/// Random sparse matrix: each entry independently nonzero with probability
/// `density`, nonzero values Uniform(-eta, eta).
pub fn sparse_uniform<R: Rng>(rng: &mut R, nrows: usize, ncols: usize, density: f64, eta: f64) -> CsrMatrix {
    let mut t = Vec::new();
    if density > 0.0 {
        let u = Uniform::new(-eta, eta).expect("eta > 0");
        for r in 0..nrows {
            for c in 0..ncols {
                if rng.random::<f64>() < density {
                    t.push((r, c, u.sample(rng)));
                }
            }
        }
    }
    CsrMatrix::from_triplets(nrows, ncols, t)
}

/// Magnitude of the dominant eigenvalue.
///
/// Small matrices use the eigenvalues of a dense real Schur form. Larger ones
/// use power iteration from a seeded start vector, estimating the modulus as
/// the geometric mean growth over the second half of the iterations, which
/// stays correct when the dominant eigenvalues form a complex pair.
pub fn spectral_radius(w: &CsrMatrix, seed: u64) -> f64 {
    let n = w.nrows();
    if n == 0 || w.nnz() == 0 {
        return 0.0;
    }
    if n <= DENSE_EIGEN_LIMIT {
        if let Some(schur) = nalgebra::Schur::try_new(w.to_dense(), 1e-14, 100_000) {
            if let Some(r) = schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .reduce(f64::max)
            {
                if r.is_finite() {
                    return r;
                }
            }
        }
        log::warn!("dense eigenvalue computation failed; using power iteration");
    }
    power_iteration_radius(w, seed, 200, 2000, 1e-10)
}

pub fn power_iteration_radius(w: &CsrMatrix, seed: u64, min_iter: usize, max_iter: usize, rtol: f64) -> f64 {
    let n = w.nrows();
    let mut rng = child_rng(seed, "power-iteration", 0);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n0 = norm(&v);
    v.iter_mut().for_each(|a| *a /= n0);
    let mut logs = Vec::with_capacity(max_iter);
    let mut prev = f64::NAN;
    for k in 0..max_iter {
        let next = w.mul_vec(&v);
        let g = norm(&next);
        if g == 0.0 {
            return 0.0;
        }
        logs.push(g.ln());
        v = next.into_iter().map(|a| a / g).collect();
        if k + 1 >= min_iter && (k + 1) % 10 == 0 {
            let half = &logs[logs.len() / 2..];
            let est = (half.iter().sum::<f64>() / half.len() as f64).exp();
            if ((est - prev) / est).abs() < rtol {
                return est;
            }
            prev = est;
        }
    }
    let half = &logs[logs.len() / 2..];
    (half.iter().sum::<f64>() / half.len() as f64).exp()
}

/// Weights of one reservoir layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w: CsrMatrix,
    pub w_in: CsrMatrix,
    /// Estimated `|lambda_max(W)|`, or 1 when `W` has no nonzero entry.
    pub lambda_abs: f64,
    /// `nu / lambda_abs`, the factor applied to `W` in the recursion.
    pub scale: f64,
}

impl LayerWeights {
    pub fn n_h(&self) -> usize {
        self.w.nrows()
    }

    /// One leaky-tanh update of `h` driven by `u`.
    pub fn step(&self, h: &mut [f64], u: &[f64], alpha: f64) {
        let wh = self.w.mul_vec(h);
        let win = self.w_in.mul_vec(u);
        for i in 0..h.len() {
            let omega = (self.scale * wh[i] + win[i]).tanh();
            h[i] = if alpha == 1.0 { omega } else { (1.0 - alpha) * h[i] + alpha * omega };
        }
    }
}

/// All reservoir layers of one ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    pub layers: Vec<LayerWeights>,
    pub input_dim: usize,
    pub seed: u64,
    /// Layers whose transition matrix came out all zero.
    pub degenerate_layers: Vec<usize>,
}

/// Draw the random reservoir for `hp` with `input_dim` inputs to the first
/// layer. Later layers take the reduced state of the layer before them.
pub fn generate_weights(hp: &EsnHyperParams, input_dim: usize, seed: u64) -> Result<Reservoir> {
    hp.validate()?;
    let mut layers = Vec::with_capacity(hp.depth());
    let mut degenerate = Vec::new();
    for (d, spec) in hp.layers.iter().enumerate() {
        let in_dim = if d == 0 { input_dim } else { hp.layers[d - 1].n_reduced };
        let lw = generate_layer(spec, in_dim, seed, d)?;
        if lw.w.nnz() == 0 {
            log::warn!("layer {d}: transition matrix is all zero; spectral scaling disabled");
            degenerate.push(d);
        }
        layers.push(lw);
    }
    Ok(Reservoir {
        layers,
        input_dim,
        seed,
        degenerate_layers: degenerate,
    })
}

fn generate_layer(spec: &LayerSpec, in_dim: usize, seed: u64, d: usize) -> Result<LayerWeights> {
    let mut rng_w = child_rng(seed, "esn-w", d as u64);
    let mut rng_in = child_rng(seed, "esn-w-in", d as u64);
    let w = sparse_uniform(&mut rng_w, spec.n_h, spec.n_h, spec.pi_w, spec.eta_w);
    let w_in = sparse_uniform(&mut rng_in, spec.n_h, in_dim, spec.pi_in, spec.eta_in);
    let mut lambda_abs = spectral_radius(&w, crate::rng::sub_seed(seed, "esn-power", d as u64));
    if !(lambda_abs > 0.0) {
        lambda_abs = 1.0;
    }
    Ok(LayerWeights {
        scale: spec.nu / lambda_abs,
        w,
        w_in,
        lambda_abs,
    })
}

/// Dense copy of the scaled transition matrix, for diagnostics.
pub fn effective_transition(layer: &LayerWeights) -> DMatrix<f64> {
    layer.w.to_dense() * layer.scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_radius(a: &DMatrix<f64>) -> f64 {
        a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn density_concentrates() {
        let mut rng = crate::rng::rng_from(11);
        let w = sparse_uniform(&mut rng, 500, 500, 0.1, 1.0);
        let frac = w.nnz() as f64 / 250_000.0;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
        assert!(w.raw_parts().2.iter().all(|v| v.abs() < 1.0 && *v != 0.0));
    }

    #[test]
    fn zero_density_falls_back() {
        let mut hp = EsnHyperParams::single(20);
        hp.layers[0].pi_w = 0.0;
        let r = generate_weights(&hp, 3, 0).unwrap();
        assert_eq!(r.layers[0].w.nnz(), 0);
        assert_eq!(r.layers[0].lambda_abs, 1.0);
        assert_eq!(r.degenerate_layers, vec![0]);
    }

    #[test]
    fn tiny_width_gives_tiny_radius() {
        let mut hp = EsnHyperParams::single(50);
        hp.layers[0].pi_w = 1.0;
        hp.layers[0].eta_w = 1e-12;
        let r = generate_weights(&hp, 3, 0).unwrap();
        assert!(r.layers[0].lambda_abs < 1e-9);
    }

    #[test]
    fn scaled_radius_equals_nu() {
        for seed in 0..5 {
            let mut hp = EsnHyperParams::single(120);
            hp.layers[0].nu = 0.9;
            let r = generate_weights(&hp, 4, seed).unwrap();
            let rad = dense_radius(&effective_transition(&r.layers[0]));
            assert!(rad <= 0.9 * (1.0 + 1e-6), "{rad}");
            assert!(rad >= 0.9 * (1.0 - 1e-6), "{rad}");
        }
    }

    #[test]
    fn power_iteration_close_to_dense() {
        let mut rng = crate::rng::rng_from(5);
        let w = sparse_uniform(&mut rng, 200, 200, 0.1, 1.0);
        let exact = dense_radius(&w.to_dense());
        let est = power_iteration_radius(&w, 1, 200, 4000, 1e-12);
        assert!((est - exact).abs() / exact < 0.05, "{est} vs {exact}");
    }

    #[test]
    fn deterministic() {
        let hp = EsnHyperParams::single(60);
        assert_eq!(generate_weights(&hp, 5, 9).unwrap(), generate_weights(&hp, 5, 9).unwrap());
        assert_ne!(generate_weights(&hp, 5, 9).unwrap(), generate_weights(&hp, 5, 10).unwrap());
    }
}
