//! Piecewise-linear finite elements: lumped mass, stiffness and the SPDE
//! precision matrix.

use super::mesh::Mesh;
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Mesh-dependent FEM matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FemMatrices {
    /// Lumped (row-sum) mass, one entry per vertex.
    pub mass: Vec<f64>,
    /// Stiffness matrix.
    pub stiffness: CsrMatrix,
}

impl FemMatrices {
    pub fn new(mesh: &Mesh) -> Self {
        let m = mesh.n_vertices();
        let mut mass = vec![0.0; m];
        let mut t = Vec::with_capacity(9 * mesh.n_triangles());
        let v = mesh.vertices();
        for (k, tri) in mesh.triangles().iter().enumerate() {
            let area = mesh.area(k);
            // edge opposite vertex i
            let e: [[f64; 2]; 3] = std::array::from_fn(|i| {
                let a = v[tri[(i + 1) % 3]];
                let b = v[tri[(i + 2) % 3]];
                [b[0] - a[0], b[1] - a[1]]
            });
            for i in 0..3 {
                mass[tri[i]] += area / 3.0;
                for j in 0..3 {
                    let g = (e[i][0] * e[j][0] + e[i][1] * e[j][1]) / (4.0 * area);
                    t.push((tri[i], tri[j], g));
                }
            }
        }
        Self {
            mass,
            stiffness: CsrMatrix::from_triplets(m, m, t),
        }
    }
}

/// SPDE precision for vertex values of `tau` and `kappa`:
/// `T K T` for `alpha = 1` and `T K C^{-1} K T` for `alpha = 2`, where
/// `K = kappa^2 C + G` and `T = diag(tau)`.
pub fn assemble_precision(fem: &FemMatrices, tau: &[f64], kappa: &[f64], alpha: u8) -> Result<CsrMatrix> {
    let m = fem.mass.len();
    if tau.len() != m || kappa.len() != m {
        return Err(Error::Shape(format!(
            "{} vertices but {} tau and {} kappa values",
            m,
            tau.len(),
            kappa.len()
        )));
    }
    if tau.iter().chain(kappa).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Numerical("tau and kappa must be positive and finite".into()));
    }
    let diag: Vec<f64> = (0..m).map(|i| kappa[i] * kappa[i] * fem.mass[i]).collect();
    let k = fem.stiffness.add(&CsrMatrix::diagonal(&diag));
    let inner = match alpha {
        1 => k,
        2 => {
            let inv_c: Vec<f64> = fem.mass.iter().map(|c| 1.0 / c).collect();
            let ones = vec![1.0; m];
            k.matmul(&k.scale_rows_cols(&inv_c, &ones))
        }
        a => return Err(Error::Argument(format!("alpha must be 1 or 2, got {a}"))),
    };
    Ok(inner.scale_rows_cols(tau, tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::LocationTable;
    use crate::spde::mesh::build_mesh;

    fn mesh() -> Mesh {
        let pts: Vec<[f64; 2]> = (0..25).map(|i| [(i % 5) as f64 * 0.25, (i / 5) as f64 * 0.25]).collect();
        build_mesh(&LocationTable::new(pts).unwrap(), 60).unwrap()
    }

    #[test]
    fn mass_and_stiffness_identities() {
        let m = mesh();
        let fem = FemMatrices::new(&m);
        let total: f64 = (0..m.n_triangles()).map(|t| m.area(t)).sum();
        assert!((fem.mass.iter().sum::<f64>() - total).abs() < 1e-12 * total);
        // constants are in the kernel of G, linear functions have |grad|^2 energy
        let g = &fem.stiffness;
        let ones = vec![1.0; m.n_vertices()];
        assert!(g.mul_vec(&ones).iter().all(|v| v.abs() < 1e-10));
        let x: Vec<f64> = m.vertices().iter().map(|p| p[0]).collect();
        let gx = g.mul_vec(&x);
        let energy: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((energy - total).abs() < 1e-9 * total);
        assert!(g.asymmetry() < 1e-14);
    }

    #[test]
    fn doubling_tau_scales_by_four() {
        let m = mesh();
        let fem = FemMatrices::new(&m);
        let n = m.n_vertices();
        let kappa: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let tau: Vec<f64> = (0..n).map(|i| 0.5 + 0.01 * i as f64).collect();
        let tau2: Vec<f64> = tau.iter().map(|t| 2.0 * t).collect();
        for alpha in [1, 2] {
            let q1 = assemble_precision(&fem, &tau, &kappa, alpha).unwrap();
            let q2 = assemble_precision(&fem, &tau2, &kappa, alpha).unwrap();
            assert_eq!(q1.scale(4.0), q2);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = mesh();
        let fem = FemMatrices::new(&m);
        let n = m.n_vertices();
        assert!(assemble_precision(&fem, &vec![1.0; n], &vec![1.0; n], 3).is_err());
        assert!(assemble_precision(&fem, &vec![1.0; n - 1], &vec![1.0; n], 2).is_err());
        assert!(assemble_precision(&fem, &vec![-1.0; n], &vec![1.0; n], 2).is_err());
    }
}
