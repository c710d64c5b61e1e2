use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::FourierBasis;
use super::fem::{assemble_precision, FemMatrices};
use super::mesh::Mesh;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::linalg::{reverse_cuthill_mckee, CsrMatrix, SparseCholesky};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::rng::child_rng;

/// Lower bound on the observation noise variance.
pub const SIGMA2_FLOOR: f64 = 1e-8;
/// Bound on the absolute value of every log-scale coefficient.
const THETA_BOUND: f64 = 30.0;

/// Coefficients of `log tau(s)` and `log kappa(s)` in a Fourier basis
/// (entry 0 is the intercept), the SPDE order and the noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdeParams {
    pub order: usize,
    pub alpha: u8,
    pub theta_tau: Vec<f64>,
    pub theta_kappa: Vec<f64>,
    pub sigma2: f64,
}

impl SpdeParams {
    /// Constant `tau` and `kappa`.
    pub fn stationary(alpha: u8, tau: f64, kappa: f64, sigma2: f64) -> Self {
        Self {
            order: 0,
            alpha,
            theta_tau: vec![tau.ln()],
            theta_kappa: vec![kappa.ln()],
            sigma2,
        }
    }

    /// Smoothness implied by the operator order in two dimensions.
    pub fn nu(&self) -> f64 {
        self.alpha as f64 - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let nb = (2 * self.order + 1).pow(2);
        if self.theta_tau.len() != nb || self.theta_kappa.len() != nb {
            return Err(Error::Shape(format!(
                "basis of order {} needs {nb} coefficients per field",
                self.order
            )));
        }
        if !(self.alpha == 1 || self.alpha == 2) {
            return Err(Error::Argument(format!("alpha must be 1 or 2, got {}", self.alpha)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Argument("noise variance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpdeFitOptions {
    pub order: usize,
    pub alpha: u8,
    /// Objective evaluations allowed; 0 means `400 * (number of parameters)`.
    pub max_evals: usize,
}

impl Default for SpdeFitOptions {
    fn default() -> Self {
        Self {
            order: 0,
            alpha: 2,
            max_evals: 0,
        }
    }
}

/// Which covariance of the latent field to project to locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    /// `A Q^{-1} A'`.
    Prior,
    /// `A (Q + A_k' A_k / sigma2)^{-1} A'`.
    Posterior,
}

/// Fitted SPDE model tied to the knot locations it was fitted on.
#[derive(Debug, Clone)]
pub struct SpdeModel {
    mesh: Mesh,
    basis: FourierBasis,
    params: SpdeParams,
    precision: CsrMatrix,
    knots: Vec<[f64; 2]>,
    a_knots: CsrMatrix,
    perm: Vec<usize>,
    pub converged: bool,
    pub objective: f64,
    pub evaluations: usize,
}

struct Problem {
    fem: FemMatrices,
    b: DMatrix<f64>,
    ata: CsrMatrix,
    aty: Vec<Vec<f64>>,
    yty: Vec<f64>,
    n_obs: usize,
    perm: Vec<usize>,
    alpha: u8,
}

impl Problem {
    fn fields(&self, theta: &[f64]) -> Vec<f64> {
        let nb = self.b.ncols();
        (0..self.b.nrows())
            .map(|i| (0..nb).map(|o| self.b[(i, o)] * theta[o]).sum::<f64>().exp())
            .collect()
    }

    /// Negative log posterior of `(theta_tau, theta_kappa, log sigma2)`.
    fn objective(&self, x: &[f64]) -> f64 {
        let nb = self.b.ncols();
        if x.iter().any(|v| !v.is_finite() || v.abs() > THETA_BOUND) {
            return f64::INFINITY;
        }
        let log_s2 = x[2 * nb];
        if log_s2 < SIGMA2_FLOOR.ln() {
            return f64::INFINITY;
        }
        let s2 = log_s2.exp();
        let tau = self.fields(&x[..nb]);
        let kappa = self.fields(&x[nb..2 * nb]);
        let Ok(q) = assemble_precision(&self.fem, &tau, &kappa, self.alpha) else {
            return f64::INFINITY;
        };
        let Ok(fq) = SparseCholesky::factor_with_perm(&q, self.perm.clone()) else {
            return f64::INFINITY;
        };
        let qp = q.add(&self.ata.scale(1.0 / s2));
        let Ok(fp) = SparseCholesky::factor_with_perm(&qp, self.perm.clone()) else {
            return f64::INFINITY;
        };
        let t = self.aty.len() as f64;
        let n = self.n_obs as f64;
        let mut ll = t * (0.5 * fq.log_det() - 0.5 * fp.log_det() - 0.5 * n * s2.ln() - 0.5 * n * (2.0 * std::f64::consts::PI).ln());
        for (aty, &yty) in self.aty.iter().zip(&self.yty) {
            let b: Vec<f64> = aty.iter().map(|v| v / s2).collect();
            ll -= 0.5 * (yty / s2 - fp.quad_inv(&b));
        }
        let penalty: f64 = 0.5 * (x[1..nb].iter().map(|v| v * v).sum::<f64>() + x[nb + 1..2 * nb].iter().map(|v| v * v).sum::<f64>());
        -ll + penalty
    }
}

fn basis_matrix(basis: &FourierBasis, pts: &[[f64; 2]]) -> DMatrix<f64> {
    let nb = basis.len();
    let mut b = DMatrix::zeros(pts.len(), nb);
    for (i, &p) in pts.iter().enumerate() {
        for (o, v) in basis.eval(p).into_iter().enumerate() {
            b[(i, o)] = v;
        }
    }
    b
}

/// Maximum a posteriori fit of the SPDE model to snapshots observed at
/// `knots` (`snapshots` rows are independent replicates, columns are knots).
pub fn fit_spde(knots: &[[f64; 2]], snapshots: &DMatrix<f64>, mesh: Mesh, opts: &SpdeFitOptions) -> Result<SpdeModel> {
    if snapshots.ncols() != knots.len() {
        return Err(Error::Shape(format!(
            "{} knots but snapshots have {} columns",
            knots.len(),
            snapshots.ncols()
        )));
    }
    if snapshots.nrows() == 0 || knots.is_empty() {
        return Err(Error::Argument("at least one snapshot at one knot is required".into()));
    }
    if snapshots.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("snapshots contain missing or non-finite values".into()));
    }
    if !(opts.alpha == 1 || opts.alpha == 2) {
        return Err(Error::Argument(format!("alpha must be 1 or 2, got {}", opts.alpha)));
    }
    let a = mesh.projection(knots)?;
    let basis = FourierBasis::new(opts.order, mesh.bbox());
    let nb = basis.len();
    let fem = FemMatrices::new(&mesh);

    // Starting values: a range of a fifth of the knot extent, variance split 9:1.
    let v = snapshots.iter().map(|y| y * y).sum::<f64>() / snapshots.len() as f64;
    let (x0, x1, y0, y1) = knots.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |b, p| (b.0.min(p[0]), b.1.max(p[0]), b.2.min(p[1]), b.3.max(p[1])),
    );
    let extent = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt().max(1e-12);
    let kappa0 = 8f64.sqrt() / (0.2 * extent);
    let var_of = |tau: f64| marginal_variance_stationary(opts.alpha, tau, kappa0);
    let tau0 = if v > 0.0 { (var_of(1.0) / (0.9 * v)).sqrt() } else { 1.0 };
    let mut theta_tau = vec![0.0; nb];
    let mut theta_kappa = vec![0.0; nb];
    theta_tau[0] = tau0.ln();
    theta_kappa[0] = kappa0.ln();

    let mut params = SpdeParams {
        order: opts.order,
        alpha: opts.alpha,
        theta_tau,
        theta_kappa,
        sigma2: (0.1 * v).max(SIGMA2_FLOOR),
    };
    let verts = mesh.vertices().to_vec();
    let bm = basis_matrix(&basis, &verts);
    let q0 = assemble_precision(&fem, &vec![1.0; verts.len()], &vec![kappa0; verts.len()], opts.alpha)?;
    let ata = a.transpose().matmul(&a);
    let perm = reverse_cuthill_mckee(&q0.add(&ata));

    if v == 0.0 {
        log::warn!("all snapshots are zero; noise variance set to its floor");
        params.sigma2 = SIGMA2_FLOOR;
        return SpdeModel::assemble(mesh, params, knots.to_vec(), a, perm, true, f64::NAN, 0);
    }

    let problem = Problem {
        fem,
        b: bm,
        ata,
        aty: (0..snapshots.nrows())
            .map(|r| a.tr_mul_vec(&snapshots.row(r).iter().copied().collect::<Vec<_>>()))
            .collect(),
        yty: (0..snapshots.nrows()).map(|r| snapshots.row(r).norm_squared()).collect(),
        n_obs: knots.len(),
        perm: perm.clone(),
        alpha: opts.alpha,
    };
    let mut x0v = params.theta_tau.clone();
    x0v.extend(&params.theta_kappa);
    x0v.push(params.sigma2.ln());
    let mut step = vec![0.3; x0v.len()];
    step[0] = 1.0;
    step[nb] = 0.5;
    step[2 * nb] = 1.0;
    let n_par = x0v.len();
    let nm = NelderMeadOptions {
        max_evals: if opts.max_evals == 0 { 400 * n_par } else { opts.max_evals },
        f_tol: 1e-9,
        x_tol: 1e-5,
    };
    let mut best = nelder_mead(|x| problem.objective(x), &x0v, &step, &nm);
    // One restart from the optimum guards against a collapsed simplex.
    if best.f.is_finite() {
        let again = nelder_mead(|x| problem.objective(x), &best.x, &step.iter().map(|s| 0.2 * s).collect::<Vec<_>>(), &nm);
        let evals = best.evals + again.evals;
        if again.f <= best.f {
            best = again;
        }
        best.evals = evals;
    }
    if !best.f.is_finite() {
        return Err(Error::Numerical("SPDE likelihood could not be evaluated at any parameter value".into()));
    }
    if !best.converged {
        log::warn!("SPDE fit stopped after {} evaluations without converging", best.evals);
    }
    params.theta_tau = best.x[..nb].to_vec();
    params.theta_kappa = best.x[nb..2 * nb].to_vec();
    params.sigma2 = best.x[2 * nb].exp().max(SIGMA2_FLOOR);
    SpdeModel::assemble(mesh, params, knots.to_vec(), a, perm, best.converged, best.f, best.evals)
}

/// Marginal variance of the stationary model in two dimensions
/// (`1 / (4 pi kappa^2 tau^2)` for `alpha = 2`). For `alpha = 1` the
/// continuous variance is infinite; the value returned uses a nominal unit
/// log-factor so that starting values stay finite.
pub fn marginal_variance_stationary(alpha: u8, tau: f64, kappa: f64) -> f64 {
    match alpha {
        2 => 1.0 / (4.0 * std::f64::consts::PI * kappa * kappa * tau * tau),
        _ => 1.0 / (4.0 * std::f64::consts::PI * tau * tau),
    }
}

impl SpdeModel {
    fn assemble(
        mesh: Mesh,
        params: SpdeParams,
        knots: Vec<[f64; 2]>,
        a_knots: CsrMatrix,
        perm: Vec<usize>,
        converged: bool,
        objective: f64,
        evaluations: usize,
    ) -> Result<Self> {
        params.validate()?;
        let basis = FourierBasis::new(params.order, mesh.bbox());
        let fem = FemMatrices::new(&mesh);
        let tau: Vec<f64> = basis.combine(mesh.vertices(), &params.theta_tau).into_iter().map(f64::exp).collect();
        let kappa: Vec<f64> = basis.combine(mesh.vertices(), &params.theta_kappa).into_iter().map(f64::exp).collect();
        let precision = assemble_precision(&fem, &tau, &kappa, params.alpha)?;
        Ok(Self {
            mesh,
            basis,
            params,
            precision,
            knots,
            a_knots,
            perm,
            converged,
            objective,
            evaluations,
        })
    }

    /// Model with given parameters (no fitting).
    pub fn from_params(mesh: Mesh, params: SpdeParams, knots: &[[f64; 2]]) -> Result<Self> {
        params.validate()?;
        let a = mesh.projection(knots)?;
        let ata = a.transpose().matmul(&a);
        let fem = FemMatrices::new(&mesh);
        let m = mesh.n_vertices();
        let q0 = assemble_precision(&fem, &vec![1.0; m], &vec![1.0; m], params.alpha)?;
        let perm = reverse_cuthill_mckee(&q0.add(&ata));
        Self::assemble(mesh, params, knots.to_vec(), a, perm, true, f64::NAN, 0)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn params(&self) -> &SpdeParams {
        &self.params
    }

    pub fn precision(&self) -> &CsrMatrix {
        &self.precision
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.knots
    }

    pub fn n_knots(&self) -> usize {
        self.knots.len()
    }

    /// `tau` at the mesh vertices.
    pub fn tau_vertices(&self) -> Vec<f64> {
        self.basis.combine(self.mesh.vertices(), &self.params.theta_tau).into_iter().map(f64::exp).collect()
    }

    /// `kappa` at the mesh vertices.
    pub fn kappa_vertices(&self) -> Vec<f64> {
        self.basis.combine(self.mesh.vertices(), &self.params.theta_kappa).into_iter().map(f64::exp).collect()
    }

    fn posterior_factor(&self) -> Result<SparseCholesky> {
        let ata = self.a_knots.transpose().matmul(&self.a_knots);
        let qp = self.precision.add(&ata.scale(1.0 / self.params.sigma2));
        SparseCholesky::factor_with_perm(&qp, self.perm.clone())
    }

    pub fn prior_factor(&self) -> Result<SparseCholesky> {
        SparseCholesky::factor_with_perm(&self.precision, self.perm.clone())
    }

    fn check_knot_values(&self, n: usize) -> Result<()> {
        if n != self.knots.len() {
            return Err(Error::Shape(format!("model has {} knots, got {n} values", self.knots.len())));
        }
        Ok(())
    }

    /// Posterior mean of the latent field at the mesh vertices.
    pub fn posterior_mean_vertices(&self, knot_values: &[f64]) -> Result<Vec<f64>> {
        self.check_knot_values(knot_values.len())?;
        let f = self.posterior_factor()?;
        Ok(self.mean_with(&f, knot_values))
    }

    fn mean_with(&self, f: &SparseCholesky, y: &[f64]) -> Vec<f64> {
        let s2 = self.params.sigma2;
        let b: Vec<f64> = self.a_knots.tr_mul_vec(y).into_iter().map(|v| v / s2).collect();
        f.solve(&b)
    }

    /// Posterior mean at `targets` given values at the knots.
    pub fn interpolate(&self, knot_values: &[f64], targets: &[[f64; 2]]) -> Result<Vec<f64>> {
        let mu = self.posterior_mean_vertices(knot_values)?;
        Ok(self.mesh.projection(targets)?.mul_vec(&mu))
    }

    /// Row-wise interpolation of `values` (`T x n_knots`) sharing one factorization.
    pub fn interpolate_many(&self, values: &DMatrix<f64>, targets: &[[f64; 2]]) -> Result<DMatrix<f64>> {
        self.check_knot_values(values.ncols())?;
        let f = self.posterior_factor()?;
        let at = self.mesh.projection(targets)?;
        let rows: Vec<Vec<f64>> = (0..values.nrows())
            .into_par_iter()
            .map(|r| {
                let y: Vec<f64> = values.row(r).iter().copied().collect();
                at.mul_vec(&self.mean_with(&f, &y))
            })
            .collect();
        Ok(DMatrix::from_fn(values.nrows(), targets.len(), |r, c| rows[r][c]))
    }

    /// Covariance of the latent field projected to `targets`.
    pub fn covariance(&self, targets: &[[f64; 2]], kind: CovarianceKind) -> Result<DMatrix<f64>> {
        let f = match kind {
            CovarianceKind::Prior => self.prior_factor()?,
            CovarianceKind::Posterior => self.posterior_factor()?,
        };
        let at = self.mesh.projection(targets)?;
        let att = at.transpose();
        let n = targets.len();
        let m = self.mesh.n_vertices();
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let rhs = att.mul_vec(&e);
                debug_assert_eq!(rhs.len(), m);
                at.mul_vec(&f.solve(&rhs))
            })
            .collect();
        let mut c = DMatrix::from_fn(n, n, |i, j| cols[j][i]);
        let ct = c.transpose();
        c = (c + ct) * 0.5;
        Ok(c)
    }

    /// Draw a field at the mesh vertices from the prior.
    pub fn sample_vertices(&self, seed: u64) -> Result<Vec<f64>> {
        let f = self.prior_factor()?;
        let mut rng = child_rng(seed, "spde-sample", 0);
        let w: Vec<f64> = (0..self.mesh.n_vertices()).map(|_| rng.sample(StandardNormal)).collect();
        Ok(f.sample(&w))
    }

    pub fn to_container(&self) -> Container {
        #[derive(Serialize)]
        struct Meta<'a> {
            params: &'a SpdeParams,
            converged: bool,
            objective: f64,
            evaluations: usize,
            n_vertices: usize,
            n_knots: usize,
        }
        let mut c = Container::new(
            "spde",
            &Meta {
                params: &self.params,
                converged: self.converged,
                objective: if self.objective.is_finite() { self.objective } else { 0.0 },
                evaluations: self.evaluations,
                n_vertices: self.mesh.n_vertices(),
                n_knots: self.knots.len(),
            },
        );
        c.put_f64("mesh.vertices", self.mesh.vertices().iter().flat_map(|p| [p[0], p[1]]).collect());
        c.put_u64("mesh.triangles", self.mesh.triangles().iter().flat_map(|t| t.map(|v| v as u64)).collect());
        c.put_f64("knots", self.knots.iter().flat_map(|p| [p[0], p[1]]).collect());
        let trip = self.precision.triplets();
        c.put_u64("precision.rows", trip.iter().map(|t| t.0 as u64).collect());
        c.put_u64("precision.cols", trip.iter().map(|t| t.1 as u64).collect());
        c.put_f64("precision.values", trip.iter().map(|t| t.2).collect());
        c.put_usize("perm", &self.perm);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("spde")?;
        #[derive(Deserialize)]
        struct Meta {
            params: SpdeParams,
            converged: bool,
            objective: f64,
            evaluations: usize,
        }
        let meta: Meta = c.metadata_as()?;
        let pairs = |v: &[f64]| -> Vec<[f64; 2]> { v.chunks_exact(2).map(|p| [p[0], p[1]]).collect() };
        let tris: Vec<[usize; 3]> = c
            .u64("mesh.triangles")?
            .chunks_exact(3)
            .map(|t| [t[0] as usize, t[1] as usize, t[2] as usize])
            .collect();
        let mesh = Mesh::new(pairs(c.f64("mesh.vertices")?), tris)?;
        let knots = pairs(c.f64("knots")?);
        let a = mesh.projection(&knots)?;
        let perm = c.usize("perm")?;
        if perm.len() != mesh.n_vertices() {
            return Err(Error::schema(0, 0, "spde container permutation has the wrong length"));
        }
        let mut model = Self::assemble(mesh, meta.params, knots, a, perm, meta.converged, meta.objective, meta.evaluations)?;
        let rows = c.usize("precision.rows")?;
        let cols = c.usize("precision.cols")?;
        let vals = c.f64("precision.values")?;
        if rows.len() != vals.len() || cols.len() != vals.len() {
            return Err(Error::schema(0, 0, "spde container precision arrays differ in length"));
        }
        let m = model.mesh.n_vertices();
        if rows.iter().chain(&cols).any(|&i| i >= m) {
            return Err(Error::schema(0, 0, "spde container precision index out of range"));
        }
        model.precision = CsrMatrix::from_triplets(m, m, rows.into_iter().zip(cols).zip(vals.iter().copied()).map(|((r, c), v)| (r, c, v)).collect());
        Ok(model)
    }
}
