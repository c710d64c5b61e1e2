use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hyper::EsnHyperParams;
use super::weights::{generate_weights, LayerWeights, Reservoir};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::field::ForecastSet;
use crate::linalg::{sym_eigen_desc, CsrMatrix};
use crate::rng::sub_seed;

/// Principal-component reducer between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// `n_h x k` loadings, columns in decreasing variance order.
    pub loadings: DMatrix<f64>,
}

impl Pca {
    /// Fit on the rows of `states`, keeping `k` components.
    pub fn fit(states: &[Vec<f64>], k: usize) -> Self {
        let n = states[0].len();
        let t = states.len() as f64;
        let mut mean = DVector::zeros(n);
        for s in states {
            for i in 0..n {
                mean[i] += s[i];
            }
        }
        mean /= t;
        let centered = DMatrix::from_fn(states.len(), n, |r, c| states[r][c] - mean[c]);
        let cov = centered.tr_mul(&centered) / (t - 1.0).max(1.0);
        let (_, vecs) = sym_eigen_desc(&cov);
        let mut loadings = vecs.columns(0, k).into_owned();
        // Fix the sign so the largest-magnitude loading of each component is positive.
        for mut col in loadings.column_iter_mut() {
            let imax = col.iamax();
            if col[imax] < 0.0 {
                col.neg_mut();
            }
        }
        Self { mean, loadings }
    }

    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        let k = self.loadings.ncols();
        (0..k)
            .map(|j| {
                let col = self.loadings.column(j);
                h.iter().enumerate().map(|(i, v)| (v - self.mean[i]) * col[i]).sum()
            })
            .collect()
    }
}

/// Per-coordinate location-scale standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Standard deviation, or 1 for coordinates without variation.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let p = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for r in rows {
            for i in 0..p {
                var[i] += (r[i] - mean[i]).powi(2);
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(v, m)| {
                let sd = (v / (n - 1.0).max(1.0)).sqrt();
                if sd > 1e-12 * m.abs().max(1e-300) && sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, v: &mut [f64]) {
        for i in 0..v.len() {
            v[i] = (v[i] - self.mean[i]) / self.scale[i];
        }
    }
}

/// Linear map from features to outputs with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub intercept: DVector<f64>,
    /// `n_features x n_outputs`.
    pub coef: DMatrix<f64>,
}

impl Readout {
    pub fn predict(&self, phi: &[f64]) -> Vec<f64> {
        let n = self.intercept.len();
        let mut out: Vec<f64> = self.intercept.iter().copied().collect();
        for (f, &p) in phi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for j in 0..n {
                out[j] += self.coef[(f, j)] * p;
            }
        }
        out
    }
}

/// Running normal equations `[1 phi]'[1 phi]` and `[1 phi]'y`.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    pending_x: Vec<f64>,
    pending_y: Vec<f64>,
    n_features: usize,
    n_outputs: usize,
    count: usize,
}

const FLUSH_ROWS: usize = 256;

impl GramAccumulator {
    pub fn new(n_features: usize, n_outputs: usize) -> Self {
        Self {
            gram: DMatrix::zeros(n_features + 1, n_features + 1),
            cross: DMatrix::zeros(n_features + 1, n_outputs),
            pending_x: Vec::new(),
            pending_y: Vec::new(),
            n_features,
            n_outputs,
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, phi: &[f64], y: &[f64]) {
        self.pending_x.push(1.0);
        self.pending_x.extend_from_slice(phi);
        self.pending_y.extend_from_slice(y);
        self.count += 1;
        if self.pending_y.len() / self.n_outputs.max(1) >= FLUSH_ROWS {
            self.flush();
        }
    }

    fn flush(&mut self) {
        let p = self.n_features + 1;
        let rows = self.pending_x.len() / p;
        if rows == 0 {
            return;
        }
        let x = DMatrix::from_row_slice(rows, p, &self.pending_x);
        let y = DMatrix::from_row_slice(rows, self.n_outputs, &self.pending_y);
        self.gram += x.tr_mul(&x);
        self.cross += x.tr_mul(&y);
        self.pending_x.clear();
        self.pending_y.clear();
    }

    /// Ridge solution penalizing every coefficient except the intercept.
    pub fn solve(&mut self, lambda: f64) -> Result<Readout> {
        self.flush();
        if self.count == 0 {
            return Err(Error::Argument("no rows available to fit the readout".into()));
        }
        let mut a = self.gram.clone();
        for i in 1..a.nrows() {
            a[(i, i)] += lambda;
        }
        let chol = a.cholesky().ok_or_else(|| {
            if lambda == 0.0 {
                Error::Numerical("readout Gram matrix is singular; use a ridge penalty lambda > 0".into())
            } else {
                Error::Numerical("regularized readout Gram matrix is not positive definite".into())
            }
        })?;
        let beta = chol.solve(&self.cross);
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("readout has non-finite coefficients; increase lambda".into()));
        }
        Ok(Readout {
            intercept: beta.row(0).transpose(),
            coef: beta.rows(1, self.n_features).into_owned(),
        })
    }
}

/// One fitted ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct EsnMember {
    pub reservoir: Reservoir,
    pub pcas: Vec<Pca>,
    pub standardizer: Standardizer,
    pub readout: Readout,
}

/// Standardized stacked states and their squares.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub linear: DMatrix<f64>,
    pub squared: DMatrix<f64>,
}

impl StateTrajectory {
    pub fn len(&self) -> usize {
        self.linear.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[k(h) k(h*h)]` as one design matrix.
    pub fn design(&self) -> DMatrix<f64> {
        let (t, v) = self.linear.shape();
        DMatrix::from_fn(t, 2 * v, |r, c| if c < v { self.linear[(r, c)] } else { self.squared[(r, c - v)] })
    }
}

/// Fitted echo state network ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EsnModel {
    pub hp: EsnHyperParams,
    pub seed: u64,
    pub n_outputs: usize,
    pub n_train: usize,
    pub members: Vec<EsnMember>,
}

type Rows = Vec<Vec<f64>>;

fn to_rows(y: &DMatrix<f64>) -> Rows {
    (0..y.nrows()).map(|r| y.row(r).iter().copied().collect()).collect()
}

/// `x_t = (Y_{t-tau}, ..., Y_{t-m tau})` with zeros before the series start.
/// Indices after `origin` are read from `preds` (`preds[0]` is time `origin + 1`).
fn build_input(t: usize, m: usize, tau: usize, n: usize, rows: &[Vec<f64>], origin: usize, preds: &[Vec<f64>]) -> Vec<f64> {
    let mut x = Vec::with_capacity(m * n);
    for k in 1..=m {
        let lag = k * tau;
        if lag > t {
            x.extend(std::iter::repeat(0.0).take(n));
        } else {
            let idx = t - lag;
            if idx <= origin {
                x.extend_from_slice(&rows[idx]);
            } else {
                x.extend_from_slice(&preds[idx - origin - 1]);
            }
        }
    }
    x
}

fn zero_state(res: &Reservoir) -> Rows {
    res.layers.iter().map(|l| vec![0.0; l.n_h()]).collect()
}

impl EsnMember {
    fn stack_step(&self, alpha: f64, state: &mut [Vec<f64>], x: &[f64]) {
        for d in 0..state.len() {
            if d == 0 {
                self.reservoir.layers[0].step(&mut state[0], x, alpha);
            } else {
                let u = self.pcas[d - 1].apply(&state[d - 1]);
                self.reservoir.layers[d].step(&mut state[d], &u, alpha);
            }
        }
    }

    /// Raw stacked vector `(h_D, Q(h_{D-1}), ..., Q(h_1))`.
    fn raw_vector(&self, state: &[Vec<f64>]) -> Vec<f64> {
        raw_vector(&self.pcas, state)
    }

    fn features(&self, state: &[Vec<f64>]) -> Vec<f64> {
        let mut phi = square_extend(self.raw_vector(state));
        self.standardizer.apply(&mut phi);
        phi
    }

    /// Drive the member with `inputs` (rows are `x_t`) from `h0` (zeros when `None`).
    pub fn run_states(&self, hp: &EsnHyperParams, inputs: &DMatrix<f64>, h0: Option<&[Vec<f64>]>) -> Result<StateTrajectory> {
        if inputs.ncols() != self.reservoir.input_dim {
            return Err(Error::Shape(format!(
                "inputs have {} columns, reservoir expects {}",
                inputs.ncols(),
                self.reservoir.input_dim
            )));
        }
        let mut state = match h0 {
            Some(h) => {
                check_state_shape(&self.reservoir, h)?;
                h.to_vec()
            }
            None => zero_state(&self.reservoir),
        };
        let v = hp.state_width();
        let t = inputs.nrows();
        let mut lin = DMatrix::zeros(t, v);
        let mut sq = DMatrix::zeros(t, v);
        for r in 0..t {
            let x: Vec<f64> = inputs.row(r).iter().copied().collect();
            self.stack_step(hp.alpha, &mut state, &x);
            let phi = self.features(&state);
            for c in 0..v {
                lin[(r, c)] = phi[c];
                sq[(r, c)] = phi[v + c];
            }
        }
        Ok(StateTrajectory { linear: lin, squared: sq })
    }

    /// Unstandardized stacked states for `inputs`, starting from `h0`.
    pub fn run_raw(&self, hp: &EsnHyperParams, inputs: &DMatrix<f64>, h0: Option<&[Vec<f64>]>) -> Result<DMatrix<f64>> {
        if inputs.ncols() != self.reservoir.input_dim {
            return Err(Error::Shape("input width does not match the reservoir".into()));
        }
        let mut state = match h0 {
            Some(h) => {
                check_state_shape(&self.reservoir, h)?;
                h.to_vec()
            }
            None => zero_state(&self.reservoir),
        };
        let v = hp.state_width();
        let mut out = DMatrix::zeros(inputs.nrows(), v);
        for r in 0..inputs.nrows() {
            let x: Vec<f64> = inputs.row(r).iter().copied().collect();
            self.stack_step(hp.alpha, &mut state, &x);
            let raw = self.raw_vector(&state);
            for c in 0..v {
                out[(r, c)] = raw[c];
            }
        }
        Ok(out)
    }
}

fn check_state_shape(res: &Reservoir, h: &[Vec<f64>]) -> Result<()> {
    if h.len() != res.layers.len() || h.iter().zip(&res.layers).any(|(s, l)| s.len() != l.n_h()) {
        return Err(Error::Shape("initial state does not match the layer sizes".into()));
    }
    Ok(())
}

fn raw_vector(pcas: &[Pca], state: &[Vec<f64>]) -> Vec<f64> {
    let d = state.len();
    let mut v = state[d - 1].clone();
    for l in (0..d - 1).rev() {
        v.extend(pcas[l].apply(&state[l]));
    }
    v
}

fn square_extend(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.len();
    v.reserve(n);
    for i in 0..n {
        let s = v[i] * v[i];
        v.push(s);
    }
    v
}

fn check_series(y: &DMatrix<f64>) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("echo state network input contains missing or non-finite values".into()));
    }
    Ok(())
}

fn fit_member(hp: &EsnHyperParams, rows: &[Vec<f64>], member_seed: u64) -> Result<EsnMember> {
    let n = rows[0].len();
    let t_len = rows.len();
    let burn = hp.burn_in();
    let reservoir = generate_weights(hp, hp.m * n, member_seed)?;
    // Run layer by layer so each reducer is fitted before the next layer sees it.
    let mut pcas = Vec::new();
    let mut inputs: Rows = (0..t_len).map(|t| build_input(t, hp.m, hp.tau, n, rows, t, &[])).collect();
    let mut layer_states: Vec<Rows> = Vec::new();
    for (d, layer) in reservoir.layers.iter().enumerate() {
        let states = run_layer(layer, &inputs, hp.alpha);
        if d + 1 < reservoir.layers.len() {
            let pca = Pca::fit(&states[burn..], hp.layers[d].n_reduced);
            inputs = states.iter().map(|h| pca.apply(h)).collect();
            pcas.push(pca);
        }
        layer_states.push(states);
    }
    let raw: Rows = (burn..t_len)
        .map(|t| {
            let st: Rows = layer_states.iter().map(|s| s[t].clone()).collect();
            square_extend(raw_vector(&pcas, &st))
        })
        .collect();
    let standardizer = Standardizer::fit(&raw);
    let mut acc = GramAccumulator::new(2 * hp.state_width(), n);
    for (i, mut phi) in raw.into_iter().enumerate() {
        standardizer.apply(&mut phi);
        acc.push(&phi, &rows[burn + i]);
    }
    let readout = acc.solve(hp.lambda)?;
    Ok(EsnMember {
        reservoir,
        pcas,
        standardizer,
        readout,
    })
}

fn run_layer(layer: &LayerWeights, inputs: &[Vec<f64>], alpha: f64) -> Rows {
    let mut h = vec![0.0; layer.n_h()];
    inputs
        .iter()
        .map(|x| {
            layer.step(&mut h, x, alpha);
            h.clone()
        })
        .collect()
}

/// Fit an ensemble of echo state networks on the training series `train`
/// (`T x n_outputs`, rows are time steps).
pub fn fit_esn(hp: &EsnHyperParams, train: &DMatrix<f64>, seed: u64) -> Result<EsnModel> {
    hp.validate()?;
    check_series(train)?;
    let burn = hp.burn_in();
    if train.nrows() < burn + 2 || train.nrows() <= hp.m * hp.tau {
        return Err(Error::Argument(format!(
            "training series of length {} is too short for burn-in {burn} and {} lags of stride {}",
            train.nrows(),
            hp.m,
            hp.tau
        )));
    }
    if train.ncols() == 0 {
        return Err(Error::Argument("training series has no locations".into()));
    }
    let rows = to_rows(train);
    let members = (0..hp.ensemble)
        .into_par_iter()
        .map(|i| fit_member(hp, &rows, sub_seed(seed, "esn-member", i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EsnModel {
        hp: hp.clone(),
        seed,
        n_outputs: train.ncols(),
        n_train: train.nrows(),
        members,
    })
}

/// Fit the readout of `states` on `targets` by ridge regression without intercept.
pub fn fit_readout(states: &StateTrajectory, targets: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    crate::linalg::ridge_solve(&states.design(), targets, lambda)
}

impl EsnModel {
    /// Rolling forecasts over the test part of `series` (rows `n_train..T`).
    ///
    /// The first `n_train` rows must be the training series. For every origin
    /// `o` in `n_train-1 ..= T-2` and lead `a`, the forecast of `Y_{o+a}` uses
    /// observations up to `o` and feeds earlier predictions back as inputs.
    /// With `batch = Some(b)` the readout is refitted every `b` origins on all
    /// observations up to the current origin.
    pub fn forecast_rolling(&self, series: &DMatrix<f64>, max_lead: usize, batch: Option<usize>) -> Result<Vec<ForecastSet>> {
        self.check_series_for_forecast(series, max_lead)?;
        if let Some(0) = batch {
            return Err(Error::Argument("batch window must be at least 1".into()));
        }
        let rows = to_rows(series);
        let per_member = self
            .members
            .par_iter()
            .map(|m| self.member_rolling(m, &rows, max_lead, batch))
            .collect::<Result<Vec<_>>>()?;
        let t = series.nrows();
        (1..=max_lead)
            .map(|a| {
                let origins: Vec<usize> = (self.n_train - 1..=t - 1 - a).collect();
                let members: Vec<DMatrix<f64>> = per_member.iter().map(|pm| pm[a - 1].clone()).collect();
                let point = ensemble_mean(&members);
                let ensemble = if members.len() > 1 { members } else { Vec::new() };
                ForecastSet::with_ensemble(a, origins, point, ensemble)
            })
            .collect()
    }

    /// Non-batched rolling forecasts.
    pub fn forecast(&self, series: &DMatrix<f64>, max_lead: usize) -> Result<Vec<ForecastSet>> {
        self.forecast_rolling(series, max_lead, None)
    }

    /// Batched rolling forecasts with readout refits every `b` origins.
    pub fn forecast_batched(&self, series: &DMatrix<f64>, max_lead: usize, b: usize) -> Result<Vec<ForecastSet>> {
        self.forecast_rolling(series, max_lead, Some(b))
    }

    /// Forecast the `max_lead` steps after the end of `history` (rows = leads).
    pub fn forecast_ahead(&self, history: &DMatrix<f64>, max_lead: usize) -> Result<DMatrix<f64>> {
        if history.ncols() != self.n_outputs {
            return Err(Error::Shape("history width differs from the fitted model".into()));
        }
        if history.nrows() < self.hp.m * self.hp.tau || history.nrows() == 0 {
            return Err(Error::Argument("history shorter than the input lags".into()));
        }
        check_series(history)?;
        let rows = to_rows(history);
        let t = rows.len();
        let n = self.n_outputs;
        let hp = &self.hp;
        let members: Vec<DMatrix<f64>> = self
            .members
            .par_iter()
            .map(|m| {
                let mut state = zero_state(&m.reservoir);
                for s in 0..t {
                    let x = build_input(s, hp.m, hp.tau, n, &rows, s, &[]);
                    m.stack_step(hp.alpha, &mut state, &x);
                }
                let mut preds: Rows = Vec::new();
                for a in 1..=max_lead {
                    let x = build_input(t - 1 + a, hp.m, hp.tau, n, &rows, t - 1, &preds);
                    m.stack_step(hp.alpha, &mut state, &x);
                    preds.push(m.readout.predict(&m.features(&state)));
                }
                DMatrix::from_fn(max_lead, n, |r, c| preds[r][c])
            })
            .collect();
        Ok(ensemble_mean(&members))
    }

    fn check_series_for_forecast(&self, series: &DMatrix<f64>, max_lead: usize) -> Result<()> {
        if max_lead == 0 {
            return Err(Error::Argument("at least one lead is required".into()));
        }
        if series.ncols() != self.n_outputs {
            return Err(Error::Shape(format!(
                "series has {} locations, model was fitted on {}",
                series.ncols(),
                self.n_outputs
            )));
        }
        if series.nrows() < self.n_train + max_lead {
            return Err(Error::Argument(format!(
                "series of length {} leaves no test targets for lead {max_lead} after {} training steps",
                series.nrows(),
                self.n_train
            )));
        }
        check_series(series)
    }

    fn member_rolling(&self, m: &EsnMember, rows: &[Vec<f64>], max_lead: usize, batch: Option<usize>) -> Result<Vec<DMatrix<f64>>> {
        let hp = &self.hp;
        let n = self.n_outputs;
        let t_len = rows.len();
        let burn = hp.burn_in();
        let first = self.n_train - 1;
        let last = t_len - 2;
        let n_origins = last + 1 - first;
        let refits = batch.is_some_and(|b| b < n_origins);
        let mut acc = GramAccumulator::new(2 * hp.state_width(), n);
        let mut readout = m.readout.clone();
        let mut out: Vec<DMatrix<f64>> = (1..=max_lead).map(|a| DMatrix::zeros(n_origins + 1 - a, n)).collect();
        let mut state = zero_state(&m.reservoir);
        for t in 0..=last {
            let x = build_input(t, hp.m, hp.tau, n, rows, t, &[]);
            m.stack_step(hp.alpha, &mut state, &x);
            if refits && t >= burn {
                acc.push(&m.features(&state), &rows[t]);
            }
            if t < first {
                continue;
            }
            let k = t - first;
            if let Some(b) = batch {
                if refits && k > 0 && k % b == 0 {
                    readout = acc.solve(hp.lambda)?;
                }
            }
            let mut branch = state.clone();
            let mut preds: Rows = Vec::with_capacity(max_lead);
            for a in 1..=max_lead {
                let target = t + a;
                if target >= t_len {
                    break;
                }
                let x = build_input(target, hp.m, hp.tau, n, rows, t, &preds);
                m.stack_step(hp.alpha, &mut branch, &x);
                let y = readout.predict(&m.features(&branch));
                for c in 0..n {
                    out[a - 1][(k, c)] = y[c];
                }
                preds.push(y);
            }
        }
        Ok(out)
    }

    pub fn to_container(&self) -> Container {
        #[derive(Serialize)]
        struct Meta<'a> {
            hp: &'a EsnHyperParams,
            seed: u64,
            n_outputs: usize,
            n_train: usize,
            members: usize,
            lambda_abs: Vec<Vec<f64>>,
            degenerate_layers: Vec<Vec<usize>>,
        }
        let meta = Meta {
            hp: &self.hp,
            seed: self.seed,
            n_outputs: self.n_outputs,
            n_train: self.n_train,
            members: self.members.len(),
            lambda_abs: self.members.iter().map(|m| m.reservoir.layers.iter().map(|l| l.lambda_abs).collect()).collect(),
            degenerate_layers: self.members.iter().map(|m| m.reservoir.degenerate_layers.clone()).collect(),
        };
        let mut c = Container::new("esn", &meta);
        for (i, m) in self.members.iter().enumerate() {
            c.put_u64(format!("m{i}.seed"), vec![m.reservoir.seed, m.reservoir.input_dim as u64]);
            for (d, l) in m.reservoir.layers.iter().enumerate() {
                put_csr(&mut c, &format!("m{i}.l{d}.w"), &l.w);
                put_csr(&mut c, &format!("m{i}.l{d}.win"), &l.w_in);
            }
            for (d, p) in m.pcas.iter().enumerate() {
                c.put_f64(format!("m{i}.pca{d}.mean"), p.mean.as_slice().to_vec());
                c.put_f64(format!("m{i}.pca{d}.loadings"), p.loadings.as_slice().to_vec());
            }
            c.put_f64(format!("m{i}.std.mean"), m.standardizer.mean.clone());
            c.put_f64(format!("m{i}.std.scale"), m.standardizer.scale.clone());
            c.put_f64(format!("m{i}.readout.intercept"), m.readout.intercept.as_slice().to_vec());
            c.put_f64(format!("m{i}.readout.coef"), m.readout.coef.as_slice().to_vec());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("esn")?;
        #[derive(Deserialize)]
        struct Meta {
            hp: EsnHyperParams,
            seed: u64,
            n_outputs: usize,
            n_train: usize,
            members: usize,
            lambda_abs: Vec<Vec<f64>>,
            degenerate_layers: Vec<Vec<usize>>,
        }
        let meta: Meta = c.metadata_as()?;
        meta.hp.validate()?;
        let shape_err = || Error::schema(0, 0, "esn container sections have inconsistent sizes");
        let v = meta.hp.state_width();
        let f = 2 * v;
        let mut members = Vec::with_capacity(meta.members);
        for i in 0..meta.members {
            let s = c.u64(&format!("m{i}.seed"))?;
            if s.len() != 2 {
                return Err(shape_err());
            }
            let input_dim = s[1] as usize;
            let mut layers = Vec::new();
            for (d, spec) in meta.hp.layers.iter().enumerate() {
                let in_dim = if d == 0 { input_dim } else { meta.hp.layers[d - 1].n_reduced };
                let w = get_csr(c, &format!("m{i}.l{d}.w"), spec.n_h, spec.n_h)?;
                let w_in = get_csr(c, &format!("m{i}.l{d}.win"), spec.n_h, in_dim)?;
                let lambda_abs = *meta.lambda_abs.get(i).and_then(|l| l.get(d)).ok_or_else(shape_err)?;
                layers.push(LayerWeights {
                    w,
                    w_in,
                    lambda_abs,
                    scale: spec.nu / lambda_abs,
                });
            }
            let mut pcas = Vec::new();
            for d in 0..meta.hp.depth() - 1 {
                let n_h = meta.hp.layers[d].n_h;
                let k = meta.hp.layers[d].n_reduced;
                let mean = c.f64(&format!("m{i}.pca{d}.mean"))?;
                let load = c.f64(&format!("m{i}.pca{d}.loadings"))?;
                if mean.len() != n_h || load.len() != n_h * k {
                    return Err(shape_err());
                }
                pcas.push(Pca {
                    mean: DVector::from_column_slice(mean),
                    loadings: DMatrix::from_column_slice(n_h, k, load),
                });
            }
            let mean = c.f64(&format!("m{i}.std.mean"))?.to_vec();
            let scale = c.f64(&format!("m{i}.std.scale"))?.to_vec();
            let intercept = c.f64(&format!("m{i}.readout.intercept"))?;
            let coef = c.f64(&format!("m{i}.readout.coef"))?;
            if mean.len() != f || scale.len() != f || intercept.len() != meta.n_outputs || coef.len() != f * meta.n_outputs {
                return Err(shape_err());
            }
            members.push(EsnMember {
                reservoir: Reservoir {
                    layers,
                    input_dim,
                    seed: s[0],
                    degenerate_layers: meta.degenerate_layers.get(i).cloned().unwrap_or_default(),
                },
                pcas,
                standardizer: Standardizer { mean, scale },
                readout: Readout {
                    intercept: DVector::from_column_slice(intercept),
                    coef: DMatrix::from_column_slice(f, meta.n_outputs, coef),
                },
            });
        }
        Ok(Self {
            hp: meta.hp,
            seed: meta.seed,
            n_outputs: meta.n_outputs,
            n_train: meta.n_train,
            members,
        })
    }
}

fn put_csr(c: &mut Container, name: &str, m: &CsrMatrix) {
    let (p, i, v) = m.raw_parts();
    c.put_usize(format!("{name}.indptr"), p);
    c.put_usize(format!("{name}.indices"), i);
    c.put_f64(format!("{name}.values"), v.to_vec());
}

fn get_csr(c: &Container, name: &str, nrows: usize, ncols: usize) -> Result<CsrMatrix> {
    CsrMatrix::from_raw_parts(
        nrows,
        ncols,
        c.usize(&format!("{name}.indptr"))?,
        c.usize(&format!("{name}.indices"))?,
        c.f64(&format!("{name}.values"))?.to_vec(),
    )
}

fn ensemble_mean(members: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut sum = members[0].clone();
    for m in &members[1..] {
        sum += m;
    }
    sum / members.len() as f64
}

/// Mean squared error over all cells of a forecast set against `series`.
pub fn forecast_mspe(f: &ForecastSet, series: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for (r, t) in f.targets().into_iter().enumerate() {
        for c in 0..f.point.ncols() {
            s += (f.point[(r, c)] - series[(t, c)]).powi(2);
        }
    }
    s / (f.point.len() as f64)
}

/// Grid search: fit every candidate on `train` and score mean MSPE over
/// leads `1..=max_lead` on `validation`, which continues `train` in time.
/// Ties prefer the smaller last-layer state, then the smaller `m`.
pub fn tune(grid: &[EsnHyperParams], train: &DMatrix<f64>, validation: &DMatrix<f64>, max_lead: usize, seed: u64) -> Result<(EsnHyperParams, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::Argument("hyper-parameter grid is empty".into()));
    }
    if train.ncols() != validation.ncols() {
        return Err(Error::Shape("training and validation series differ in width".into()));
    }
    let mut series = DMatrix::zeros(train.nrows() + validation.nrows(), train.ncols());
    series.rows_mut(0, train.nrows()).copy_from(train);
    series.rows_mut(train.nrows(), validation.nrows()).copy_from(validation);
    let scores = grid
        .par_iter()
        .map(|hp| {
            let model = fit_esn(hp, train, seed)?;
            let sets = model.forecast(&series, max_lead)?;
            Ok(sets.iter().map(|f| forecast_mspe(f, &series)).sum::<f64>() / max_lead as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for i in 1..grid.len() {
        let key = |j: usize| (grid[j].layers.last().unwrap().n_h, grid[j].m);
        let better = scores[i] < scores[best] || (scores[i] == scores[best] && key(i) < key(best));
        if better {
            best = i;
        }
    }
    Ok((grid[best].clone(), scores))
}
