//! Dense helpers on top of nalgebra plus a small sparse toolkit: CSR storage
//! and an envelope Cholesky with reverse Cuthill-McKee ordering, enough for
//! the mesh-sized symmetric positive-definite systems of the SPDE model.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ridge solution `(H'H + lambda I)^{-1} H'Y` through a Cholesky factorization
/// of the regularized Gram matrix.
pub fn ridge_solve(h: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if h.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "design has {} rows, targets have {}",
            h.nrows(),
            y.nrows()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Argument(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let mut gram = h.tr_mul(h);
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = h.tr_mul(y);
    let chol = gram.cholesky().ok_or_else(|| {
        if lambda == 0.0 {
            Error::Numerical(
                "Gram matrix is singular; the design is rank deficient, use a ridge penalty lambda > 0".into(),
            )
        } else {
            Error::Numerical("regularized Gram matrix is not positive definite".into())
        }
    })?;
    let b = chol.solve(&rhs);
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "ridge solve produced non-finite coefficients; use a larger lambda".into(),
        ));
    }
    Ok(b)
}

/// Dense Cholesky with an error instead of `None`.
pub fn cholesky(a: DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    a.cholesky()
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

/// Eigen-decomposition of a symmetric matrix, eigenpairs sorted by
/// decreasing eigenvalue.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = a.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone().symmetric_eigenvalues().min()
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed in input order.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Rebuild from CSR arrays, checking their consistency.
    pub fn from_raw_parts(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let ok = indptr.len() == nrows + 1
            && indptr[0] == 0
            && indptr.windows(2).all(|w| w[0] <= w[1])
            && indptr[nrows] == indices.len()
            && indices.len() == values.len()
            && indices.iter().all(|&c| c < ncols);
        if !ok {
            return Err(Error::Shape("inconsistent CSR arrays".into()));
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    /// `(indptr, indices, values)`.
    pub fn raw_parts(&self) -> (&[usize], &[usize], &[f64]) {
        (&self.indptr, &self.indices, &self.values)
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Self::from_triplets(d.len(), d.len(), d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect())
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                if a[(r, c)] != 0.0 {
                    t.push((r, c, a[(r, c)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.indptr[r];
        let e = self.indptr[r + 1];
        self.indices[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let s = self.indptr[r];
        let e = self.indptr[r + 1];
        match self.indices[s..e].binary_search(&c) {
            Ok(k) => self.values[s + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `self' x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                out[c] += v * xr;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let t = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, t)
    }

    pub fn matmul(&self, other: &CsrMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut t = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        let mut seen = vec![false; other.ncols];
        for r in 0..self.nrows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if !seen[c] {
                        seen[c] = true;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                t.push((r, c, acc[c]));
                acc[c] = 0.0;
                seen[c] = false;
            }
            touched.clear();
        }
        Self::from_triplets(self.nrows, other.ncols, t)
    }

    pub fn add(&self, other: &CsrMatrix) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = self.triplets();
        t.extend(other.triplets());
        Self::from_triplets(self.nrows, self.ncols, t)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `diag(left) * self * diag(right)`.
    pub fn scale_rows_cols(&self, left: &[f64], right: &[f64]) -> Self {
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.values[k] *= left[r] * right[self.indices[k]];
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            d[(r, c)] += v;
        }
        d
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .into_iter()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    /// Permute rows and columns symmetrically: `out[i][j] = self[perm[i]][perm[j]]`.
    pub fn permute_sym(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let t = self
            .triplets()
            .into_iter()
            .map(|(r, c, v)| (inv[r], inv[c], v))
            .collect();
        Self::from_triplets(self.nrows, self.ncols, t)
    }
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern of `a`
/// (`perm[new] = old`).
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|r| a.row(r).map(|(c, _)| c).filter(|&c| c != r).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs = |start: usize, visited: &[bool]| -> (Vec<usize>, Vec<usize>) {
        // returns (nodes in BFS order, level of each)
        let mut seen = visited.to_vec();
        let mut out = vec![start];
        let mut level = vec![0];
        seen[start] = true;
        let mut head = 0;
        while head < out.len() {
            let u = out[head];
            let lu = level[head];
            head += 1;
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    out.push(v);
                    level.push(lu + 1);
                }
            }
        }
        (out, level)
    };
    while order.len() < n {
        let mut start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        // pseudo-peripheral node: repeat BFS from the farthest low-degree node
        let mut ecc = 0;
        for _ in 0..4 {
            let (nodes, levels) = bfs(start, &visited);
            let maxl = *levels.iter().max().unwrap();
            if maxl <= ecc {
                break;
            }
            ecc = maxl;
            start = nodes
                .iter()
                .zip(&levels)
                .filter(|(_, &l)| l == maxl)
                .map(|(&v, _)| v)
                .min_by_key(|&v| (degree[v], v))
                .unwrap();
        }
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nb: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nb.sort_by_key(|&v| (degree[v], v));
            for v in nb {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Envelope (profile) Cholesky factor `P A P' = L L'` of a sparse SPD matrix.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl SparseCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let perm = reverse_cuthill_mckee(a);
        Self::factor_with_perm(a, perm)
    }

    pub fn factor_with_perm(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape("sparse Cholesky needs a square matrix".into()));
        }
        let p = a.permute_sym(&perm);
        let mut first = vec![0usize; n];
        for i in 0..n {
            first[i] = p.row(i).map(|(c, _)| c).filter(|&c| c <= i).min().unwrap_or(i);
        }
        let mut offset = vec![0usize; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; offset[n]];
        for i in 0..n {
            for (c, v) in p.row(i) {
                if c <= i {
                    data[offset[i] + c - first[i]] = v;
                }
            }
        }
        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            let fi = first[i];
            let (done, rest) = data.split_at_mut(offset[i]);
            let row_i = &mut rest[..i - fi + 1];
            for j in fi..i {
                let fj = first[j];
                let row_j = &done[offset[j]..offset[j] + (j - fj + 1)];
                let k0 = fi.max(fj);
                let mut s = row_i[j - fi];
                let ri = &row_i[k0 - fi..j - fi];
                let rj = &row_j[k0 - fj..j - fj];
                s -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                row_i[j - fi] = s / row_j[j - fj];
            }
            let d = row_i[i - fi] - row_i[..i - fi].iter().map(|v| v * v).sum::<f64>();
            min_pivot = min_pivot.min(d);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "matrix is not positive definite (pivot {d:.3e} at permuted row {i})"
                )));
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(Self {
            n,
            perm,
            first,
            offset,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn l(&self, i: usize, j: usize) -> f64 {
        self.data[self.offset[i] + j - self.first[i]]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l(i, i).ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        // forward: L y = b
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let s: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        // backward: L' x = y
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, &lik) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= lik * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Solve `L' x = w` in the permuted frame and map back: for standard
    /// normal `w` the result is a draw from `N(0, A^{-1})`.
    pub fn sample(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.n);
        let n = self.n;
        let mut y = w.to_vec();
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, &lik) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= lik * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// `b' A^{-1} b`.
    pub fn quad_inv(&self, b: &[f64]) -> f64 {
        let x = self.solve(b);
        b.iter().zip(&x).map(|(a, b)| a * b).sum()
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_spd_sparse(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = crate::rng::rng_from(seed);
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + rng.random::<f64>()));
            for _ in 0..2 {
                let j = rng.random_range(0..n);
                if j != i {
                    let v = rng.random::<f64>() - 0.5;
                    t.push((i, j, v));
                    t.push((j, i, v));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn ridge_two_by_two_hand_solution() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let y = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let b = ridge_solve(&h, &y, 1.0).unwrap();
        assert!((b[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((b[(1, 0)] - 0.8).abs() < 1e-14);
    }

    #[test]
    fn ridge_rank_deficient_without_penalty_errors() {
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let err = ridge_solve(&h, &y, 0.0).unwrap_err();
        assert!(err.to_string().contains("lambda > 0"));
        assert!(ridge_solve(&h, &y, 0.1).is_ok());
    }

    #[test]
    fn sparse_cholesky_matches_dense() {
        let a = random_spd_sparse(60, 3);
        let chol = SparseCholesky::factor(&a).unwrap();
        let dense = a.to_dense();
        let b: Vec<f64> = (0..60).map(|i| (i as f64).sin()).collect();
        let x = chol.solve(&b);
        let xd = dense.clone().cholesky().unwrap().solve(&DVector::from_vec(b.clone()));
        for i in 0..60 {
            assert!((x[i] - xd[i]).abs() < 1e-12);
        }
        let ld = dense.cholesky().unwrap().l().diagonal().map(|v| v.ln()).sum() * 2.0;
        assert!((chol.log_det() - ld).abs() < 1e-10);
    }

    #[test]
    fn sparse_cholesky_reports_indefinite() {
        let a = CsrMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert!(matches!(SparseCholesky::factor(&a), Err(Error::Numerical(_))));
    }

    #[test]
    fn rcm_is_a_permutation_and_reduces_profile() {
        // path graph numbered badly
        let n = 50;
        let label: Vec<usize> = (0..n).map(|i| (i * 17) % n).collect();
        let mut t = Vec::new();
        for i in 0..n {
            t.push((label[i], label[i], 2.5));
            if i + 1 < n {
                t.push((label[i], label[i + 1], -1.0));
                t.push((label[i + 1], label[i], -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, t);
        let mut p = reverse_cuthill_mckee(&a);
        let f = SparseCholesky::factor_with_perm(&a, p.clone()).unwrap();
        assert!(f.envelope_size() <= 2 * n);
        p.sort_unstable();
        assert_eq!(p, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn sparse_products_match_dense() {
        let a = random_spd_sparse(20, 9);
        let b = random_spd_sparse(20, 10);
        let d = a.matmul(&b).to_dense() - a.to_dense() * b.to_dense();
        assert!(d.amax() < 1e-12);
        let s = a.add(&b.transpose()).to_dense() - (a.to_dense() + b.to_dense().transpose());
        assert!(s.amax() < 1e-12);
    }

    #[test]
    fn sample_whitens() {
        let a = random_spd_sparse(40, 3);
        let f = SparseCholesky::factor(&a).unwrap();
        let mut rng = crate::rng::rng_from(1);
        let w: Vec<f64> = (0..40).map(|_| rng.random::<f64>() - 0.5).collect();
        let x = f.sample(&w);
        let ax = a.mul_vec(&x);
        let q: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
        let ww: f64 = w.iter().map(|v| v * v).sum();
        assert!((q - ww).abs() < 1e-10 * ww);
    }
}
