//! Linear algebra building blocks: sparse symmetric storage, banded Cholesky,
//! weighted Gram-Schmidt, dense symmetric eigen wrappers and a deflated,
//! restarted Lanczos solver.

use faer::{Mat, Side};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Symmetric matrix in compressed-row storage (both triangles stored).
#[derive(Clone, Debug)]
pub struct SymSparse {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SymSparse {
    /// Builds from per-row (col, value) lists; duplicate columns are summed.
    pub fn from_rows(mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable_by_key(|e| e.0);
            let mut last = usize::MAX;
            for &(c, v) in row.iter() {
                if c == last {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = c;
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Self::from_rows(d.iter().enumerate().map(|(i, &v)| vec![(i, v)]).collect())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        dot(x, &y)
    }

    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                bw = bw.max(i.abs_diff(self.cols[k]));
            }
        }
        bw
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.cols[k])] = self.vals[k];
            }
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }
}

/// Lower-triangular banded Cholesky factor `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    // row i holds L[i][i-bw ..= i]
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &SymSparse) -> Result<Self> {
        let n = a.n;
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut data = vec![0.0; n * w];
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.cols[k];
                if j <= i {
                    data[i * w + (j + bw - i)] = a.vals[k];
                }
            }
        }
        for i in 0..n {
            let jlo = i.saturating_sub(bw);
            for j in jlo..=i {
                let klo = jlo.max(j.saturating_sub(bw));
                let mut s = data[i * w + (j + bw - i)];
                for k in klo..j {
                    s -= data[i * w + (k + bw - i)] * data[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::SolveFailure(format!(
                            "banded Cholesky: non-positive pivot {s:e} at row {i}"
                        )));
                    }
                    data[i * w + bw] = s.sqrt();
                } else {
                    data[i * w + (j + bw - i)] = s / data[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let jlo = i.saturating_sub(self.bw);
            let mut s = b[i];
            for j in jlo..i {
                s -= self.data[i * w + (j + self.bw - i)] * b[j];
            }
            b[i] = s / self.data[i * w + self.bw];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn solve_upper(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in (0..self.n).rev() {
            b[i] /= self.data[i * w + self.bw];
            let bi = b[i];
            let jlo = i.saturating_sub(self.bw);
            for j in jlo..i {
                b[j] -= self.data[i * w + (j + self.bw - i)] * bi;
            }
        }
    }

    /// Computes `L x` in place.
    pub fn mul_lower(&self, x: &mut [f64]) {
        let w = self.bw + 1;
        for i in (0..self.n).rev() {
            let jlo = i.saturating_sub(self.bw);
            let mut s = 0.0;
            for j in jlo..=i {
                s += self.data[i * w + (j + self.bw - i)] * x[j];
            }
            x[i] = s;
        }
    }

    /// Computes `Lᵀ x` in place.
    pub fn mul_upper(&self, x: &mut [f64]) {
        let w = self.bw + 1;
        for j in 0..self.n {
            let mut s = 0.0;
            let ihi = (j + self.bw).min(self.n - 1);
            for i in j..=ihi {
                s += self.data[i * w + (j + self.bw - i)] * x[i];
            }
            x[j] = s;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn wdot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), w)| x * y * w).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass in the inner
/// product `⟨a, b⟩ = Σ w a b`. Returns the orthonormal vectors; fails when a
/// vector loses more than `1 - tol` of its norm.
pub fn gram_schmidt(vectors: &[Vec<f64>], weights: &[f64], tol: f64) -> std::result::Result<Vec<Vec<f64>>, usize> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut v = v.clone();
        let n0 = wdot(&v, &v, weights).sqrt();
        for _pass in 0..2 {
            for q in &out {
                let c = wdot(q, &v, weights);
                axpy(-c, q, &mut v);
            }
        }
        let n1 = wdot(&v, &v, weights).sqrt();
        if !(n0 > 0.0) || n1 <= tol * n0 {
            return Err(out.len());
        }
        v.iter_mut().for_each(|x| *x /= n1);
        out.push(v);
    }
    Ok(out)
}

/// `y = A x` for a dense symmetric matrix (columns used as rows).
pub fn sym_matvec(a: &Mat<f64>, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().enumerate().for_each(|(i, yi)| {
        *yi = dot(a.col_as_slice(i), x);
    });
}

pub fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn max_abs(a: &Mat<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..a.ncols() {
        for &v in a.col_as_slice(j) {
            m = m.max(v.abs());
        }
    }
    m
}

/// Eigenvalues of a dense symmetric matrix in nondecreasing order.
pub fn sym_eigenvalues(a: &Mat<f64>) -> Result<Vec<f64>> {
    let mut ev = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::SolverNoConvergence {
            what: format!("dense symmetric eigensolver ({e:?})"),
            iterations: 0,
            residual: f64::NAN,
        })?;
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(ev)
}

/// Eigenvalues (nondecreasing) and eigenvectors (columns) of a dense symmetric matrix.
pub fn sym_eigen(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|e| Error::SolverNoConvergence {
        what: format!("dense symmetric eigensolver ({e:?})"),
        iterations: 0,
        residual: f64::NAN,
    })?;
    let s = evd.S();
    let vals: Vec<f64> = (0..a.nrows()).map(|i| s[i]).collect();
    Ok((vals, evd.U().to_owned()))
}

/// Symmetric linear operator on `ℝⁿ`.
pub trait SymOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl SymOperator for Mat<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        sym_matvec(self, x, y)
    }
}

impl SymOperator for SymSparse {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
}

/// Symmetric operator given by a closure `y = A x`.
pub struct FnOperator<F> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> SymOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Smallest,
    Largest,
}

#[derive(Clone, Copy, Debug)]
pub struct LanczosOptions {
    pub basis_size: usize,
    pub max_restarts: usize,
    /// Convergence when `‖A y − θ y‖ ≤ tol · max|Ritz value|`.
    pub tol: f64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { basis_size: 120, max_restarts: 60, tol: 1e-11 }
    }
}

#[derive(Clone, Debug)]
pub struct EigPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, v);
            axpy(-c, q, v);
        }
    }
}

/// Extremal eigenpair of `op` restricted to the Euclidean orthogonal
/// complement of `deflate` (orthonormal columns), by Lanczos with full
/// reorthogonalization and explicit restarts from the current Ritz vector.
pub fn lanczos<O: SymOperator + ?Sized>(
    op: &O,
    deflate: &[Vec<f64>],
    start: &[f64],
    which: Which,
    opts: LanczosOptions,
) -> Result<EigPair> {
    let n = op.dim();
    let mut v0 = start.to_vec();
    orthogonalize(&mut v0, deflate);
    let mut nv = norm(&v0);
    if !(nv > 0.0) {
        v0 = (0..n).map(|i| ((i * 7919 % 104729) as f64 / 104729.0) - 0.5).collect();
        orthogonalize(&mut v0, deflate);
        nv = norm(&v0);
    }
    v0.iter_mut().for_each(|x| *x /= nv);
    let free = n.saturating_sub(deflate.len());
    let m_max = opts.basis_size.min(free).max(1);
    let mut total = 0usize;
    let mut w = vec![0.0; n];
    let mut last = EigPair { value: f64::NAN, vector: v0.clone(), residual: f64::INFINITY, iterations: 0 };
    for _restart in 0..=opts.max_restarts {
        let mut basis: Vec<Vec<f64>> = vec![v0.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut invariant = false;
        for k in 0..m_max {
            op.apply(&basis[k], &mut w);
            total += 1;
            let a = dot(&w, &basis[k]);
            alpha.push(a);
            orthogonalize(&mut w, deflate);
            orthogonalize(&mut w, &basis);
            let b = norm(&w);
            if k + 1 == m_max {
                beta.push(b);
                break;
            }
            let scale = alpha.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
            if b <= 1e-14 * scale {
                beta.push(0.0);
                invariant = true;
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        let m = alpha.len();
        let mut t = Mat::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let (vals, vecs) = sym_eigen(&t)?;
        let idx = match which {
            Which::Smallest => 0,
            Which::Largest => m - 1,
        };
        let theta = vals[idx];
        let mut y = vec![0.0; n];
        for (j, q) in basis.iter().enumerate().take(m) {
            axpy(vecs[(j, idx)], q, &mut y);
        }
        orthogonalize(&mut y, deflate);
        let ny = norm(&y);
        y.iter_mut().for_each(|x| *x /= ny);
        op.apply(&y, &mut w);
        total += 1;
        let theta = {
            let rq = dot(&y, &w);
            if rq.is_finite() { rq } else { theta }
        };
        let mut r = w.clone();
        orthogonalize(&mut r, deflate);
        axpy(-theta, &y, &mut r);
        let res = norm(&r);
        let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(theta.abs());
        last = EigPair { value: theta, vector: y.clone(), residual: res, iterations: total };
        if res <= opts.tol * scale || invariant || m >= free {
            return Ok(last);
        }
        v0 = y;
    }
    Err(Error::SolverNoConvergence {
        what: "Lanczos extremal eigenvalue".into(),
        iterations: total,
        residual: last.residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> SymSparse {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.0)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                }
                r
            })
            .collect();
        SymSparse::from_rows(rows)
    }

    #[test]
    fn band_cholesky_solves() {
        let a = laplacian_1d(30);
        let ch = BandCholesky::factor(&a).unwrap();
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 30];
        a.matvec(&x, &mut b);
        ch.solve_lower(&mut b);
        ch.solve_upper(&mut b);
        for i in 0..30 {
            assert!((b[i] - x[i]).abs() < 1e-10);
        }
        let mut y = x.clone();
        ch.mul_upper(&mut y);
        ch.solve_upper(&mut y);
        for i in 0..30 {
            assert!((y[i] - x[i]).abs() < 1e-12);
        }
        let mut z = x.clone();
        ch.mul_upper(&mut z);
        ch.mul_lower(&mut z);
        a.matvec(&x, &mut b);
        for i in 0..30 {
            assert!((z[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn band_cholesky_rejects_indefinite() {
        let a = SymSparse::from_rows(vec![vec![(0, 1.0), (1, 2.0)], vec![(0, 2.0), (1, 1.0)]]);
        assert!(BandCholesky::factor(&a).is_err());
    }

    #[test]
    fn gram_schmidt_orthonormal_and_rank() {
        let w = vec![1.0, 2.0, 0.5, 1.5];
        let v = vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]];
        let q = gram_schmidt(&v, &w, 1e-12).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let d = wdot(&q[a], &q[b], &w);
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-13);
            }
        }
        let dep = vec![v[0].clone(), v[0].iter().map(|x| 2.0 * x).collect()];
        assert_eq!(gram_schmidt(&dep, &w, 1e-12).unwrap_err(), 1);
    }

    #[test]
    fn lanczos_matches_closed_form_laplacian() {
        let n = 200;
        let a = laplacian_1d(n);
        let start: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64).cos()).collect();
        let opts = LanczosOptions { basis_size: 200, max_restarts: 5, tol: 1e-12 };
        let lo = lanczos(&a, &[], &start, Which::Smallest, opts).unwrap();
        let hi = lanczos(&a, &[], &start, Which::Largest, opts).unwrap();
        let ev = |k: usize| 2.0 - 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos();
        assert!((lo.value - ev(1)).abs() < 1e-10);
        assert!((hi.value - ev(n)).abs() < 1e-10);
    }

    #[test]
    fn lanczos_deflation_skips_known_vectors() {
        let n = 50;
        let d: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let a = SymSparse::diagonal(&d);
        let mut e0 = vec![0.0; n];
        e0[0] = 1.0;
        let mut e1 = vec![0.0; n];
        e1[1] = 1.0;
        let start = vec![1.0; n];
        let r = lanczos(&a, &[e0, e1], &start, Which::Smallest, LanczosOptions::default()).unwrap();
        assert!((r.value - 2.0).abs() < 1e-10);
    }

    #[test]
    fn dense_eigen_agrees_with_sparse() {
        let a = laplacian_1d(12);
        let ev = sym_eigenvalues(&a.to_dense()).unwrap();
        let ev0 = 2.0 - 2.0 * (std::f64::consts::PI / 13.0).cos();
        assert!((ev[0] - ev0).abs() < 1e-12);
        let (vals, vecs) = sym_eigen(&a.to_dense()).unwrap();
        let v: Vec<f64> = (0..12).map(|i| vecs[(i, 3)]).collect();
        let mut y = vec![0.0; 12];
        a.matvec(&v, &mut y);
        for i in 0..12 {
            assert!((y[i] - vals[3] * v[i]).abs() < 1e-12);
        }
    }
}
