//! Eigenanalysis of the assembled forms: gaps, null-space counts, the
//! cross-species form identity, the composite-constant chain, coercivity
//! constants of `Λ` and the compactness experiment for `K`.
//!
//! Generalized problems `(A, G)` are reduced through the Cholesky factor
//! `G = L Lᵀ`. Restriction to the L²-orthogonal complement of a subspace
//! `span(B)` becomes Euclidean deflation against `orth(L⁻¹ W B)`.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, MatMut, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{pair_kernel, Phi};
use crate::error::{Error, Result};
use crate::grid::{Discretization, GramMatrices};
use crate::linalg::{self, BandCholesky, FnOperator, LanczosOptions, SymSparse, Which};
use crate::linearized::{k_kernel_entry, KernelBasis, KernelKind, LinearizedAssembler, OperatorMatrix, ParallelCoefficients, Selector};
use crate::mixture::MixtureConfig;
use crate::sampling;

/// Largest dimension solved by dense eigendecomposition under [`Route::Auto`].
pub const DENSE_LIMIT: usize = 3000;
/// Relative eigenvalue threshold for null-space counting.
pub const NULLSPACE_THRESHOLD: f64 = 1e-9;
/// Seed used when the caller does not supply one.
pub const DEFAULT_SEED: u64 = 20240917;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    L2,
    H,
}

/// A Gram metric together with its Cholesky factor.
pub struct Metric {
    kind: MetricKind,
    weights: Vec<f64>,
    sqrt_w: Vec<f64>,
    block: usize,
    h_blocks: Vec<SymSparse>,
    h_chol: Vec<BandCholesky>,
}

impl Metric {
    pub fn l2(grams: &GramMatrices) -> Self {
        Self {
            kind: MetricKind::L2,
            sqrt_w: grams.l2.iter().map(|w| w.sqrt()).collect(),
            weights: grams.l2.clone(),
            block: grams.block_len(),
            h_blocks: Vec::new(),
            h_chol: Vec::new(),
        }
    }

    pub fn h(grams: &GramMatrices) -> Result<Self> {
        Ok(Self {
            kind: MetricKind::H,
            sqrt_w: grams.l2.iter().map(|w| w.sqrt()).collect(),
            weights: grams.l2.clone(),
            block: grams.block_len(),
            h_blocks: grams.h_blocks.clone(),
            h_chol: grams.h_cholesky()?,
        })
    }

    pub fn of_kind(kind: MetricKind, grams: &GramMatrices) -> Result<Self> {
        match kind {
            MetricKind::L2 => Ok(Self::l2(grams)),
            MetricKind::H => Self::h(grams),
        }
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn l2_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self.kind {
            MetricKind::L2 => y.iter_mut().zip(x).zip(&self.weights).for_each(|((y, x), w)| *y = w * x),
            MetricKind::H => {
                let g = self.block;
                for (i, b) in self.h_blocks.iter().enumerate() {
                    b.matvec(&x[i * g..(i + 1) * g], &mut y[i * g..(i + 1) * g]);
                }
            }
        }
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        linalg::dot(x, &y)
    }

    fn blockwise(&self, x: &mut [f64], f: impl Fn(&BandCholesky, &mut [f64])) {
        let g = self.block;
        for (i, c) in self.h_chol.iter().enumerate() {
            f(c, &mut x[i * g..(i + 1) * g]);
        }
    }

    /// `x ← L⁻¹ x`.
    pub fn solve_lower(&self, x: &mut [f64]) {
        match self.kind {
            MetricKind::L2 => x.iter_mut().zip(&self.sqrt_w).for_each(|(x, s)| *x /= s),
            MetricKind::H => self.blockwise(x, |c, v| c.solve_lower(v)),
        }
    }

    /// `x ← L⁻ᵀ x`.
    pub fn solve_upper(&self, x: &mut [f64]) {
        match self.kind {
            MetricKind::L2 => x.iter_mut().zip(&self.sqrt_w).for_each(|(x, s)| *x /= s),
            MetricKind::H => self.blockwise(x, |c, v| c.solve_upper(v)),
        }
    }

    /// `x ← L x`.
    pub fn mul_lower(&self, x: &mut [f64]) {
        match self.kind {
            MetricKind::L2 => x.iter_mut().zip(&self.sqrt_w).for_each(|(x, s)| *x *= s),
            MetricKind::H => self.blockwise(x, |c, v| c.mul_lower(v)),
        }
    }

    /// `x ← Lᵀ x`.
    pub fn mul_upper(&self, x: &mut [f64]) {
        match self.kind {
            MetricKind::L2 => x.iter_mut().zip(&self.sqrt_w).for_each(|(x, s)| *x *= s),
            MetricKind::H => self.blockwise(x, |c, v| c.mul_upper(v)),
        }
    }

    pub fn trace(&self) -> f64 {
        match self.kind {
            MetricKind::L2 => self.weights.iter().sum(),
            MetricKind::H => self.h_blocks.iter().map(|b| (0..b.n).map(|i| b.get(i, i)).sum::<f64>()).sum(),
        }
    }

    /// `L⁻¹ A L⁻ᵀ`.
    pub fn reduce_dense(&self, a: &Mat<f64>) -> Mat<f64> {
        let n = a.nrows();
        let half: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut c = a.col_as_slice(j).to_vec();
                self.solve_lower(&mut c);
                c
            })
            .collect();
        let full: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut c: Vec<f64> = half.iter().map(|col| col[j]).collect();
                self.solve_lower(&mut c);
                c
            })
            .collect();
        let mut out = Mat::zeros(n, n);
        for (j, c) in full.iter().enumerate() {
            out.col_as_slice_mut(j).copy_from_slice(c);
        }
        linalg::symmetrize(&mut out);
        out
    }

    /// Euclidean-orthonormal `orth(L⁻¹ W B)` for the span `B`.
    pub fn deflation(&self, span: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let vs: Vec<Vec<f64>> = span
            .iter()
            .map(|v| {
                let mut x: Vec<f64> = v.iter().zip(&self.weights).map(|(v, w)| v * w).collect();
                self.solve_lower(&mut x);
                x
            })
            .collect();
        let ones = vec![1.0; self.dim()];
        linalg::gram_schmidt(&vs, &ones, 1e-10).map_err(|rank| Error::RankDeficient {
            kind: "deflation".into(),
            rank,
            expected: span.len(),
        })
    }

    fn add_to_dense(&self, a: &mut Mat<f64>, s: f64) {
        match self.kind {
            MetricKind::L2 => {
                for (i, w) in self.weights.iter().enumerate() {
                    a[(i, i)] += s * w;
                }
            }
            MetricKind::H => {
                let g = self.block;
                for (blk, b) in self.h_blocks.iter().enumerate() {
                    for r in 0..b.n {
                        for k in b.row_ptr[r]..b.row_ptr[r + 1] {
                            a[(blk * g + r, blk * g + b.cols[k])] += s * b.vals[k];
                        }
                    }
                }
            }
        }
    }

    fn add_to_sparse(&self, a: &SymSparse, s: f64) -> SymSparse {
        let mut rows: Vec<Vec<(usize, f64)>> =
            (0..a.n).map(|r| (a.row_ptr[r]..a.row_ptr[r + 1]).map(|k| (a.cols[k], a.vals[k])).collect()).collect();
        match self.kind {
            MetricKind::L2 => {
                for (i, w) in self.weights.iter().enumerate() {
                    rows[i].push((i, s * w));
                }
            }
            MetricKind::H => {
                let g = self.block;
                for (blk, b) in self.h_blocks.iter().enumerate() {
                    for r in 0..b.n {
                        for k in b.row_ptr[r]..b.row_ptr[r + 1] {
                            rows[blk * g + r].push((blk * g + b.cols[k], s * b.vals[k]));
                        }
                    }
                }
            }
        }
        SymSparse::from_rows(rows)
    }
}

/// Factorization of `A + s G`.
pub enum ShiftedFactor {
    Dense(Llt<f64>),
    Band(BandCholesky),
}

impl ShiftedFactor {
    pub fn solve(&self, x: &mut [f64]) {
        match self {
            ShiftedFactor::Dense(llt) => {
                let n = x.len();
                llt.solve_in_place(MatMut::from_column_major_slice_mut(x, n, 1));
            }
            ShiftedFactor::Band(c) => {
                c.solve_lower(x);
                c.solve_upper(x);
            }
        }
    }
}

/// A symmetric positive semidefinite form over stacked nodal unknowns.
pub trait QuadForm: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn dense(&self) -> Mat<f64>;
    fn trace(&self) -> f64;
    fn shifted_factor(&self, s: f64, metric: &Metric) -> Result<ShiftedFactor>;
}

impl QuadForm for OperatorMatrix {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        linalg::sym_matvec(&self.matrix, x, y)
    }
    fn dense(&self) -> Mat<f64> {
        self.matrix.clone()
    }
    fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)]).sum()
    }
    fn shifted_factor(&self, s: f64, metric: &Metric) -> Result<ShiftedFactor> {
        let mut m = self.matrix.clone();
        metric.add_to_dense(&mut m, s);
        let llt = m.llt(Side::Lower).map_err(|e| Error::SolveFailure(format!("shifted Cholesky: {e:?}")))?;
        Ok(ShiftedFactor::Dense(llt))
    }
}

impl QuadForm for SymSparse {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
    fn dense(&self) -> Mat<f64> {
        self.to_dense()
    }
    fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
    fn shifted_factor(&self, s: f64, metric: &Metric) -> Result<ShiftedFactor> {
        Ok(ShiftedFactor::Band(BandCholesky::factor(&metric.add_to_sparse(self, s))?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Auto,
    Dense,
    Iterative,
}

impl Route {
    pub fn resolve(self, dim: usize) -> Route {
        match self {
            Route::Auto if dim <= DENSE_LIMIT => Route::Dense,
            Route::Auto => Route::Iterative,
            r => r,
        }
    }
}

/// An extremal restricted generalized eigenvalue.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Extremal {
    pub value: f64,
    /// `‖L⁻¹AL⁻ᵀ y − λ y‖` for the unit eigenvector `y`.
    pub residual: f64,
    pub iterations: usize,
    pub route: Route,
    /// Eigenvector mapped back to nodal unknowns, `L⁻ᵀ y`.
    #[serde(skip)]
    pub vector: Vec<f64>,
}

fn nodal_vector(metric: &Metric, y: &[f64]) -> Vec<f64> {
    let mut x = y.to_vec();
    metric.solve_upper(&mut x);
    x
}

fn start_vector(n: usize) -> Vec<f64> {
    sampling::gaussian_vector(n, &mut sampling::rng(DEFAULT_SEED))
}

fn lanczos_opts() -> LanczosOptions {
    LanczosOptions { basis_size: 150, max_restarts: 80, tol: 1e-11 }
}

/// Restricted spectrum of `L⁻¹AL⁻ᵀ` on `U⊥`, ascending, with eigenvectors.
fn dense_restricted(form: &dyn QuadForm, metric: &Metric, deflate: &[Vec<f64>]) -> Result<(Vec<f64>, Mat<f64>, Mat<f64>)> {
    let at = metric.reduce_dense(&form.dense());
    let n = at.nrows();
    let k = deflate.len();
    let v: Vec<Vec<f64>> = deflate
        .iter()
        .map(|u| {
            let mut y = vec![0.0; n];
            linalg::sym_matvec(&at, u, &mut y);
            y
        })
        .collect();
    let s: Vec<Vec<f64>> = deflate.iter().map(|u| v.iter().map(|vj| linalg::dot(u, vj)).collect()).collect();
    let mut fro = 0.0;
    for j in 0..n {
        fro += at.col_as_slice(j).iter().map(|x| x * x).sum::<f64>();
    }
    let c = 2.0 * fro.sqrt() + 1.0;
    let mut m = at.clone();
    for col in 0..n {
        let mc = m.col_as_slice_mut(col);
        for a in 0..k {
            let (ua, va) = (&deflate[a], &v[a]);
            let (uc, vc) = (ua[col], va[col]);
            let mut coef_u = -vc + c * uc;
            for b in 0..k {
                coef_u += s[a][b] * deflate[b][col];
            }
            for r in 0..n {
                mc[r] += coef_u * ua[r] - va[r] * uc;
            }
        }
    }
    linalg::symmetrize(&mut m);
    let (vals, vecs) = linalg::sym_eigen(&m)?;
    if k > 0 && vals[n - k] < 0.5 * c {
        return Err(Error::KernelMismatch { value: vals[n - k] });
    }
    Ok((vals[..n - k].to_vec(), vecs, at))
}

fn project_out(v: &mut [f64], deflate: &[Vec<f64>]) {
    for u in deflate {
        let c = linalg::dot(u, v);
        linalg::axpy(-c, u, v);
    }
}

fn dense_residual(at: &Mat<f64>, vecs: &Mat<f64>, idx: usize, value: f64, deflate: &[Vec<f64>]) -> f64 {
    let y = vecs.col_as_slice(idx);
    let mut r = vec![0.0; y.len()];
    linalg::sym_matvec(at, y, &mut r);
    project_out(&mut r, deflate);
    linalg::axpy(-value, y, &mut r);
    linalg::norm(&r)
}

fn reduced_residual(form: &dyn QuadForm, metric: &Metric, y: &[f64], value: f64, deflate: &[Vec<f64>]) -> f64 {
    let mut x = y.to_vec();
    metric.solve_upper(&mut x);
    let mut ax = vec![0.0; x.len()];
    form.apply(&x, &mut ax);
    metric.solve_lower(&mut ax);
    project_out(&mut ax, deflate);
    linalg::axpy(-value, y, &mut ax);
    linalg::norm(&ax)
}

/// Smallest generalized eigenvalue of `(A, G)` on the L²-complement of `span`.
pub fn restricted_smallest(form: &dyn QuadForm, metric: &Metric, span: &[Vec<f64>], route: Route) -> Result<Extremal> {
    let deflate = metric.deflation(span)?;
    let route = route.resolve(form.dim());
    match route {
        Route::Dense => {
            let (vals, vecs, at) = dense_restricted(form, metric, &deflate)?;
            let residual = dense_residual(&at, &vecs, 0, vals[0], &deflate);
            let vector = nodal_vector(metric, vecs.col_as_slice(0));
            Ok(Extremal { value: vals[0], residual, iterations: 0, route, vector })
        }
        _ => {
            let shift = 1e-3 * form.trace() / metric.trace();
            let factor = form.shifted_factor(shift, metric)?;
            let inv = |y: &mut [f64]| {
                metric.mul_lower(y);
                factor.solve(y);
                metric.mul_upper(y);
            };
            // constrained inverse of P(Ã + sI)P on U⊥ via the k×k Schur complement
            let fu: Vec<Vec<f64>> = deflate
                .iter()
                .map(|u| {
                    let mut y = u.clone();
                    inv(&mut y);
                    y
                })
                .collect();
            let k = deflate.len();
            let mut schur = Mat::<f64>::from_fn(k, k, |a, b| linalg::dot(&deflate[a], &fu[b]));
            linalg::symmetrize(&mut schur);
            let schur = schur.llt(Side::Lower).map_err(|e| Error::SolveFailure(format!("Schur complement: {e:?}")))?;
            let op = FnOperator {
                n: form.dim(),
                f: |x: &[f64], y: &mut [f64]| {
                    y.copy_from_slice(x);
                    inv(y);
                    if k > 0 {
                        let mut c = Mat::<f64>::from_fn(k, 1, |a, _| linalg::dot(&deflate[a], y));
                        schur.solve_in_place(c.as_mut());
                        for (b, v) in fu.iter().enumerate() {
                            linalg::axpy(-c[(b, 0)], v, y);
                        }
                    }
                },
            };
            let pair = linalg::lanczos(&op, &deflate, &start_vector(form.dim()), Which::Largest, lanczos_opts())?;
            let value = 1.0 / pair.value - shift;
            let residual = reduced_residual(form, metric, &pair.vector, value, &deflate);
            Ok(Extremal { value, residual, iterations: pair.iterations, route, vector: nodal_vector(metric, &pair.vector) })
        }
    }
}

/// Largest generalized eigenvalue of `(A, G)` on the L²-complement of `span`.
pub fn restricted_largest(form: &dyn QuadForm, metric: &Metric, span: &[Vec<f64>], route: Route) -> Result<Extremal> {
    let deflate = metric.deflation(span)?;
    let route = route.resolve(form.dim());
    match route {
        Route::Dense => {
            let (vals, vecs, at) = dense_restricted(form, metric, &deflate)?;
            let idx = vals.len() - 1;
            let residual = dense_residual(&at, &vecs, idx, vals[idx], &deflate);
            let vector = nodal_vector(metric, vecs.col_as_slice(idx));
            Ok(Extremal { value: vals[idx], residual, iterations: 0, route, vector })
        }
        _ => {
            let op = FnOperator {
                n: form.dim(),
                f: |x: &[f64], y: &mut [f64]| {
                    let mut t = x.to_vec();
                    metric.solve_upper(&mut t);
                    form.apply(&t, y);
                    metric.solve_lower(y);
                },
            };
            let pair = linalg::lanczos(&op, &deflate, &start_vector(form.dim()), Which::Largest, lanczos_opts())?;
            let residual = reduced_residual(form, metric, &pair.vector, pair.value, &deflate);
            Ok(Extremal { value: pair.value, residual, iterations: pair.iterations, route, vector: nodal_vector(metric, &pair.vector) })
        }
    }
}

/// Number of generalized eigenvalues of `(A, G)` below `threshold · λ_max`.
pub fn nullspace_dim(form: &dyn QuadForm, metric: &Metric, threshold: f64) -> Result<usize> {
    let vals = linalg::sym_eigenvalues(&metric.reduce_dense(&form.dense()))?;
    let top = vals.last().copied().unwrap_or(0.0);
    Ok(vals.iter().filter(|&&v| v < threshold * top).count())
}

/// Smallest restricted eigenvalue, failing with `KernelMismatch` when it is
/// negative beyond roundoff (the kernel does not span the null space).
pub fn spectral_gap(form: &dyn QuadForm, metric: &Metric, kernel: &KernelBasis, route: Route) -> Result<Extremal> {
    let e = restricted_smallest(form, metric, &kernel.vectors, route)?;
    let scale = form.trace() / metric.trace();
    if e.value < -1e-8 * scale {
        return Err(Error::KernelMismatch { value: e.value });
    }
    Ok(e)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapReport {
    pub gap_l2: f64,
    pub gap_h: f64,
    /// Counted from the dense spectrum; on the iterative route it is the
    /// kernel size, which is exact once the gap is positive and every kernel
    /// vector is verified null.
    pub nullspace_dim: usize,
    pub residual_l2: f64,
    pub residual_h: f64,
    pub route: Route,
}

pub fn gap_report(form: &dyn QuadForm, grams: &GramMatrices, kernel: &KernelBasis, route: Route) -> Result<GapReport> {
    let l2 = Metric::l2(grams);
    let h = Metric::h(grams)?;
    let route = route.resolve(form.dim());
    let gl = spectral_gap(form, &l2, kernel, route)?;
    let gh = spectral_gap(form, &h, kernel, route)?;
    let nullspace_dim = match route {
        Route::Dense => nullspace_dim(form, &l2, NULLSPACE_THRESHOLD)?,
        _ => {
            let scale = form.trace() / l2.trace();
            let mut y = vec![0.0; form.dim()];
            for v in &kernel.vectors {
                form.apply(v, &mut y);
                if linalg::dot(v, &y) > NULLSPACE_THRESHOLD * scale * linalg::wdot(v, v, l2.l2_weights()) {
                    return Err(Error::KernelMismatch { value: linalg::dot(v, &y) });
                }
            }
            kernel.len()
        }
    };
    Ok(GapReport { gap_l2: gl.value, gap_h: gh.value, nullspace_dim, residual_l2: gl.residual, residual_h: gh.residual, route })
}

/// Moment matrices of the cross-species form and the constant `C₂`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossFormReport {
    pub a_matrices: Vec<Vec<[[f64; 3]; 3]>>,
    pub b_scalars: Vec<Vec<f64>>,
    pub identity_residual: f64,
    /// Best constant in `−(f∥, L^b f∥) ≥ C₂ Σ_{ij}(|u_i−u_j|² + (e_i−e_j)²)`; `None` for one species.
    pub c2: Option<f64>,
    pub a_min_eigenvalue: f64,
    pub b_min: f64,
    /// `max_{ij} ‖𝒜 − (tr 𝒜/3) I‖_max / (tr 𝒜/3)`.
    pub isotropy_defect: f64,
}

/// `½ Σ_{i≠j} [(u_i−u_j)·𝒜^{(ij)}(u_i−u_j) + (e_i−e_j)² ℬ^{(ij)}]`.
pub fn cross_form_closed(a: &[Vec<[[f64; 3]; 3]>], b: &[Vec<f64>], c: &ParallelCoefficients) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let du = [c.u[i][0] - c.u[j][0], c.u[i][1] - c.u[j][1], c.u[i][2] - c.u[j][2]];
            for k in 0..3 {
                for l in 0..3 {
                    s += 0.5 * du[k] * a[i][j][k][l] * du[l];
                }
            }
            s += 0.5 * (c.e[i] - c.e[j]).powi(2) * b[i][j];
        }
    }
    s
}

/// `Σ_{ij}(|u_i−u_j|² + (e_i−e_j)²)`.
pub fn ue_spread(c: &ParallelCoefficients) -> f64 {
    let n = c.e.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += (0..3).map(|k| (c.u[i][k] - c.u[j][k]).powi(2)).sum::<f64>() + (c.e[i] - c.e[j]).powi(2);
        }
    }
    s
}

fn moment_tensors(cfg: &MixtureConfig, disc: &Discretization, asm: &LinearizedAssembler) -> (Vec<Vec<[[f64; 3]; 3]>>, Vec<Vec<f64>>) {
    let n = disc.n_species();
    let g = disc.block_len();
    let phi = Phi::new(cfg.gamma);
    let mut a = vec![vec![[[0.0; 3]; 3]; n]; n];
    let mut b = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (mi, mj) = (cfg.mass(i), cfg.mass(j));
            let c = cfg.c(i, j);
            let tol2 = (1e-13 * (disc.grids[i].radius / mi + disc.grids[j].radius / mj)).powi(2);
            let (wa, wb) = (disc.grids[i].weights[0], disc.grids[j].weights[0]);
            let (acc, bacc) = (0..g)
                .into_par_iter()
                .map(|ia| {
                    let p = disc.grids[i].nodes[ia];
                    let va = [p[0] / mi, p[1] / mi, p[2] / mi];
                    let mut acc = [0.0; 6];
                    let mut bacc = 0.0;
                    for ib in 0..g {
                        let q = disc.grids[j].nodes[ib];
                        let vb = [q[0] / mj, q[1] / mj, q[2] / mj];
                        let z = [va[0] - vb[0], va[1] - vb[1], va[2] - vb[2]];
                        if let Some(k) = pair_kernel(z, c, phi, tol2) {
                            let w = wa * wb * asm.maxwellian[i * g + ia] * asm.maxwellian[j * g + ib];
                            for l in 0..6 {
                                acc[l] += w * k[l];
                            }
                            let s = [va[0] + vb[0], va[1] + vb[1], va[2] + vb[2]];
                            let ks = crate::collision::sym_mul(&k, &s);
                            bacc += 0.25 * w * (s[0] * ks[0] + s[1] * ks[1] + s[2] * ks[2]);
                        }
                    }
                    (acc, bacc)
                })
                .reduce(
                    || ([0.0; 6], 0.0),
                    |(mut x, bx), (y, by)| {
                        for l in 0..6 {
                            x[l] += y[l];
                        }
                        (x, bx + by)
                    },
                );
            a[i][j] = [[acc[0], acc[3], acc[4]], [acc[3], acc[1], acc[5]], [acc[4], acc[5], acc[2]]];
            b[i][j] = bacc;
        }
    }
    (a, b)
}

fn random_coefficients(n: usize, rng: &mut sampling::SampleRng) -> ParallelCoefficients {
    let v = sampling::gaussian_vector(5 * n, rng);
    ParallelCoefficients {
        alpha: (0..n).map(|i| v[5 * i]).collect(),
        u: (0..n).map(|i| [v[5 * i + 1], v[5 * i + 2], v[5 * i + 3]]).collect(),
        e: (0..n).map(|i| v[5 * i + 4]).collect(),
    }
}

/// Orthonormal basis of `{x ∈ R^{4N} : Σ_i u_i = 0, Σ_i e_i = 0}` in the
/// layout `(u_1, e_1, …, u_N, e_N)`.
fn difference_subspace(n: usize) -> Vec<Vec<f64>> {
    let mut span = Vec::new();
    for i in 1..n {
        for c in 0..4 {
            let mut v = vec![0.0; 4 * n];
            v[4 * i + c] = 1.0;
            v[c] = -1.0;
            span.push(v);
        }
    }
    linalg::gram_schmidt(&span, &vec![1.0; 4 * n], 1e-12).expect("difference vectors are independent")
}

/// `min xᵀQx / xᵀDx` over `x ∈ span(Z)`, for `D` positive definite there.
fn reduced_generalized_min(q: &Mat<f64>, d: &Mat<f64>, z: &[Vec<f64>]) -> Result<f64> {
    let k = z.len();
    let proj = |m: &Mat<f64>| {
        let mut r = Mat::<f64>::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                let mut s = 0.0;
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        s += z[a][i] * m[(i, j)] * z[b][j];
                    }
                }
                r[(a, b)] = s;
            }
        }
        linalg::symmetrize(&mut r);
        r
    };
    let (qr, dr) = (proj(q), proj(d));
    let (dv, du) = linalg::sym_eigen(&dr)?;
    if dv[0] <= 0.0 {
        return Err(Error::SolveFailure("reduced metric not positive definite".into()));
    }
    // D^{-1/2} Q D^{-1/2}
    let mut is = Mat::<f64>::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            is[(a, b)] = (0..k).map(|l| du[(a, l)] * du[(b, l)] / dv[l].sqrt()).sum();
        }
    }
    let t = &is * &qr * &is;
    let mut t = t;
    linalg::symmetrize(&mut t);
    Ok(linalg::sym_eigenvalues(&t)?[0])
}

/// Exact `C₂` from the moment tensors.
fn c2_exact(a: &[Vec<[[f64; 3]; 3]>], b: &[Vec<f64>]) -> Result<Option<f64>> {
    let n = a.len();
    if n < 2 {
        return Ok(None);
    }
    let d4 = 4 * n;
    let mut q = Mat::<f64>::zeros(d4, d4);
    let mut d = Mat::<f64>::zeros(d4, d4);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            // (x_i − x_j)ᵀ T (x_i − x_j) with T = ½ diag(𝒜, ℬ) for Q and I for D
            let mut t = [[0.0; 4]; 4];
            for k in 0..3 {
                for l in 0..3 {
                    t[k][l] = 0.5 * a[i][j][k][l];
                }
            }
            t[3][3] = 0.5 * b[i][j];
            for k in 0..4 {
                for l in 0..4 {
                    let v = t[k][l];
                    q[(4 * i + k, 4 * i + l)] += v;
                    q[(4 * j + k, 4 * j + l)] += v;
                    q[(4 * i + k, 4 * j + l)] -= v;
                    q[(4 * j + k, 4 * i + l)] -= v;
                }
                d[(4 * i + k, 4 * i + k)] += 1.0;
                d[(4 * j + k, 4 * j + k)] += 1.0;
                d[(4 * i + k, 4 * j + k)] -= 1.0;
                d[(4 * j + k, 4 * i + k)] -= 1.0;
            }
        }
    }
    Ok(Some(reduced_generalized_min(&q, &d, &difference_subspace(n))?))
}

pub fn cross_form_report(cfg: &MixtureConfig, disc: &Discretization, samples: usize, seed: u64) -> Result<CrossFormReport> {
    let asm = LinearizedAssembler::new(cfg, disc);
    let (a, b) = moment_tensors(cfg, disc, &asm);
    let n = disc.n_species();
    let mut rng = sampling::rng(seed);
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for _ in 0..samples {
        let c = random_coefficients(n, &mut rng);
        let f = asm.parallel_field(&c);
        let form = linalg::dot(&f, &asm.apply_neg_l(Selector::Bi, &f));
        let closed = cross_form_closed(&a, &b, &c);
        worst = worst.max((form - closed).abs());
        scale = scale.max(form.abs()).max(closed.abs());
    }
    let identity_residual = if scale > 0.0 { worst / scale } else { worst };
    let mut a_min = f64::INFINITY;
    let mut b_min = f64::INFINITY;
    let mut iso: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let m = Mat::<f64>::from_fn(3, 3, |k, l| a[i][j][k][l]);
            a_min = a_min.min(linalg::sym_eigenvalues(&m)?[0]);
            b_min = b_min.min(b[i][j]);
            let t = (m[(0, 0)] + m[(1, 1)] + m[(2, 2)]) / 3.0;
            for k in 0..3 {
                for l in 0..3 {
                    let dev = m[(k, l)] - if k == l { t } else { 0.0 };
                    iso = iso.max(dev.abs() / t);
                }
            }
        }
    }
    let c2 = c2_exact(&a, &b)?;
    Ok(CrossFormReport { a_matrices: a, b_scalars: b, identity_residual, c2, a_min_eigenvalue: a_min, b_min, isotropy_defect: iso })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UeRatioReport {
    /// Minimum of `lhs / rhs_core` over samples with `rhs_core > 0`.
    pub min_ratio: f64,
    pub samples: usize,
    /// Samples with `rhs_core ≤ 0`, for which the estimate holds trivially.
    pub trivial: usize,
    pub seed: u64,
}

/// Both sides of the `(u, e)` spread estimate for one field.
pub fn ue_sides(f: &[f64], asm: &LinearizedAssembler, mono: &KernelBasis, full: &KernelBasis, metric_h: &Metric) -> Result<(f64, f64)> {
    let lhs = ue_spread(&asm.parallel_coefficients(f)?);
    let rhs = metric_h.quad(&full.complement(f)) - 2.0 * metric_h.quad(&mono.complement(f));
    Ok((lhs, rhs))
}

pub fn lemma_ue_ratio(samples: usize, cfg: &MixtureConfig, disc: &Discretization, seed: u64) -> Result<UeRatioReport> {
    let asm = LinearizedAssembler::new(cfg, disc);
    let mono = asm.kernel_basis(KernelKind::Mono)?;
    let full = asm.kernel_basis(KernelKind::Full)?;
    let grams = crate::grid::gram_matrices(disc, cfg);
    let h = Metric::h(&grams)?;
    let masses: Vec<f64> = (0..cfg.n_species()).map(|i| cfg.mass(i)).collect();
    let mut rng = sampling::rng(seed);
    let mut min_ratio = f64::INFINITY;
    let mut trivial = 0;
    for _ in 0..samples {
        let f = sampling::random_perturbation(disc, &asm.sqrt_m, &masses, cfg.kt, 0.05, &mut rng);
        let (lhs, rhs) = ue_sides(&f, &asm, &mono, &full, &h)?;
        if rhs > 0.0 {
            min_ratio = min_ratio.min(lhs / rhs);
        } else {
            trivial += 1;
        }
    }
    Ok(UeRatioReport { min_ratio, samples, trivial, seed })
}

/// Exact `C₃`: the infimum of `lhs / rhs_core` over all fields.
///
/// Writing `f = h + k + f⊥` with `k ∈ N(L)`, `h ∈ N(L^m) ⊖ N(L)`, the
/// supremum of `rhs_core` over `f⊥` is `‖h‖²_ℋ + ‖P h‖²_ℋ`, `P` the
/// ℋ-orthogonal projection onto `N(L^m)^⊥`. With `h = B c` this is
/// `cᵀ(2 BᵀHB − (BᵀWH⁻¹WB)⁻¹) c`, leaving a small generalized problem.
pub fn c3_exact(cfg: &MixtureConfig, disc: &Discretization) -> Result<f64> {
    let asm = LinearizedAssembler::new(cfg, disc);
    let mono = asm.kernel_basis(KernelKind::Mono)?;
    let full = asm.kernel_basis(KernelKind::Full)?;
    let grams = crate::grid::gram_matrices(disc, cfg);
    let h = Metric::h(&grams)?;
    let w = &grams.l2;
    let nb = mono.len();
    let dim = disc.dim();
    let hb: Vec<Vec<f64>> = mono
        .vectors
        .iter()
        .map(|v| {
            let mut y = vec![0.0; dim];
            h.apply(v, &mut y);
            y
        })
        .collect();
    let hinv_wb: Vec<Vec<f64>> = mono
        .vectors
        .iter()
        .map(|v| {
            let mut y: Vec<f64> = v.iter().zip(w).map(|(v, w)| v * w).collect();
            h.solve_lower(&mut y);
            h.solve_upper(&mut y);
            y
        })
        .collect();
    let bhb = Mat::<f64>::from_fn(nb, nb, |a, b| linalg::dot(&mono.vectors[a], &hb[b]));
    let mut g = Mat::<f64>::from_fn(nb, nb, |a, b| linalg::wdot(&mono.vectors[a], &hinv_wb[b], w));
    linalg::symmetrize(&mut g);
    let llt = g.llt(Side::Lower).map_err(|e| Error::SolveFailure(format!("{e:?}")))?;
    let mut ginv = Mat::<f64>::identity(nb, nb);
    llt.solve_in_place(ginv.as_mut());
    let mut den = Mat::<f64>::zeros(nb, nb);
    for a in 0..nb {
        for b in 0..nb {
            den[(a, b)] = 2.0 * bhb[(a, b)] - ginv[(a, b)];
        }
    }
    linalg::symmetrize(&mut den);
    // lhs as a quadratic form in the mono coefficients
    let n = cfg.n_species();
    let coeffs: Vec<ParallelCoefficients> = mono.vectors.iter().map(|v| asm.parallel_coefficients(v)).collect::<Result<_>>()?;
    let mut lhs = Mat::<f64>::zeros(nb, nb);
    for i in 0..n {
        for j in 0..n {
            for comp in 0..4 {
                let diff: Vec<f64> = coeffs
                    .iter()
                    .map(|c| if comp < 3 { c.u[i][comp] - c.u[j][comp] } else { c.e[i] - c.e[j] })
                    .collect();
                for a in 0..nb {
                    for b in 0..nb {
                        lhs[(a, b)] += diff[a] * diff[b];
                    }
                }
            }
        }
    }
    // complement of N(L) inside the mono coordinates
    let in_mono: Vec<Vec<f64>> = full.vectors.iter().map(|v| mono.project(v).coefficients).collect();
    let mut span = in_mono.clone();
    for k in 0..nb {
        let mut e = vec![0.0; nb];
        e[k] = 1.0;
        span.push(e);
    }
    let ones = vec![1.0; nb];
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in span {
        let mut v = v;
        for _ in 0..2 {
            for q in &basis {
                let c = linalg::dot(q, &v);
                linalg::axpy(-c, q, &mut v);
            }
        }
        let nv = linalg::wdot(&v, &v, &ones).sqrt();
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            basis.push(v);
        }
    }
    let z: Vec<Vec<f64>> = basis[full.len()..].to_vec();
    reduced_generalized_min(&lhs, &den, &z)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompositeReport {
    pub lambda_m: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub lambda_pred: f64,
    pub gap_h: f64,
    pub holds: bool,
}

/// `(C₂C₃/2) · min{1, λ_m/(C₁ + C₂C₃)}`.
pub fn composite_lambda(lambda_m: f64, c1: f64, c2: f64, c3: f64) -> f64 {
    0.5 * c2 * c3 * (lambda_m / (c1 + c2 * c3)).min(1.0)
}

/// Measures `λ_m`, `C₁`, `C₂`, `C₃` and `gap_h` and checks the composite bound.
pub fn composite_check(cfg: &MixtureConfig, disc: &Discretization, route: Route) -> Result<CompositeReport> {
    if cfg.n_species() < 2 {
        return Err(Error::InvalidConfig("composite check needs at least two species".into()));
    }
    let asm = LinearizedAssembler::new(cfg, disc);
    let grams = crate::grid::gram_matrices(disc, cfg);
    let h = Metric::h(&grams)?;
    let mono_k = asm.kernel_basis(KernelKind::Mono)?;
    let full_k = asm.kernel_basis(KernelKind::Full)?;
    let full = asm.assemble_neg_l(Selector::Full);
    let mono = asm.assemble_neg_l(Selector::Mono);
    let bi = asm.assemble_neg_l(Selector::Bi);
    let lambda_m = spectral_gap(&mono, &h, &mono_k, route)?.value;
    let c1 = restricted_largest(&bi, &h, &mono_k.vectors, route)?.value;
    let c2 = cross_form_report(cfg, disc, 4, DEFAULT_SEED)?.c2.expect("two species");
    let c3 = c3_exact(cfg, disc)?;
    let gap_h = spectral_gap(&full, &h, &full_k, route)?.value;
    let lambda_pred = composite_lambda(lambda_m, c1, c2, c3);
    Ok(CompositeReport { lambda_m, c1, c2, c3, lambda_pred, gap_h, holds: gap_h >= lambda_pred * (1.0 - 1e-3) })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoercivityReport {
    /// Unrestricted smallest eigenvalue of `(Λ, ℋ)`; zero up to roundoff
    /// because `Λ` annihilates each `√M_i`.
    pub c1_raw: f64,
    /// Smallest eigenvalue on the L²-complement of `span{√M_i}`.
    pub c1: f64,
    pub c2: f64,
    pub c3_grad: f64,
    pub c4_grad: f64,
    pub samples: usize,
    pub seed: u64,
}

fn lambda_null_span(asm: &LinearizedAssembler) -> Vec<Vec<f64>> {
    let g = asm.disc.block_len();
    (0..asm.disc.n_species())
        .map(|i| {
            let mut v = vec![0.0; asm.disc.dim()];
            v[i * g..(i + 1) * g].copy_from_slice(&asm.sqrt_m[i * g..(i + 1) * g]);
            v
        })
        .collect()
}

/// Gradient components of a stacked field, each as a stacked field.
fn stacked_gradient(disc: &Discretization, f: &[f64]) -> [Vec<f64>; 3] {
    let g = disc.block_len();
    let mut out = [vec![0.0; f.len()], vec![0.0; f.len()], vec![0.0; f.len()]];
    for i in 0..disc.n_species() {
        let d = disc.gradients[i].apply(&f[i * g..(i + 1) * g]);
        for (a, v) in d.iter().enumerate() {
            for k in 0..3 {
                out[k][i * g + a] = v[k];
            }
        }
    }
    out
}

/// `c₁, c₂` of `c₁‖f‖²_ℋ ≤ (f, Λf) ≤ c₂‖f‖²_ℋ` and a sampled affine bound
/// `(∇f, ∇Λf) ≥ c₃‖∇f‖²_ℋ − c₄‖f‖²`. The sampled `c₃` is half the median
/// ratio `(∇f, ∇Λf)/‖∇f‖²_ℋ`; `c₄` is then the smallest value making the
/// bound hold on every sample.
pub fn coercivity_constants(cfg: &MixtureConfig, disc: &Discretization, route: Route, samples: usize, seed: u64) -> Result<CoercivityReport> {
    let asm = LinearizedAssembler::new(cfg, disc);
    let lambda = asm.lambda_sparse(Selector::Full);
    let grams = crate::grid::gram_matrices(disc, cfg);
    let h = Metric::h(&grams)?;
    let c1_raw = restricted_smallest(&lambda, &h, &[], route)?.value;
    let span = lambda_null_span(&asm);
    let c1 = restricted_smallest(&lambda, &h, &span, route)?.value;
    let c2 = restricted_largest(&lambda, &h, &[], route)?.value;

    let masses: Vec<f64> = (0..cfg.n_species()).map(|i| cfg.mass(i)).collect();
    let mut rng = sampling::rng(seed);
    let w = &grams.l2;
    let mut rows = Vec::with_capacity(samples);
    for _ in 0..samples {
        let f = sampling::random_perturbation(disc, &asm.sqrt_m, &masses, cfg.kt, 0.0, &mut rng);
        let mut lf = vec![0.0; f.len()];
        lambda.matvec(&f, &mut lf);
        lf.iter_mut().zip(w).for_each(|(x, w)| *x /= w);
        let gf = stacked_gradient(disc, &f);
        let glf = stacked_gradient(disc, &lf);
        let lhs: f64 = (0..3).map(|k| linalg::wdot(&gf[k], &glf[k], w)).sum();
        let gh: f64 = (0..3).map(|k| h.quad(&gf[k])).sum();
        rows.push((lhs, gh, linalg::wdot(&f, &f, w)));
    }
    let mut ratios: Vec<f64> = rows.iter().map(|(l, g, _)| l / g).collect();
    ratios.sort_by(|a, b| a.total_cmp(b));
    let c3_grad = if ratios.is_empty() { 0.0 } else { 0.5 * ratios[ratios.len() / 2] };
    let c4_grad = rows.iter().map(|(l, g, n)| (c3_grad * g - l) / n).fold(0.0f64, f64::max);
    Ok(CoercivityReport { c1_raw, c1, c2, c3_grad, c4_grad, samples, seed })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayRow {
    pub n: usize,
    pub radius: f64,
    pub norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    /// Least-squares slope of `log norm` against `log n`.
    pub slope: f64,
}

/// Sub-lattice points per half-axis of the near-field quadrature.
const NEAR_FIELD_SUB: i32 = 8;

/// Rectangular sparse rows `(column, value)`.
struct RowMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

impl RowMatrix {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().zip(&self.rows).for_each(|(y, r)| *y = r.iter().map(|&(c, v)| v * x[c]).sum());
    }
    fn apply_t(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                y[c] += v * x[r];
            }
        }
    }
}

/// Near-field part of `K`, `(K − K^{(n)}) f (p) = ∫_{|z| < r} k(p, p′) f(p′) dp′`,
/// with the ball integral resolved on a sub-lattice of spacing `r m_j / 8`
/// and `f` sampled at the nearest node.
fn near_field_operator(cfg: &MixtureConfig, disc: &Discretization, r: f64) -> RowMatrix {
    let n_sp = disc.n_species();
    let g = disc.block_len();
    let sub = NEAR_FIELD_SUB;
    let rows: Vec<Vec<(usize, f64)>> = (0..n_sp * g)
        .into_par_iter()
        .map(|row| {
            let (i, a) = (row / g, row % g);
            let p = disc.grids[i].nodes[a];
            let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
            for j in 0..n_sp {
                let grid = &disc.grids[j];
                let ratio = cfg.mass(j) / cfg.mass(i);
                let centre = [p[0] * ratio, p[1] * ratio, p[2] * ratio];
                let rho = r * cfg.mass(j);
                let step = rho / sub as f64;
                let vol = step * step * step;
                for kx in -sub..sub {
                    for ky in -sub..sub {
                        for kz in -sub..sub {
                            let off = [(kx as f64 + 0.5) * step, (ky as f64 + 0.5) * step, (kz as f64 + 0.5) * step];
                            if off[0] * off[0] + off[1] * off[1] + off[2] * off[2] >= rho * rho {
                                continue;
                            }
                            let q = [centre[0] + off[0], centre[1] + off[1], centre[2] + off[2]];
                            let mut idx = [0usize; 3];
                            let mut inside = true;
                            for k in 0..3 {
                                let t = ((q[k] + grid.radius) / grid.spacing).floor();
                                if t < 0.0 || t >= grid.n as f64 {
                                    inside = false;
                                    break;
                                }
                                idx[k] = t as usize;
                            }
                            if !inside {
                                continue;
                            }
                            if let Ok(k) = k_kernel_entry(p, q, i, j, cfg) {
                                *acc.entry(j * g + grid.index(idx[0], idx[1], idx[2])).or_insert(0.0) += k * vol;
                            }
                        }
                    }
                }
            }
            acc.into_iter().collect()
        })
        .collect();
    RowMatrix { rows }
}

/// L² operator norm `‖W^{1/2} X W^{−1/2}‖₂` by Lanczos on the normal operator.
fn l2_operator_norm(x: &RowMatrix, w: &[f64]) -> Result<f64> {
    let n = w.len();
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let op = FnOperator {
        n,
        f: |v: &[f64], y: &mut [f64]| {
            let t: Vec<f64> = v.iter().zip(&sw).map(|(v, s)| v / s).collect();
            let mut u = vec![0.0; n];
            x.apply(&t, &mut u);
            u.iter_mut().zip(w).for_each(|(u, w)| *u *= w);
            x.apply_t(&u, y);
            y.iter_mut().zip(&sw).for_each(|(y, s)| *y /= s);
        },
    };
    let opts = LanczosOptions { basis_size: 60, max_restarts: 40, tol: 1e-8 };
    let pair = linalg::lanczos(&op, &[], &start_vector(n), Which::Largest, opts)?;
    Ok(pair.value.max(0.0).sqrt())
}

/// Operator norms of `K − K^{(n)}` for cutoff radii `1/n`.
pub fn k_compactness_decay(cfg: &MixtureConfig, disc: &Discretization, n_values: &[usize]) -> Result<DecayTable> {
    let w = disc.stacked_weights();
    let mut rows = Vec::new();
    for &n in n_values {
        let r = 1.0 / n as f64;
        let x = near_field_operator(cfg, disc, r);
        rows.push(DecayRow { n, radius: r, norm: l2_operator_norm(&x, &w)? });
    }
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.norm > 0.0).map(|r| ((r.n as f64).ln(), r.norm.ln())).collect();
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    Ok(DecayTable { rows, slope: if den > 0.0 { num / den } else { f64::NAN } })
}

/// Smallest nonzero relative speed `|p_a/m_i − p_b/m_j|` over node pairs.
pub fn min_pair_speed(cfg: &MixtureConfig, disc: &Discretization) -> f64 {
    let n = disc.n_species();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let (mi, mj) = (cfg.mass(i), cfg.mass(j));
            let m = disc.grids[i]
                .nodes
                .par_iter()
                .map(|p| {
                    let mut b = f64::INFINITY;
                    for q in &disc.grids[j].nodes {
                        let d = ((p[0] / mi - q[0] / mj).powi(2) + (p[1] / mi - q[1] / mj).powi(2) + (p[2] / mi - q[2] / mj).powi(2)).sqrt();
                        if d > 1e-12 * (1.0 + p[0].abs() + p[1].abs() + p[2].abs()) {
                            b = b.min(d);
                        }
                    }
                    b
                })
                .reduce(|| f64::INFINITY, f64::min);
            best = best.min(m);
        }
    }
    best
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointwiseCutoff {
    pub zeroed: usize,
    /// Frobenius norm of the removed nodal entries `k w_b`.
    pub norm: f64,
}

/// Pointwise truncation of the nodal kernel matrix: entries with
/// `0 < |z| < 1/n` are removed.
pub fn pointwise_cutoff(cfg: &MixtureConfig, disc: &Discretization, n: usize) -> PointwiseCutoff {
    let r = 1.0 / n as f64;
    let ns = disc.n_species();
    let mut zeroed = 0;
    let mut s2 = 0.0;
    for i in 0..ns {
        for j in 0..ns {
            let (mi, mj) = (cfg.mass(i), cfg.mass(j));
            let wb = disc.grids[j].weights[0];
            for p in &disc.grids[i].nodes {
                for q in &disc.grids[j].nodes {
                    let d = ((p[0] / mi - q[0] / mj).powi(2) + (p[1] / mi - q[1] / mj).powi(2) + (p[2] / mi - q[2] / mj).powi(2)).sqrt();
                    if d < r {
                        if let Ok(k) = k_kernel_entry(*p, *q, i, j, cfg) {
                            zeroed += 1;
                            s2 += (k * wb).powi(2);
                        }
                    }
                }
            }
        }
    }
    PointwiseCutoff { zeroed, norm: s2.sqrt() }
}
