//! The linearized operator as a symmetric quadratic form, its kernel bases
//! and projections, and the `K/Λ` decomposition with its integral kernel.
//!
//! With `G_i = D(f_i/√M_i)` the form is
//! `−(f, Lf) = ½ Σ_{ij} Σ_{ab} w_a w_b M_i(a) M_j(b) d·A^{ij}[z_ab] d`,
//! `d = G_i(a) − G_j(b)`. Expanding the square splits it into
//! `Λ = Σ_i Σ_a w_a M_i G_iᵀ B_i G_i` with `B_i(a) = Σ_{j,b} w_b M_j(b) A_ab`
//! and the cross part `K = Σ_{ij} Σ_{ab} w_a w_b M_i M_j G_i(a)ᵀ A G_j(b)`,
//! so `−L = Λ − K` holds exactly.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{pair_kernel, sym_mul, Phi, Sym3};
use crate::error::{Error, Result};
use crate::grid::Discretization;
use crate::linalg::{gram_schmidt, wdot, SymSparse};
use crate::mixture::{maxwellian_field, MixtureConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Full,
    Mono,
    Bi,
}

impl Selector {
    fn keeps(self, i: usize, j: usize) -> bool {
        match self {
            Selector::Full => true,
            Selector::Mono => i == j,
            Selector::Bi => i != j,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixTag {
    NegLFull,
    NegLMono,
    NegLBi,
    Lambda,
    K,
    GramL2,
    GramH,
}

impl MatrixTag {
    pub fn name(self) -> &'static str {
        match self {
            MatrixTag::NegLFull => "negL_full",
            MatrixTag::NegLMono => "negL_mono",
            MatrixTag::NegLBi => "negL_bi",
            MatrixTag::Lambda => "Lambda",
            MatrixTag::K => "K",
            MatrixTag::GramL2 => "gram_l2",
            MatrixTag::GramH => "gram_h",
        }
    }

    pub fn of_selector(s: Selector) -> Self {
        match s {
            Selector::Full => MatrixTag::NegLFull,
            Selector::Mono => MatrixTag::NegLMono,
            Selector::Bi => MatrixTag::NegLBi,
        }
    }
}

/// Dense symmetric matrix of a quadratic form over stacked species unknowns.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub tag: MatrixTag,
    pub matrix: Mat<f64>,
}

impl OperatorMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        crate::linalg::sym_matvec(&self.matrix, x, &mut y);
        y
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(x, &self.apply(x))
    }

    pub fn max_abs(&self) -> f64 {
        crate::linalg::max_abs(&self.matrix)
    }

    pub fn asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut m: f64 = 0.0;
        for j in 0..n {
            for i in (j + 1)..n {
                m = m.max((self.matrix[(i, j)] - self.matrix[(j, i)]).abs());
            }
        }
        m
    }
}

type Stencil = [[(usize, f64); 3]; 3];

/// Precomputed data for assembling linearized forms.
pub struct LinearizedAssembler<'a> {
    pub cfg: &'a MixtureConfig,
    pub disc: &'a Discretization,
    /// Stacked `M_i` of the linearization.
    pub maxwellian: Vec<f64>,
    pub sqrt_m: Vec<f64>,
    /// `√M_i(a) G_i(a) = Σ c √(M_i(a)/M_i(c)) f_i(c)` stencils (local node indices).
    stencil: Vec<Vec<Stencil>>,
    vel: Vec<Vec<[f64; 3]>>,
    phi: Phi,
}

impl<'a> LinearizedAssembler<'a> {
    pub fn new(cfg: &'a MixtureConfig, disc: &'a Discretization) -> Self {
        let maxwellian = maxwellian_field(cfg, &cfg.equilibrium(), disc).values;
        let sqrt_m: Vec<f64> = maxwellian.iter().map(|m| m.sqrt()).collect();
        let eq = cfg.equilibrium();
        let u = eq.bulk_velocity;
        let kt = eq.temperature;
        let stencil = (0..disc.n_species())
            .map(|i| {
                let grid = &disc.grids[i];
                let grad = &disc.gradients[i];
                let m = cfg.mass(i);
                let log_m = |p: [f64; 3]| -(0..3).map(|k| (p[k] - m * u[k]).powi(2)).sum::<f64>() / (2.0 * m * kt);
                (0..grid.len())
                    .map(|a| {
                        let mut out = [[(0usize, 0.0); 3]; 3];
                        for (axis, o) in out.iter_mut().enumerate() {
                            for (s, (b, c)) in grad.node_stencil(a, axis).into_iter().enumerate() {
                                o[s] = (b, c * (0.5 * (log_m(grid.nodes[a]) - log_m(grid.nodes[b]))).exp());
                            }
                        }
                        out
                    })
                    .collect()
            })
            .collect();
        let vel = (0..disc.n_species())
            .map(|i| {
                let m = cfg.mass(i);
                disc.grids[i].nodes.iter().map(|p| [p[0] / m, p[1] / m, p[2] / m]).collect()
            })
            .collect();
        Self { cfg, disc, maxwellian, sqrt_m, stencil, vel, phi: Phi::new(cfg.gamma) }
    }

    fn g(&self) -> usize {
        self.disc.block_len()
    }

    fn tol2(&self, i: usize, j: usize) -> f64 {
        let s = self.disc.grids[i].radius / self.cfg.mass(i) + self.disc.grids[j].radius / self.cfg.mass(j);
        (1e-13 * s).powi(2)
    }

    /// `√M_i G_i` at every node of species `i`.
    pub fn weighted_gradient(&self, i: usize, f: &[f64]) -> Vec<[f64; 3]> {
        self.stencil[i]
            .iter()
            .map(|st| {
                let mut o = [0.0; 3];
                for k in 0..3 {
                    o[k] = st[k].iter().map(|&(c, w)| w * f[c]).sum();
                }
                o
            })
            .collect()
    }

    /// `B_i(a) = Σ_{j ∈ sel(i)} Σ_b w_b M_j(b) A^{ij}_ab`.
    fn b_tensors(&self, sel: Selector) -> Vec<Vec<Sym3>> {
        let n = self.disc.n_species();
        let g = self.g();
        (0..n)
            .map(|i| {
                (0..g)
                    .into_par_iter()
                    .map(|a| {
                        let mut acc = [0.0; 6];
                        let va = self.vel[i][a];
                        for j in 0..n {
                            if !sel.keeps(i, j) {
                                continue;
                            }
                            let c = self.cfg.c(i, j);
                            let tol2 = self.tol2(i, j);
                            let wb = self.disc.grids[j].weights[0];
                            for b in 0..g {
                                let vb = self.vel[j][b];
                                let z = [va[0] - vb[0], va[1] - vb[1], va[2] - vb[2]];
                                if let Some(k) = pair_kernel(z, c, self.phi, tol2) {
                                    let s = wb * self.maxwellian[j * g + b];
                                    for l in 0..6 {
                                        acc[l] += s * k[l];
                                    }
                                }
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    /// `Λ_sel` as a sparse block-diagonal matrix.
    pub fn lambda_sparse(&self, sel: Selector) -> SymSparse {
        let b = self.b_tensors(sel);
        let g = self.g();
        let n = self.disc.n_species();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n * g];
        for i in 0..n {
            let wa = self.disc.grids[i].weights[0];
            let off = i * g;
            for a in 0..g {
                let t = &b[i][a];
                let st = &self.stencil[i][a];
                let full = [[t[0], t[3], t[4]], [t[3], t[1], t[5]], [t[4], t[5], t[2]]];
                for k in 0..3 {
                    for l in 0..3 {
                        let tk = wa * full[k][l];
                        if tk == 0.0 {
                            continue;
                        }
                        for &(r, cr) in &st[k] {
                            for &(c, cc) in &st[l] {
                                rows[off + r].push((off + c, tk * cr * cc));
                            }
                        }
                    }
                }
            }
        }
        SymSparse::from_rows(rows)
    }

    /// Adds `alpha · K_ij` (and its transpose when `i ≠ j`) into `out`.
    fn add_k_block(&self, i: usize, j: usize, alpha: f64, out: &mut Mat<f64>) {
        let g = self.g();
        let c = self.cfg.c(i, j);
        let tol2 = self.tol2(i, j);
        let wa = self.disc.grids[i].weights[0];
        let wb = self.disc.grids[j].weights[0];
        let (oi, oj) = (i * g, j * g);
        let batch = 32usize;
        let mut blk = if i != j { Some(Mat::<f64>::zeros(g, g)) } else { None };
        for a0 in (0..g).step_by(batch) {
            let a1 = (a0 + batch).min(g);
            // T_a[k][b'] = Σ_b w_b √M_j(b) Σ_l A_kl(a,b) s_j(b, l → b')
            let rows: Vec<Vec<f64>> = (a0..a1)
                .into_par_iter()
                .map(|a| {
                    let mut t = vec![0.0; 3 * g];
                    let va = self.vel[i][a];
                    for b in 0..g {
                        let vb = self.vel[j][b];
                        let z = [va[0] - vb[0], va[1] - vb[1], va[2] - vb[2]];
                        if let Some(k) = pair_kernel(z, c, self.phi, tol2) {
                            let s = wb * self.sqrt_m[oj + b];
                            let full = [[k[0], k[3], k[4]], [k[3], k[1], k[5]], [k[4], k[5], k[2]]];
                            let st = &self.stencil[j][b];
                            for l in 0..3 {
                                for &(bp, cb) in &st[l] {
                                    let sc = s * cb;
                                    t[bp] += sc * full[0][l];
                                    t[g + bp] += sc * full[1][l];
                                    t[2 * g + bp] += sc * full[2][l];
                                }
                            }
                        }
                    }
                    t
                })
                .collect();
            for (idx, a) in (a0..a1).enumerate() {
                let t = &rows[idx];
                let s = alpha * wa * self.sqrt_m[oi + a];
                let st = &self.stencil[i][a];
                for k in 0..3 {
                    let tk = &t[k * g..(k + 1) * g];
                    for &(ap, ca) in &st[k] {
                        let f = s * ca;
                        // column `oi + ap` holds row `ap` of block (i, j) transposed
                        let col = match blk.as_mut() {
                            Some(m) => m.col_as_slice_mut(ap),
                            None => &mut out.col_as_slice_mut(oi + ap)[oj..oj + g],
                        };
                        for (x, y) in col.iter_mut().zip(tk) {
                            *x += f * y;
                        }
                    }
                }
            }
        }
        if let Some(m) = blk {
            // m[(b', a')] = K_ij[a', b']
            for ap in 0..g {
                let col = m.col_as_slice(ap);
                for bp in 0..g {
                    out[(oj + bp, oi + ap)] += col[bp];
                    out[(oi + ap, oj + bp)] += col[bp];
                }
            }
        }
    }

    /// Dense `K_sel`.
    pub fn k_dense(&self, sel: Selector) -> Mat<f64> {
        let n = self.disc.n_species();
        let mut k = Mat::zeros(self.disc.dim(), self.disc.dim());
        for i in 0..n {
            for j in i..n {
                if sel.keeps(i, j) {
                    self.add_k_block(i, j, 1.0, &mut k);
                }
            }
        }
        crate::linalg::symmetrize(&mut k);
        k
    }

    /// `−L_sel = Λ_sel − K_sel`, dense.
    pub fn assemble_neg_l(&self, sel: Selector) -> OperatorMatrix {
        let n = self.disc.n_species();
        let dim = self.disc.dim();
        let mut m = Mat::zeros(dim, dim);
        for i in 0..n {
            for j in i..n {
                if sel.keeps(i, j) {
                    self.add_k_block(i, j, -1.0, &mut m);
                }
            }
        }
        let lam = self.lambda_sparse(sel);
        for r in 0..lam.n {
            for k in lam.row_ptr[r]..lam.row_ptr[r + 1] {
                m[(r, lam.cols[k])] += lam.vals[k];
            }
        }
        crate::linalg::symmetrize(&mut m);
        OperatorMatrix { tag: MatrixTag::of_selector(sel), matrix: m }
    }

    /// `(K, Λ)` for the full operator, with `K := Λ − (−L)` exactly.
    pub fn assemble_k_lambda(&self) -> (OperatorMatrix, OperatorMatrix) {
        let neg_l = self.assemble_neg_l(Selector::Full);
        let lam = self.lambda_sparse(Selector::Full).to_dense();
        let mut k = lam.clone();
        let dim = k.nrows();
        for j in 0..dim {
            for i in 0..dim {
                k[(i, j)] -= neg_l.matrix[(i, j)];
            }
        }
        (OperatorMatrix { tag: MatrixTag::K, matrix: k }, OperatorMatrix { tag: MatrixTag::Lambda, matrix: lam })
    }

    /// Matrix-free `(−L_sel) f`, re-traversing the pair sums.
    pub fn apply_neg_l(&self, sel: Selector, f: &[f64]) -> Vec<f64> {
        let n = self.disc.n_species();
        let g = self.g();
        let gw: Vec<Vec<[f64; 3]>> = (0..n).map(|i| self.weighted_gradient(i, &f[i * g..(i + 1) * g])).collect();
        let mut out = vec![0.0; n * g];
        for i in 0..n {
            let wa = self.disc.grids[i].weights[0];
            let flux: Vec<[f64; 3]> = (0..g)
                .into_par_iter()
                .map(|a| {
                    let va = self.vel[i][a];
                    let mut bsum = [0.0; 6];
                    let mut cross = [0.0; 3];
                    for j in 0..n {
                        if !sel.keeps(i, j) {
                            continue;
                        }
                        let c = self.cfg.c(i, j);
                        let tol2 = self.tol2(i, j);
                        let wb = self.disc.grids[j].weights[0];
                        for b in 0..g {
                            let vb = self.vel[j][b];
                            let z = [va[0] - vb[0], va[1] - vb[1], va[2] - vb[2]];
                            if let Some(k) = pair_kernel(z, c, self.phi, tol2) {
                                let mb = self.maxwellian[j * g + b];
                                for l in 0..6 {
                                    bsum[l] += wb * mb * k[l];
                                }
                                let av = sym_mul(&k, &gw[j][b]);
                                let s = wb * self.sqrt_m[j * g + b];
                                for l in 0..3 {
                                    cross[l] += s * av[l];
                                }
                            }
                        }
                    }
                    let bg = sym_mul(&bsum, &gw[i][a]);
                    let sa = self.sqrt_m[i * g + a];
                    [wa * (bg[0] - sa * cross[0]), wa * (bg[1] - sa * cross[1]), wa * (bg[2] - sa * cross[2])]
                })
                .collect();
            for a in 0..g {
                for k in 0..3 {
                    for &(c, w) in &self.stencil[i][a][k] {
                        out[i * g + c] += w * flux[a][k];
                    }
                }
            }
        }
        out
    }

    /// Spanning functions of `N(L^m)` (`5N`) or `N(L)` (`N + 4`).
    pub fn kernel_spanning_set(&self, kind: KernelKind) -> Vec<Vec<f64>> {
        let n = self.disc.n_species();
        let g = self.g();
        let dim = n * g;
        let block = |i: usize, h: &dyn Fn([f64; 3]) -> f64| {
            let mut v = vec![0.0; dim];
            for (a, &p) in self.disc.grids[i].nodes.iter().enumerate() {
                v[i * g + a] = self.sqrt_m[i * g + a] * h(p);
            }
            v
        };
        let mut out = Vec::new();
        match kind {
            KernelKind::Mono => {
                for i in 0..n {
                    let m = self.cfg.mass(i);
                    out.push(block(i, &|_| 1.0));
                    for k in 0..3 {
                        out.push(block(i, &|p| p[k]));
                    }
                    out.push(block(i, &|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / (2.0 * m)));
                }
            }
            KernelKind::Full => {
                for i in 0..n {
                    out.push(block(i, &|_| 1.0));
                }
                let sum = |h: &dyn Fn(usize, [f64; 3]) -> f64| {
                    let mut v = vec![0.0; dim];
                    for i in 0..n {
                        for (a, &p) in self.disc.grids[i].nodes.iter().enumerate() {
                            v[i * g + a] = self.sqrt_m[i * g + a] * h(i, p);
                        }
                    }
                    v
                };
                for k in 0..3 {
                    out.push(sum(&|_, p| p[k]));
                }
                out.push(sum(&|i, p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / (2.0 * self.cfg.mass(i))));
            }
        }
        out
    }

    pub fn kernel_basis(&self, kind: KernelKind) -> Result<KernelBasis> {
        let span = self.kernel_spanning_set(kind);
        let w = self.disc.stacked_weights();
        let expected = span.len();
        let vectors = gram_schmidt(&span, &w, 1e-12).map_err(|rank| Error::RankDeficient {
            kind: kind.name().into(),
            rank,
            expected,
        })?;
        Ok(KernelBasis { kind, vectors, weights: w })
    }

    /// Coefficients `(α_i, u_i, e_i)` of `f^∥_i = √M_i (α_i + u_i·p + e_i |p|²/(2m_i))`,
    /// the L²-projection of `f` onto `N(L^m)`, species by species.
    pub fn parallel_coefficients(&self, f: &[f64]) -> Result<ParallelCoefficients> {
        let n = self.disc.n_species();
        let g = self.g();
        let span = self.kernel_spanning_set(KernelKind::Mono);
        let w = self.disc.stacked_weights();
        let mut alpha = Vec::new();
        let mut u = Vec::new();
        let mut e = Vec::new();
        for i in 0..n {
            let vs = &span[5 * i..5 * i + 5];
            let r = i * g..(i + 1) * g;
            let mut gm = Mat::<f64>::zeros(5, 5);
            let mut rhs = Mat::<f64>::zeros(5, 1);
            for a in 0..5 {
                for b in 0..5 {
                    gm[(a, b)] = wdot(&vs[a][r.clone()], &vs[b][r.clone()], &w[r.clone()]);
                }
                rhs[(a, 0)] = wdot(&vs[a][r.clone()], &f[r.clone()], &w[r.clone()]);
            }
            let llt = gm.llt(faer::Side::Lower).map_err(|e| Error::SolveFailure(format!("{e:?}")))?;
            use faer::linalg::solvers::Solve;
            llt.solve_in_place(rhs.as_mut());
            alpha.push(rhs[(0, 0)]);
            u.push([rhs[(1, 0)], rhs[(2, 0)], rhs[(3, 0)]]);
            e.push(rhs[(4, 0)]);
        }
        Ok(ParallelCoefficients { alpha, u, e })
    }

    /// `f^∥` from its coefficients.
    pub fn parallel_field(&self, c: &ParallelCoefficients) -> Vec<f64> {
        let n = self.disc.n_species();
        let g = self.g();
        let mut v = vec![0.0; n * g];
        for i in 0..n {
            let m = self.cfg.mass(i);
            for (a, p) in self.disc.grids[i].nodes.iter().enumerate() {
                let poly = c.alpha[i]
                    + c.u[i][0] * p[0]
                    + c.u[i][1] * p[1]
                    + c.u[i][2] * p[2]
                    + c.e[i] * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / (2.0 * m);
                v[i * g + a] = self.sqrt_m[i * g + a] * poly;
            }
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Mono,
    Full,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Mono => "mono",
            KernelKind::Full => "full",
        }
    }
}

/// L²-orthonormal spanning set of a discrete null space.
#[derive(Clone, Debug)]
pub struct KernelBasis {
    pub kind: KernelKind,
    pub vectors: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub coefficients: Vec<f64>,
    pub parallel: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelCoefficients {
    pub alpha: Vec<f64>,
    pub u: Vec<[f64; 3]>,
    pub e: Vec<f64>,
}

impl KernelBasis {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn project(&self, f: &[f64]) -> Projection {
        let coefficients: Vec<f64> = self.vectors.iter().map(|v| wdot(v, f, &self.weights)).collect();
        let mut parallel = vec![0.0; f.len()];
        for (c, v) in coefficients.iter().zip(&self.vectors) {
            crate::linalg::axpy(*c, v, &mut parallel);
        }
        Projection { coefficients, parallel }
    }

    /// `f − Π f`.
    pub fn complement(&self, f: &[f64]) -> Vec<f64> {
        let p = self.project(f).parallel;
        f.iter().zip(&p).map(|(a, b)| a - b).collect()
    }
}

pub fn project(basis: &KernelBasis, f: &[f64]) -> Projection {
    basis.project(f)
}

pub fn assemble_neg_l(sel: Selector, cfg: &MixtureConfig, disc: &Discretization) -> OperatorMatrix {
    LinearizedAssembler::new(cfg, disc).assemble_neg_l(sel)
}

pub fn kernel_basis(kind: KernelKind, cfg: &MixtureConfig, disc: &Discretization) -> Result<KernelBasis> {
    LinearizedAssembler::new(cfg, disc).kernel_basis(kind)
}

pub fn assemble_k_lambda(cfg: &MixtureConfig, disc: &Discretization) -> (OperatorMatrix, OperatorMatrix) {
    LinearizedAssembler::new(cfg, disc).assemble_k_lambda()
}

/// Pointwise integral kernel of `K`:
/// `k = s [2 V·r + (2C/m_j) |z|^γ ((γ+3)/m_i − z·q)]` with
/// `s = √(M_i(p) M_j(p′))`, `z = p/m_i − p′/m_j`, `q = (p/m_i − u)/kT`,
/// `r = (p′/m_j − u)/(2kT)`, `V = A[z] q + (2C/m_i)|z|^γ z`.
pub fn k_kernel_entry(p: [f64; 3], pp: [f64; 3], i: usize, j: usize, cfg: &MixtureConfig) -> Result<f64> {
    let (mi, mj) = (cfg.mass(i), cfg.mass(j));
    let eq = cfg.equilibrium();
    let u = eq.bulk_velocity;
    let kt = eq.temperature;
    let c = cfg.c(i, j);
    let gamma = cfg.gamma;
    let z = [p[0] / mi - pp[0] / mj, p[1] / mi - pp[1] / mj, p[2] / mi - pp[2] / mj];
    let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
    if r2 == 0.0 {
        return Err(Error::ZeroRelativeVelocity);
    }
    let a = crate::collision::a_kernel(z, c, gamma)?;
    let zg = r2.powf(0.5 * gamma);
    let q = [(p[0] / mi - u[0]) / kt, (p[1] / mi - u[1]) / kt, (p[2] / mi - u[2]) / kt];
    let r = [(pp[0] / mj - u[0]) / (2.0 * kt), (pp[1] / mj - u[1]) / (2.0 * kt), (pp[2] / mj - u[2]) / (2.0 * kt)];
    let mut v = [0.0; 3];
    for k in 0..3 {
        v[k] = a[k][0] * q[0] + a[k][1] * q[1] + a[k][2] * q[2] + 2.0 * c / mi * zg * z[k];
    }
    let s = (crate::mixture::maxwellian(p, mi, eq.densities[i], u, kt) * crate::mixture::maxwellian(pp, mj, eq.densities[j], u, kt)).sqrt();
    let vr = v[0] * r[0] + v[1] * r[1] + v[2] * r[2];
    let zq = z[0] * q[0] + z[1] * q[1] + z[2] * q[2];
    Ok(s * (2.0 * vr + 2.0 * c / mj * zg * ((gamma + 3.0) / mi - zq)))
}

/// Nodal matrix `K_ker[(i,a),(j,b)] = k^{ij}(p_a, p_b) w_b`, coincident pairs set to 0.
pub fn k_kernel_matrix(cfg: &MixtureConfig, disc: &Discretization) -> Mat<f64> {
    let n = disc.n_species();
    let g = disc.block_len();
    let dim = n * g;
    let mut out = Mat::zeros(dim, dim);
    for j in 0..n {
        let wb = disc.grids[j].weights[0];
        for b in 0..g {
            let col = out.col_as_slice_mut(j * g + b);
            for i in 0..n {
                for a in 0..g {
                    col[i * g + a] = k_kernel_entry(disc.grids[i].nodes[a], disc.grids[j].nodes[b], i, j, cfg).map(|k| k * wb).unwrap_or(0.0);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::CollisionOperator;
    use crate::field::{DistributionField, FieldKind};
    use crate::grid::GridSpec;
    use crate::mixture::SpeciesParams;
    use crate::sampling;

    fn setup(n: usize, gamma: f64, masses: &[f64]) -> (MixtureConfig, Discretization) {
        let c = MixtureConfig::new(masses.iter().map(|&m| SpeciesParams::new(m, 1.0)).collect(), gamma).unwrap();
        let d = Discretization::new(&c, GridSpec::with_default_radius(n, &c)).unwrap();
        (c, d)
    }

    #[test]
    fn full_is_mono_plus_bi_and_symmetric() {
        let (c, d) = setup(4, 0.0, &[1.0, 2.0]);
        let asm = LinearizedAssembler::new(&c, &d);
        let f = asm.assemble_neg_l(Selector::Full);
        let m = asm.assemble_neg_l(Selector::Mono);
        let b = asm.assemble_neg_l(Selector::Bi);
        let s = f.max_abs();
        for i in 0..f.dim() {
            for j in 0..f.dim() {
                assert!((f.matrix[(i, j)] - m.matrix[(i, j)] - b.matrix[(i, j)]).abs() < 1e-12 * s);
            }
        }
        assert!(f.asymmetry() <= 1e-12 * s);
    }

    #[test]
    fn matrix_free_matches_dense() {
        let (c, d) = setup(4, -1.0, &[1.0, 3.0]);
        let asm = LinearizedAssembler::new(&c, &d);
        let x = sampling::gaussian_vector(d.dim(), &mut sampling::rng(3));
        for sel in [Selector::Full, Selector::Mono, Selector::Bi] {
            let m = asm.assemble_neg_l(sel);
            let y0 = m.apply(&x);
            let y1 = asm.apply_neg_l(sel, &x);
            let s = y0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for k in 0..x.len() {
                assert!((y0[k] - y1[k]).abs() < 1e-11 * s, "{sel:?}");
            }
        }
    }

    #[test]
    fn kernel_vectors_are_exact_null_vectors() {
        let (c, d) = setup(6, 0.0, &[1.0, 2.0]);
        let asm = LinearizedAssembler::new(&c, &d);
        let full = asm.assemble_neg_l(Selector::Full);
        let mono = asm.assemble_neg_l(Selector::Mono);
        let scale = full.max_abs();
        for v in asm.kernel_basis(KernelKind::Full).unwrap().vectors {
            let y = full.apply(&v);
            assert!(y.iter().all(|x| x.abs() < 1e-10 * scale));
        }
        for v in asm.kernel_basis(KernelKind::Mono).unwrap().vectors {
            let y = mono.apply(&v);
            assert!(y.iter().all(|x| x.abs() < 1e-10 * scale));
        }
    }

    #[test]
    fn basis_counts_orthonormality_and_nesting() {
        let (c, d) = setup(6, 0.0, &[1.0, 2.0]);
        let asm = LinearizedAssembler::new(&c, &d);
        let mono = asm.kernel_basis(KernelKind::Mono).unwrap();
        let full = asm.kernel_basis(KernelKind::Full).unwrap();
        assert_eq!(mono.len(), 10);
        assert_eq!(full.len(), 6);
        for a in 0..mono.len() {
            for b in 0..mono.len() {
                let x = wdot(&mono.vectors[a], &mono.vectors[b], &mono.weights);
                assert!((x - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        for v in &full.vectors {
            let r = mono.complement(v);
            assert!(wdot(&r, &r, &mono.weights).sqrt() < 1e-10);
        }
    }

    #[test]
    fn projection_properties() {
        let (c, d) = setup(6, 0.0, &[1.0, 2.0]);
        let asm = LinearizedAssembler::new(&c, &d);
        let mono = asm.kernel_basis(KernelKind::Mono).unwrap();
        let full = asm.kernel_basis(KernelKind::Full).unwrap();
        let f = sampling::gaussian_vector(d.dim(), &mut sampling::rng(1));
        let pf = full.project(&f).parallel;
        let ppf = full.project(&pf).parallel;
        for k in 0..f.len() {
            assert!((pf[k] - ppf[k]).abs() < 1e-12 * (1.0 + pf[k].abs()));
        }
        let perp = full.complement(&f);
        assert!(full.project(&perp).coefficients.iter().all(|c| c.abs() < 1e-12));
        let nested = full.project(&mono.project(&f).parallel).parallel;
        for k in 0..f.len() {
            assert!((nested[k] - pf[k]).abs() < 1e-10 * (1.0 + pf[k].abs()));
        }
    }

    #[test]
    fn parallel_coefficients_recover_construction() {
        let (c, d) = setup(6, 0.0, &[1.0, 2.0]);
        let asm = LinearizedAssembler::new(&c, &d);
        let want = ParallelCoefficients { alpha: vec![0.3, -0.2], u: vec![[0.1, 0.0, -0.4], [0.2, 0.5, 0.0]], e: vec![0.7, -0.1] };
        let f = asm.parallel_field(&want);
        let got = asm.parallel_coefficients(&f).unwrap();
        for i in 0..2 {
            assert!((got.alpha[i] - want.alpha[i]).abs() < 1e-10);
            assert!((got.e[i] - want.e[i]).abs() < 1e-10);
            for k in 0..3 {
                assert!((got.u[i][k] - want.u[i][k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        // an absurdly wide box puts every node in the tail
        let c = MixtureConfig::new(vec![SpeciesParams::new(1.0, 1.0)], 0.0).unwrap();
        let d = Discretization::new(&c, GridSpec::new(4, 400.0)).unwrap();
        assert!(matches!(kernel_basis(KernelKind::Mono, &c, &d), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn dense_form_is_linearization_of_collision_operator() {
        let (c, d) = setup(4, 0.0, &[1.0, 2.0]);
        let asm = LinearizedAssembler::new(&c, &d);
        let op = CollisionOperator::new(&c, &d);
        let neg_l = asm.assemble_neg_l(Selector::Full);
        let f = sampling::gaussian_vector(d.dim(), &mut sampling::rng(2));
        let m = &asm.maxwellian;
        let plus: Vec<f64> = m.iter().zip(&f).zip(&asm.sqrt_m).map(|((m, f), s)| m + s * f).collect();
        let minus: Vec<f64> = m.iter().zip(&f).zip(&asm.sqrt_m).map(|((m, f), s)| m - s * f).collect();
        let qp = op.q_total(&DistributionField::new(plus, 2, FieldKind::Perturbation)).unwrap();
        let qm = op.q_total(&DistributionField::new(minus, 2, FieldKind::Perturbation)).unwrap();
        let w = d.stacked_weights();
        let lin: Vec<f64> = (0..f.len()).map(|k| -w[k] * 0.5 * (qp[k] - qm[k]) / asm.sqrt_m[k]).collect();
        let y = neg_l.apply(&f);
        let s = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 0..f.len() {
            assert!((lin[k] - y[k]).abs() < 1e-9 * s, "node {k}: {} vs {}", lin[k], y[k]);
        }
    }

    #[test]
    fn k_lambda_identity() {
        let (c, d) = setup(4, 0.0, &[1.0, 2.0]);
        let asm = LinearizedAssembler::new(&c, &d);
        let (k, lam) = asm.assemble_k_lambda();
        let neg_l = asm.assemble_neg_l(Selector::Full);
        let kd = asm.k_dense(Selector::Full);
        let s = neg_l.max_abs();
        for i in 0..k.dim() {
            for j in 0..k.dim() {
                assert!((k.matrix[(i, j)] - lam.matrix[(i, j)] + neg_l.matrix[(i, j)]).abs() < 1e-13 * s);
                assert!((k.matrix[(i, j)] - kd[(i, j)]).abs() < 1e-11 * s);
            }
        }
    }

    #[test]
    fn kernel_entry_symmetry() {
        let (c, _) = setup(4, -1.0, &[1.0, 2.0]);
        let p = [0.3, -0.4, 0.9];
        let q = [-0.7, 0.2, 1.1];
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let a = k_kernel_entry(p, q, i, j, &c).unwrap();
            let b = k_kernel_entry(q, p, j, i, &c).unwrap();
            assert!((a - b).abs() < 1e-13 * a.abs().max(1e-300), "({i},{j}): {a} vs {b}");
        }
        assert!(matches!(k_kernel_entry(p, p, 0, 0, &c), Err(Error::ZeroRelativeVelocity)));
    }
}
