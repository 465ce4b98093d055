//! Nonlinear Landau operators `Q_ij`, conserved moments, entropy and its
//! production, and the quadratic perturbation term `Γ`.
//!
//! The flux uses a "gradient" `ψ_i` of the density. In the plain form
//! `ψ_i = D F_i`. In the equilibrium-relative form `ψ_i = M̂_i D(F_i / M̂_i)`
//! for a fixed reference Maxwellian family `M̂` (common bulk velocity and
//! temperature). The two coincide in the continuum because the extra term
//! `F_i F_j (∇log M̂_i − ∇log M̂_j) ∝ z` is annihilated by `A[z]`; the
//! discrete relative form keeps that cancellation exact, so the reference
//! Maxwellians are exact discrete equilibria.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DistributionField, FieldKind};
use crate::grid::Discretization;
use crate::mixture::{maxwellian, EquilibriumMoments, MixtureConfig};

/// `C (I − z⊗z/|z|²) |z|^{γ+2}`.
pub fn a_kernel(z: [f64; 3], c: f64, gamma: f64) -> Result<[[f64; 3]; 3]> {
    let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
    if r2 == 0.0 {
        return Err(Error::ZeroRelativeVelocity);
    }
    let phi = c * r2.powf(0.5 * (gamma + 2.0));
    let mut a = [[0.0; 3]; 3];
    for k in 0..3 {
        for l in 0..3 {
            a[k][l] = phi * ((if k == l { 1.0 } else { 0.0 }) - z[k] * z[l] / r2);
        }
    }
    Ok(a)
}

/// `|z|^{γ+2}` from `|z|²`, specialised for the common exponents.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Phi {
    Zero,
    One,
    Two,
    Three,
    General(f64),
}

impl Phi {
    pub(crate) fn new(gamma: f64) -> Self {
        let e = gamma + 2.0;
        if e == 0.0 {
            Phi::Zero
        } else if e == 1.0 {
            Phi::One
        } else if e == 2.0 {
            Phi::Two
        } else if e == 3.0 {
            Phi::Three
        } else {
            Phi::General(0.5 * e)
        }
    }

    #[inline(always)]
    pub(crate) fn eval(self, r2: f64) -> f64 {
        match self {
            Phi::Zero => 1.0,
            Phi::One => r2.sqrt(),
            Phi::Two => r2,
            Phi::Three => r2 * r2.sqrt(),
            Phi::General(h) => r2.powf(h),
        }
    }
}

/// Packed symmetric 3×3: xx, yy, zz, xy, xz, yz.
pub(crate) type Sym3 = [f64; 6];

/// Returns `(A packed, coincident)` for the pair, `A = c φ(|z|) (I − ẑẑ)`.
#[inline(always)]
pub(crate) fn pair_kernel(z: [f64; 3], c: f64, phi: Phi, tol2: f64) -> Option<Sym3> {
    let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
    if r2 <= tol2 {
        return None;
    }
    let s = c * phi.eval(r2);
    let q = s / r2;
    Some([
        s - q * z[0] * z[0],
        s - q * z[1] * z[1],
        s - q * z[2] * z[2],
        -q * z[0] * z[1],
        -q * z[0] * z[2],
        -q * z[1] * z[2],
    ])
}

#[inline(always)]
pub(crate) fn sym_mul(a: &Sym3, v: &[f64; 3]) -> [f64; 3] {
    [
        a[0] * v[0] + a[3] * v[1] + a[4] * v[2],
        a[3] * v[0] + a[1] * v[1] + a[5] * v[2],
        a[4] * v[0] + a[5] * v[1] + a[2] * v[2],
    ]
}

#[inline(always)]
fn sym_axpy(acc: &mut Sym3, s: f64, a: &Sym3) {
    for k in 0..6 {
        acc[k] += s * a[k];
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientForm {
    Plain,
    EquilibriumRelative,
}

/// Per-node pair sums `S(a) = Σ w_b F_j(b) A_ab` and `v(a) = Σ w_b A_ab ψ_j(b)`.
#[derive(Clone)]
pub(crate) struct PairSums {
    pub s: Vec<Sym3>,
    pub v: Vec<[f64; 3]>,
}

impl PairSums {
    pub(crate) fn zeros(n: usize) -> Self {
        Self { s: vec![[0.0; 6]; n], v: vec![[0.0; 3]; n] }
    }

    fn add(mut self, o: Self) -> Self {
        for (a, b) in self.s.iter_mut().zip(&o.s) {
            for k in 0..6 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.v.iter_mut().zip(&o.v) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        self
    }
}

/// The conserved functionals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub mass: Vec<f64>,
    pub momentum: [f64; 3],
    pub energy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub entropy: f64,
    pub production: f64,
    /// `½ ΣΣ w w F F φ |d|²`, the natural magnitude of the production terms.
    pub production_scale: f64,
}

/// Collision operator bound to a mixture, its grids and a gradient form.
pub struct CollisionOperator<'a> {
    pub cfg: &'a MixtureConfig,
    pub disc: &'a Discretization,
    form: GradientForm,
    reference: EquilibriumMoments,
    skip_coincident: bool,
    phi: Phi,
    /// Per species, per node, per axis: ψ stencil `(node, coefficient)`.
    psi: Vec<Vec<[[(usize, f64); 3]; 3]>>,
    /// Scaled nodal velocities `p / m`.
    vel: Vec<Vec<[f64; 3]>>,
}

impl<'a> CollisionOperator<'a> {
    /// Equilibrium-relative form referenced to the configuration's equilibrium.
    pub fn new(cfg: &'a MixtureConfig, disc: &'a Discretization) -> Self {
        Self::with_options(cfg, disc, GradientForm::EquilibriumRelative, cfg.equilibrium())
    }

    pub fn with_options(cfg: &'a MixtureConfig, disc: &'a Discretization, form: GradientForm, reference: EquilibriumMoments) -> Self {
        let mut op = Self {
            cfg,
            disc,
            form,
            reference,
            skip_coincident: true,
            phi: Phi::new(cfg.gamma),
            psi: Vec::new(),
            vel: Vec::new(),
        };
        op.rebuild();
        op
    }

    pub fn form(&self) -> GradientForm {
        self.form
    }

    pub fn reference(&self) -> &EquilibriumMoments {
        &self.reference
    }

    pub fn set_reference(&mut self, reference: EquilibriumMoments) {
        self.reference = reference;
        self.rebuild();
    }

    /// With skipping disabled, coincident pairs raise `ZeroRelativeVelocity`.
    pub fn set_skip_coincident(&mut self, skip: bool) {
        self.skip_coincident = skip;
    }

    fn rebuild(&mut self) {
        let u = self.reference.bulk_velocity;
        let kt = self.reference.temperature;
        self.psi = (0..self.disc.n_species())
            .map(|i| {
                let grid = &self.disc.grids[i];
                let grad = &self.disc.gradients[i];
                let m = self.cfg.mass(i);
                let log_m = |p: [f64; 3]| -(0..3).map(|k| (p[k] - m * u[k]).powi(2)).sum::<f64>() / (2.0 * m * kt);
                (0..grid.len())
                    .map(|a| {
                        let mut out = [[(0usize, 0.0); 3]; 3];
                        for (axis, o) in out.iter_mut().enumerate() {
                            for (s, (b, c)) in grad.node_stencil(a, axis).into_iter().enumerate() {
                                let r = match self.form {
                                    GradientForm::Plain => 1.0,
                                    GradientForm::EquilibriumRelative => (log_m(grid.nodes[a]) - log_m(grid.nodes[b])).exp(),
                                };
                                o[s] = (b, c * r);
                            }
                        }
                        out
                    })
                    .collect()
            })
            .collect();
        self.vel = (0..self.disc.n_species())
            .map(|i| {
                let m = self.cfg.mass(i);
                self.disc.grids[i].nodes.iter().map(|p| [p[0] / m, p[1] / m, p[2] / m]).collect()
            })
            .collect();
    }

    /// Coincidence tolerance on `|z|²` for a species pair.
    pub(crate) fn tol2(&self, i: usize, j: usize) -> f64 {
        let s = self.disc.grids[i].radius / self.cfg.mass(i) + self.disc.grids[j].radius / self.cfg.mass(j);
        (1e-13 * s).powi(2)
    }

    /// `ψ_i` for one species block.
    pub fn psi(&self, i: usize, f: &[f64]) -> Vec<[f64; 3]> {
        self.psi[i]
            .iter()
            .map(|st| {
                let mut o = [0.0; 3];
                for k in 0..3 {
                    o[k] = st[k].iter().map(|&(b, c)| c * f[b]).sum();
                }
                o
            })
            .collect()
    }

    fn check_coincident(&self, i: usize, j: usize) -> Result<()> {
        if self.skip_coincident {
            return Ok(());
        }
        let tol2 = self.tol2(i, j);
        for za in &self.vel[i] {
            for zb in &self.vel[j] {
                let r2: f64 = (0..3).map(|k| (za[k] - zb[k]).powi(2)).sum();
                if r2 <= tol2 {
                    return Err(Error::ZeroRelativeVelocity);
                }
            }
        }
        Ok(())
    }

    /// One-sided pair sums for `Q_ij`: accumulates over `b ∈ j` into nodes `a ∈ i`.
    fn sums_one_sided(&self, i: usize, j: usize, fj: &[f64], psij: &[[f64; 3]]) -> PairSums {
        let c = self.cfg.c(i, j);
        let phi = self.phi;
        let tol2 = self.tol2(i, j);
        let va = &self.vel[i];
        let vb = &self.vel[j];
        let wb = self.disc.grids[j].weights[0];
        let g = va.len();
        let (s, v): (Vec<Sym3>, Vec<[f64; 3]>) = (0..g)
            .into_par_iter()
            .with_min_len(8)
            .map(|a| {
                let mut s = [0.0; 6];
                let mut v = [0.0; 3];
                let pa = va[a];
                for b in 0..vb.len() {
                    let z = [pa[0] - vb[b][0], pa[1] - vb[b][1], pa[2] - vb[b][2]];
                    if let Some(k) = pair_kernel(z, c, phi, tol2) {
                        sym_axpy(&mut s, wb * fj[b], &k);
                        let av = sym_mul(&k, &psij[b]);
                        for l in 0..3 {
                            v[l] += wb * av[l];
                        }
                    }
                }
                (s, v)
            })
            .unzip();
        PairSums { s, v }
    }

    /// Two-sided pair sums for the unordered species pair `(i, j)`, `i ≤ j`.
    /// Returns the sums landing on `i` and on `j` (identical storage when `i = j`).
    pub(crate) fn sums_two_sided(&self, i: usize, j: usize, fi: &[f64], fj: &[f64], psii: &[[f64; 3]], psij: &[[f64; 3]]) -> (PairSums, PairSums) {
        let c = self.cfg.c(i, j);
        let phi = self.phi;
        let tol2 = self.tol2(i, j);
        let va = &self.vel[i];
        let vb = &self.vel[j];
        let wa = self.disc.grids[i].weights[0];
        let wb = self.disc.grids[j].weights[0];
        let ga = va.len();
        let gb = vb.len();
        let same = i == j;
        let init = || (PairSums::zeros(ga), PairSums::zeros(gb));
        (0..ga)
            .into_par_iter()
            .with_min_len(8)
            .fold(init, |(mut acc_a, mut acc_b), a| {
                let pa = va[a];
                let mut s = [0.0; 6];
                let mut v = [0.0; 3];
                let start = if same { a + 1 } else { 0 };
                let wfa = wa * fi[a];
                let psia = psii[a];
                for b in start..gb {
                    let pb = vb[b];
                    let z = [pa[0] - pb[0], pa[1] - pb[1], pa[2] - pb[2]];
                    if let Some(k) = pair_kernel(z, c, phi, tol2) {
                        sym_axpy(&mut s, wb * fj[b], &k);
                        let av = sym_mul(&k, &psij[b]);
                        let bv = sym_mul(&k, &psia);
                        for l in 0..3 {
                            v[l] += wb * av[l];
                        }
                        let tgt = if same { &mut acc_a } else { &mut acc_b };
                        sym_axpy(&mut tgt.s[b], wfa, &k);
                        for l in 0..3 {
                            tgt.v[b][l] += wa * bv[l];
                        }
                    }
                }
                for l in 0..6 {
                    acc_a.s[a][l] += s[l];
                }
                for l in 0..3 {
                    acc_a.v[a][l] += v[l];
                }
                (acc_a, acc_b)
            })
            .reduce(init, |x, y| (x.0.add(y.0), x.1.add(y.1)))
    }

    /// `Q = −Dᵀ flux`, `flux(a) = S(a) ψ_i(a) − F_i(a) v(a)`.
    fn divergence(&self, i: usize, fi: &[f64], psii: &[[f64; 3]], sums: &PairSums) -> Vec<f64> {
        let flux: Vec<[f64; 3]> = (0..fi.len())
            .map(|a| {
                let sp = sym_mul(&sums.s[a], &psii[a]);
                [
                    sp[0] - fi[a] * sums.v[a][0],
                    sp[1] - fi[a] * sums.v[a][1],
                    sp[2] - fi[a] * sums.v[a][2],
                ]
            })
            .collect();
        let mut q = self.disc.gradients[i].apply_transpose(&flux);
        q.iter_mut().for_each(|x| *x = -*x);
        q
    }

    /// `Q_ij(F_i, F_j)` on the nodes of species `i`.
    pub fn q_pair(&self, fi: &[f64], fj: &[f64], i: usize, j: usize) -> Result<Vec<f64>> {
        self.check_coincident(i, j)?;
        let psii = self.psi(i, fi);
        let psij = self.psi(j, fj);
        let sums = self.sums_one_sided(i, j, fj, &psij);
        Ok(self.divergence(i, fi, &psii, &sums))
    }

    /// All ordered-pair operators `[i][j] = Q_ij(F_i, F_j)`, using the
    /// `A^{ij}[z_ab] = A^{ji}[z_ba]` symmetry to visit each node pair once.
    pub fn q_pairs(&self, f: &DistributionField) -> Result<Vec<Vec<Vec<f64>>>> {
        let n = self.disc.n_species();
        for i in 0..n {
            for j in i..n {
                self.check_coincident(i, j)?;
            }
        }
        let psi: Vec<Vec<[f64; 3]>> = (0..n).map(|i| self.psi(i, f.block(i))).collect();
        let mut out = vec![vec![Vec::new(); n]; n];
        for i in 0..n {
            for j in i..n {
                let (si, sj) = self.sums_two_sided(i, j, f.block(i), f.block(j), &psi[i], &psi[j]);
                out[i][j] = self.divergence(i, f.block(i), &psi[i], &si);
                if i != j {
                    out[j][i] = self.divergence(j, f.block(j), &psi[j], &sj);
                }
            }
        }
        Ok(out)
    }

    /// Stacked `Σ_j Q_ij`.
    pub fn q_total(&self, f: &DistributionField) -> Result<Vec<f64>> {
        let n = self.disc.n_species();
        for i in 0..n {
            for j in i..n {
                self.check_coincident(i, j)?;
            }
        }
        let g = self.disc.block_len();
        let psi: Vec<Vec<[f64; 3]>> = (0..n).map(|i| self.psi(i, f.block(i))).collect();
        let mut total: Vec<PairSums> = (0..n).map(|_| PairSums::zeros(g)).collect();
        for i in 0..n {
            for j in i..n {
                let (si, sj) = self.sums_two_sided(i, j, f.block(i), f.block(j), &psi[i], &psi[j]);
                let ti = std::mem::replace(&mut total[i], PairSums::zeros(0));
                total[i] = ti.add(si);
                if i != j {
                    let tj = std::mem::replace(&mut total[j], PairSums::zeros(0));
                    total[j] = tj.add(sj);
                }
            }
        }
        let mut out = Vec::with_capacity(n * g);
        for i in 0..n {
            out.extend(self.divergence(i, f.block(i), &psi[i], &total[i]));
        }
        Ok(out)
    }

    /// Linearization Maxwellians `M_i` of the configuration, stacked.
    pub fn linearization_maxwellian(&self) -> Vec<f64> {
        crate::mixture::maxwellian_field(self.cfg, &self.cfg.equilibrium(), self.disc).values
    }

    /// `Γ_i(f, f) = M_i^{−1/2} Σ_j Q_ij(√M_i f_i, √M_j f_j)`; the bilinear
    /// flux accepts signed arguments, so this is the discrete operator itself.
    pub fn gamma_bilinear(&self, f: &DistributionField) -> Result<Vec<f64>> {
        let m = self.linearization_maxwellian();
        let x: Vec<f64> = f.values.iter().zip(&m).map(|(v, m)| v * m.sqrt()).collect();
        let q = self.q_total(&DistributionField::new(x, f.n_species, FieldKind::Perturbation))?;
        Ok(q.iter().zip(&m).map(|(q, m)| q / m.sqrt()).collect())
    }

    /// Independent evaluation of `Γ` through the four-term expansion
    /// `div X − (p/m_i − u)·X/(2kT)` written with `∇f` (plain differences) and
    /// the cross terms moved onto `p′/m_j` by `A z = 0`. Agrees with
    /// [`Self::gamma_bilinear`] up to discretization error.
    pub fn gamma_theta_form(&self, f: &DistributionField) -> Result<Vec<f64>> {
        let cfg = self.cfg;
        let n = self.disc.n_species();
        let eq = cfg.equilibrium();
        let u = eq.bulk_velocity;
        let kt = eq.temperature;
        let m = self.linearization_maxwellian();
        let g = self.disc.block_len();
        let sq: Vec<f64> = m.iter().map(|x| x.sqrt()).collect();
        let df: Vec<Vec<[f64; 3]>> = (0..n).map(|i| self.disc.gradients[i].apply(f.block(i))).collect();
        let mut out = Vec::with_capacity(n * g);
        for i in 0..n {
            let fi = f.block(i);
            let res: Vec<([f64; 3], [f64; 3], f64)> = (0..g)
                .into_par_iter()
                .map(|a| {
                    let mut x = [0.0; 3];
                    let mut y = [0.0; 3];
                    let mut zz = 0.0;
                    for j in 0..n {
                        let c = cfg.c(i, j);
                        let tol2 = self.tol2(i, j);
                        let wb = self.disc.grids[j].weights[0];
                        let fj = f.block(j);
                        for b in 0..g {
                            let vb = self.vel[j][b];
                            let z = [self.vel[i][a][0] - vb[0], self.vel[i][a][1] - vb[1], self.vel[i][a][2] - vb[2]];
                            if let Some(k) = pair_kernel(z, c, self.phi, tol2) {
                                let smj = sq[j * g + b];
                                let t1 = sym_mul(&k, &df[i][a]);
                                let t2 = sym_mul(&k, &df[j][b]);
                                let q = [vb[0] - u[0], vb[1] - u[1], vb[2] - u[2]];
                                let aq = sym_mul(&k, &q);
                                for l in 0..3 {
                                    x[l] += wb * smj * (fj[b] * t1[l] - fi[a] * t2[l]);
                                    y[l] += wb * smj * fj[b] * aq[l];
                                }
                                zz += wb * smj * (aq[0] * df[j][b][0] + aq[1] * df[j][b][1] + aq[2] * df[j][b][2]);
                            }
                        }
                    }
                    (x, y, zz)
                })
                .collect();
            let xflux: Vec<[f64; 3]> = res.iter().map(|r| r.0).collect();
            let div = self.disc.gradients[i].apply_transpose(&xflux);
            for a in 0..g {
                let (_, y, zz) = res[a];
                let t3 = -(y[0] * df[i][a][0] + y[1] * df[i][a][1] + y[2] * df[i][a][2]) / (2.0 * kt);
                let t4 = fi[a] * zz / (2.0 * kt);
                out.push(-div[a] + t3 + t4);
            }
        }
        Ok(out)
    }
}

pub fn moments(f: &DistributionField, cfg: &MixtureConfig, disc: &Discretization) -> MomentSet {
    let mut mass = Vec::new();
    let mut momentum = [0.0; 3];
    let mut energy = 0.0;
    for i in 0..disc.n_species() {
        let grid = &disc.grids[i];
        let b = f.block(i);
        let m = cfg.mass(i);
        let mut mi = 0.0;
        for (a, p) in grid.nodes.iter().enumerate() {
            let w = grid.weights[a] * b[a];
            mi += w;
            for k in 0..3 {
                momentum[k] += w * p[k];
            }
            energy += w * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / (2.0 * m);
        }
        mass.push(mi);
    }
    MomentSet { mass, momentum, energy }
}

/// Floor below which nodes are excluded from `H` and `D`.
pub const LOG_FLOOR: f64 = 1e-30;

/// `H = Σ ∫ F log(F/m³)` and the symmetrized production
/// `D = ½ ΣΣ w w F_i F_j |(d × ẑ)|² c φ(|z|)`, `d = D log F_i(a) − D log F_j(b)`.
/// With `floor = None` non-positive values raise `NonPositiveDensity`.
pub fn entropy_and_production(f: &DistributionField, cfg: &MixtureConfig, disc: &Discretization, floor: Option<f64>) -> Result<EntropyReport> {
    let n = disc.n_species();
    let fl = floor.unwrap_or(0.0);
    for i in 0..n {
        if floor.is_none() {
            if let Some((a, &v)) = f.block(i).iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
                return Err(Error::NonPositiveDensity { species: i, node: a, value: v });
            }
        }
    }
    let mut h = 0.0;
    // per species: valid mask and log-gradient
    let mut lg: Vec<Vec<Option<[f64; 3]>>> = Vec::new();
    for i in 0..n {
        let b = f.block(i);
        let m3 = cfg.mass(i).powi(3);
        let grid = &disc.grids[i];
        for (a, &v) in b.iter().enumerate() {
            if v >= fl && v > 0.0 {
                h += grid.weights[a] * v * (v / m3).ln();
            }
        }
        let grad = &disc.gradients[i];
        lg.push(
            (0..b.len())
                .map(|a| {
                    let mut o = [0.0; 3];
                    for (axis, oa) in o.iter_mut().enumerate() {
                        for (c, coef) in grad.node_stencil(a, axis) {
                            if !(b[c] >= fl && b[c] > 0.0) {
                                return None;
                            }
                            *oa += coef * b[c].ln();
                        }
                    }
                    Some(o)
                })
                .collect(),
        );
    }
    let phi = Phi::new(cfg.gamma);
    let mut prod = 0.0;
    let mut scale = 0.0;
    for i in 0..n {
        for j in i..n {
            let c = cfg.c(i, j);
            let (mi, mj) = (cfg.mass(i), cfg.mass(j));
            let gi = &disc.grids[i];
            let gj = &disc.grids[j];
            let wa = gi.weights[0];
            let wb = gj.weights[0];
            let fi = f.block(i);
            let fj = f.block(j);
            let (p, s) = (0..gi.len())
                .into_par_iter()
                .map(|a| {
                    let Some(da) = lg[i][a] else { return (0.0, 0.0) };
                    let pa = gi.nodes[a];
                    let va = [pa[0] / mi, pa[1] / mi, pa[2] / mi];
                    let start = if i == j { a + 1 } else { 0 };
                    let mut p = 0.0;
                    let mut s = 0.0;
                    for b in start..gj.len() {
                        let Some(db) = lg[j][b] else { continue };
                        let pb = gj.nodes[b];
                        let z = [va[0] - pb[0] / mj, va[1] - pb[1] / mj, va[2] - pb[2] / mj];
                        let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
                        if r2 == 0.0 {
                            continue;
                        }
                        let r = r2.sqrt();
                        let e = [z[0] / r, z[1] / r, z[2] / r];
                        let d = [da[0] - db[0], da[1] - db[1], da[2] - db[2]];
                        let x = [d[1] * e[2] - d[2] * e[1], d[2] * e[0] - d[0] * e[2], d[0] * e[1] - d[1] * e[0]];
                        let wt = fj[b] * c * phi.eval(r2);
                        p += wt * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
                        s += wt * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
                    }
                    (wa * wb * fi[a] * p, wa * wb * fi[a] * s)
                })
                .reduce(|| (0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1));
            prod += p;
            scale += s;
        }
    }
    Ok(EntropyReport { entropy: h, production: prod, production_scale: scale })
}

/// Helper: stacked Maxwellians for arbitrary per-species drifts and temperature.
pub fn drifted_maxwellians(cfg: &MixtureConfig, disc: &Discretization, drifts: &[[f64; 3]], kt: &[f64]) -> DistributionField {
    let mut v = Vec::with_capacity(disc.dim());
    for i in 0..disc.n_species() {
        let m = cfg.mass(i);
        let rho = cfg.species[i].density;
        v.extend(disc.grids[i].nodes.iter().map(|&p| maxwellian(p, m, rho, drifts[i], kt[i])));
    }
    DistributionField::new(v, disc.n_species(), FieldKind::Density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::mixture::{maxwellian_field, SpeciesParams};

    fn setup(n: usize, gamma: f64) -> (MixtureConfig, Discretization) {
        let c = MixtureConfig::new(vec![SpeciesParams::new(1.0, 1.0), SpeciesParams::new(2.0, 0.8)], gamma).unwrap();
        let d = Discretization::new(&c, GridSpec::with_default_radius(n, &c)).unwrap();
        (c, d)
    }

    #[test]
    fn kernel_examples() {
        let a = a_kernel([1.0, 0.0, 0.0], 1.0, 0.0).unwrap();
        assert_eq!(a, [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let z = [0.3, -1.2, 0.7];
        let a = a_kernel(z, 0.7, -1.3).unwrap();
        for k in 0..3 {
            let s: f64 = (0..3).map(|l| a[k][l] * z[l]).sum();
            assert!(s.abs() < 1e-15);
        }
        let r: f64 = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        let tr = a[0][0] + a[1][1] + a[2][2];
        assert!((tr - 2.0 * 0.7 * r.powf(0.7)).abs() < 1e-14);
        assert!(matches!(a_kernel([0.0; 3], 1.0, 0.0), Err(Error::ZeroRelativeVelocity)));
    }

    #[test]
    fn packed_kernel_matches_dense() {
        for &g in &[-2.0, -1.0, -0.5, 0.0, 1.0] {
            let z = [0.4, 0.1, -0.9];
            let a = a_kernel(z, 1.3, g).unwrap();
            let p = pair_kernel(z, 1.3, Phi::new(g), 0.0).unwrap();
            let idx = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
            for (k, &(r, c)) in idx.iter().enumerate() {
                assert!((p[k] - a[r][c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn maxwellians_are_exact_equilibria() {
        let (c, d) = setup(8, 0.0);
        let op = CollisionOperator::new(&c, &d);
        let m = maxwellian_field(&c, &c.equilibrium(), &d);
        let q = op.q_pairs(&m).unwrap();
        let q1 = op.q_pair(m.block(0), m.block(0), 0, 0).unwrap();
        let scale = q1.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-300);
        for i in 0..2 {
            for j in 0..2 {
                let mx = q[i][j].iter().fold(0.0f64, |a, x| a.max(x.abs()));
                let mref = m.block(i).iter().fold(0.0f64, |a, x| a.max(*x));
                assert!(mx < 1e-12 * mref, "Q_{i}{j} max {mx:e}, scale {scale:e}");
            }
        }
    }

    #[test]
    fn one_sided_and_two_sided_agree() {
        let (c, d) = setup(6, -1.0);
        let op = CollisionOperator::new(&c, &d);
        let f = random_positive(&d, 3);
        let q = op.q_pairs(&f).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let p = op.q_pair(f.block(i), f.block(j), i, j).unwrap();
                let s = p.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                for a in 0..p.len() {
                    assert!((p[a] - q[i][j][a]).abs() < 1e-12 * s);
                }
            }
        }
        let tot = op.q_total(&f).unwrap();
        let g = d.block_len();
        for i in 0..2 {
            for a in 0..g {
                assert!((tot[i * g + a] - q[i][0][a] - q[i][1][a]).abs() < 1e-12 * (1.0 + tot[i * g + a].abs()));
            }
        }
    }

    fn random_positive(d: &Discretization, seed: u64) -> DistributionField {
        crate::sampling::random_positive_field(d, &mut crate::sampling::rng(seed))
    }

    #[test]
    fn mass_conserved_per_pair() {
        let (c, d) = setup(6, 1.0);
        let op = CollisionOperator::new(&c, &d);
        let f = random_positive(&d, 7);
        let q = op.q_pairs(&f).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let s: f64 = q[i][j].iter().sum();
                let a: f64 = q[i][j].iter().map(|x| x.abs()).sum();
                assert!(s.abs() < 1e-12 * a);
            }
        }
    }

    #[test]
    fn plain_form_also_conserves_mass() {
        let (c, d) = setup(6, 0.0);
        let op = CollisionOperator::with_options(&c, &d, GradientForm::Plain, c.equilibrium());
        let f = random_positive(&d, 9);
        let q = op.q_total(&f).unwrap();
        for i in 0..2 {
            let b = &q[i * d.block_len()..(i + 1) * d.block_len()];
            let s: f64 = b.iter().sum();
            let a: f64 = b.iter().map(|x| x.abs()).sum();
            assert!(s.abs() < 1e-12 * a);
        }
    }

    #[test]
    fn bilinear_in_first_argument() {
        let (c, d) = setup(4, 0.0);
        let op = CollisionOperator::new(&c, &d);
        let f = random_positive(&d, 1);
        let g = random_positive(&d, 2);
        let h = random_positive(&d, 3);
        let comb: Vec<f64> = f.block(0).iter().zip(g.block(0)).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let lhs = op.q_pair(&comb, h.block(1), 0, 1).unwrap();
        let a = op.q_pair(f.block(0), h.block(1), 0, 1).unwrap();
        let b = op.q_pair(g.block(0), h.block(1), 0, 1).unwrap();
        let s = lhs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in 0..lhs.len() {
            assert!((lhs[k] - 2.0 * a[k] + 0.5 * b[k]).abs() < 1e-12 * s);
        }
    }

    #[test]
    fn coincident_pairs_error_when_not_skipped() {
        let c = MixtureConfig::new(vec![SpeciesParams::new(1.0, 1.0)], 0.0).unwrap();
        let d = Discretization::new(&c, GridSpec::new(4, 3.0)).unwrap();
        let mut op = CollisionOperator::new(&c, &d);
        let f = random_positive(&d, 1);
        assert!(op.q_pair(f.block(0), f.block(0), 0, 0).is_ok());
        op.set_skip_coincident(false);
        assert!(matches!(op.q_pair(f.block(0), f.block(0), 0, 0), Err(Error::ZeroRelativeVelocity)));
    }

    #[test]
    fn moments_of_zero_and_scaling() {
        let (c, d) = setup(6, 0.0);
        let z = DistributionField::zeros(2, d.block_len(), FieldKind::Density);
        let m = moments(&z, &c, &d);
        assert!(m.mass.iter().all(|&x| x == 0.0) && m.energy == 0.0);
        let f = random_positive(&d, 4);
        let a = moments(&f, &c, &d);
        let b = moments(&f.scaled(3.0), &c, &d);
        assert!((b.energy - 3.0 * a.energy).abs() < 1e-12 * a.energy.abs());
        assert!((b.mass[1] - 3.0 * a.mass[1]).abs() < 1e-12 * a.mass[1]);
    }

    #[test]
    fn production_vanishes_on_common_maxwellians_and_not_on_split() {
        let (c, d) = setup(8, 0.0);
        let m = maxwellian_field(&c, &c.equilibrium(), &d);
        let r = entropy_and_production(&m, &c, &d, Some(LOG_FLOOR)).unwrap();
        assert!(r.production <= 1e-10 * r.production_scale.max(1e-300) || r.production < 1e-20);
        let split = drifted_maxwellians(&c, &d, &[[0.3, 0.0, 0.0], [-0.15, 0.0, 0.0]], &[1.0, 1.0]);
        let r = entropy_and_production(&split, &c, &d, Some(LOG_FLOOR)).unwrap();
        assert!(r.production > 1e-6);
        let f = random_positive(&d, 11);
        let r = entropy_and_production(&f, &c, &d, Some(LOG_FLOOR)).unwrap();
        assert!(r.production >= 0.0);
    }

    #[test]
    fn production_requires_positivity_without_floor() {
        let (c, d) = setup(4, 0.0);
        let mut f = random_positive(&d, 1);
        f.values[5] = 0.0;
        assert!(matches!(entropy_and_production(&f, &c, &d, None), Err(Error::NonPositiveDensity { .. })));
        assert!(entropy_and_production(&f, &c, &d, Some(LOG_FLOOR)).is_ok());
    }

    #[test]
    fn gamma_is_quadratic() {
        let (c, d) = setup(6, 0.0);
        let op = CollisionOperator::new(&c, &d);
        let mut f = random_positive(&d, 5);
        f.kind = FieldKind::Perturbation;
        let g1 = op.gamma_bilinear(&f).unwrap();
        let g3 = op.gamma_bilinear(&f.scaled(-3.0)).unwrap();
        let s = g1.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in 0..g1.len() {
            assert!((g3[k] - 9.0 * g1[k]).abs() < 1e-10 * s);
        }
        let z = op.gamma_bilinear(&f.scaled(0.0)).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
    }
}
