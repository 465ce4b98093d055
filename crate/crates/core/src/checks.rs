//! Measurements behind the structural properties of the discretization. Each
//! returns a defect or ratio; callers apply tolerances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::collision::CollisionOperator;
use crate::error::Result;
use crate::field::{DistributionField, FieldKind};
use crate::grid::{Discretization, GramMatrices};
use crate::linalg::{dot, wdot};
use crate::linearized::{KernelBasis, LinearizedAssembler, OperatorMatrix};
use crate::mixture::MixtureConfig;
use crate::sampling::{self, SampleRng};
use crate::spectral::{Metric, QuadForm};

/// Conservation defects of one collision evaluation, each relative to the
/// matching absolute moment of `|Q|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservationDefects {
    /// Largest over ordered pairs of `|∫Q_ij| / ∫|Q_ij|`.
    pub pair_mass: f64,
    pub momentum: f64,
    pub energy: f64,
}

impl ConservationDefects {
    pub fn max(self, o: Self) -> Self {
        Self { pair_mass: self.pair_mass.max(o.pair_mass), momentum: self.momentum.max(o.momentum), energy: self.energy.max(o.energy) }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 { num.abs() / den } else { num.abs() }
}

pub fn conservation_defects(op: &CollisionOperator, f: &DistributionField) -> Result<ConservationDefects> {
    let disc = op.disc;
    let n = disc.n_species();
    let pairs = op.q_pairs(f)?;
    let mut pair_mass = 0.0f64;
    let (mut mom, mut mom_abs) = ([0.0; 3], 0.0);
    let (mut en, mut en_abs) = (0.0, 0.0);
    for i in 0..n {
        let grid = &disc.grids[i];
        let m = op.cfg.mass(i);
        for q in &pairs[i] {
            let (mut s, mut a) = (0.0, 0.0);
            for (k, (p, w)) in grid.nodes.iter().zip(&grid.weights).enumerate() {
                let v = w * q[k];
                s += v;
                a += v.abs();
                let p2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
                for d in 0..3 {
                    mom[d] += v * p[d];
                }
                mom_abs += v.abs() * p2.sqrt();
                en += v * p2 / (2.0 * m);
                en_abs += v.abs() * p2 / (2.0 * m);
            }
            pair_mass = pair_mass.max(ratio(s, a));
        }
    }
    let mom_norm = (mom[0] * mom[0] + mom[1] * mom[1] + mom[2] * mom[2]).sqrt();
    Ok(ConservationDefects { pair_mass, momentum: ratio(mom_norm, mom_abs), energy: ratio(en, en_abs) })
}

/// Largest defect of `q_pair(aF + bG, H) = a q_pair(F, H) + b q_pair(G, H)`
/// over species pairs, relative to the largest output entry.
pub fn bilinearity_defect(op: &CollisionOperator, rng: &mut SampleRng) -> Result<f64> {
    let disc = op.disc;
    let f = sampling::random_positive_field(disc, rng);
    let g = sampling::random_positive_field(disc, rng);
    let h = sampling::random_positive_field(disc, rng);
    let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let mut worst = 0.0f64;
    for i in 0..disc.n_species() {
        let mix: Vec<f64> = f.block(i).iter().zip(g.block(i)).map(|(x, y)| a * x + b * y).collect();
        for j in 0..disc.n_species() {
            let lhs = op.q_pair(&mix, h.block(j), i, j)?;
            let qf = op.q_pair(f.block(i), h.block(j), i, j)?;
            let qg = op.q_pair(g.block(i), h.block(j), i, j)?;
            let scale = qf.iter().chain(&qg).fold(0.0f64, |s, v| s.max(v.abs())) * (a.abs() + b.abs());
            for k in 0..lhs.len() {
                worst = worst.max((lhs[k] - a * qf[k] - b * qg[k]).abs() / scale);
            }
        }
    }
    Ok(worst)
}

/// Largest error of the discrete gradient on the ten monomials of degree ≤ 2,
/// relative to the largest analytic gradient value on each grid.
pub fn gradient_exactness(disc: &Discretization) -> f64 {
    let monomials: [[i32; 3]; 10] =
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [2, 0, 0], [0, 2, 0], [0, 0, 2], [1, 1, 0], [1, 0, 1], [0, 1, 1]];
    let mut worst = 0.0f64;
    for (grid, grad) in disc.grids.iter().zip(&disc.gradients) {
        for e in monomials {
            let mono = |p: [f64; 3]| p[0].powi(e[0]) * p[1].powi(e[1]) * p[2].powi(e[2]);
            let exact = |p: [f64; 3], k: usize| {
                if e[k] == 0 {
                    return 0.0;
                }
                let mut d = e;
                d[k] -= 1;
                f64::from(e[k]) * p[0].powi(d[0]) * p[1].powi(d[1]) * p[2].powi(d[2])
            };
            let vals: Vec<f64> = grid.nodes.iter().map(|&p| mono(p)).collect();
            let got = grad.apply(&vals);
            let scale = grid.nodes.iter().flat_map(|&p| (0..3).map(move |k| exact(p, k).abs())).fold(1.0, f64::max);
            for (a, &p) in grid.nodes.iter().enumerate() {
                for k in 0..3 {
                    worst = worst.max((got[a][k] - exact(p, k)).abs() / scale);
                }
            }
        }
    }
    worst
}

/// `min |p| / ((h/2)√3)` over species grids; 1 on a staggered lattice.
pub fn staggering_ratio(disc: &Discretization) -> f64 {
    disc.grids
        .iter()
        .map(|g| {
            let m = g.nodes.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).fold(f64::INFINITY, f64::min);
            m / (0.5 * g.spacing * 3f64.sqrt())
        })
        .fold(f64::INFINITY, f64::min)
}

/// Smallest `(x, A x) / (x, G x)` over random vectors `L²`-orthogonal to the
/// kernel, divided by `gap`. Values ≥ 1 certify the eigensolve.
pub fn rayleigh_certificate(form: &dyn QuadForm, metric: &Metric, kernel: &KernelBasis, gap: f64, samples: usize, rng: &mut SampleRng) -> f64 {
    let n = form.dim();
    let mut y = vec![0.0; n];
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let x = kernel.complement(&sampling::gaussian_vector(n, rng));
        form.apply(&x, &mut y);
        worst = worst.min(dot(&x, &y) / metric.quad(&x) / gap);
    }
    worst
}

/// Largest `|(v, −L f)| / (‖v‖ ‖−L f‖)` over the collision invariants `v` and
/// random `f`, with `‖·‖` the Euclidean norm of the form coefficients.
pub fn linear_conservation_defect(neg_l: &OperatorMatrix, asm: &LinearizedAssembler, samples: usize, rng: &mut SampleRng) -> f64 {
    let invariants = asm.kernel_spanning_set(crate::linearized::KernelKind::Full);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let f = sampling::gaussian_vector(neg_l.dim(), rng);
        let y = neg_l.apply(&f);
        let ny = dot(&y, &y).sqrt();
        for v in &invariants {
            worst = worst.max(dot(v, &y).abs() / (dot(v, v).sqrt() * ny));
        }
    }
    worst
}

/// Largest Rayleigh quotient `(v, A v) / (v, W v)` over the basis vectors,
/// relative to the largest diagonal ratio of `A`.
pub fn kernel_rayleigh(form: &OperatorMatrix, basis: &KernelBasis) -> f64 {
    let scale = (0..form.dim()).map(|k| form.matrix[(k, k)] / basis.weights[k]).fold(0.0, f64::max);
    basis
        .vectors
        .iter()
        .map(|v| form.quad(v) / wdot(v, v, &basis.weights) / scale)
        .fold(0.0, f64::max)
}

/// `‖A − Aᵀ‖_max / ‖A‖_max`.
pub fn symmetry_defect(a: &OperatorMatrix) -> f64 {
    a.asymmetry() / a.max_abs()
}

/// Smallest eigenvalue of the Gram matrices (dense; small grids only).
pub fn gram_min_eigenvalues(grams: &GramMatrices) -> Result<(f64, f64)> {
    let l2 = grams.l2.iter().copied().fold(f64::INFINITY, f64::min);
    let h = crate::linalg::sym_eigenvalues(&grams.h_dense())?;
    Ok((l2, h.first().copied().unwrap_or(f64::NAN)))
}

/// `F (1 + ε P / max|P/√M|)` with `P` a smooth random perturbation from
/// [`sampling::random_perturbation`] around the configured Maxwellian `M`.
/// The relative change of every nodal value is at most `ε`.
pub fn perturb(base: &DistributionField, cfg: &MixtureConfig, disc: &Discretization, eps: f64, rng: &mut SampleRng) -> DistributionField {
    let asm = LinearizedAssembler::new(cfg, disc);
    let masses: Vec<f64> = cfg.species.iter().map(|s| s.mass).collect();
    let p = sampling::random_perturbation(disc, &asm.sqrt_m, &masses, cfg.kt, 0.0, rng);
    let rel: Vec<f64> = p.iter().zip(&asm.sqrt_m).map(|(p, s)| p / s).collect();
    let scale = rel.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let v = base.values.iter().zip(&rel).map(|(f, r)| f * (1.0 + eps * r / scale)).collect();
    DistributionField::new(v, disc.n_species(), FieldKind::Density)
}

/// [`perturb`] applied to the configured Maxwellian.
pub fn perturbed_maxwellian(cfg: &MixtureConfig, disc: &Discretization, eps: f64, rng: &mut SampleRng) -> DistributionField {
    perturb(&crate::mixture::maxwellian_field(cfg, &cfg.equilibrium(), disc), cfg, disc, eps, rng)
}
