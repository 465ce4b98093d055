//! Seeded random fields used by the checks and sample-based constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::field::{DistributionField, FieldKind};
use crate::grid::Discretization;

pub type SampleRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth positive density: per species a sum of three Gaussian bumps with
/// random centres (within 20% of the box), widths and amplitudes.
pub fn random_positive_field(disc: &Discretization, rng: &mut SampleRng) -> DistributionField {
    let mut v = Vec::with_capacity(disc.dim());
    for grid in &disc.grids {
        let r = grid.radius;
        let bumps: Vec<([f64; 3], f64, f64)> = (0..3)
            .map(|_| {
                let c = [
                    rng.random_range(-0.2..0.2) * r,
                    rng.random_range(-0.2..0.2) * r,
                    rng.random_range(-0.2..0.2) * r,
                ];
                (c, rng.random_range(0.12..0.22) * r, rng.random_range(0.3..1.0))
            })
            .collect();
        v.extend(grid.nodes.iter().map(|p| {
            bumps
                .iter()
                .map(|(c, s, a)| {
                    let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                    a * (-d2 / (2.0 * s * s)).exp()
                })
                .sum::<f64>()
        }));
    }
    DistributionField::new(v, disc.n_species(), FieldKind::Density)
}

/// Perturbation `f_i = √M_i · P_i(p)` with a random polynomial `P_i` of
/// degree ≤ 4 in `p/√(m_i kT)` plus nodal noise of relative size `noise`.
pub fn random_perturbation(disc: &Discretization, sqrt_m: &[f64], masses: &[f64], kt: f64, noise: f64, rng: &mut SampleRng) -> Vec<f64> {
    let g = disc.block_len();
    let mut out = vec![0.0; disc.dim()];
    for i in 0..disc.n_species() {
        let s = (masses[i] * kt).sqrt();
        let c: Vec<f64> = (0..35).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for (a, p) in disc.grids[i].nodes.iter().enumerate() {
            let x = [p[0] / s, p[1] / s, p[2] / s];
            let mut val = 0.0;
            let mut idx = 0;
            for e0 in 0..=4usize {
                for e1 in 0..=(4 - e0) {
                    for e2 in 0..=(4 - e0 - e1) {
                        val += c[idx] * x[0].powi(e0 as i32) * x[1].powi(e1 as i32) * x[2].powi(e2 as i32)
                            / (1.0 + (e0 + e1 + e2) as f64);
                        idx += 1;
                    }
                }
            }
            let eta: f64 = rng.sample(StandardNormal);
            out[i * g + a] = sqrt_m[i * g + a] * (val + noise * eta);
        }
    }
    out
}

/// Independent standard normal entries.
pub fn gaussian_vector(n: usize, rng: &mut SampleRng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}
