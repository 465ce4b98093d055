//! Truncated staggered momentum grids, the quadratic-exact discrete gradient,
//! and the L² / ℋ Gram matrices.
//!
//! Every species carries its own lattice: the base box of half-width `R`
//! is scaled by `√(m_i / m_max)` so that each Maxwellian is resolved by the
//! same number of nodes per thermal width. With equal masses all species
//! share the base lattice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BandCholesky, SymSparse};
use crate::mixture::MixtureConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_axis: usize,
    /// Box half-width for the heaviest species, in momentum units.
    pub radius: f64,
}

impl GridSpec {
    pub fn new(points_per_axis: usize, radius: f64) -> Self {
        Self { points_per_axis, radius }
    }

    /// `R = 6 · max_i √(m_i kT)`.
    pub fn default_radius(cfg: &MixtureConfig) -> f64 {
        let m = cfg.species.iter().map(|s| s.mass).fold(0.0, f64::max);
        6.0 * (m * cfg.kt).sqrt()
    }

    pub fn with_default_radius(points_per_axis: usize, cfg: &MixtureConfig) -> Self {
        Self::new(points_per_axis, Self::default_radius(cfg))
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_axis < 4 {
            return Err(Error::InvalidGrid(format!("points_per_axis = {} < 4", self.points_per_axis)));
        }
        if self.points_per_axis % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points_per_axis = {} is odd; the staggered lattice would contain p = 0",
                self.points_per_axis
            )));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidGrid(format!("radius = {} must be positive", self.radius)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct VelocityGrid {
    pub n: usize,
    pub radius: f64,
    pub spacing: f64,
    pub nodes: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl VelocityGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Coordinate of the 1-D index `k`.
    pub fn coord(&self, k: usize) -> f64 {
        -self.radius + (k as f64 + 0.5) * self.spacing
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        integrate(self, values)
    }
}

/// Staggered lattice `p = −R + (a + ½)h`, `h = 2R/n`, midpoint weights `h³`.
pub fn build_grid(spec: GridSpec) -> Result<VelocityGrid> {
    spec.validate()?;
    let n = spec.points_per_axis;
    let h = 2.0 * spec.radius / n as f64;
    let c = |k: usize| -spec.radius + (k as f64 + 0.5) * h;
    let mut nodes = Vec::with_capacity(n * n * n);
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                nodes.push([c(ix), c(iy), c(iz)]);
            }
        }
    }
    let weights = vec![h * h * h; nodes.len()];
    Ok(VelocityGrid { n, radius: spec.radius, spacing: h, nodes, weights })
}

pub fn integrate(grid: &VelocityGrid, values: &[f64]) -> f64 {
    values.iter().zip(&grid.weights).map(|(v, w)| v * w).sum()
}

/// Three-point one-sided differences biased toward the origin: backward at
/// nodes with positive coordinate, forward at negative ones. Each stencil is
/// exact on quadratics, the operator's kernel is the constants only (no
/// odd-even decoupling), and the stencil never reaches outward into the
/// Gaussian tail.
#[derive(Clone, Debug)]
pub struct GradientOperator {
    pub n: usize,
    pub spacing: f64,
    /// Per 1-D index: `(1-D index, coefficient)` triples.
    stencil: Vec<[(usize, f64); 3]>,
}

impl GradientOperator {
    pub fn new(grid: &VelocityGrid) -> Self {
        let n = grid.n;
        let h = grid.spacing;
        let stencil = (0..n)
            .map(|k| {
                if grid.coord(k) > 0.0 {
                    [(k, 1.5 / h), (k - 1, -2.0 / h), (k - 2, 0.5 / h)]
                } else {
                    [(k, -1.5 / h), (k + 1, 2.0 / h), (k + 2, -0.5 / h)]
                }
            })
            .collect();
        Self { n, spacing: h, stencil }
    }

    /// Node indices and coefficients of `(D_axis g)(a)`.
    #[inline]
    pub fn node_stencil(&self, a: usize, axis: usize) -> [(usize, f64); 3] {
        let n = self.n;
        let (ix, iy, iz) = (a / (n * n), (a / n) % n, a % n);
        let (k, stride) = match axis {
            0 => (ix, n * n),
            1 => (iy, n),
            _ => (iz, 1),
        };
        let base = a - k * stride;
        let s = &self.stencil[k];
        [
            (base + s[0].0 * stride, s[0].1),
            (base + s[1].0 * stride, s[1].1),
            (base + s[2].0 * stride, s[2].1),
        ]
    }

    pub fn apply(&self, g: &[f64]) -> Vec<[f64; 3]> {
        (0..g.len())
            .map(|a| {
                let mut out = [0.0; 3];
                for (axis, o) in out.iter_mut().enumerate() {
                    *o = self.node_stencil(a, axis).iter().map(|&(b, c)| c * g[b]).sum();
                }
                out
            })
            .collect()
    }

    /// `Σ_axis D_axisᵀ flux_axis`.
    pub fn apply_transpose(&self, flux: &[[f64; 3]]) -> Vec<f64> {
        let mut out = vec![0.0; flux.len()];
        for (a, f) in flux.iter().enumerate() {
            for (axis, fa) in f.iter().enumerate() {
                for (b, c) in self.node_stencil(a, axis) {
                    out[b] += c * fa;
                }
            }
        }
        out
    }

    /// Dense `n³ × n³` matrix of one axis (test helper).
    pub fn axis_matrix(&self, axis: usize) -> Vec<Vec<f64>> {
        let g = self.n * self.n * self.n;
        let mut m = vec![vec![0.0; g]; g];
        for (a, row) in m.iter_mut().enumerate() {
            for (b, c) in self.node_stencil(a, axis) {
                row[b] += c;
            }
        }
        m
    }
}

pub fn discrete_gradient(grid: &VelocityGrid) -> GradientOperator {
    GradientOperator::new(grid)
}

/// Per-species grids and gradients for a mixture.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub spec: GridSpec,
    pub grids: Vec<VelocityGrid>,
    pub gradients: Vec<GradientOperator>,
}

impl Discretization {
    pub fn new(cfg: &MixtureConfig, spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let m_max = cfg.species.iter().map(|s| s.mass).fold(0.0, f64::max);
        let mut grids = Vec::new();
        let mut gradients = Vec::new();
        for s in &cfg.species {
            let g = build_grid(GridSpec::new(spec.points_per_axis, spec.radius * (s.mass / m_max).sqrt()))?;
            gradients.push(GradientOperator::new(&g));
            grids.push(g);
        }
        Ok(Self { spec, grids, gradients })
    }

    pub fn n_species(&self) -> usize {
        self.grids.len()
    }

    /// Nodes per species block.
    pub fn block_len(&self) -> usize {
        self.grids[0].len()
    }

    /// Stacked dimension `N·G`.
    pub fn dim(&self) -> usize {
        self.n_species() * self.block_len()
    }

    pub fn offset(&self, species: usize) -> usize {
        species * self.block_len()
    }

    /// Stacked diagonal of quadrature weights.
    pub fn stacked_weights(&self) -> Vec<f64> {
        self.grids.iter().flat_map(|g| g.weights.iter().copied()).collect()
    }
}

/// L² weights and the ℋ-norm Gram blocks.
#[derive(Clone, Debug)]
pub struct GramMatrices {
    pub l2: Vec<f64>,
    pub h_blocks: Vec<SymSparse>,
    block: usize,
}

impl GramMatrices {
    pub fn dim(&self) -> usize {
        self.l2.len()
    }

    pub fn block_len(&self) -> usize {
        self.block
    }

    pub fn h_matvec(&self, x: &[f64], y: &mut [f64]) {
        let g = self.block;
        for (i, b) in self.h_blocks.iter().enumerate() {
            b.matvec(&x[i * g..(i + 1) * g], &mut y[i * g..(i + 1) * g]);
        }
    }

    pub fn h_quad(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.h_matvec(x, &mut y);
        crate::linalg::dot(x, &y)
    }

    pub fn l2_quad(&self, x: &[f64]) -> f64 {
        crate::linalg::wdot(x, x, &self.l2)
    }

    pub fn h_dense(&self) -> faer::Mat<f64> {
        let n = self.dim();
        let g = self.block;
        let mut m = faer::Mat::zeros(n, n);
        for (s, b) in self.h_blocks.iter().enumerate() {
            for i in 0..g {
                for k in b.row_ptr[i]..b.row_ptr[i + 1] {
                    m[(s * g + i, s * g + b.cols[k])] = b.vals[k];
                }
            }
        }
        m
    }

    pub fn h_cholesky(&self) -> Result<Vec<BandCholesky>> {
        self.h_blocks.iter().map(BandCholesky::factor).collect()
    }
}

/// Node-wise 3×3 weight `⟨p⟩^γ P + ⟨p⟩^{γ+2} (I − P)`, `P = p⊗p/|p|²`.
pub fn h_weight_tensor(p: [f64; 3], gamma: f64) -> [[f64; 3]; 3] {
    let p2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    let jp = (1.0 + p2).sqrt();
    let wp = jp.powf(gamma);
    let wo = jp.powf(gamma + 2.0);
    let mut t = [[0.0; 3]; 3];
    for k in 0..3 {
        for l in 0..3 {
            let proj = p[k] * p[l] / p2;
            t[k][l] = wp * proj + wo * ((if k == l { 1.0 } else { 0.0 }) - proj);
        }
    }
    t
}

pub fn gram_matrices(disc: &Discretization, cfg: &MixtureConfig) -> GramMatrices {
    let gamma = cfg.gamma;
    let mut h_blocks = Vec::new();
    for (grid, grad) in disc.grids.iter().zip(&disc.gradients) {
        let g = grid.len();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); g];
        for a in 0..g {
            let p = grid.nodes[a];
            let w = grid.weights[a];
            let t = h_weight_tensor(p, gamma);
            let st: [[(usize, f64); 3]; 3] =
                [grad.node_stencil(a, 0), grad.node_stencil(a, 1), grad.node_stencil(a, 2)];
            for k in 0..3 {
                for l in 0..3 {
                    let tk = w * t[k][l];
                    for &(r, cr) in &st[k] {
                        for &(c, cc) in &st[l] {
                            rows[r].push((c, tk * cr * cc));
                        }
                    }
                }
            }
            let jp2 = 1.0 + p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
            rows[a].push((a, w * jp2.powf(0.5 * (gamma + 2.0))));
        }
        h_blocks.push(SymSparse::from_rows(rows));
    }
    GramMatrices { l2: disc.stacked_weights(), h_blocks, block: disc.block_len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{MixtureConfig, SpeciesParams};

    fn grid(n: usize, r: f64) -> VelocityGrid {
        build_grid(GridSpec::new(n, r)).unwrap()
    }

    #[test]
    fn staggered_nodes_n4() {
        let g = grid(4, 2.0);
        assert_eq!(g.spacing, 1.0);
        let xs: Vec<f64> = (0..4).map(|k| g.coord(k)).collect();
        assert_eq!(xs, vec![-1.5, -0.5, 0.5, 1.5]);
    }

    #[test]
    fn no_node_at_origin_and_min_radius() {
        for &(n, r) in &[(4, 2.0), (8, 6.0), (12, 3.3)] {
            let g = grid(n, r);
            let min = g.nodes.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).fold(f64::MAX, f64::min);
            assert!((min - 0.5 * g.spacing * 3f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_sum_to_box_volume() {
        let g = grid(10, 3.0);
        assert!((integrate(&g, &vec![1.0; g.len()]) - 216.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(build_grid(GridSpec::new(3, 1.0)).is_err());
        assert!(build_grid(GridSpec::new(5, 1.0)).is_err());
        assert!(build_grid(GridSpec::new(8, 0.0)).is_err());
    }

    #[test]
    fn gaussian_integral_matches_closed_form() {
        let g = grid(16, 6.0);
        let v: Vec<f64> = g
            .nodes
            .iter()
            .map(|p| (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / 2.0).exp() / (2.0 * std::f64::consts::PI).powf(1.5))
            .collect();
        assert!((integrate(&g, &v) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn odd_integrand_vanishes() {
        let g = grid(8, 4.0);
        let v: Vec<f64> = g.nodes.iter().map(|p| p[0] * (1.0 + p[1] * p[1])).collect();
        assert!(integrate(&g, &v).abs() < 1e-12);
    }

    #[test]
    fn gradient_exact_on_quadratics() {
        let g = grid(6, 2.7);
        let d = GradientOperator::new(&g);
        let monos: Vec<Box<dyn Fn([f64; 3]) -> (f64, [f64; 3])>> = vec![
            Box::new(|_| (1.0, [0.0; 3])),
            Box::new(|p| (p[0], [1.0, 0.0, 0.0])),
            Box::new(|p| (p[1], [0.0, 1.0, 0.0])),
            Box::new(|p| (p[2], [0.0, 0.0, 1.0])),
            Box::new(|p| (p[0] * p[0], [2.0 * p[0], 0.0, 0.0])),
            Box::new(|p| (p[1] * p[1], [0.0, 2.0 * p[1], 0.0])),
            Box::new(|p| (p[2] * p[2], [0.0, 0.0, 2.0 * p[2]])),
            Box::new(|p| (p[0] * p[1], [p[1], p[0], 0.0])),
            Box::new(|p| (p[0] * p[2], [p[2], 0.0, p[0]])),
            Box::new(|p| (p[1] * p[2], [0.0, p[2], p[1]])),
        ];
        for f in &monos {
            let vals: Vec<f64> = g.nodes.iter().map(|&p| f(p).0).collect();
            let dg = d.apply(&vals);
            for (a, &p) in g.nodes.iter().enumerate() {
                let exact = f(p).1;
                for k in 0..3 {
                    assert!((dg[a][k] - exact[k]).abs() < 1e-12, "node {a} axis {k}");
                }
            }
        }
    }

    #[test]
    fn gradient_kernel_is_constants() {
        // 1-D restriction: rank n − 1.
        for n in [4usize, 6, 8, 12] {
            let g = grid(n, 3.0);
            let d = GradientOperator::new(&g);
            let mut m = faer::Mat::<f64>::zeros(n, n);
            for k in 0..n {
                for &(j, c) in &d.stencil[k] {
                    m[(k, j)] += c;
                }
            }
            let mtm = m.transpose() * &m;
            let ev = crate::linalg::sym_eigenvalues(&mtm).unwrap();
            assert!(ev[0].abs() < 1e-10);
            assert!(ev[1] > 1e-3, "n = {n}: second singular value {}", ev[1]);
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let g = grid(6, 2.0);
        let d = GradientOperator::new(&g);
        let x: Vec<f64> = (0..g.len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let flux: Vec<[f64; 3]> = (0..g.len()).map(|i| [(i % 3) as f64, (i % 5) as f64 - 2.0, ((i * 7) % 4) as f64]).collect();
        let dx = d.apply(&x);
        let lhs: f64 = dx.iter().zip(&flux).map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).sum();
        let dtf = d.apply_transpose(&flux);
        let rhs: f64 = x.iter().zip(&dtf).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    fn cfg(gamma: f64) -> MixtureConfig {
        MixtureConfig::new(vec![SpeciesParams::new(1.0, 1.0), SpeciesParams::new(2.0, 1.0)], gamma).unwrap()
    }

    #[test]
    fn species_grids_scale_with_mass() {
        let c = cfg(0.0);
        let d = Discretization::new(&c, GridSpec::with_default_radius(8, &c)).unwrap();
        assert!((d.grids[1].radius - 6.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((d.grids[0].radius - 6.0).abs() < 1e-12);
    }

    #[test]
    fn h_norm_zero_gradient_term() {
        let c = MixtureConfig::new(vec![SpeciesParams::new(1.0, 1.0)], 0.0).unwrap();
        let d = Discretization::new(&c, GridSpec::new(6, 3.0)).unwrap();
        let gm = gram_matrices(&d, &c);
        let f = vec![1.0; d.dim()];
        let expect: f64 = d.grids[0].nodes.iter().zip(&d.grids[0].weights).map(|(p, w)| w * (1.0 + p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).sum();
        assert!((gm.h_quad(&f) - expect).abs() < 1e-10 * expect);
        assert_eq!(gm.h_quad(&vec![0.0; d.dim()]), 0.0);
    }

    #[test]
    fn gram_matrices_spd_and_h_dominates_l2() {
        for gamma in [-2.0, 0.0, 1.0] {
            let c = cfg(gamma);
            let d = Discretization::new(&c, GridSpec::new(8, 5.0)).unwrap();
            let gm = gram_matrices(&d, &c);
            let h = gm.h_dense();
            let mut asym: f64 = 0.0;
            for i in 0..h.nrows() {
                for j in 0..h.ncols() {
                    asym = asym.max((h[(i, j)] - h[(j, i)]).abs());
                }
            }
            assert!(asym < 1e-12 * crate::linalg::max_abs(&h));
            let mut hw = h.clone();
            for i in 0..hw.nrows() {
                hw[(i, i)] -= gm.l2[i];
            }
            let ev = crate::linalg::sym_eigenvalues(&h).unwrap();
            assert!(ev[0] > 0.0);
            let ev2 = crate::linalg::sym_eigenvalues(&hw).unwrap();
            assert!(ev2[0] > -1e-10 * ev2[ev2.len() - 1]);
        }
    }
}
