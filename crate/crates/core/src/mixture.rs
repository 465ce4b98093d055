//! Species and mixture parameters, Maxwellian fields and equilibrium moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DistributionField, FieldKind};
use crate::grid::Discretization;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesParams {
    pub mass: f64,
    pub density: f64,
}

impl SpeciesParams {
    pub fn new(mass: f64, density: f64) -> Self {
        Self { mass, density }
    }
}

fn default_kt() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub species: Vec<SpeciesParams>,
    pub gamma: f64,
    /// `C^{(ij)}`; an empty matrix in a config file means the reduced-mass default.
    #[serde(default)]
    pub interaction: Vec<Vec<f64>>,
    #[serde(default = "default_kt")]
    pub kt: f64,
    #[serde(default)]
    pub drift: [f64; 3],
}

impl MixtureConfig {
    /// Mixture with the reduced-mass interaction, `kT = 1` and no drift.
    pub fn new(species: Vec<SpeciesParams>, gamma: f64) -> Result<Self> {
        let interaction = default_interaction(&species);
        validate_config(Self { species, gamma, interaction, kt: 1.0, drift: [0.0; 3] })
    }

    /// Fills an empty interaction matrix with the default and validates.
    pub fn resolved(mut self) -> Result<Self> {
        if self.interaction.is_empty() && !self.species.is_empty() {
            self.interaction = default_interaction(&self.species);
        }
        validate_config(self)
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.species[i].mass
    }

    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.interaction[i][j]
    }

    /// The equilibrium this configuration describes: `(ρ_i, u, kT)`.
    pub fn equilibrium(&self) -> EquilibriumMoments {
        EquilibriumMoments {
            densities: self.species.iter().map(|s| s.density).collect(),
            bulk_velocity: self.drift,
            temperature: self.kt,
        }
    }
}

fn positive(what: String, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveParameter { what, value })
    }
}

pub fn validate_config(cfg: MixtureConfig) -> Result<MixtureConfig> {
    let n = cfg.species.len();
    if n == 0 {
        return Err(Error::InvalidConfig("mixture has no species".into()));
    }
    if !(-2.0..=1.0).contains(&cfg.gamma) || !cfg.gamma.is_finite() {
        return Err(Error::GammaOutOfRange(cfg.gamma));
    }
    for (i, s) in cfg.species.iter().enumerate() {
        positive(format!("mass of species {i}"), s.mass)?;
        positive(format!("density of species {i}"), s.density)?;
    }
    positive("kT".into(), cfg.kt)?;
    if cfg.drift.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("drift must be finite".into()));
    }
    if cfg.interaction.len() != n || cfg.interaction.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidConfig(format!("interaction must be {n}×{n}")));
    }
    for i in 0..n {
        for j in 0..n {
            positive(format!("interaction C[{i}][{j}]"), cfg.interaction[i][j])?;
            let (a, b) = (cfg.interaction[i][j], cfg.interaction[j][i]);
            if a != b {
                return Err(Error::NonSymmetricInteraction { i, j, cij: a, cji: b });
            }
        }
    }
    Ok(cfg)
}

/// Reduced masses `m_i m_j / (m_i + m_j)`.
pub fn default_interaction(species: &[SpeciesParams]) -> Vec<Vec<f64>> {
    species
        .iter()
        .map(|a| species.iter().map(|b| a.mass * b.mass / (a.mass + b.mass)).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumMoments {
    pub densities: Vec<f64>,
    pub bulk_velocity: [f64; 3],
    pub temperature: f64,
}

/// `M(p) = ρ/(2π m kT)^{3/2} exp(−|p − m u|²/(2 m kT))`.
pub fn maxwellian(p: [f64; 3], mass: f64, density: f64, u: [f64; 3], kt: f64) -> f64 {
    let d2: f64 = (0..3).map(|k| (p[k] - mass * u[k]).powi(2)).sum();
    density / (2.0 * std::f64::consts::PI * mass * kt).powf(1.5) * (-d2 / (2.0 * mass * kt)).exp()
}

pub fn maxwellian_field(cfg: &MixtureConfig, moments: &EquilibriumMoments, disc: &Discretization) -> DistributionField {
    let mut values = Vec::with_capacity(disc.dim());
    for (i, grid) in disc.grids.iter().enumerate() {
        let m = cfg.mass(i);
        let rho = moments.densities[i];
        values.extend(grid.nodes.iter().map(|&p| maxwellian(p, m, rho, moments.bulk_velocity, moments.temperature)));
    }
    DistributionField::new(values, disc.n_species(), FieldKind::Density)
}

pub fn equilibrium_moments(f: &DistributionField, cfg: &MixtureConfig, disc: &Discretization) -> Result<EquilibriumMoments> {
    let n = cfg.n_species();
    let mut densities = vec![0.0; n];
    let mut mom = [0.0; 3];
    let mut mass_total = 0.0;
    for i in 0..n {
        let grid = &disc.grids[i];
        let block = f.block(i);
        let rho: f64 = block.iter().zip(&grid.weights).map(|(v, w)| v * w).sum();
        if !(rho > 0.0) {
            return Err(Error::ZeroMass { species: i });
        }
        densities[i] = rho;
        mass_total += rho * cfg.mass(i);
        for (a, p) in grid.nodes.iter().enumerate() {
            for k in 0..3 {
                mom[k] += grid.weights[a] * p[k] * block[a];
            }
        }
    }
    let u = [mom[0] / mass_total, mom[1] / mass_total, mom[2] / mass_total];
    let mut e = 0.0;
    for i in 0..n {
        let grid = &disc.grids[i];
        let m = cfg.mass(i);
        let block = f.block(i);
        for (a, p) in grid.nodes.iter().enumerate() {
            let d2: f64 = (0..3).map(|k| (p[k] - m * u[k]).powi(2)).sum();
            e += grid.weights[a] * d2 / (3.0 * m) * block[a];
        }
    }
    let t = e / densities.iter().sum::<f64>();
    Ok(EquilibriumMoments { densities, bulk_velocity: u, temperature: t })
}
