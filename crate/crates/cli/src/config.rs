//! Run configuration: one TOML file holding the mixture, the grid, a block per
//! command, the seed and the output directory.

use std::path::{Path, PathBuf};

use landau_core::evolution::DtPolicy;
use landau_core::spectral::DEFAULT_SEED;
use landau_core::{Discretization, Error, GridSpec, MixtureConfig, Result, Route};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mixture: MixtureConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub gap: GapConfig,
    #[serde(default)]
    pub relax: RelaxConfig,
    #[serde(default)]
    pub modes: ModesConfig,
    #[serde(default)]
    pub kcompact: KCompactConfig,
    #[serde(default)]
    pub invariants: InvariantsConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub points_per_axis: usize,
    /// Half-width of the heaviest species' box; `6 √(m_max kT)` when absent.
    #[serde(default)]
    pub radius: Option<f64>,
}

impl GridConfig {
    pub fn spec(&self, cfg: &MixtureConfig) -> GridSpec {
        GridSpec::new(self.points_per_axis, self.radius.unwrap_or_else(|| GridSpec::default_radius(cfg)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    #[serde(default = "default_route")]
    pub route: Route,
    /// Also compute the composite constant check (two or more species).
    #[serde(default)]
    pub composite: bool,
}

fn default_route() -> Route {
    Route::Auto
}

impl Default for GapConfig {
    fn default() -> Self {
        Self { route: Route::Auto, composite: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Explicit,
    LinearlyImplicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxConfig {
    pub t_end: f64,
    pub scheme: Scheme,
    /// Step size; for the explicit scheme `0.5/‖−L‖` when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub record_interval: f64,
    /// Per-species drift velocities of the initial Maxwellians; every species
    /// starts at the mixture drift when empty.
    #[serde(default)]
    pub drifts: Vec<[f64; 3]>,
    /// Per-species initial temperatures; the mixture's `kT` when empty.
    #[serde(default)]
    pub temperatures: Vec<f64>,
    /// Relative size of a smooth random perturbation added to the initial data.
    #[serde(default)]
    pub perturbation: f64,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        Self {
            t_end: 15.0,
            scheme: Scheme::LinearlyImplicit,
            dt: Some(0.05),
            record_interval: 0.0,
            drifts: Vec::new(),
            temperatures: Vec::new(),
            perturbation: 0.0,
        }
    }
}

impl RelaxConfig {
    pub fn policy(&self) -> Result<DtPolicy> {
        match self.scheme {
            Scheme::Explicit => Ok(DtPolicy::Explicit { dt: self.dt, min_dt: self.dt.unwrap_or(1.0) * 1e-6 }),
            Scheme::LinearlyImplicit => match self.dt {
                Some(dt) => Ok(DtPolicy::LinearlyImplicit { dt }),
                None => Err(Error::InvalidConfig("relax.dt is required for the linearly implicit scheme".into())),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesConfig {
    /// Wavenumbers along the first torus axis.
    pub wavenumbers: Vec<i32>,
    pub t_end: f64,
    /// `dt · gap_l2`.
    pub dt_scale: f64,
}

impl Default for ModesConfig {
    fn default() -> Self {
        Self { wavenumbers: vec![0, 1, 2, 3], t_end: 40.0, dt_scale: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KCompactConfig {
    pub n_values: Vec<usize>,
}

impl Default for KCompactConfig {
    fn default() -> Self {
        Self { n_values: vec![2, 4, 8, 16] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvariantsConfig {
    /// Random positive fields for the conservation and entropy checks.
    pub random_fields: usize,
    /// Random inputs for sampled defects.
    pub samples: usize,
    /// Random deflated vectors certifying the eigensolves.
    pub certificate_vectors: usize,
    /// Grid of the parameter sweep for gap positivity.
    pub sweep_points_per_axis: usize,
}

impl Default for InvariantsConfig {
    fn default() -> Self {
        Self { random_fields: 5, samples: 20, certificate_vectors: 1000, sweep_points_per_axis: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Command run at every point.
    pub command: String,
    #[serde(default)]
    pub gammas: Vec<f64>,
    /// `m_2/m_1`; further species get successive powers.
    #[serde(default)]
    pub mass_ratios: Vec<f64>,
    #[serde(default)]
    pub species_counts: Vec<usize>,
    #[serde(default)]
    pub points_per_axis: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { command: "gap".into(), gammas: Vec::new(), mass_ratios: Vec::new(), species_counts: Vec::new(), points_per_axis: Vec::new() }
    }
}

/// One point of a sweep: the varied values and the derived configuration.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub label: String,
    pub config: RunConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.resolved()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Fills defaults and validates every block.
    pub fn resolved(mut self) -> Result<Self> {
        self.mixture = self.mixture.resolved()?;
        self.grid_spec().validate()?;
        let n = self.mixture.n_species();
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{what} = {v} must be positive")))
            }
        };
        positive("relax.t_end", self.relax.t_end)?;
        if let Some(dt) = self.relax.dt {
            positive("relax.dt", dt)?;
        }
        if !self.relax.drifts.is_empty() && self.relax.drifts.len() != n {
            return Err(Error::InvalidConfig(format!("relax.drifts has {} entries for {n} species", self.relax.drifts.len())));
        }
        if !self.relax.temperatures.is_empty() && self.relax.temperatures.len() != n {
            return Err(Error::InvalidConfig(format!(
                "relax.temperatures has {} entries for {n} species",
                self.relax.temperatures.len()
            )));
        }
        for &t in &self.relax.temperatures {
            positive("relax.temperatures", t)?;
        }
        if !(self.relax.perturbation >= 0.0 && self.relax.perturbation < 1.0) {
            return Err(Error::InvalidConfig(format!("relax.perturbation = {} must lie in [0, 1)", self.relax.perturbation)));
        }
        self.relax.policy()?;
        positive("modes.t_end", self.modes.t_end)?;
        positive("modes.dt_scale", self.modes.dt_scale)?;
        if self.modes.wavenumbers.is_empty() {
            return Err(Error::InvalidConfig("modes.wavenumbers is empty".into()));
        }
        if self.kcompact.n_values.len() < 2 || self.kcompact.n_values.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig("kcompact.n_values needs at least two positive entries".into()));
        }
        if self.sweep.command == "sweep" || !crate::COMMANDS.contains(&self.sweep.command.as_str()) {
            return Err(Error::InvalidConfig(format!("sweep.command = {:?} is not a runnable command", self.sweep.command)));
        }
        if self.invariants.random_fields == 0 || self.invariants.samples == 0 || self.invariants.certificate_vectors == 0 {
            return Err(Error::InvalidConfig("invariants sample counts must be positive".into()));
        }
        GridSpec::new(self.invariants.sweep_points_per_axis, 1.0).validate()?;
        if self.sweep.species_counts.contains(&0) {
            return Err(Error::InvalidConfig("sweep.species_counts must be positive".into()));
        }
        Ok(self)
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid.spec(&self.mixture)
    }

    pub fn discretization(&self) -> Result<Discretization> {
        Discretization::new(&self.mixture, self.grid_spec())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Cross product of the sweep lists; an empty list keeps the base value.
    pub fn sweep_points(&self) -> Result<Vec<SweepPoint>> {
        let s = &self.sweep;
        let gammas = if s.gammas.is_empty() { vec![self.mixture.gamma] } else { s.gammas.clone() };
        let ratios: Vec<Option<f64>> = if s.mass_ratios.is_empty() { vec![None] } else { s.mass_ratios.iter().map(|&r| Some(r)).collect() };
        let counts: Vec<Option<usize>> =
            if s.species_counts.is_empty() { vec![None] } else { s.species_counts.iter().map(|&c| Some(c)).collect() };
        let grids = if s.points_per_axis.is_empty() { vec![self.grid.points_per_axis] } else { s.points_per_axis.clone() };
        let mut out = Vec::new();
        for &count in &counts {
            for &ratio in &ratios {
                if count == Some(1) && ratio.is_some_and(|r| r != ratios[0].unwrap_or(r)) {
                    continue;
                }
                for &gamma in &gammas {
                    for &n in &grids {
                        let mut c = self.clone();
                        let mut species = c.mixture.species.clone();
                        let count = count.unwrap_or(species.len());
                        let base = species[0];
                        let ratio = ratio.unwrap_or_else(|| if species.len() > 1 { species[1].mass / base.mass } else { 1.0 });
                        species = (0..count)
                            .map(|i| {
                                let mut sp = species.get(i).copied().unwrap_or(base);
                                sp.mass = base.mass * ratio.powi(i as i32);
                                sp
                            })
                            .collect();
                        c.mixture.species = species;
                        c.mixture.gamma = gamma;
                        c.mixture.interaction = Vec::new();
                        c.grid.points_per_axis = n;
                        c.relax.drifts = drift_pattern(&self.relax.drifts, count);
                        c.relax.temperatures = if c.relax.temperatures.len() == count { c.relax.temperatures } else { Vec::new() };
                        let label = format!("n{count}_ratio{ratio}_gamma{gamma}_grid{n}");
                        c.output_dir = self.output_dir.join(&label);
                        out.push(SweepPoint { label, config: c.resolved()? });
                    }
                }
            }
        }
        Ok(out)
    }
}

fn drift_pattern(drifts: &[[f64; 3]], count: usize) -> Vec<[f64; 3]> {
    if drifts.is_empty() {
        return Vec::new();
    }
    (0..count).map(|i| drifts[i % drifts.len()]).collect()
}
