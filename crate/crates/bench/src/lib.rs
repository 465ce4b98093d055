//! Fixtures shared by the criterion benches in `benches/`.

use landau_core::{Discretization, GridSpec, MixtureConfig, SpeciesParams};

/// Two species with masses 1 and 2 at the given interaction exponent.
pub fn mixture(gamma: f64) -> MixtureConfig {
    MixtureConfig::new(vec![SpeciesParams::new(1.0, 1.0), SpeciesParams::new(2.0, 1.0)], gamma).expect("valid mixture")
}

pub fn discretization(cfg: &MixtureConfig, n: usize) -> Discretization {
    Discretization::new(cfg, GridSpec::with_default_radius(n, cfg)).expect("valid grid")
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixtures_build() {
        let c = super::mixture(-1.0);
        assert_eq!(super::discretization(&c, 4).dim(), 128);
    }
}
