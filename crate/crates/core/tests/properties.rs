use landau_core::checks::{bilinearity_defect, conservation_defects};
use landau_core::evolution::fit_decay_values;
use landau_core::{
    build_grid, default_interaction, discrete_gradient, entropy_and_production, equilibrium_moments, maxwellian_field, sampling, CollisionOperator,
    Discretization, EquilibriumMoments, GridSpec, LinearizedAssembler, MixtureConfig, Selector, SpeciesParams,
};
use proptest::prelude::*;

fn mixture(masses: &[f64], gamma: f64) -> MixtureConfig {
    MixtureConfig::new(masses.iter().map(|&m| SpeciesParams::new(m, 1.0)).collect(), gamma).unwrap()
}

fn grid(cfg: &MixtureConfig, n: usize) -> Discretization {
    Discretization::new(cfg, GridSpec::with_default_radius(n, cfg)).unwrap()
}

fn masses() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.2f64..20.0, 1..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn interaction_is_symmetric_and_positive(m in masses()) {
        let species: Vec<SpeciesParams> = m.iter().map(|&x| SpeciesParams::new(x, 1.0)).collect();
        let c = default_interaction(&species);
        for i in 0..m.len() {
            for j in 0..m.len() {
                prop_assert_eq!(c[i][j], c[j][i]);
                prop_assert!(c[i][j] > 0.0);
            }
        }
    }

    #[test]
    fn gradient_is_exact_on_quadratics(half in 2usize..7, radius in 1.0f64..10.0, coef in prop::array::uniform10(-2.0f64..2.0)) {
        let g = build_grid(GridSpec::new(2 * half, radius)).unwrap();
        let poly = |p: [f64; 3]| {
            let [x, y, z] = p;
            coef[0] + coef[1] * x + coef[2] * y + coef[3] * z + coef[4] * x * x + coef[5] * y * y + coef[6] * z * z
                + coef[7] * x * y + coef[8] * y * z + coef[9] * x * z
        };
        let grad = |p: [f64; 3]| {
            let [x, y, z] = p;
            [
                coef[1] + 2.0 * coef[4] * x + coef[7] * y + coef[9] * z,
                coef[2] + 2.0 * coef[5] * y + coef[7] * x + coef[8] * z,
                coef[3] + 2.0 * coef[6] * z + coef[8] * y + coef[9] * x,
            ]
        };
        let values: Vec<f64> = g.nodes.iter().map(|&p| poly(p)).collect();
        let d = discrete_gradient(&g).apply(&values);
        let scale = 1.0 + coef.iter().map(|c| c.abs()).sum::<f64>() * radius * radius;
        for (p, dp) in g.nodes.iter().zip(&d) {
            let exact = grad(*p);
            for k in 0..3 {
                prop_assert!((dp[k] - exact[k]).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn grid_is_staggered(half in 2usize..10, radius in 0.5f64..20.0) {
        let g = build_grid(GridSpec::new(2 * half, radius)).unwrap();
        let min = g.nodes.iter().map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(f64::INFINITY, f64::min);
        prop_assert!((min - 0.5 * g.spacing * 3f64.sqrt()).abs() <= 1e-12 * radius);
        let total: f64 = g.weights.iter().sum();
        prop_assert!((total - (2.0 * radius).powi(3)).abs() <= 1e-10 * total);
    }

    #[test]
    fn maxwellians_are_positive_and_round_trip(
        m in masses(),
        drift in prop::array::uniform3(-0.3f64..0.3),
        kt in 0.7f64..1.4,
        rho in 0.5f64..2.0,
    ) {
        let mut cfg = mixture(&m, 0.0);
        cfg.kt = kt;
        // drift in thermal speeds of the heaviest species, so the box still spans about 6 widths
        let heaviest = m.iter().cloned().fold(0.0, f64::max);
        let u = drift.map(|d| d * (kt / heaviest).sqrt());
        let disc = grid(&cfg, 16);
        let moments = EquilibriumMoments { densities: vec![rho; m.len()], bulk_velocity: u, temperature: kt };
        let f = maxwellian_field(&cfg, &moments, &disc);
        prop_assert!(f.values.iter().all(|&v| v > 0.0));
        let back = equilibrium_moments(&f, &cfg, &disc).unwrap();
        prop_assert!(((back.temperature - kt) / kt).abs() <= 1e-6);
        for k in 0..3 {
            prop_assert!((back.bulk_velocity[k] - u[k]).abs() <= 1e-6);
        }
        for d in &back.densities {
            prop_assert!(((d - rho) / rho).abs() <= 1e-6);
        }
    }

    #[test]
    fn collision_conserves_and_dissipates(m in masses(), gamma in -2.0f64..=1.0, seed in any::<u64>()) {
        let cfg = mixture(&m, gamma);
        let disc = grid(&cfg, 4);
        let op = CollisionOperator::new(&cfg, &disc);
        let mut rng = sampling::rng(seed);
        let f = sampling::random_positive_field(&disc, &mut rng);
        let d = conservation_defects(&op, &f).unwrap();
        prop_assert!(d.pair_mass <= 1e-12, "pair mass {:e}", d.pair_mass);
        prop_assert!(d.momentum <= 1e-10 && d.energy <= 1e-10, "{:?}", d);
        prop_assert!(bilinearity_defect(&op, &mut rng).unwrap() <= 1e-11);
        let e = entropy_and_production(&f, &cfg, &disc, None).unwrap();
        prop_assert!(e.production >= -1e-12 * e.production_scale.max(1.0));
    }

    #[test]
    fn linearized_forms_are_symmetric(m in masses(), gamma in -2.0f64..=1.0) {
        let cfg = mixture(&m, gamma);
        let disc = grid(&cfg, 4);
        let asm = LinearizedAssembler::new(&cfg, &disc);
        for sel in [Selector::Mono, Selector::Bi, Selector::Full] {
            // the bi-species form of a single species is identically zero
            let a = asm.assemble_neg_l(sel);
            prop_assert!(a.asymmetry() <= 1e-12 * a.max_abs());
        }
    }

    #[test]
    fn decay_fit_recovers_rate(rate in 0.1f64..3.0, amplitude in 1e-3f64..1e3, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = sampling::rng(seed);
        let times: Vec<f64> = (0..200).map(|k| k as f64 * 4.0 / (rate * 200.0)).collect();
        let q: Vec<f64> = times.iter().map(|t| amplitude * (-rate * t).exp() * (1.0 + 1e-3 * (2.0 * rng.random::<f64>() - 1.0))).collect();
        let fit = fit_decay_values(&times, &q).unwrap();
        prop_assert!(((fit.rate - rate) / rate).abs() <= 1e-2, "fitted {} for {}", fit.rate, rate);
        prop_assert!(fit.residual <= 0.05);
    }
}
