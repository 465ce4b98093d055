//! The invariants command: every structural property of the toolkit measured
//! on the configured mixture and collected into one pass/fail table.

use landau_core::checks::{
    bilinearity_defect, conservation_defects, gradient_exactness, gram_min_eigenvalues, kernel_rayleigh, linear_conservation_defect,
    rayleigh_certificate, staggering_ratio, symmetry_defect, ConservationDefects,
};
use landau_core::collision::{drifted_maxwellians, LOG_FLOOR};
use landau_core::evolution::{conservation_drift, DtPolicy, RelaxationOptions};
use landau_core::io::to_json;
use landau_core::spectral::{restricted_largest, spectral_gap};
use landau_core::{
    composite_check, default_interaction, entropy_and_production, equilibrium_moments, gap_report, gram_matrices, maxwellian_field,
    run_linear_modes, run_relaxation, sampling, CollisionOperator, Discretization, GridSpec, KernelKind, LinearizedAssembler, Metric,
    MixtureConfig, Result, Route, Selector, SpeciesParams,
};
use rand::Rng;

use crate::config::RunConfig;
use crate::output::{check_table, Artifacts, Check};

const GAMMAS: [f64; 4] = [-2.0, -1.0, 0.0, 1.0];
const MASS_RATIOS: [f64; 3] = [1.0, 2.0, 10.0];
const SPECIES_COUNTS: [usize; 3] = [1, 2, 3];

pub fn invariants(cfg: &RunConfig) -> Result<Vec<Check>> {
    let out = Artifacts::new(cfg, "invariants");
    let disc = cfg.discretization()?;
    let mut checks = Vec::new();
    mixture_checks(cfg, &mut checks)?;
    grid_checks(cfg, &disc, &mut checks)?;
    collision_checks(cfg, &disc, &mut checks)?;
    linearized_checks(cfg, &disc, &mut checks)?;
    spectral_checks(cfg, &disc, &mut checks)?;
    evolution_checks(cfg, &disc, &mut checks)?;
    cli_checks(cfg, &mut checks)?;
    out.json("invariants.json", &checks)?;
    let mut text = String::new();
    for l in out.header_lines() {
        text.push_str(&format!("# {l}\n"));
    }
    text.push_str(&check_table(&checks));
    out.raw("invariants.txt", text.as_bytes())?;
    Ok(checks)
}

fn mixture_checks(cfg: &RunConfig, checks: &mut Vec<Check>) -> Result<()> {
    let mix = &cfg.mixture;
    let mut rng = sampling::rng(cfg.seed);
    let mut sets = vec![mix.species.clone()];
    for _ in 0..cfg.invariants.samples {
        let n = rng.random_range(1..=4);
        sets.push((0..n).map(|_| SpeciesParams::new(10f64.powf(rng.random_range(-2.0..2.0)), 1.0)).collect());
    }
    let ok = sets.iter().all(|s| {
        let c = default_interaction(s);
        (0..s.len()).all(|i| (0..s.len()).all(|j| c[i][j] == c[j][i] && c[i][j] > 0.0))
    });
    checks.push(Check::holds("mixture: default interaction symmetric and positive", ok, "exact"));

    let d16 = Discretization::new(mix, GridSpec::with_default_radius(16, mix))?;
    let eq = mix.equilibrium();
    let m = maxwellian_field(mix, &eq, &d16);
    let back = equilibrium_moments(&m, mix, &d16)?;
    let mut err = (back.temperature / eq.temperature - 1.0).abs();
    for (a, b) in back.densities.iter().zip(&eq.densities) {
        err = err.max((a / b - 1.0).abs());
    }
    let u_scale = eq.temperature.sqrt().max(eq.bulk_velocity.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    for k in 0..3 {
        err = err.max((back.bulk_velocity[k] - eq.bulk_velocity[k]).abs() / u_scale);
    }
    checks.push(Check::at_most("mixture: Maxwellian moment round trip at n=16", err, 1e-6));
    let positive = m.values.iter().all(|&v| v > 0.0);
    checks.push(Check::holds("mixture: Maxwellian strictly positive at every node", positive, "> 0"));
    Ok(())
}

fn grid_checks(cfg: &RunConfig, disc: &Discretization, checks: &mut Vec<Check>) -> Result<()> {
    let mix = &cfg.mixture;
    checks.push(Check::at_most("grid: gradient exact on quadratics", gradient_exactness(disc), 1e-12));
    let d8 = Discretization::new(mix, GridSpec { points_per_axis: 8, ..cfg.grid_spec() })?;
    let grams = gram_matrices(&d8, mix);
    let h = grams.h_dense();
    let scale = landau_core::linalg::max_abs(&h);
    let mut asym = 0.0f64;
    for j in 0..h.ncols() {
        for i in 0..j {
            asym = asym.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    checks.push(Check::at_most("grid: H Gram symmetric at n=8", asym / scale, 1e-14));
    let (l2_min, h_min) = gram_min_eigenvalues(&grams)?;
    checks.push(Check::positive("grid: L2 Gram smallest eigenvalue at n=8", l2_min));
    checks.push(Check::positive("grid: H Gram smallest eigenvalue at n=8", h_min));
    let s = [disc, &d8].iter().map(|d| (staggering_ratio(d) - 1.0).abs()).fold(0.0, f64::max);
    checks.push(Check::at_most("grid: min |p| equals (h/2) sqrt 3", s, 1e-12));
    Ok(())
}

fn collision_checks(cfg: &RunConfig, disc: &Discretization, checks: &mut Vec<Check>) -> Result<()> {
    let mix = &cfg.mixture;
    let inv = &cfg.invariants;
    let mut rng = sampling::rng(cfg.seed ^ 1);
    let op = CollisionOperator::new(mix, disc);
    let mut worst = ConservationDefects::default();
    let (mut d_min, mut bilinear) = (f64::INFINITY, 0.0f64);
    for _ in 0..inv.random_fields {
        let f = sampling::random_positive_field(disc, &mut rng);
        worst = worst.max(conservation_defects(&op, &f)?);
        let e = entropy_and_production(&f, mix, disc, Some(LOG_FLOOR))?;
        d_min = d_min.min(e.production / e.production_scale);
        bilinear = bilinear.max(bilinearity_defect(&op, &mut rng)?);
    }
    checks.push(Check::at_most("collision: mass of every Q_ij", worst.pair_mass, 1e-10));
    checks.push(Check::at_least("collision: entropy production D / scale", d_min, -1e-12));
    checks.push(Check::at_most("collision: q_pair bilinear", bilinear, 1e-11));

    // refinement of the momentum and energy defects
    let mut per_n = Vec::new();
    for n in [8, 16] {
        let d = Discretization::new(mix, GridSpec { points_per_axis: n, ..cfg.grid_spec() })?;
        let op = CollisionOperator::new(mix, &d);
        let mut rng = sampling::rng(cfg.seed ^ 2);
        let mut w = ConservationDefects::default();
        for _ in 0..inv.random_fields.min(3) {
            w = w.max(conservation_defects(&op, &sampling::random_positive_field(&d, &mut rng))?);
        }
        per_n.push(w);
    }
    for (name, coarse, fine) in [("momentum", per_n[0].momentum, per_n[1].momentum), ("energy", per_n[0].energy, per_n[1].energy)] {
        checks.push(Check::at_most(format!("collision: total {name} of Q at n=16"), fine, 1e-6));
        let improves = fine * 4.0 <= coarse || fine <= 1e-12;
        checks.push(Check::holds(
            format!("collision: {name} defect improves 4x from n=8 to n=16"),
            improves,
            format!("{coarse:.3e} -> {fine:.3e}, or at roundoff floor 1e-12"),
        ));
    }

    let n = mix.n_species();
    let common = drifted_maxwellians(mix, disc, &vec![[0.1, -0.05, 0.0]; n], &vec![mix.kt; n]);
    let e = entropy_and_production(&common, mix, disc, Some(LOG_FLOOR))?;
    checks.push(Check::at_most("collision: D vanishes on common Maxwellians", e.production / e.production_scale, 1e-10));
    if n > 1 {
        let drifts: Vec<[f64; 3]> = (0..n).map(|i| [if i % 2 == 0 { 0.2 } else { -0.2 }, 0.0, 0.0]).collect();
        let split = drifted_maxwellians(mix, disc, &drifts, &vec![mix.kt; n]);
        let e = entropy_and_production(&split, mix, disc, Some(LOG_FLOOR))?;
        checks.push(Check::at_least("collision: D positive on drift-split Maxwellians", e.production / e.production_scale, 1e-8));
    }
    Ok(())
}

fn bound_constant(mix: &MixtureConfig, disc: &Discretization) -> Result<f64> {
    let neg_l = LinearizedAssembler::new(mix, disc).assemble_neg_l(Selector::Full);
    let h = Metric::h(&gram_matrices(disc, mix))?;
    Ok(restricted_largest(&neg_l, &h, &[], Route::Auto)?.value)
}

fn linearized_checks(cfg: &RunConfig, disc: &Discretization, checks: &mut Vec<Check>) -> Result<()> {
    let mix = &cfg.mixture;
    let asm = LinearizedAssembler::new(mix, disc);
    for sel in [Selector::Full, Selector::Mono, Selector::Bi] {
        let m = asm.assemble_neg_l(sel);
        checks.push(Check::at_most(format!("linearized: {} symmetric", m.tag.name()), symmetry_defect(&m), 1e-12));
    }
    for (sel, kind) in [(Selector::Full, KernelKind::Full), (Selector::Mono, KernelKind::Mono)] {
        let m = asm.assemble_neg_l(sel);
        let k = asm.kernel_basis(kind)?;
        checks.push(Check::at_most(format!("linearized: {} kernel Rayleigh quotients", kind.name()), kernel_rayleigh(&m, &k), 1e-10));
    }
    let neg_l = asm.assemble_neg_l(Selector::Full);
    let mut rng = sampling::rng(cfg.seed ^ 3);
    let defect = linear_conservation_defect(&neg_l, &asm, cfg.invariants.samples, &mut rng);
    checks.push(Check::at_most("linearized: conservation of L f", defect, 1e-8));
    let n = cfg.grid.points_per_axis;
    let c0 = bound_constant(mix, disc)?;
    let fine = Discretization::new(mix, GridSpec { points_per_axis: n + 2, ..cfg.grid_spec() })?;
    let c1 = bound_constant(mix, &fine)?;
    checks.push(Check::at_most(format!("linearized: bound constant C(n={})/C(n={n})", n + 2), c1 / c0, 1.25));
    Ok(())
}

fn spectral_checks(cfg: &RunConfig, disc: &Discretization, checks: &mut Vec<Check>) -> Result<()> {
    let mix = &cfg.mixture;
    let asm = LinearizedAssembler::new(mix, disc);
    let neg_l = asm.assemble_neg_l(Selector::Full);
    let kernel = asm.kernel_basis(KernelKind::Full)?;
    let grams = gram_matrices(disc, mix);
    for (name, metric) in [("L2", Metric::l2(&grams)), ("H", Metric::h(&grams)?)] {
        let gap = spectral_gap(&neg_l, &metric, &kernel, Route::Auto)?.value;
        let mut rng = sampling::rng(cfg.seed ^ 4);
        let cert = rayleigh_certificate(&neg_l, &metric, &kernel, gap, cfg.invariants.certificate_vectors, &mut rng);
        checks.push(Check::at_least(format!("spectral: {name} Rayleigh quotients / gap on complement"), cert, 1.0 - 1e-6));
    }

    let n = cfg.invariants.sweep_points_per_axis;
    let (mut min_gap, mut bad) = (f64::INFINITY, Vec::new());
    for &count in &SPECIES_COUNTS {
        for &ratio in &MASS_RATIOS {
            if count == 1 && ratio != 1.0 {
                continue;
            }
            for &gamma in &GAMMAS {
                let species = (0..count).map(|i| SpeciesParams::new(ratio.powi(i as i32), 1.0)).collect();
                let c = MixtureConfig { kt: mix.kt, ..MixtureConfig::new(species, gamma)? }.resolved()?;
                let d = Discretization::new(&c, GridSpec::with_default_radius(n, &c))?;
                let a = LinearizedAssembler::new(&c, &d);
                let res = a
                    .kernel_basis(KernelKind::Full)
                    .and_then(|k| gap_report(&a.assemble_neg_l(Selector::Full), &gram_matrices(&d, &c), &k, Route::Dense));
                match res {
                    Ok(r) if r.gap_l2 > 0.0 && r.gap_h > 0.0 && r.nullspace_dim == count + 4 => min_gap = min_gap.min(r.gap_l2.min(r.gap_h)),
                    Ok(r) => bad.push(format!("N={count} ratio={ratio} gamma={gamma}: {r:?}")),
                    Err(e) => bad.push(format!("N={count} ratio={ratio} gamma={gamma}: {e}")),
                }
            }
        }
    }
    for b in &bad {
        eprintln!("gap sweep failure: {b}");
    }
    checks.push(Check::holds(
        format!("spectral: gap positive over the parameter sweep at n={n}"),
        bad.is_empty(),
        format!("gap > 0 and nullspace N+4 at every point; smallest gap {min_gap:.3e}"),
    ));

    if mix.n_species() > 1 {
        let c = composite_check(mix, disc, Route::Auto)?;
        checks.push(Check::at_least("spectral: gap_h / composite lower bound", c.gap_h / c.lambda_pred, 1.0 - 1e-3));
    }
    Ok(())
}

fn evolution_checks(cfg: &RunConfig, disc: &Discretization, checks: &mut Vec<Check>) -> Result<()> {
    let mix = &cfg.mixture;
    let n = mix.n_species();
    let drifts = if cfg.relax.drifts.is_empty() {
        (0..n).map(|i| [if i % 2 == 0 { 0.2 } else { -0.2 }, 0.0, 0.0]).collect()
    } else {
        cfg.relax.drifts.clone()
    };
    let f0 = drifted_maxwellians(mix, disc, &drifts, &vec![mix.kt; n]);
    let opts = RelaxationOptions { t_end: cfg.relax.t_end.min(2.0), policy: DtPolicy::LinearlyImplicit { dt: 0.05 }, record_interval: 0.0 };
    let run = run_relaxation(&f0, mix, disc, &opts)?;
    let d = conservation_drift(&run.series, mix);
    checks.push(Check::at_most("evolution: nonlinear mass drift", d.mass, 1e-10));
    checks.push(Check::at_most("evolution: nonlinear momentum drift", d.momentum, 1e-6));
    checks.push(Check::at_most("evolution: nonlinear energy drift", d.energy, 1e-6));
    checks.push(Check::at_most("evolution: entropy increase between samples", d.entropy_increase, 1e-10));

    let asm = LinearizedAssembler::new(mix, disc);
    let masses: Vec<f64> = mix.species.iter().map(|s| s.mass).collect();
    let f = sampling::random_perturbation(disc, &asm.sqrt_m, &masses, mix.kt, 0.0, &mut sampling::rng(cfg.seed ^ 5));
    let report = run_linear_modes(&[[0; 3]], &f, cfg.modes.t_end.min(5.0), cfg.modes.dt_scale, mix, disc)?;
    let m = &report.modes[0];
    let norm = landau_core::linalg::wdot(&f, &f, &disc.stacked_weights()).sqrt();
    checks.push(Check::at_most("evolution: k=0 kernel projection constant", m.kernel_drift / norm, 1e-8));
    checks.push(Check::at_most("evolution: k=0 linear step contractive", m.max_growth, 1e-12));
    Ok(())
}

fn cli_checks(cfg: &RunConfig, checks: &mut Vec<Check>) -> Result<()> {
    let round_trip = RunConfig::parse(&cfg.to_toml()).map(|c| &c == cfg).unwrap_or(false);
    checks.push(Check::holds("cli: resolved config round-trips through TOML", round_trip, "exact"));
    let n = cfg.invariants.sweep_points_per_axis;
    let mix = &cfg.mixture;
    let payload = || -> Result<String> {
        let d = Discretization::new(mix, GridSpec::with_default_radius(n, mix))?;
        let a = LinearizedAssembler::new(mix, &d);
        let r = gap_report(&a.assemble_neg_l(Selector::Full), &gram_matrices(&d, mix), &a.kernel_basis(KernelKind::Full)?, Route::Dense)?;
        Ok(to_json(&r))
    };
    checks.push(Check::holds("cli: gap payload byte-reproducible", payload()? == payload()?, "identical bytes"));
    Ok(())
}
