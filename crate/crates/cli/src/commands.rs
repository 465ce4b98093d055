//! The gap, relax, modes and kcompact commands.

use landau_core::checks::perturb;
use landau_core::collision::drifted_maxwellians;
use landau_core::evolution::{conservation_drift, with_equilibrium, ConservationDrift, LinearModesReport, RelaxationOptions};
use landau_core::io::{csv_table, matrix_market};
use landau_core::spectral::spectral_gap;
use landau_core::{
    composite_check, gap_report, gram_matrices, k_compactness_decay, run_linear_modes, run_relaxation, sampling, CompositeReport, DecayTable,
    EquilibriumMoments, GapReport, KernelKind, LinearizedAssembler, Metric, Result, Route, Selector,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{Artifacts, Check};

#[derive(Serialize)]
struct GapArtifact {
    report: GapReport,
    expected_nullspace_dim: usize,
    composite: Option<CompositeReport>,
    exported_matrices: Vec<String>,
}

pub fn gap(cfg: &RunConfig, export_matrices: bool) -> Result<Vec<Check>> {
    let out = Artifacts::new(cfg, "gap");
    let disc = cfg.discretization()?;
    let mix = &cfg.mixture;
    let asm = LinearizedAssembler::new(mix, &disc);
    let neg_l = asm.assemble_neg_l(Selector::Full);
    let kernel = asm.kernel_basis(KernelKind::Full)?;
    let grams = gram_matrices(&disc, mix);
    let report = gap_report(&neg_l, &grams, &kernel, cfg.gap.route)?;
    let composite = if cfg.gap.composite && mix.n_species() > 1 { Some(composite_check(mix, &disc, cfg.gap.route)?) } else { None };

    let mut exported = Vec::new();
    if export_matrices {
        let spec = cfg.grid_spec();
        let mut mats = vec![neg_l];
        mats.push(asm.assemble_neg_l(Selector::Mono));
        mats.push(asm.assemble_neg_l(Selector::Bi));
        let (k, lambda) = asm.assemble_k_lambda();
        mats.push(lambda);
        mats.push(k);
        for m in &mats {
            let comments = vec![
                format!("config_sha256: {}", out.config_sha256),
                format!("selector: {}", m.tag.name()),
                format!("grid: points_per_axis={} radius={}", spec.points_per_axis, spec.radius),
                format!("species: {}", mix.n_species()),
            ];
            let name = format!("matrices/{}.mtx", m.tag.name());
            out.raw(&name, matrix_market(m, &comments).as_bytes())?;
            exported.push(name);
        }
    }

    let expected = mix.n_species() + 4;
    let mut checks = vec![
        Check::positive("gap_l2 positive", report.gap_l2),
        Check::positive("gap_h positive", report.gap_h),
        Check::equals("nullspace_dim", report.nullspace_dim, expected),
    ];
    if let Some(c) = &composite {
        checks.push(Check::at_least("composite gap_h / lambda_pred", c.gap_h / c.lambda_pred, 1.0 - 1e-3));
    }
    out.json("gap_report.json", &GapArtifact { report, expected_nullspace_dim: expected, composite, exported_matrices: exported })?;
    Ok(checks)
}

#[derive(Serialize)]
struct RelaxArtifact {
    fit: Option<landau_core::DecayFit>,
    fit_error: Option<String>,
    /// Gap of the operator linearized at the relaxation target.
    gap_l2: f64,
    rate_over_gap: Option<f64>,
    equilibrium: EquilibriumMoments,
    final_relative_error: f64,
    clipped_mass: f64,
    clip_accepted: bool,
    steps: usize,
    final_dt: f64,
    drift: ConservationDrift,
}

pub fn relax(cfg: &RunConfig) -> Result<Vec<Check>> {
    let out = Artifacts::new(cfg, "relax");
    let disc = cfg.discretization()?;
    let mix = &cfg.mixture;
    let n = mix.n_species();
    let r = &cfg.relax;
    let drifts = if r.drifts.is_empty() { vec![mix.drift; n] } else { r.drifts.clone() };
    let temps = if r.temperatures.is_empty() { vec![mix.kt; n] } else { r.temperatures.clone() };
    let mut f0 = drifted_maxwellians(mix, &disc, &drifts, &temps);
    if r.perturbation > 0.0 {
        f0 = perturb(&f0, mix, &disc, r.perturbation, &mut sampling::rng(cfg.seed));
    }
    let opts = RelaxationOptions { t_end: r.t_end, policy: r.policy()?, record_interval: r.record_interval };
    let run = run_relaxation(&f0, mix, &disc, &opts)?;

    let target = with_equilibrium(mix, &run.equilibrium);
    let asm = LinearizedAssembler::new(&target, &disc);
    let grams = gram_matrices(&disc, &target);
    let gap_l2 = spectral_gap(&asm.assemble_neg_l(Selector::Full), &Metric::l2(&grams), &asm.kernel_basis(KernelKind::Full)?, Route::Auto)?.value;
    let drift = conservation_drift(&run.series, mix);

    out.csv("timeseries.csv", &run.series.to_csv())?;
    let checks = vec![
        Check::holds("clipped mass below 1e-8 of total", run.clip_accepted, format!("clipped = {:e}", run.clipped_mass)),
        Check::at_most("mass drift", drift.mass, 1e-10),
        Check::at_most("momentum drift", drift.momentum, 1e-6),
        Check::at_most("energy drift", drift.energy, 1e-6),
        Check::at_most("entropy increase", drift.entropy_increase, 1e-10),
    ];
    let artifact = RelaxArtifact {
        rate_over_gap: run.fit.as_ref().map(|f| f.rate / gap_l2),
        fit: run.fit,
        fit_error: run.fit_error,
        gap_l2,
        equilibrium: run.equilibrium,
        final_relative_error: run.final_relative_error,
        clipped_mass: run.clipped_mass,
        clip_accepted: run.clip_accepted,
        steps: run.steps,
        final_dt: run.final_dt,
        drift,
    };
    out.json("decay_fit.json", &artifact)?;
    Ok(checks)
}

pub fn modes(cfg: &RunConfig) -> Result<Vec<Check>> {
    let out = Artifacts::new(cfg, "modes");
    let disc = cfg.discretization()?;
    let mix = &cfg.mixture;
    let asm = LinearizedAssembler::new(mix, &disc);
    let masses: Vec<f64> = mix.species.iter().map(|s| s.mass).collect();
    let f0 = sampling::random_perturbation(&disc, &asm.sqrt_m, &masses, mix.kt, 0.0, &mut sampling::rng(cfg.seed));
    let ks: Vec<[i32; 3]> = cfg.modes.wavenumbers.iter().map(|&k| [k, 0, 0]).collect();
    let report: LinearModesReport = run_linear_modes(&ks, &f0, cfg.modes.t_end, cfg.modes.dt_scale, mix, &disc)?;

    let f0_norm = landau_core::linalg::wdot(&f0, &f0, &disc.stacked_weights()).sqrt();
    let mut checks = Vec::new();
    for m in &report.modes {
        let k = m.k[0];
        if let Some(series) = &m.series {
            out.csv(&format!("mode_k{k}.csv"), &series.to_csv())?;
        }
        let residual = m.fit.as_ref().map_or(f64::INFINITY, |f| f.residual);
        checks.push(Check::at_most(format!("k={k} fit residual"), residual, landau_core::evolution::FIT_TOLERANCE));
        if m.k == [0; 3] {
            let rate = m.fit.as_ref().map_or(0.0, |f| f.rate);
            checks.push(Check::at_least("k=0 rate / gap_l2", rate / report.gap_l2, 0.9));
            checks.push(Check::at_most("k=0 kernel projection drift", m.kernel_drift / f0_norm, 1e-8));
            checks.push(Check::at_most("k=0 one-step growth", m.max_growth, 1e-12));
        }
    }
    out.json("modes_summary.json", &report)?;
    Ok(checks)
}

pub fn kcompact(cfg: &RunConfig) -> Result<Vec<Check>> {
    let out = Artifacts::new(cfg, "kcompact");
    let disc = cfg.discretization()?;
    let table: DecayTable = k_compactness_decay(&cfg.mixture, &disc, &cfg.kcompact.n_values)?;
    let header = ["n", "radius", "norm"].map(String::from);
    let rows = table.rows.iter().map(|r| vec![r.n as f64, r.radius, r.norm]);
    out.csv("kcompact.csv", &csv_table(&header, rows))?;
    let monotone = table.rows.windows(2).all(|w| w[1].norm <= w[0].norm);
    let checks = vec![
        Check::holds("norms nonincreasing in n", monotone, "monotone"),
        Check::at_most("log-log slope", table.slope, -0.7),
    ];
    out.json("kcompact.json", &table)?;
    Ok(checks)
}
