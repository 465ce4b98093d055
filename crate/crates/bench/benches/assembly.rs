use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use landau_bench::{discretization, mixture};
use landau_core::evolution::ImplicitStepper;
use landau_core::spectral::spectral_gap;
use landau_core::{gram_matrices, sampling, CollisionOperator, KernelKind, LinearizedAssembler, Metric, Route, Selector};

fn collision(c: &mut Criterion) {
    let mut g = c.benchmark_group("q_total");
    g.sample_size(10);
    let cfg = mixture(0.0);
    for n in [6, 8, 10] {
        let disc = discretization(&cfg, n);
        let op = CollisionOperator::new(&cfg, &disc);
        let f = sampling::random_positive_field(&disc, &mut sampling::rng(1));
        g.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| b.iter(|| op.q_total(f).unwrap()));
    }
    g.finish();
}

fn linearized(c: &mut Criterion) {
    let mut g = c.benchmark_group("assemble_neg_l");
    g.sample_size(10);
    let cfg = mixture(-1.0);
    for n in [4, 6, 8] {
        let disc = discretization(&cfg, n);
        let asm = LinearizedAssembler::new(&cfg, &disc);
        g.bench_function(BenchmarkId::from_parameter(n), |b| b.iter(|| asm.assemble_neg_l(Selector::Full)));
    }
    g.finish();
}

fn gaps(c: &mut Criterion) {
    let mut g = c.benchmark_group("spectral_gap_h");
    g.sample_size(10);
    let cfg = mixture(0.0);
    let disc = discretization(&cfg, 6);
    let asm = LinearizedAssembler::new(&cfg, &disc);
    let neg_l = asm.assemble_neg_l(Selector::Full);
    let kernel = asm.kernel_basis(KernelKind::Full).unwrap();
    let grams = gram_matrices(&disc, &cfg);
    let h = Metric::h(&grams).unwrap();
    for route in [Route::Dense, Route::Iterative] {
        g.bench_function(format!("{route:?}").to_lowercase(), |b| b.iter(|| spectral_gap(&neg_l, &h, &kernel, route).unwrap()));
    }
    g.finish();
}

fn stepping(c: &mut Criterion) {
    let cfg = mixture(0.0);
    let disc = discretization(&cfg, 8);
    let asm = LinearizedAssembler::new(&cfg, &disc);
    let neg_l = asm.assemble_neg_l(Selector::Full);
    let stepper = ImplicitStepper::new(&neg_l, disc.stacked_weights(), asm.sqrt_m.clone(), 0.05).unwrap();
    let op = CollisionOperator::new(&cfg, &disc);
    let f = landau_core::checks::perturbed_maxwellian(&cfg, &disc, 1e-2, &mut sampling::rng(2));
    let mut g = c.benchmark_group("relaxation");
    g.sample_size(10);
    g.bench_function("implicit_step_n8", |b| b.iter(|| stepper.step(&op, &f).unwrap()));
    g.finish();
}

criterion_group!(benches, collision, linearized, gaps, stepping);
criterion_main!(benches);
