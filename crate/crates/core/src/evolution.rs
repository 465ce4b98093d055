//! Time integration of the homogeneous nonlinear system and of single
//! Fourier modes of the linearized system with transport, plus fitting of
//! exponential decay rates.

use faer::linalg::solvers::{Llt, Solve};
use faer::{MatMut, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{entropy_and_production, moments, CollisionOperator, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::field::{DistributionField, FieldKind};
use crate::grid::{gram_matrices, Discretization};
use crate::io::csv_table;
use crate::linearized::{KernelKind, LinearizedAssembler, OperatorMatrix, Selector};
use crate::mixture::{equilibrium_moments, maxwellian_field, EquilibriumMoments, MixtureConfig};
use crate::spectral::{restricted_largest, spectral_gap, Metric, Route};

/// Largest log-deviation for an accepted exponential fit.
pub const FIT_TOLERANCE: f64 = 0.05;
/// Samples below this value end the fit window.
pub const FIT_FLOOR: f64 = 1e-10;

/// Named scalar records at strictly increasing times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(names: Vec<String>) -> Self {
        Self { names, times: Vec::new(), rows: Vec::new() }
    }

    pub fn push(&mut self, t: f64, row: Vec<f64>) {
        assert_eq!(row.len(), self.names.len(), "record width");
        if let Some(&last) = self.times.last() {
            assert!(t > last, "times must increase strictly");
        }
        self.times.push(t);
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.column(name).and_then(|c| c.last().copied())
    }

    /// CSV with a leading `t` column.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["t".to_string()];
        header.extend(self.names.iter().cloned());
        let rows = self.times.iter().zip(&self.rows).map(|(&t, r)| {
            let mut v = vec![t];
            v.extend_from_slice(r);
            v
        });
        csv_table(&header, rows)
    }
}

/// `q(t) ≈ prefactor · exp(−rate t)` on `window`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub prefactor: f64,
    pub window: (f64, f64),
    /// Largest `|log q − log fit|` inside the window.
    pub residual: f64,
    pub samples: usize,
}

impl DecayFit {
    pub fn accepted(&self) -> bool {
        self.residual <= FIT_TOLERANCE
    }
}

fn line_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in t.iter().zip(y) {
        sxy += (a - tm) * (b - ym);
        sxx += (a - tm) * (a - tm);
    }
    let slope = sxy / sxx;
    (slope, ym - slope * tm)
}

/// Exponential fit of one column of a series.
pub fn fit_decay(series: &TimeSeries, quantity: &str) -> Result<DecayFit> {
    let q = series
        .column(quantity)
        .ok_or_else(|| Error::NoExponentialWindow(format!("no column named {quantity}")))?;
    fit_decay_values(&series.times, &q)
}

fn window_fit(t: &[f64], y: &[f64], start: usize) -> DecayFit {
    let (slope, icept) = line_fit(&t[start..], &y[start..]);
    let residual = t[start..]
        .iter()
        .zip(&y[start..])
        .map(|(&ti, &yi)| (yi - icept - slope * ti).abs())
        .fold(0.0, f64::max);
    let end = t.len();
    DecayFit { rate: -slope, prefactor: icept.exp(), window: (t[start], t[end - 1]), residual, samples: end - start }
}

/// Least-squares line through `log q` after the transient. The transient ends
/// at the first sample from which every local slope stays within 5% of the
/// tail slope; the window ends where `q` first drops below [`FIT_FLOOR`].
/// Slowly converging slopes leave curvature in that window, so its start is
/// then advanced until the fit is accepted, as long as the window still spans
/// two decades of decay. Failing that, the best fit found is returned.
pub fn fit_decay_values(times: &[f64], q: &[f64]) -> Result<DecayFit> {
    if times.len() < 20 {
        return Err(Error::NoExponentialWindow(format!("{} samples, need at least 20", times.len())));
    }
    let mut end = q.iter().position(|&v| !(v > 0.0) || !v.is_finite()).unwrap_or(q.len());
    if let Some(k) = q[..end].iter().position(|&v| v < FIT_FLOOR) {
        end = k + 1;
    }
    if end < 10 {
        return Err(Error::NoExponentialWindow(format!("only {end} positive samples above the floor")));
    }
    let t = &times[..end];
    let y: Vec<f64> = q[..end].iter().map(|v| v.ln()).collect();
    let m = (end / 10).max(3);
    let local: Vec<f64> = (0..=end - m).map(|k| line_fit(&t[k..k + m], &y[k..k + m]).0).collect();
    let tail = (end / 4).max(m);
    let (tail_slope, _) = line_fit(&t[end - tail..], &y[end - tail..]);
    let drop = -tail_slope * (t[end - 1] - t[end - tail]);
    if !(drop > 1e-8) {
        return Err(Error::NoExponentialWindow(format!("tail slope {tail_slope:e} shows no decay")));
    }
    let close = |s: f64| (s - tail_slope).abs() <= 0.05 * tail_slope.abs();
    let mut start = local.len();
    while start > 0 && close(local[start - 1]) {
        start -= 1;
    }
    if start == local.len() {
        start = local.iter().position(|&s| close(s)).unwrap_or(end - tail);
    }
    if end - start < 5 {
        return Err(Error::NoExponentialWindow(format!("window of {} samples", end - start)));
    }
    let mut best = window_fit(t, &y, start);
    let min_drop = 100f64.ln();
    let stride = ((end - start) / 50).max(1);
    let mut s = start;
    while !best.accepted() {
        s += stride;
        if end - s < 10 || y[s] - y[end - 1] < min_drop {
            break;
        }
        let fit = window_fit(t, &y, s);
        if fit.residual < best.residual {
            best = fit;
        }
    }
    Ok(best)
}

/// Largest cumulative clipped mass, relative to the total, of an accepted run.
pub const CLIP_TOLERANCE: f64 = 1e-8;

/// A nonlinear step together with the mass removed by clipping.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub field: DistributionField,
    pub clipped_mass: f64,
}

fn weighted_norm(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
}

/// `max_a |F(a)|/ℳ(a)` against the operator's reference Maxwellian.
fn relative_sup(f: &[f64], reference: &[f64]) -> f64 {
    f.iter().zip(reference).map(|(v, m)| v.abs() / m).fold(0.0, f64::max)
}

/// Rejects the step when `max |F/ℳ|` grows by more than 10×; otherwise clips
/// negative values when `clip` is set.
fn finish_step(op: &CollisionOperator, f: &DistributionField, mut next: Vec<f64>, clip: bool) -> Result<StepOutcome> {
    let reference = maxwellian_field(op.cfg, op.reference(), op.disc).values;
    let growth = relative_sup(&next, &reference) / relative_sup(&f.values, &reference);
    if !growth.is_finite() || growth > 10.0 {
        return Err(Error::StepUnstable { growth });
    }
    let mut clipped = 0.0;
    if clip {
        let w = op.disc.stacked_weights();
        for (v, w) in next.iter_mut().zip(&w) {
            if *v < 0.0 {
                clipped -= w * *v;
                *v = 0.0;
            }
        }
    }
    Ok(StepOutcome { field: DistributionField::new(next, f.n_species, FieldKind::Density), clipped_mass: clipped })
}

/// One classical Runge–Kutta step of `F' = Σ_j Q_ij`.
pub fn step_nonlinear(op: &CollisionOperator, f: &DistributionField, dt: f64) -> Result<StepOutcome> {
    let n = f.n_species;
    let stage = |base: &[f64], k: &[f64], h: f64| {
        DistributionField::new(base.iter().zip(k).map(|(b, k)| b + h * k).collect(), n, FieldKind::Density)
    };
    let k1 = op.q_total(f)?;
    let k2 = op.q_total(&stage(&f.values, &k1, 0.5 * dt))?;
    let k3 = op.q_total(&stage(&f.values, &k2, 0.5 * dt))?;
    let k4 = op.q_total(&stage(&f.values, &k3, dt))?;
    let next: Vec<f64> = (0..f.values.len())
        .map(|a| f.values[a] + dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]))
        .collect();
    finish_step(op, f, next, true)
}

/// Linearly implicit Euler with the Jacobian frozen at a Maxwellian `ℳ`:
/// `(I − dt J) ΔF = dt Q(F)`, solved in `f = ΔF/√ℳ` as
/// `(W + dt(−L)) δ = dt W Q(F)/√ℳ`.
pub struct ImplicitStepper {
    factor: Llt<f64>,
    weights: Vec<f64>,
    sqrt_m: Vec<f64>,
    pub dt: f64,
}

impl ImplicitStepper {
    pub fn new(neg_l: &OperatorMatrix, weights: Vec<f64>, sqrt_m: Vec<f64>, dt: f64) -> Result<Self> {
        let factor = shifted_factor(neg_l, &weights, dt)?;
        Ok(Self { factor, weights, sqrt_m, dt })
    }

    pub fn step(&self, op: &CollisionOperator, f: &DistributionField) -> Result<StepOutcome> {
        let q = op.q_total(f)?;
        let mut rhs: Vec<f64> = q.iter().zip(&self.weights).zip(&self.sqrt_m).map(|((q, w), s)| self.dt * w * q / s).collect();
        let n = rhs.len();
        self.factor.solve_in_place(MatMut::from_column_major_slice_mut(&mut rhs, n, 1));
        let next: Vec<f64> = f.values.iter().zip(&rhs).zip(&self.sqrt_m).map(|((v, d), s)| v + s * d).collect();
        finish_step(op, f, next, false)
    }
}

fn shifted_factor(neg_l: &OperatorMatrix, weights: &[f64], dt: f64) -> Result<Llt<f64>> {
    let n = neg_l.dim();
    let a = faer::Mat::from_fn(n, n, |i, j| {
        let s = 0.5 * dt * (neg_l.matrix[(i, j)] + neg_l.matrix[(j, i)]);
        if i == j { s + weights[i] } else { s }
    });
    a.llt(Side::Lower).map_err(|e| Error::SolveFailure(format!("W + dt(−L) is not positive definite: {e:?}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DtPolicy {
    /// Runge–Kutta; `dt = None` starts from `0.5/‖−L‖`. The step halves on
    /// `StepUnstable` until it falls below `min_dt`.
    Explicit { dt: Option<f64>, min_dt: f64 },
    /// Frozen-Jacobian linearly implicit Euler.
    LinearlyImplicit { dt: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationOptions {
    pub t_end: f64,
    pub policy: DtPolicy,
    /// Minimum time between records; every step is recorded when zero.
    #[serde(default)]
    pub record_interval: f64,
}

#[derive(Clone, Debug)]
pub struct RelaxationRun {
    pub series: TimeSeries,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
    /// The Maxwellian `ℳ` with the discrete moments of `F0`.
    pub equilibrium: EquilibriumMoments,
    pub final_field: DistributionField,
    pub clipped_mass: f64,
    /// Cumulative clipped mass stayed below [`CLIP_TOLERANCE`] of the total.
    pub clip_accepted: bool,
    pub steps: usize,
    pub final_dt: f64,
    /// `‖F(t_end) − ℳ‖ / ‖ℳ‖` in the quadrature `L²` norm.
    pub final_relative_error: f64,
}

/// Maxwellian parameters whose discrete moments equal those of `f`. The
/// quadrature moments of `maxwellian_field` differ from the continuum values
/// by the truncation and quadrature error; a fixed-point correction removes it.
pub fn discrete_equilibrium(f: &DistributionField, cfg: &MixtureConfig, disc: &Discretization) -> Result<EquilibriumMoments> {
    let target = equilibrium_moments(f, cfg, disc)?;
    let mut m = target.clone();
    for _ in 0..50 {
        let got = equilibrium_moments(&maxwellian_field(cfg, &m, disc), cfg, disc)?;
        let mut change = 0.0f64;
        for i in 0..m.densities.len() {
            let d = target.densities[i] - got.densities[i];
            m.densities[i] += d;
            change = change.max((d / target.densities[i]).abs());
        }
        for k in 0..3 {
            let d = target.bulk_velocity[k] - got.bulk_velocity[k];
            m.bulk_velocity[k] += d;
            change = change.max(d.abs() / target.temperature.sqrt());
        }
        let d = target.temperature - got.temperature;
        m.temperature += d;
        change = change.max((d / target.temperature).abs());
        if change < 1e-15 {
            break;
        }
    }
    Ok(m)
}

/// A copy of `cfg` whose configured equilibrium is `eq`.
pub fn with_equilibrium(cfg: &MixtureConfig, eq: &EquilibriumMoments) -> MixtureConfig {
    let mut c = cfg.clone();
    for (s, &rho) in c.species.iter_mut().zip(&eq.densities) {
        s.density = rho;
    }
    c.drift = eq.bulk_velocity;
    c.kt = eq.temperature;
    c
}

fn relaxation_names(n: usize) -> Vec<String> {
    let mut names: Vec<String> = (0..n).map(|i| format!("mass_{i}")).collect();
    for ax in ["x", "y", "z"] {
        names.push(format!("momentum_{ax}"));
    }
    names.push("energy".into());
    for i in 0..n {
        for ax in ["x", "y", "z"] {
            names.push(format!("u{i}_{ax}"));
        }
    }
    names.extend(["entropy", "production", "norm_l2", "rel_error"].map(String::from));
    names
}

struct Recorder<'a> {
    cfg: &'a MixtureConfig,
    disc: &'a Discretization,
    target: Vec<f64>,
    weights: Vec<f64>,
    target_norm: f64,
}

impl Recorder<'_> {
    fn record(&self, f: &DistributionField) -> Result<Vec<f64>> {
        let n = self.disc.n_species();
        let mo = moments(f, self.cfg, self.disc);
        let mut row = mo.mass.clone();
        row.extend(mo.momentum);
        row.push(mo.energy);
        for i in 0..n {
            let g = &self.disc.grids[i];
            let b = f.block(i);
            let scale = 1.0 / (self.cfg.mass(i) * mo.mass[i]);
            for k in 0..3 {
                row.push(scale * g.nodes.iter().zip(b).zip(&g.weights).map(|((p, v), w)| w * p[k] * v).sum::<f64>());
            }
        }
        let e = entropy_and_production(f, self.cfg, self.disc, Some(LOG_FLOOR))?;
        row.push(e.entropy);
        row.push(e.production);
        let (mut rel, mut abs) = (0.0, 0.0);
        for a in 0..f.values.len() {
            let d = f.values[a] - self.target[a];
            rel += self.weights[a] * d * d / self.target[a];
            abs += self.weights[a] * d * d;
        }
        row.push(rel.sqrt());
        row.push(abs.sqrt() / self.target_norm);
        Ok(row)
    }
}

/// Integrates the homogeneous system from `f0` to `t_end`, recording moments,
/// `H`, `D` and `‖(F − ℳ)/√ℳ‖`, and fits the decay of that norm.
pub fn run_relaxation(f0: &DistributionField, cfg: &MixtureConfig, disc: &Discretization, opts: &RelaxationOptions) -> Result<RelaxationRun> {
    if !(opts.t_end > 0.0) {
        return Err(Error::InvalidConfig(format!("t_end = {} must be positive", opts.t_end)));
    }
    if let Some((a, &v)) = f0.values.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        let g = disc.block_len();
        return Err(Error::NonPositiveDensity { species: a / g, node: a % g, value: v });
    }
    let eq = discrete_equilibrium(f0, cfg, disc)?;
    let rcfg = with_equilibrium(cfg, &eq);
    let op = CollisionOperator::new(&rcfg, disc);
    let target = maxwellian_field(&rcfg, &eq, disc).values;
    let weights = disc.stacked_weights();
    let target_norm = weighted_norm(&target, &weights);
    let rec = Recorder { cfg: &rcfg, disc, target, weights: weights.clone(), target_norm };

    let mut implicit = None;
    let mut dt = match opts.policy {
        DtPolicy::LinearlyImplicit { dt } if dt > 0.0 => {
            let dt = opts.t_end / (opts.t_end / dt).ceil();
            let asm = LinearizedAssembler::new(&rcfg, disc);
            let neg_l = asm.assemble_neg_l(Selector::Full);
            implicit = Some(ImplicitStepper::new(&neg_l, weights.clone(), asm.sqrt_m.clone(), dt)?);
            dt
        }
        DtPolicy::LinearlyImplicit { dt } => dt,
        DtPolicy::Explicit { dt: Some(dt), .. } => dt,
        DtPolicy::Explicit { dt: None, .. } => 0.5 / neg_l_norm(&rcfg, disc)?,
    };
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt = {dt} must be positive")));
    }

    let mut series = TimeSeries::new(relaxation_names(disc.n_species()));
    let mut f = f0.clone();
    let mut t = 0.0;
    series.push(t, rec.record(&f)?);
    let mut next_record = opts.record_interval;
    let (mut clipped, mut steps) = (0.0, 0usize);
    while t < opts.t_end * (1.0 - 1e-12) {
        let h = if implicit.is_some() { dt } else { dt.min(opts.t_end - t) };
        let out = match &implicit {
            Some(st) => st.step(&op, &f),
            None => step_nonlinear(&op, &f, h),
        };
        match out {
            Ok(o) => {
                f = o.field;
                clipped += o.clipped_mass;
                t += h;
                steps += 1;
            }
            Err(Error::StepUnstable { growth }) => match opts.policy {
                DtPolicy::Explicit { min_dt, .. } if dt / 2.0 >= min_dt => {
                    dt /= 2.0;
                    continue;
                }
                _ => return Err(Error::StepUnstable { growth }),
            },
            Err(e) => return Err(e),
        }
        if t >= next_record * (1.0 - 1e-12) || t >= opts.t_end * (1.0 - 1e-12) {
            series.push(t, rec.record(&f)?);
            next_record = t + opts.record_interval;
        }
    }
    let (fit, fit_error) = match fit_decay(&series, "norm_l2") {
        Ok(fit) => (Some(fit), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let final_relative_error = series.last("rel_error").unwrap_or(f64::NAN);
    let total_mass: f64 = f0.values.iter().zip(&weights).map(|(v, w)| v * w).sum();
    let clip_accepted = clipped < CLIP_TOLERANCE * total_mass;
    Ok(RelaxationRun { series, fit, fit_error, equilibrium: eq, final_field: f, clipped_mass: clipped, clip_accepted, steps, final_dt: dt, final_relative_error })
}

/// Largest changes of the conserved quantities over a relaxation series.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservationDrift {
    /// `max_{i,t} |ρ_i(t) − ρ_i(0)| / ρ_i(0)`.
    pub mass: f64,
    /// `max_t |P(t) − P(0)|` over `Σ ρ_i √(m_i kT) + |P(0)|`.
    pub momentum: f64,
    /// `max_t |E(t) − E(0)| / E(0)`.
    pub energy: f64,
    /// Largest sample-to-sample increase of `H`, over `max(|H(0)|, 1)`.
    pub entropy_increase: f64,
}

pub fn conservation_drift(series: &TimeSeries, cfg: &MixtureConfig) -> ConservationDrift {
    let col = |name: &str| series.column(name).unwrap_or_default();
    let change = |v: &[f64]| v.iter().map(|x| (x - v[0]).abs()).fold(0.0, f64::max);
    let mut d = ConservationDrift::default();
    if series.is_empty() {
        return d;
    }
    let mut scale = 0.0;
    for i in 0..cfg.n_species() {
        let m = col(&format!("mass_{i}"));
        d.mass = d.mass.max(change(&m) / m[0]);
        scale += m[0] * (cfg.mass(i) * cfg.kt).sqrt();
    }
    let p: Vec<Vec<f64>> = ["x", "y", "z"].iter().map(|a| col(&format!("momentum_{a}"))).collect();
    let p0 = (p[0][0].powi(2) + p[1][0].powi(2) + p[2][0].powi(2)).sqrt();
    d.momentum = (0..series.len())
        .map(|t| ((p[0][t] - p[0][0]).powi(2) + (p[1][t] - p[1][0]).powi(2) + (p[2][t] - p[2][0]).powi(2)).sqrt())
        .fold(0.0, f64::max)
        / (scale + p0);
    let e = col("energy");
    d.energy = change(&e) / e[0].abs();
    let h = col("entropy");
    d.entropy_increase = h.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max) / h[0].abs().max(1.0);
    d
}

/// Largest eigenvalue of `−L` against the quadrature `L²` metric.
pub fn neg_l_norm(cfg: &MixtureConfig, disc: &Discretization) -> Result<f64> {
    let asm = LinearizedAssembler::new(cfg, disc);
    let neg_l = asm.assemble_neg_l(Selector::Full);
    let grams = gram_matrices(disc, cfg);
    Ok(restricted_largest(&neg_l, &Metric::l2(&grams), &[], Route::Auto)?.value)
}

/// One Fourier mode `f(p) e^{2πi k·x}` on the unit torus.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeProblem {
    pub k: [i32; 3],
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ModeProblem {
    pub fn real(k: [i32; 3], f: Vec<f64>) -> Self {
        let im = vec![0.0; f.len()];
        Self { k, re: f, im }
    }

    pub fn norm_l2(&self, weights: &[f64]) -> f64 {
        self.re.iter().zip(&self.im).zip(weights).map(|((a, b), w)| w * (a * a + b * b)).sum::<f64>().sqrt()
    }
}

/// Lie splitting for `f' = (L − 2πi k·p/m_i) f`: exact phase rotation for the
/// transport term, then implicit Euler `(W + dt(−L)) f⁺ = W f` for collisions.
pub struct ModeIntegrator {
    factor: Llt<f64>,
    weights: Vec<f64>,
    /// Stacked `p/m_i` per node.
    velocities: Vec<[f64; 3]>,
    pub dt: f64,
}

impl ModeIntegrator {
    pub fn new(neg_l: &OperatorMatrix, cfg: &MixtureConfig, disc: &Discretization, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt = {dt} must be positive")));
        }
        let weights = disc.stacked_weights();
        let factor = shifted_factor(neg_l, &weights, dt)?;
        let velocities = (0..disc.n_species())
            .flat_map(|i| {
                let m = cfg.mass(i);
                disc.grids[i].nodes.iter().map(move |p| [p[0] / m, p[1] / m, p[2] / m])
            })
            .collect();
        Ok(Self { factor, weights, velocities, dt })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn step(&self, mode: &mut ModeProblem) {
        let k = mode.k.map(f64::from);
        if k != [0.0; 3] {
            for (a, v) in self.velocities.iter().enumerate() {
                let theta = -2.0 * std::f64::consts::PI * (k[0] * v[0] + k[1] * v[1] + k[2] * v[2]) * self.dt;
                let (s, c) = theta.sin_cos();
                let (x, y) = (mode.re[a], mode.im[a]);
                mode.re[a] = c * x - s * y;
                mode.im[a] = s * x + c * y;
            }
        }
        let n = self.weights.len();
        for part in [&mut mode.re, &mut mode.im] {
            for (v, w) in part.iter_mut().zip(&self.weights) {
                *v *= w;
            }
            self.factor.solve_in_place(MatMut::from_column_major_slice_mut(part, n, 1));
        }
    }
}

/// Single step; assembles and factors the operator, so loops should hold a
/// [`ModeIntegrator`] instead.
pub fn step_linear_mode(mode: &ModeProblem, dt: f64, cfg: &MixtureConfig, disc: &Discretization) -> Result<ModeProblem> {
    let neg_l = crate::linearized::assemble_neg_l(Selector::Full, cfg, disc);
    let integ = ModeIntegrator::new(&neg_l, cfg, disc, dt)?;
    let mut out = mode.clone();
    integ.step(&mut out);
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeRun {
    pub k: [i32; 3],
    #[serde(skip)]
    pub series: Option<TimeSeries>,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
    /// `max_t |Π^L f(t) − Π^L f(0)|` over the kernel coefficients.
    pub kernel_drift: f64,
    /// Largest one-step growth `‖f⁺‖/‖f‖ − 1`.
    pub max_growth: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearModesReport {
    pub modes: Vec<ModeRun>,
    pub dt: f64,
    pub gap_l2: f64,
    /// Largest fitted `1/rate`; infinite when some mode has no fit.
    pub tau: f64,
}

/// Integrates each wavenumber from `f0` (the kernel part removed for `k = 0`)
/// with `dt = dt_scale / gap_l2`, recording `‖f‖` and the kernel coefficients.
pub fn run_linear_modes(
    ks: &[[i32; 3]],
    f0: &[f64],
    t_end: f64,
    dt_scale: f64,
    cfg: &MixtureConfig,
    disc: &Discretization,
) -> Result<LinearModesReport> {
    if f0.len() != disc.dim() {
        return Err(Error::DimensionMismatch { expected: disc.dim(), got: f0.len() });
    }
    let asm = LinearizedAssembler::new(cfg, disc);
    let neg_l = asm.assemble_neg_l(Selector::Full);
    let kernel = asm.kernel_basis(KernelKind::Full)?;
    let grams = gram_matrices(disc, cfg);
    let gap_l2 = spectral_gap(&neg_l, &Metric::l2(&grams), &kernel, Route::Auto)?.value;
    let dt = dt_scale / gap_l2;
    let integ = ModeIntegrator::new(&neg_l, cfg, disc, dt)?;
    let steps = (t_end / dt).ceil() as usize;
    let modes: Vec<ModeRun> = ks
        .par_iter()
        .map(|&k| {
            let start = if k == [0; 3] { kernel.complement(f0) } else { f0.to_vec() };
            let mut mode = ModeProblem::real(k, start);
            let coeffs = |m: &ModeProblem| {
                let mut c = kernel.project(&m.re).coefficients;
                c.extend(kernel.project(&m.im).coefficients);
                c
            };
            let c0 = coeffs(&mode);
            let names = vec!["norm_l2".to_string(), "kernel_drift".to_string()];
            let mut series = TimeSeries::new(names);
            let mut norm = mode.norm_l2(integ.weights());
            series.push(0.0, vec![norm, 0.0]);
            let (mut drift, mut growth) = (0.0f64, f64::NEG_INFINITY);
            for s in 1..=steps {
                integ.step(&mut mode);
                let nn = mode.norm_l2(integ.weights());
                growth = growth.max(nn / norm - 1.0);
                norm = nn;
                let d = if k == [0; 3] {
                    coeffs(&mode).iter().zip(&c0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                } else {
                    0.0
                };
                drift = drift.max(d);
                series.push(s as f64 * dt, vec![norm, d]);
            }
            let (fit, fit_error) = match fit_decay(&series, "norm_l2") {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ModeRun { k, series: Some(series), fit, fit_error, kernel_drift: drift, max_growth: growth }
        })
        .collect();
    let tau = modes
        .iter()
        .map(|m| m.fit.as_ref().map_or(f64::INFINITY, |f| if f.rate > 0.0 { 1.0 / f.rate } else { f64::INFINITY }))
        .fold(0.0, f64::max);
    Ok(LinearModesReport { modes, dt, gap_l2, tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::drifted_maxwellians;
    use crate::grid::GridSpec;
    use crate::mixture::SpeciesParams;
    use crate::sampling;
    use rand::Rng;

    fn setup(n: usize) -> (MixtureConfig, Discretization) {
        let c = MixtureConfig::new(vec![SpeciesParams::new(1.0, 1.0), SpeciesParams::new(2.0, 1.0)], 0.0).unwrap();
        let d = Discretization::new(&c, GridSpec::with_default_radius(n, &c)).unwrap();
        (c, d)
    }

    fn series_of(f: impl Fn(f64) -> f64, n: usize, t_end: f64) -> TimeSeries {
        let mut s = TimeSeries::new(vec!["q".into()]);
        for k in 0..n {
            let t = t_end * k as f64 / (n - 1) as f64;
            s.push(t, vec![f(t)]);
        }
        s
    }

    #[test]
    fn exact_exponential_fit() {
        let s = series_of(|t| 3.0 * (-1.7 * t).exp(), 100, 10.0);
        let fit = fit_decay(&s, "q").unwrap();
        assert!((fit.rate - 1.7).abs() < 1e-8);
        assert!((fit.prefactor - 3.0).abs() < 1e-7);
        assert!(fit.accepted());
    }

    #[test]
    fn fit_skips_transient_and_floor() {
        let s = series_of(|t| (-1.0 * t).exp() + 5.0 * (-8.0 * t).exp(), 200, 30.0);
        let fit = fit_decay(&s, "q").unwrap();
        assert!((fit.rate - 1.0).abs() < 1e-3, "{fit:?}");
        assert!(fit.window.0 > 0.0);
        assert!(fit.window.1 < 24.0);
    }

    #[test]
    fn constant_series_has_no_window() {
        let s = series_of(|_| 2.0, 50, 5.0);
        assert!(matches!(fit_decay(&s, "q"), Err(Error::NoExponentialWindow(_))));
        let s = series_of(|t| 1.0 + t, 50, 5.0);
        assert!(matches!(fit_decay(&s, "q"), Err(Error::NoExponentialWindow(_))));
        let s = series_of(|t| t, 10, 5.0);
        assert!(fit_decay(&s, "q").is_err());
    }

    #[test]
    fn noisy_exponential_fit() {
        let mut rng = sampling::rng(11);
        let noise: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0) * 1e-3).collect();
        let mut s = TimeSeries::new(vec!["q".into()]);
        for (k, e) in noise.iter().enumerate() {
            let t = 0.05 * k as f64;
            s.push(t, vec![0.7 * (-0.9 * t).exp() * (1.0 + e)]);
        }
        let fit = fit_decay(&s, "q").unwrap();
        assert!((fit.rate - 0.9).abs() < 0.009, "{fit:?}");
    }

    #[test]
    fn csv_has_header_and_rows() {
        let s = series_of(|t| t * t, 3, 1.0);
        let text = s.to_csv();
        let (h, rows) = crate::io::parse_csv(&text).unwrap();
        assert_eq!(h, ["t", "q"]);
        assert_eq!(rows[2], vec![1.0, 1.0]);
    }

    #[test]
    fn maxwellians_are_stationary() {
        let (c, d) = setup(6);
        let op = CollisionOperator::new(&c, &d);
        let m = maxwellian_field(&c, &c.equilibrium(), &d);
        let out = step_nonlinear(&op, &m, 0.01).unwrap();
        let s = m.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in out.field.values.iter().zip(&m.values) {
            assert!((a - b).abs() < 1e-10 * s);
        }
        assert_eq!(out.clipped_mass, 0.0);
    }

    #[test]
    fn step_conserves_mass_and_dissipates_entropy() {
        let (c, d) = setup(6);
        let op = CollisionOperator::new(&c, &d);
        let f = drifted_maxwellians(&c, &d, &[[0.2, 0.0, 0.0], [-0.2, 0.0, 0.0]], &[1.0, 1.0]);
        let dt = 0.25 / neg_l_norm(&c, &d).unwrap();
        let out = step_nonlinear(&op, &f, dt).unwrap();
        assert_eq!(out.clipped_mass, 0.0);
        let m0 = moments(&f, &c, &d);
        let m1 = moments(&out.field, &c, &d);
        for i in 0..2 {
            assert!((m0.mass[i] - m1.mass[i]).abs() < 1e-13 * m0.mass[i]);
        }
        let h0 = entropy_and_production(&f, &c, &d, None).unwrap().entropy;
        let h1 = entropy_and_production(&out.field, &c, &d, None).unwrap().entropy;
        assert!(h1 <= h0 + 1e-10 * h0.abs(), "{h0} -> {h1}");
    }

    #[test]
    fn oversized_step_is_unstable() {
        let (c, d) = setup(6);
        let op = CollisionOperator::new(&c, &d);
        let f = drifted_maxwellians(&c, &d, &[[0.2, 0.0, 0.0], [-0.2, 0.0, 0.0]], &[1.0, 1.2]);
        let dt = 2000.0 / neg_l_norm(&c, &d).unwrap();
        assert!(matches!(step_nonlinear(&op, &f, dt), Err(Error::StepUnstable { .. })));
    }

    #[test]
    fn discrete_equilibrium_matches_moments() {
        let (c, d) = setup(6);
        let f = drifted_maxwellians(&c, &d, &[[0.3, 0.0, 0.1], [-0.2, 0.0, 0.0]], &[1.0, 1.3]);
        let eq = discrete_equilibrium(&f, &c, &d).unwrap();
        let a = equilibrium_moments(&f, &c, &d).unwrap();
        let b = equilibrium_moments(&maxwellian_field(&c, &eq, &d), &c, &d).unwrap();
        assert!((a.temperature - b.temperature).abs() < 1e-13);
        for k in 0..3 {
            assert!((a.bulk_velocity[k] - b.bulk_velocity[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn implicit_relaxation_drives_drifts_together() {
        let (c, d) = setup(6);
        let f = drifted_maxwellians(&c, &d, &[[0.2, 0.0, 0.0], [-0.2, 0.0, 0.0]], &[1.0, 1.0]);
        let opts = RelaxationOptions { t_end: 8.0, policy: DtPolicy::LinearlyImplicit { dt: 0.1 }, record_interval: 0.0 };
        let run = run_relaxation(&f, &c, &d, &opts).unwrap();
        assert!(run.clipped_mass < 1e-12, "clipped {}", run.clipped_mass);
        let u0 = run.series.column("u0_x").unwrap();
        let u1 = run.series.column("u1_x").unwrap();
        let gap: Vec<f64> = u0.iter().zip(&u1).map(|(a, b)| (a - b).abs()).collect();
        assert!(gap.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
        assert!(gap.last().unwrap() < &(0.1 * gap[0]), "{gap:?}");
        let p = run.series.column("momentum_x").unwrap();
        let e = run.series.column("energy").unwrap();
        for k in 1..p.len() {
            assert!((p[k] - p[0]).abs() < 1e-10 * e[0], "{} vs {}", p[k], p[0]);
            assert!((e[k] - e[0]).abs() < 1e-10 * e[0]);
        }
        let h = run.series.column("entropy").unwrap();
        assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-10 * w[0].abs()));
        assert!(run.final_relative_error < run.series.column("rel_error").unwrap()[0]);
        let drift = conservation_drift(&run.series, &c);
        assert!(drift.mass < 1e-12 && drift.momentum < 1e-10 && drift.energy < 1e-10, "{drift:?}");
        assert!(drift.entropy_increase <= 1e-10);
    }

    #[test]
    fn explicit_relaxation_halves_on_instability() {
        let (c, d) = setup(8);
        let f = drifted_maxwellians(&c, &d, &[[0.2, 0.0, 0.0], [-0.2, 0.0, 0.0]], &[1.0, 1.0]);
        let lam = neg_l_norm(&c, &d).unwrap();
        let big = 64.0 / lam;
        let opts = RelaxationOptions { t_end: big, policy: DtPolicy::Explicit { dt: Some(big), min_dt: 1e-3 / lam }, record_interval: big / 8.0 };
        let run = run_relaxation(&f, &c, &d, &opts).unwrap();
        assert!(run.final_dt < big);
        assert!(run.final_field.is_finite());
        assert!(run.series.rows.iter().flatten().all(|v| v.is_finite()));
        let opts = RelaxationOptions { policy: DtPolicy::Explicit { dt: Some(big), min_dt: big }, ..opts };
        assert!(matches!(run_relaxation(&f, &c, &d, &opts), Err(Error::StepUnstable { .. })));
    }

    #[test]
    fn zero_mode_kernel_is_invariant() {
        let (c, d) = setup(6);
        let asm = LinearizedAssembler::new(&c, &d);
        let neg_l = asm.assemble_neg_l(Selector::Full);
        let kernel = asm.kernel_basis(KernelKind::Full).unwrap();
        let integ = ModeIntegrator::new(&neg_l, &c, &d, 0.3).unwrap();
        let f0: Vec<f64> = kernel.vectors.iter().fold(vec![0.0; d.dim()], |mut acc, v| {
            crate::linalg::axpy(0.37, v, &mut acc);
            acc
        });
        let mut m = ModeProblem::real([0; 3], f0.clone());
        for _ in 0..20 {
            integ.step(&mut m);
        }
        let s = f0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in m.re.iter().zip(&f0) {
            assert!((a - b).abs() < 1e-9 * s);
        }
    }

    #[test]
    fn modes_are_contractive_and_zero_mode_decays_at_gap() {
        let (c, d) = setup(6);
        let asm = LinearizedAssembler::new(&c, &d);
        let f0 = sampling::random_perturbation(&d, &asm.sqrt_m, &[1.0, 2.0], 1.0, 0.0, &mut sampling::rng(5));
        let rep = run_linear_modes(&[[0; 3], [1, 0, 0]], &f0, 25.0, 0.05, &c, &d).unwrap();
        for m in &rep.modes {
            assert!(m.max_growth <= 1e-12, "{:?} grew by {}", m.k, m.max_growth);
        }
        let zero = &rep.modes[0];
        assert!(zero.kernel_drift < 1e-8);
        let fit = zero.fit.as_ref().unwrap();
        assert!(fit.rate >= 0.9 * rep.gap_l2, "{} vs {}", fit.rate, rep.gap_l2);
        assert!(rep.tau.is_finite());
    }
}
