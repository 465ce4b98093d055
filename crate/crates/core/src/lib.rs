//! Numerical toolkit for the multi-species Landau system with soft potentials.
//!
//! Fields live on per-species staggered momentum grids; the nonlinear
//! operator, its linearization and the associated quadratic forms are built
//! with a discrete gradient exact on quadratics, so collision invariants are
//! exact discrete kernel vectors.

pub mod checks;
pub mod collision;
pub mod error;
pub mod evolution;
pub mod field;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod linearized;
pub mod mixture;
pub mod sampling;
pub mod spectral;

pub use collision::{entropy_and_production, moments, CollisionOperator, EntropyReport, GradientForm, MomentSet};
pub use error::{Error, Result};
pub use evolution::{conservation_drift, fit_decay, run_linear_modes, run_relaxation, step_linear_mode, step_nonlinear, ConservationDrift, DecayFit, DtPolicy, ModeProblem, RelaxationOptions, TimeSeries};
pub use field::{DistributionField, FieldKind};
pub use grid::{build_grid, discrete_gradient, gram_matrices, Discretization, GradientOperator, GramMatrices, GridSpec, VelocityGrid};
pub use mixture::{default_interaction, equilibrium_moments, maxwellian_field, validate_config, EquilibriumMoments, MixtureConfig, SpeciesParams};
pub use linearized::{assemble_k_lambda, assemble_neg_l, k_kernel_entry, kernel_basis, project, KernelBasis, KernelKind, LinearizedAssembler, MatrixTag, OperatorMatrix, ParallelCoefficients, Projection, Selector};
pub use spectral::{coercivity_constants, composite_check, cross_form_report, gap_report, k_compactness_decay, lemma_ue_ratio, nullspace_dim, spectral_gap, CompositeReport, CrossFormReport, DecayTable, GapReport, Metric, MetricKind, QuadForm, Route};
