//! Constructive recovery of potentials, interaction coefficients and fractional orders from measurements.

pub mod adjoint;
pub mod basis;
pub mod interaction;
pub mod orders;
pub mod potential;
pub mod report;

pub use adjoint::{solve_adjoint_space, solve_adjoint_space_with, solve_adjoint_time, AdjointField, AdjointForm};
pub use basis::{gram_expand, BasisTag, GramSolve, LambdaChoice, SourceBasis, NOISELESS_LAMBDA};
pub use potential::{
    probe_derivative, recover_potential_space, recover_potential_time, recover_potential_time_stationary,
    space_potential_data, stationary_time_profiles, time_potential_data, DIV_GUARD,
};
pub use report::ReconstructionReport;
pub use interaction::{
    admissible_indices, derivative_fields, interaction_data, multisets, recover_interaction, InteractionData,
};
pub use orders::{
    discriminate_orders, fit_candidate, lambda3_discrimination, laplace_samples, order_discrimination_diagnostic,
    probe_series, recover_orders, CandidateFit, OrderCandidate, OrderProbeSpec, ResolventModel,
};
