//! Unequal-probability sampling without replacement by pivotal martingale
//! procedures, with calculators for their tail bounds and an exact / Monte
//! Carlo verifier.
//!
//! Each element `i` of a population with relative weights `w` (summing to 1,
//! each at most `1/k`) lands in the size-`k` sample with probability exactly
//! `k·w[i]`, and the share of the sample taken by any subset concentrates
//! around its weight at the rates given in [`bounds`].

pub mod bounds;
pub mod cli;
pub mod io;
pub mod model;
pub mod sampler;
pub mod verifier;

pub use model::{
    eta_exact, scale_weights, subset_alpha, validate_weights, CaseTag, ModelError, Procedure,
    SampleResult, ScaledState, SubsetSpec, Tolerances, TrajectoryTrace, WeightVector,
};
pub use sampler::{
    pivotal_step, round_step, run_procedure_x, run_procedure_x_star, run_procedure_x_star_star,
    PairPolicy, RandomSource, Sampler, SamplerError,
};
