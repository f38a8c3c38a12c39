//! Bayesian search over architecture and optimizer settings: a bounded
//! mixed space, a pre-training cost gate, a Gaussian-process surrogate
//! of validation F1 and expected-improvement proposals.

mod gate;
mod gp;
mod runner;
mod space;

pub use gate::{constraint_gate, gate_costs, GateReason, GateVerdict, MAX_GFLOPS, MAX_PARAMS};
pub use gp::{
    cholesky, expected_improvement, gp_fit, gp_posterior, normal_cdf, normal_pdf, propose_next,
    GpHyper, GpSurrogate, JITTER_LADDER,
};
pub use runner::{
    holdout_evaluator, read_sweep_log, run_sweep, ProposalSource, SweepOptions, SweepResult, Trial,
    TrialStatus,
};
pub use space::{sample_space, SearchSpace, SweepConfig, SweepSpace, UnitBox};
