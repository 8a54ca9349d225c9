//! Without-replacement sampling solvers for finite-sum bilevel, conditional
//! bilevel, compositional and minimax optimization.
//!
//! - [`types`]: iterates, rates, epoch planning, counters, the `u`-ball projection
//! - [`sampler`]: example orders and the averaged-gradient-error analyzer
//! - [`oracle`]: per-example derivative contracts and reference hypergradients
//! - [`solvers`]: single-loop and double-loop solvers producing [`RunTrace`]s
//! - [`problems`]: shipped instances with closed-form references

// `!(a > b)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod oracle;
pub mod problems;
pub mod sampler;
pub mod solvers;
pub mod types;

pub use error::{Error, Result};
pub use oracle::{
    BilevelOracle, CompositionalOracle, ConditionalCompositionalOracle, ConditionalOracle, Counted, MinimaxOracle,
};
pub use sampler::{make_order, measure_avg_gradient_error, GradientErrorFit, SampleOrder, Strategy};
pub use solvers::{CondRunConfig, InnerMode, RunConfig, RunTrace, TraceRecord, WarmStart};
pub use types::{
    plan_epoch, project_ball, EpochPlan, Iterate, OracleCounters, ProblemMeta, RateConfig, Schedule,
};
