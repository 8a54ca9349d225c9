//! Without-replacement solvers.
//!
//! Single loop ([`wior_bo`], [`wior_comp`], [`wior_minimax`]) and double loop
//! ([`wior_cbo`], [`wior_ccomp`]). Each is parameterized by a sampling
//! [`Strategy`]; `Strategy::Independent` gives the with-replacement baselines.

mod double_loop;
mod single_loop;
mod trace;

pub use double_loop::{inner_contraction_probe, theory_rates, wior_cbo, wior_ccomp};
pub use single_loop::{wior_bo, wior_comp, wior_minimax};
pub use trace::{epochs_to_tolerance, RunTrace, TraceRecord, CSV_HEADER};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::TRACE_TOL;
use crate::sampler::Strategy;
use crate::types::{RateConfig, Schedule, DEFAULT_EPOCH_CAP};

/// Runs abort once `‖x‖` exceeds this.
pub const DIVERGENCE_NORM: f64 = 1e12;

fn default_reference_tol() -> f64 {
    TRACE_TOL
}

fn default_epoch_cap() -> usize {
    DEFAULT_EPOCH_CAP
}

/// Configuration of a single-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of epochs `R`; an epoch is `lcm(m, n)` steps.
    pub epochs: usize,
    pub rates: RateConfig,
    pub strategy: Strategy,
    pub seed: u64,
    /// Steps between trace records; one epoch when unset.
    #[serde(default)]
    pub eval_interval: Option<usize>,
    #[serde(default)]
    pub max_wall_seconds: Option<f64>,
    /// Tolerance of the reference solves behind each trace record.
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
    #[serde(default = "default_epoch_cap")]
    pub epoch_cap: usize,
}

impl RunConfig {
    pub fn new(epochs: usize, rates: RateConfig, strategy: Strategy, seed: u64) -> Self {
        Self {
            epochs,
            rates,
            strategy,
            seed,
            eval_interval: None,
            max_wall_seconds: None,
            reference_tol: TRACE_TOL,
            epoch_cap: DEFAULT_EPOCH_CAP,
        }
    }

    pub fn with_eval_interval(mut self, steps: usize) -> Self {
        self.eval_interval = Some(steps);
        self
    }

    pub fn with_max_wall_seconds(mut self, secs: f64) -> Self {
        self.max_wall_seconds = Some(secs);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        validate_common(&self.rates, self.eval_interval, self.max_wall_seconds, self.reference_tol)
    }
}

fn validate_common(rates: &RateConfig, eval: Option<usize>, wall: Option<f64>, tol: f64) -> Result<()> {
    rates.validate()?;
    if eval == Some(0) {
        return Err(Error::invalid("eval_interval must be >= 1"));
    }
    if let Some(w) = wall {
        if !(w > 0.0) {
            return Err(Error::invalid(format!("max_wall_seconds must be > 0, got {w}")));
        }
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("reference_tol must be > 0, got {tol}")));
    }
    Ok(())
}

/// Initial inner state of each outer step in a double-loop run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// `y = 0`, `u = 0` at every outer step.
    #[default]
    FreshEachOuterStep,
    /// Keep `(y, u)` from the previous outer step.
    CarryOver,
}

/// Order of the `y` and `u` updates inside the inner loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMode {
    /// Both updates read the pre-step `y` at every inner step.
    #[default]
    Simultaneous,
    /// All `S` epochs of `y` updates, then `S` epochs of `u` updates at the final `y`.
    TwoPhase,
}

/// Configuration of a double-loop run.
///
/// `rates.schedule` scales `eta` by the outer epoch; `inner_schedule` scales
/// `gamma` and `rho` by the inner epoch `s` within each outer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondRunConfig {
    /// Outer epochs `R`; an outer epoch is `m` outer steps.
    pub outer_epochs: usize,
    /// Inner epochs `S` per outer step.
    pub inner_epochs: usize,
    pub rates: RateConfig,
    pub strategy: Strategy,
    pub seed: u64,
    #[serde(default)]
    pub warm_start: WarmStart,
    #[serde(default)]
    pub inner_mode: InnerMode,
    #[serde(default)]
    pub inner_schedule: Schedule,
    /// Outer steps between trace records; one outer epoch when unset.
    #[serde(default)]
    pub eval_interval: Option<usize>,
    #[serde(default)]
    pub max_wall_seconds: Option<f64>,
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
}

impl CondRunConfig {
    pub fn new(outer_epochs: usize, inner_epochs: usize, rates: RateConfig, strategy: Strategy, seed: u64) -> Self {
        Self {
            outer_epochs,
            inner_epochs,
            rates,
            strategy,
            seed,
            warm_start: WarmStart::default(),
            inner_mode: InnerMode::default(),
            inner_schedule: Schedule::Constant,
            eval_interval: None,
            max_wall_seconds: None,
            reference_tol: TRACE_TOL,
        }
    }

    pub fn with_warm_start(mut self, w: WarmStart) -> Self {
        self.warm_start = w;
        self
    }

    pub fn with_inner_mode(mut self, mode: InnerMode) -> Self {
        self.inner_mode = mode;
        self
    }

    pub fn with_inner_schedule(mut self, schedule: Schedule) -> Self {
        self.inner_schedule = schedule;
        self
    }

    pub fn with_eval_interval(mut self, steps: usize) -> Self {
        self.eval_interval = Some(steps);
        self
    }

    pub fn validate(&self) -> Result<()> {
        RateConfig::new(1.0, 1.0, 1.0)?.with_schedule(self.inner_schedule).validate()?;
        if self.outer_epochs == 0 || self.inner_epochs == 0 {
            return Err(Error::invalid("outer_epochs and inner_epochs must be >= 1"));
        }
        validate_common(&self.rates, self.eval_interval, self.max_wall_seconds, self.reference_tol)
    }
}
