//! Shared fixtures for the benchmarks.

use wior_core::problems::{gen_irm, gen_quadratic_bilevel, QuadraticBilevel, SyntheticIrm};
use wior_core::{CondRunConfig, RateConfig, RunConfig, Schedule, Strategy};

/// The 10×10, 32-example quadratic instance used across the test suites.
pub fn quadratic() -> QuadraticBilevel {
    gen_quadratic_bilevel(10, 10, 32, 32, 10.0, 0).expect("fixed generator arguments")
}

pub fn irm() -> SyntheticIrm {
    gen_irm(100, 20, 10, 0.1, 0.1, 0).expect("fixed generator arguments")
}

/// A few epochs with one trace record at the end, so reference solves stay out of the timing.
pub fn bo_config(strategy: Strategy, epochs: usize) -> RunConfig {
    let rates = RateConfig::new(0.1, 0.1, 0.1)
        .expect("positive rates")
        .with_schedule(Schedule::Geometric { decay: 0.97 });
    RunConfig::new(epochs, rates, strategy, 0).with_eval_interval(epochs * 32)
}

pub fn cbo_config(strategy: Strategy, outer_epochs: usize) -> CondRunConfig {
    let rates = RateConfig::new(0.5, 0.1, 0.1).expect("positive rates");
    CondRunConfig::new(outer_epochs, 2, rates, strategy, 0).with_eval_interval(outer_epochs * 100)
}
