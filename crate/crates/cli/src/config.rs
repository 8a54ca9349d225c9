//! Experiment configuration files (TOML).
//!
//! ```toml
//! algorithm = "wior_bo"
//! samplers = ["independent", "shuffle_once", "random_reshuffle"]
//! seeds = [0, 1, 2, 3, 4]
//! target = 1e-3
//!
//! [problem]
//! kind = "quadratic"
//! p = 10
//! d = 10
//! m = 32
//! n = 32
//! kappa = 10.0
//! seed = 0
//!
//! [run]
//! epochs = 200
//! eval_interval = 32
//!
//! [run.rates]
//! eta = 0.1
//! gamma = 0.1
//! rho = 0.1
//! schedule = { kind = "geometric", decay = 0.97 }
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wior_core::problems::{
    gen_data_cleaning_small, gen_irm, gen_linear_comp, gen_quad_minimax, DataCleaningSmall, LinearComp, QuadMinimax,
    QuadraticBilevel, QuadraticSpec, SyntheticIrm, IRM_DEFAULTS,
};
use wior_core::{CondRunConfig, InnerMode, RateConfig, RunConfig, Schedule, Strategy, WarmStart};

use crate::CliError;

pub const DEFAULT_TARGET: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    WiorBo,
    WiorCbo,
    WiorComp,
    WiorCcomp,
    WiorMinimax,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::WiorBo => "wior_bo",
            Algorithm::WiorCbo => "wior_cbo",
            Algorithm::WiorComp => "wior_comp",
            Algorithm::WiorCcomp => "wior_ccomp",
            Algorithm::WiorMinimax => "wior_minimax",
        }
    }

    pub fn is_double_loop(&self) -> bool {
        matches!(self, Algorithm::WiorCbo | Algorithm::WiorCcomp)
    }
}

fn default_irm_p() -> usize {
    IRM_DEFAULTS.p
}
fn default_irm_sigma() -> f64 {
    IRM_DEFAULTS.sigma
}
fn default_irm_lambda() -> f64 {
    IRM_DEFAULTS.lambda_out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Quadratic {
        p: usize,
        d: usize,
        m: usize,
        n: usize,
        kappa: f64,
        seed: u64,
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        heterogeneity: Option<f64>,
    },
    Irm {
        m: usize,
        n: usize,
        #[serde(default = "default_irm_p")]
        p: usize,
        #[serde(default = "default_irm_sigma")]
        sigma: f64,
        #[serde(default = "default_irm_lambda")]
        lambda_out: f64,
        seed: u64,
    },
    DataCleaning {
        n_train: usize,
        n_val: usize,
        corrupt_frac: f64,
        seed: u64,
    },
    LinearComp {
        p: usize,
        d: usize,
        m: usize,
        n: usize,
        seed: u64,
        #[serde(default)]
        conditional: bool,
    },
    QuadMinimax {
        p: usize,
        d: usize,
        m: usize,
        seed: u64,
    },
}

impl ProblemConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemConfig::Quadratic { .. } => "quadratic",
            ProblemConfig::Irm { .. } => "irm",
            ProblemConfig::DataCleaning { .. } => "data_cleaning",
            ProblemConfig::LinearComp { .. } => "linear_comp",
            ProblemConfig::QuadMinimax { .. } => "quad_minimax",
        }
    }

    pub fn build(&self) -> Result<Problem, CliError> {
        let field = |e: wior_core::Error| CliError::Config(format!("problem: {e}"));
        Ok(match *self {
            ProblemConfig::Quadratic {
                p,
                d,
                m,
                n,
                kappa,
                seed,
                lambda,
                heterogeneity,
            } => {
                let mut spec = QuadraticSpec::new(p, d, m, n, kappa, seed);
                if let Some(l) = lambda {
                    spec.lambda = l;
                }
                if let Some(h) = heterogeneity {
                    spec.heterogeneity = h;
                }
                Problem::Quadratic(QuadraticBilevel::generate(&spec).map_err(field)?)
            }
            ProblemConfig::Irm {
                m,
                n,
                p,
                sigma,
                lambda_out,
                seed,
            } => Problem::Irm(gen_irm(m, n, p, sigma, lambda_out, seed).map_err(field)?),
            ProblemConfig::DataCleaning {
                n_train,
                n_val,
                corrupt_frac,
                seed,
            } => Problem::DataCleaning(gen_data_cleaning_small(n_train, n_val, corrupt_frac, seed).map_err(field)?),
            ProblemConfig::LinearComp {
                p,
                d,
                m,
                n,
                seed,
                conditional,
            } => Problem::LinearComp(gen_linear_comp(p, d, m, n, seed, conditional).map_err(field)?),
            ProblemConfig::QuadMinimax { p, d, m, seed } => {
                Problem::QuadMinimax(gen_quad_minimax(p, d, m, seed).map_err(field)?)
            }
        })
    }
}

/// A generated instance.
#[derive(Clone, Debug)]
pub enum Problem {
    Quadratic(QuadraticBilevel),
    Irm(SyntheticIrm),
    DataCleaning(DataCleaningSmall),
    LinearComp(LinearComp),
    QuadMinimax(QuadMinimax),
}

/// Solver settings shared by every trial; `epochs` counts outer epochs for
/// the double-loop algorithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub epochs: usize,
    #[serde(default)]
    pub inner_epochs: Option<usize>,
    pub rates: RateConfig,
    #[serde(default)]
    pub eval_interval: Option<usize>,
    #[serde(default)]
    pub max_wall_seconds: Option<f64>,
    #[serde(default)]
    pub reference_tol: Option<f64>,
    #[serde(default)]
    pub warm_start: Option<WarmStart>,
    #[serde(default)]
    pub inner_mode: Option<InnerMode>,
    #[serde(default)]
    pub inner_schedule: Option<Schedule>,
}

impl RunSection {
    pub fn single_loop(&self, strategy: Strategy, seed: u64) -> RunConfig {
        let mut c = RunConfig::new(self.epochs, self.rates, strategy, seed);
        c.eval_interval = self.eval_interval;
        c.max_wall_seconds = self.max_wall_seconds;
        if let Some(tol) = self.reference_tol {
            c.reference_tol = tol;
        }
        c
    }

    pub fn double_loop(&self, strategy: Strategy, seed: u64) -> CondRunConfig {
        let mut c = CondRunConfig::new(self.epochs, self.inner_epochs.unwrap_or(1), self.rates, strategy, seed);
        c.eval_interval = self.eval_interval;
        c.max_wall_seconds = self.max_wall_seconds;
        if let Some(tol) = self.reference_tol {
            c.reference_tol = tol;
        }
        c.warm_start = self.warm_start.unwrap_or_default();
        c.inner_mode = self.inner_mode.unwrap_or_default();
        c.inner_schedule = self.inner_schedule.unwrap_or_default();
        c
    }
}

/// Settings of the gradient-error fit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Window lengths; `1..=n` over one epoch of the outer examples when unset.
    #[serde(default)]
    pub k_values: Option<Vec<usize>>,
    /// Order length in epochs of the outer examples (default 1).
    #[serde(default)]
    pub epochs: Option<usize>,
}

fn all_samplers() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_target() -> f64 {
    DEFAULT_TARGET
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub algorithm: Algorithm,
    pub problem: ProblemConfig,
    #[serde(default = "all_samplers")]
    pub samplers: Vec<Strategy>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Tolerance on the hypergradient norm for epochs-to-tolerance.
    #[serde(default = "default_target")]
    pub target: f64,
    pub run: RunSection,
    #[serde(default)]
    pub fit: FitSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks that do not need the generated instance.
    pub fn check(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.seeds.is_empty() {
            return bad("seeds: at least one trial seed is required".into());
        }
        if self.samplers.is_empty() {
            return bad("samplers: at least one sampler is required".into());
        }
        let mut seen = Vec::new();
        for s in &self.samplers {
            if seen.contains(s) {
                return bad(format!("samplers: {} listed twice", s.name()));
            }
            seen.push(*s);
        }
        if self.target.is_nan() || self.target <= 0.0 {
            return bad(format!("target: must be > 0, got {}", self.target));
        }
        let compatible = matches!(
            (self.algorithm, &self.problem),
            (Algorithm::WiorBo, ProblemConfig::Quadratic { .. } | ProblemConfig::DataCleaning { .. })
                | (
                    Algorithm::WiorCbo,
                    ProblemConfig::Irm { .. } | ProblemConfig::Quadratic { .. } | ProblemConfig::DataCleaning { .. }
                )
                | (Algorithm::WiorComp, ProblemConfig::LinearComp { conditional: false, .. })
                | (Algorithm::WiorCcomp, ProblemConfig::LinearComp { conditional: true, .. })
                | (Algorithm::WiorMinimax, ProblemConfig::QuadMinimax { .. })
        );
        if !compatible {
            return bad(format!(
                "algorithm: {} cannot run on problem kind {}{}",
                self.algorithm.name(),
                self.problem.kind(),
                match (&self.algorithm, &self.problem) {
                    (Algorithm::WiorComp | Algorithm::WiorCcomp, ProblemConfig::LinearComp { .. }) =>
                        " (check problem.conditional)",
                    _ => "",
                }
            ));
        }
        let run = &self.run;
        if self.algorithm.is_double_loop() {
            if run.inner_epochs.is_none() {
                return bad(format!("run.inner_epochs: required for {}", self.algorithm.name()));
            }
        } else {
            for (key, set) in [
                ("inner_epochs", run.inner_epochs.is_some()),
                ("warm_start", run.warm_start.is_some()),
                ("inner_mode", run.inner_mode.is_some()),
                ("inner_schedule", run.inner_schedule.is_some()),
            ] {
                if set {
                    return bad(format!("run.{key}: only valid for double-loop algorithms"));
                }
            }
        }
        let validated = if self.algorithm.is_double_loop() {
            run.double_loop(Strategy::RandomReshuffle, 0).validate()
        } else {
            run.single_loop(Strategy::RandomReshuffle, 0).validate()
        };
        validated.map_err(|e| CliError::Config(format!("run: {e}")))?;
        if let Some(ks) = &self.fit.k_values {
            if ks.is_empty() || ks.contains(&0) {
                return bad("fit.k_values: window lengths must be >= 1".into());
            }
        }
        if self.fit.epochs == Some(0) {
            return bad("fit.epochs: must be >= 1".into());
        }
        Ok(())
    }
}
