//! Experiment harness: runs solver and sampler combinations from a config
//! file, writes one CSV per trace and a JSON comparison summary.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wior_core::oracle::SingleContext;
use wior_core::sampler::signed_inf;
use wior_core::solvers::{epochs_to_tolerance, wior_bo, wior_cbo, wior_ccomp, wior_comp, wior_minimax};
use wior_core::{
    make_order, measure_avg_gradient_error, BilevelOracle, CompositionalOracle, ConditionalOracle, GradientErrorFit,
    Iterate, MinimaxOracle, OracleCounters, RunTrace, Strategy,
};

pub use config::{Algorithm, ExperimentConfig, FitSection, Problem, ProblemConfig, RunSection};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const SUMMARY_FILE: &str = "summary.json";
pub const FIT_FILE: &str = "gradient_errors.json";
pub const OUT_DIR_ENV: &str = "WIOR_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "wior-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] wior_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => EXIT_IO,
            CliError::Solver(wior_core::Error::Diverged { .. }) => EXIT_DIVERGED,
            _ => EXIT_CONFIG,
        }
    }
}

/// Command-line overrides applied on top of a config.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub jobs: usize,
    pub seed_offset: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            out_dir: None,
            jobs: 1,
            seed_offset: 0,
        }
    }
}

impl RunOptions {
    /// `--out-dir`, then the config's `out_dir`, then [`DEFAULT_OUT_DIR`].
    pub fn resolve_out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    fn seeds(&self, cfg: &ExperimentConfig) -> Vec<u64> {
        cfg.seeds.iter().map(|s| s.wrapping_add(self.seed_offset)).collect()
    }
}

/// One (sampler, seed) run.
#[derive(Clone, Debug)]
pub struct Trial {
    pub strategy: Strategy,
    pub seed: u64,
    pub trace: RunTrace,
    pub diverged: bool,
    pub csv_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub sampler: Strategy,
    pub seed: u64,
    /// `inf` when the target was never reached.
    #[serde(with = "signed_inf")]
    pub epochs_to_tolerance: f64,
    pub final_hypergrad_norm: Option<f64>,
    pub diverged: bool,
    pub truncated: bool,
    pub counters: OracleCounters,
    pub csv_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    #[serde(with = "signed_inf")]
    pub median_alpha_hat: f64,
    pub median_c_hat: f64,
    pub a_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSummary {
    pub sampler: Strategy,
    pub trials: usize,
    /// Trials that reached the target without diverging.
    pub completed: usize,
    /// Seeds of trials that never reached the target; they count as `inf` in the median.
    pub incomplete_seeds: Vec<u64>,
    pub diverged_seeds: Vec<u64>,
    #[serde(with = "signed_inf")]
    pub median_epochs_to_tolerance: f64,
    /// Median over trials that did not diverge.
    pub median_final_hypergrad_norm: Option<f64>,
    /// Sum of the per-trace final counters.
    pub counters: OracleCounters,
    pub gradient_error: Option<FitSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub name: Option<String>,
    pub algorithm: Algorithm,
    pub problem: String,
    pub target: f64,
    /// Projection radius actually used (explicit or `C_f / mu`).
    pub iota: Option<f64>,
    pub samplers: Vec<SamplerSummary>,
    pub trials: Vec<TrialSummary>,
}

impl ComparisonSummary {
    pub fn sampler(&self, s: Strategy) -> Option<&SamplerSummary> {
        self.samplers.iter().find(|x| x.sampler == s)
    }
}

pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub trials: Vec<Trial>,
    pub summary: ComparisonSummary,
}

impl RunOutcome {
    pub fn any_diverged(&self) -> bool {
        self.trials.iter().any(|t| t.diverged)
    }

    pub fn exit_code(&self) -> i32 {
        if self.any_diverged() {
            EXIT_DIVERGED
        } else {
            EXIT_OK
        }
    }
}

/// Median that keeps `+inf` entries (they sort last).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))
}

fn solve(problem: &Problem, cfg: &ExperimentConfig, strategy: Strategy, seed: u64) -> wior_core::Result<RunTrace> {
    let single = || cfg.run.single_loop(strategy, seed);
    let double = || cfg.run.double_loop(strategy, seed);
    match (cfg.algorithm, problem) {
        (Algorithm::WiorBo, Problem::Quadratic(q)) => wior_bo(q, &Iterate::zeros(q.outer_dim(), q.inner_dim()), &single()),
        (Algorithm::WiorBo, Problem::DataCleaning(q)) => {
            wior_bo(q, &Iterate::zeros(q.outer_dim(), q.inner_dim()), &single())
        }
        (Algorithm::WiorCbo, Problem::Irm(q)) => wior_cbo(q, &vec![0.0; q.outer_dim()], &double()),
        (Algorithm::WiorCbo, Problem::Quadratic(q)) => wior_cbo(&SingleContext(q), &vec![0.0; q.outer_dim()], &double()),
        (Algorithm::WiorCbo, Problem::DataCleaning(q)) => {
            wior_cbo(&SingleContext(q), &vec![0.0; q.outer_dim()], &double())
        }
        (Algorithm::WiorComp, Problem::LinearComp(q)) => {
            let (p, d) = (CompositionalOracle::outer_dim(q), CompositionalOracle::inner_dim(q));
            wior_comp(q, &Iterate::zeros(p, d), &single())
        }
        (Algorithm::WiorCcomp, Problem::LinearComp(q)) => {
            wior_ccomp(q, &vec![0.0; CompositionalOracle::outer_dim(q)], &double())
        }
        (Algorithm::WiorMinimax, Problem::QuadMinimax(q)) => {
            let init = Iterate::new(vec![0.0; q.outer_dim()], vec![0.0; q.inner_dim()], vec![]);
            wior_minimax(q, &init, &single())
        }
        (a, _) => Err(wior_core::Error::InvalidArgument(format!(
            "{} cannot run on this problem",
            a.name()
        ))),
    }
}

fn run_trial(problem: &Problem, cfg: &ExperimentConfig, strategy: Strategy, seed: u64) -> Result<Trial, CliError> {
    let (trace, diverged) = match solve(problem, cfg, strategy, seed) {
        Ok(t) => (t, false),
        Err(wior_core::Error::Diverged { trace, .. }) => (*trace, true),
        Err(e) => return Err(e.into()),
    };
    Ok(Trial {
        strategy,
        seed,
        trace,
        diverged,
        csv_file: format!("{}_{}_seed{}.csv", cfg.algorithm.name(), strategy.name(), seed),
    })
}

/// Runs every (sampler, seed) combination and writes the CSVs and `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    cfg.check()?;
    let problem = cfg.problem.build()?;
    let out_dir = opts.resolve_out_dir(cfg);
    create_dir(&out_dir)?;
    let seeds = opts.seeds(cfg);
    let jobs: Vec<(Strategy, u64)> = cfg
        .samplers
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();

    let trials: Vec<Trial> = pool(opts.jobs)?.install(|| {
        jobs.par_iter()
            .map(|&(s, seed)| {
                let trial = run_trial(&problem, cfg, s, seed)?;
                write_atomic(&out_dir.join(&trial.csv_file), trial.trace.to_csv().as_bytes())?;
                Ok(trial)
            })
            .collect::<Result<_, CliError>>()
    })?;

    let fits = sampler_fits(&problem, cfg, &seeds);
    let summary = summarize(cfg, &trials, |s| {
        fits.iter()
            .find(|f| f.sampler == s)
            .map(|f| FitSummary {
                median_alpha_hat: f.median_alpha_hat,
                median_c_hat: f.median_c_hat,
                a_hat: f.a_hat,
            })
    });
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&out_dir.join(SUMMARY_FILE), json.as_bytes())?;
    Ok(RunOutcome {
        out_dir,
        trials,
        summary,
    })
}

fn summarize(
    cfg: &ExperimentConfig,
    trials: &[Trial],
    fit_for: impl Fn(Strategy) -> Option<FitSummary>,
) -> ComparisonSummary {
    let per_trial: Vec<TrialSummary> = trials
        .iter()
        .map(|t| {
            let reached = if t.diverged { None } else { epochs_to_tolerance(&t.trace, cfg.target) };
            TrialSummary {
                sampler: t.strategy,
                seed: t.seed,
                epochs_to_tolerance: reached.map_or(f64::INFINITY, |e| e as f64),
                final_hypergrad_norm: t.trace.final_hypergrad_norm(),
                diverged: t.diverged,
                truncated: t.trace.truncated,
                counters: t.trace.counters,
                csv_file: t.csv_file.clone(),
            }
        })
        .collect();
    let samplers = cfg
        .samplers
        .iter()
        .map(|&s| {
            let mine: Vec<&TrialSummary> = per_trial.iter().filter(|t| t.sampler == s).collect();
            let epochs: Vec<f64> = mine.iter().map(|t| t.epochs_to_tolerance).collect();
            let finals: Vec<f64> = mine
                .iter()
                .filter(|t| !t.diverged)
                .filter_map(|t| t.final_hypergrad_norm)
                .collect();
            let counters = mine.iter().fold(OracleCounters::default(), |acc, t| OracleCounters {
                gc_f: acc.gc_f + t.counters.gc_f,
                gc_g: acc.gc_g + t.counters.gc_g,
                jv_g: acc.jv_g + t.counters.jv_g,
                hv_g: acc.hv_g + t.counters.hv_g,
            });
            SamplerSummary {
                sampler: s,
                trials: mine.len(),
                completed: mine.iter().filter(|t| t.epochs_to_tolerance.is_finite()).count(),
                incomplete_seeds: mine.iter().filter(|t| !t.epochs_to_tolerance.is_finite()).map(|t| t.seed).collect(),
                diverged_seeds: mine.iter().filter(|t| t.diverged).map(|t| t.seed).collect(),
                median_epochs_to_tolerance: median(&epochs).unwrap_or(f64::INFINITY),
                median_final_hypergrad_norm: median(&finals),
                counters,
                gradient_error: fit_for(s),
            }
        })
        .collect();
    ComparisonSummary {
        name: cfg.name.clone(),
        algorithm: cfg.algorithm,
        problem: cfg.problem.kind().to_string(),
        target: cfg.target,
        iota: trials.iter().find_map(|t| t.trace.iota),
        samplers,
        trials: per_trial,
    }
}

/// Per-outer-example gradients at the zero state: `(∇_x f_i, ∇_y f_i)` for
/// the bilevel problems, `∇f_i(0)` for compositional ones and
/// `(∇_x φ_i, ∇_y φ_i)` for minimax.
pub fn per_example_gradients(problem: &Problem) -> Vec<Vec<f64>> {
    fn stack(a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
        a.into_iter().chain(b).collect()
    }
    fn bilevel<O: BilevelOracle>(o: &O) -> Vec<Vec<f64>> {
        let (x, y) = (vec![0.0; o.outer_dim()], vec![0.0; o.inner_dim()]);
        (0..o.outer_len()).map(|i| stack(o.grad_f_x(&x, &y, i), o.grad_f_y(&x, &y, i))).collect()
    }
    match problem {
        Problem::Quadratic(q) => bilevel(q),
        Problem::DataCleaning(q) => bilevel(q),
        Problem::Irm(q) => {
            let (x, y) = (vec![0.0; q.outer_dim()], vec![0.0; q.inner_dim()]);
            (0..q.outer_len()).map(|i| stack(q.grad_f_x(&x, &y, i), q.grad_f_y(&x, &y, i))).collect()
        }
        Problem::LinearComp(q) => {
            let y = vec![0.0; CompositionalOracle::inner_dim(q)];
            (0..CompositionalOracle::outer_len(q)).map(|i| CompositionalOracle::grad_f(q, &y, i)).collect()
        }
        Problem::QuadMinimax(q) => {
            let (x, y) = (vec![0.0; q.outer_dim()], vec![0.0; q.inner_dim()]);
            (0..q.outer_len()).map(|i| stack(q.grad_x(&x, &y, i), q.grad_y(&x, &y, i))).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFit {
    pub seed: u64,
    pub fit: GradientErrorFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerFit {
    pub sampler: Strategy,
    #[serde(with = "signed_inf")]
    pub median_alpha_hat: f64,
    pub median_c_hat: f64,
    pub a_hat: f64,
    pub fits: Vec<SeedFit>,
}

fn fit_one(grads: &[Vec<f64>], fit: &FitSection, s: Strategy, seeds: &[u64]) -> wior_core::Result<SamplerFit> {
    let n = grads.len();
    let length = n * fit.epochs.unwrap_or(1);
    let ks = fit.k_values.clone().unwrap_or_else(|| (1..=length).collect());
    let fits = seeds
        .iter()
        .map(|&seed| {
            let order = make_order(s, n, length, seed)?;
            Ok(SeedFit {
                seed,
                fit: measure_avg_gradient_error(grads, &order, &ks)?,
            })
        })
        .collect::<wior_core::Result<Vec<_>>>()?;
    let alphas: Vec<f64> = fits.iter().map(|f| f.fit.alpha_hat).collect();
    let cs: Vec<f64> = fits.iter().map(|f| f.fit.c_hat).collect();
    Ok(SamplerFit {
        sampler: s,
        median_alpha_hat: median(&alphas).unwrap_or(f64::NAN),
        median_c_hat: median(&cs).unwrap_or(f64::NAN),
        a_hat: fits[0].fit.a_hat,
        fits,
    })
}

fn sampler_fits(problem: &Problem, cfg: &ExperimentConfig, seeds: &[u64]) -> Vec<SamplerFit> {
    let grads = per_example_gradients(problem);
    cfg.samplers
        .iter()
        .filter_map(|&s| fit_one(&grads, &cfg.fit, s, seeds).ok())
        .collect()
}

/// Fits the averaged-gradient-error exponent per sampler at the initial state
/// over the trial seeds, and writes `gradient_errors.json`.
pub fn fit_sampler_errors(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<SamplerFit>, CliError> {
    cfg.check()?;
    let problem = cfg.problem.build()?;
    let seeds = opts.seeds(cfg);
    let grads = per_example_gradients(&problem);
    let fits = cfg
        .samplers
        .iter()
        .map(|&s| fit_one(&grads, &cfg.fit, s, &seeds))
        .collect::<wior_core::Result<Vec<_>>>()?;
    let out_dir = opts.resolve_out_dir(cfg);
    create_dir(&out_dir)?;
    let json = serde_json::to_string_pretty(&fits).expect("fits serialize");
    write_atomic(&out_dir.join(FIT_FILE), json.as_bytes())?;
    Ok(fits)
}

/// Parses the config and generates the instance without running anything.
pub fn validate(cfg: &ExperimentConfig) -> Result<Problem, CliError> {
    cfg.check()?;
    cfg.problem.build()
}
