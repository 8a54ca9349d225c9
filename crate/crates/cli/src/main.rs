use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wior_cli::{
    fit_sampler_errors, run_experiment, validate, CliError, ExperimentConfig, RunOptions, EXIT_CONFIG, EXIT_OK, OUT_DIR_ENV,
};

#[derive(Parser)]
#[command(name = "wior", version, about = "Run without-replacement bilevel solvers from experiment configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (sampler, seed) trial; writes per-trace CSVs and summary.json.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: Common,
        /// Number of trials run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Fit the averaged-gradient-error exponent per sampler; writes gradient_errors.json.
    FitErrors {
        config: PathBuf,
        #[command(flatten)]
        opts: Common,
    },
    /// Parse the config and generate the problem without running.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Output directory (overrides the config's out_dir).
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    /// Added to every trial seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run { config, opts, jobs } => {
            let cfg = ExperimentConfig::load(&config)?;
            let run_opts = RunOptions {
                out_dir: opts.out_dir,
                jobs,
                seed_offset: opts.seed_offset,
            };
            let outcome = run_experiment(&cfg, &run_opts)?;
            println!("{:<18} {:>7} {:>10} {:>16} {:>14}", "sampler", "trials", "completed", "median epochs", "median |grad|");
            for s in &outcome.summary.samplers {
                println!(
                    "{:<18} {:>7} {:>10} {:>16} {:>14}",
                    s.sampler.name(),
                    s.trials,
                    s.completed,
                    fmt_value(s.median_epochs_to_tolerance),
                    s.median_final_hypergrad_norm.map_or("-".into(), |v| format!("{v:.3e}")),
                );
            }
            for t in outcome.trials.iter().filter(|t| t.diverged) {
                eprintln!("diverged: {} seed {}", t.strategy.name(), t.seed);
            }
            println!("wrote {}", outcome.out_dir.display());
            Ok(outcome.exit_code())
        }
        Command::FitErrors { config, opts } => {
            let cfg = ExperimentConfig::load(&config)?;
            let run_opts = RunOptions {
                out_dir: opts.out_dir,
                jobs: 1,
                seed_offset: opts.seed_offset,
            };
            for f in fit_sampler_errors(&cfg, &run_opts)? {
                println!(
                    "{:<18} alpha_hat {:>8} C_hat {:.3e}",
                    f.sampler.name(),
                    fmt_value(f.median_alpha_hat),
                    f.median_c_hat
                );
            }
            Ok(EXIT_OK)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            validate(&cfg)?;
            println!(
                "ok: {} on {}, {} trials",
                cfg.algorithm.name(),
                cfg.problem.kind(),
                cfg.samplers.len() * cfg.seeds.len()
            );
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits with 2 on usage errors, which would read as divergence
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { EXIT_OK as u8 });
        }
    };
    let code = match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
