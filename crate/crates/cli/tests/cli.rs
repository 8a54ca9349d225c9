use std::fs;
use std::path::Path;
use std::process::Command;

use wior_cli::*;
use wior_core::{OracleCounters, Strategy};

const SMALL_QUADRATIC: &str = r#"
algorithm = "wior_bo"
seeds = [0, 1, 2, 3, 4]
target = 1e-3

[problem]
kind = "quadratic"
p = 4
d = 3
m = 8
n = 6
kappa = 5.0
seed = 1

[run]
epochs = 40
eval_interval = 24

[run.rates]
eta = 0.1
gamma = 0.1
rho = 0.1
"#;

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

fn opts(dir: &Path) -> RunOptions {
    RunOptions {
        out_dir: Some(dir.to_path_buf()),
        ..RunOptions::default()
    }
}

fn config_error(text: &str) -> String {
    match ExperimentConfig::from_toml(text) {
        Err(e @ CliError::Config(_)) => {
            assert_eq!(e.exit_code(), EXIT_CONFIG);
            e.to_string()
        }
        other => panic!("expected a config error, got {other:?}"),
    }
}

fn metric_columns(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn unknown_keys_are_reported_with_their_line() {
    let text = SMALL_QUADRATIC.replace("kappa = 5.0", "kappa = 5.0\nkapa = 5.0");
    let msg = config_error(&text);
    assert!(msg.contains("kapa"), "{msg}");
    assert!(msg.contains("line 6"), "{msg}");
    let msg = config_error(&SMALL_QUADRATIC.replace("rho = 0.1", "rho = 0.1\nrh0 = 1.0"));
    assert!(msg.contains("rh0"), "{msg}");
}

#[test]
fn semantic_errors_name_the_field() {
    assert!(config_error(&SMALL_QUADRATIC.replace("seeds = [0, 1, 2, 3, 4]", "seeds = []")).contains("seeds"));
    assert!(config_error(&SMALL_QUADRATIC.replace("wior_bo", "wior_minimax")).contains("algorithm"));
    assert!(config_error(&SMALL_QUADRATIC.replace("wior_bo", "wior_cbo")).contains("run.inner_epochs"));
    assert!(config_error(&SMALL_QUADRATIC.replace("epochs = 40", "epochs = 40\ninner_epochs = 2")).contains("run.inner_epochs"));
    assert!(config_error(&SMALL_QUADRATIC.replace("eta = 0.1", "eta = -0.1")).contains("run"));
    assert!(config_error(&SMALL_QUADRATIC.replace("target = 1e-3", "target = 0.0")).contains("target"));
    assert!(config_error(&format!("samplers = [\"independent\", \"independent\"]\n{SMALL_QUADRATIC}")).contains("samplers"));
    let bad_problem = config(&SMALL_QUADRATIC.replace("kappa = 5.0", "kappa = 0.5"));
    assert!(matches!(validate(&bad_problem), Err(CliError::Config(m)) if m.contains("problem")));
}

#[test]
fn run_writes_one_csv_per_trial_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(SMALL_QUADRATIC);
    let out = run_experiment(&cfg, &opts(dir.path())).unwrap();
    assert_eq!(out.exit_code(), EXIT_OK);
    let csvs: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    assert_eq!(csvs.len(), 15);
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 16, "no temporary files left behind: {names:?}");

    let text = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    let summary: ComparisonSummary = serde_json::from_str(&text).unwrap();
    assert_eq!(summary, out.summary);
    assert_eq!(summary.samplers.len(), 3);
    for s in &summary.samplers {
        let total = out
            .trials
            .iter()
            .filter(|t| t.strategy == s.sampler)
            .fold(OracleCounters::default(), |acc, t| OracleCounters {
                gc_f: acc.gc_f + t.trace.counters.gc_f,
                gc_g: acc.gc_g + t.trace.counters.gc_g,
                jv_g: acc.jv_g + t.trace.counters.jv_g,
                hv_g: acc.hv_g + t.trace.counters.hv_g,
            });
        assert_eq!(s.counters, total);
        assert_eq!(s.trials, 5);
        assert!(s.gradient_error.is_some());
    }
    let first = fs::read_to_string(dir.path().join(&out.trials[0].csv_file)).unwrap();
    assert_eq!(first.lines().next(), Some(wior_core::solvers::CSV_HEADER));
}

#[test]
fn reruns_reproduce_metric_columns() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = config(SMALL_QUADRATIC);
    let first = run_experiment(&cfg, &opts(a.path())).unwrap();
    let second = run_experiment(
        &cfg,
        &RunOptions {
            jobs: 3,
            ..opts(b.path())
        },
    )
    .unwrap();
    for t in &first.trials {
        let x = fs::read_to_string(a.path().join(&t.csv_file)).unwrap();
        let y = fs::read_to_string(b.path().join(&t.csv_file)).unwrap();
        assert_eq!(metric_columns(&x), metric_columns(&y));
    }
    assert_eq!(first.summary.samplers, second.summary.samplers);
}

#[test]
fn seed_offset_shifts_trial_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(SMALL_QUADRATIC);
    cfg.seeds = vec![0];
    cfg.samplers = vec![Strategy::RandomReshuffle];
    let out = run_experiment(
        &cfg,
        &RunOptions {
            seed_offset: 10,
            ..opts(dir.path())
        },
    )
    .unwrap();
    assert_eq!(out.trials[0].seed, 10);
    assert!(dir.path().join("wior_bo_random_reshuffle_seed10.csv").exists());
}

#[test]
fn irm_reshuffling_reaches_tolerance_no_later_than_independent() {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/irm_cbo.toml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&config(&text), &opts(dir.path())).unwrap();
    let rr = out.summary.sampler(Strategy::RandomReshuffle).unwrap();
    let ind = out.summary.sampler(Strategy::Independent).unwrap();
    assert!(
        rr.median_epochs_to_tolerance <= ind.median_epochs_to_tolerance,
        "rr {} vs independent {}",
        rr.median_epochs_to_tolerance,
        ind.median_epochs_to_tolerance
    );
    assert!(rr.median_epochs_to_tolerance.is_finite());
}

#[test]
fn unreached_targets_count_as_infinite() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(SMALL_QUADRATIC);
    cfg.target = 1e-300;
    cfg.seeds = vec![0, 1];
    let out = run_experiment(&cfg, &opts(dir.path())).unwrap();
    for s in &out.summary.samplers {
        assert_eq!(s.completed, 0);
        assert_eq!(s.incomplete_seeds, vec![0, 1]);
        assert!(s.median_epochs_to_tolerance.is_infinite());
        assert!(s.median_final_hypergrad_norm.is_some());
    }
    let json = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    assert!(json.contains("\"median_epochs_to_tolerance\": \"inf\""));
    assert_eq!(median(&[3.0, f64::INFINITY, 1.0]), Some(3.0));
    assert_eq!(median(&[2.0, f64::INFINITY]), Some(f64::INFINITY));
    assert_eq!(median(&[]), None);
}

#[test]
fn divergence_is_flagged_and_still_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(&SMALL_QUADRATIC.replace("eta = 0.1\ngamma = 0.1\nrho = 0.1", "eta = 1e3\ngamma = 1e3\nrho = 1e3"));
    cfg.seeds = vec![0];
    let out = run_experiment(&cfg, &opts(dir.path())).unwrap();
    assert!(out.any_diverged());
    assert_eq!(out.exit_code(), EXIT_DIVERGED);
    for s in &out.summary.samplers {
        assert_eq!(s.diverged_seeds, vec![0]);
        assert!(s.median_final_hypergrad_norm.is_none());
    }
    assert!(dir.path().join(&out.trials[0].csv_file).exists());
}

#[test]
fn fit_errors_on_the_quadratic_instance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(
        &SMALL_QUADRATIC
            .replace("m = 8", "m = 32")
            .replace("p = 4", "p = 10")
            .replace("d = 3", "d = 10"),
    );
    cfg.seeds = (0..20).collect();
    let fits = fit_sampler_errors(&cfg, &opts(dir.path())).unwrap();
    let by = |s| fits.iter().find(|f| f.sampler == s).unwrap();
    for s in [Strategy::RandomReshuffle, Strategy::ShuffleOnce] {
        for f in &by(s).fits {
            assert_eq!(*f.fit.k_values.last().unwrap(), 32);
            assert!(*f.fit.sq_errors.last().unwrap() < 1e-24);
        }
    }
    let ind = by(Strategy::Independent).median_alpha_hat;
    assert!((0.5..=1.5).contains(&ind), "independent alpha {ind}");
    assert!(by(Strategy::RandomReshuffle).median_alpha_hat > ind);
    let written: Vec<SamplerFit> = serde_json::from_str(&fs::read_to_string(dir.path().join(FIT_FILE)).unwrap()).unwrap();
    assert_eq!(written.len(), 3);
}

#[test]
fn every_shipped_config_validates() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        validate(&cfg).unwrap();
        seen += 1;
    }
    assert!(seen >= 5);
}

fn wior(args: &[&str], out_env: Option<&Path>) -> (i32, String, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wior"));
    cmd.args(args).env_remove(OUT_DIR_ENV);
    if let Some(p) = out_env {
        cmd.env(OUT_DIR_ENV, p);
    }
    let out = cmd.output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(&good, SMALL_QUADRATIC.replace("seeds = [0, 1, 2, 3, 4]", "seeds = [0]")).unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, SMALL_QUADRATIC.replace("seeds = [0, 1, 2, 3, 4]", "seeds = []")).unwrap();
    let diverging = dir.path().join("diverging.toml");
    fs::write(
        &diverging,
        SMALL_QUADRATIC
            .replace("seeds = [0, 1, 2, 3, 4]", "seeds = [0]")
            .replace("eta = 0.1", "eta = 1e3")
            .replace("gamma = 0.1", "gamma = 1e3"),
    )
    .unwrap();
    let g = good.to_str().unwrap();

    assert_eq!(wior(&["validate", g], None).0, EXIT_OK);
    let (code, _, err) = wior(&["validate", bad.to_str().unwrap()], None);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("seeds"), "{err}");
    assert_eq!(wior(&["validate", "/nonexistent/config.toml"], None).0, EXIT_IO);
    assert_eq!(wior(&["frobnicate"], None).0, EXIT_CONFIG);

    let env_dir = dir.path().join("from-env");
    let (code, stdout, _) = wior(&["run", g], Some(&env_dir));
    assert_eq!(code, EXIT_OK, "{stdout}");
    assert!(env_dir.join(SUMMARY_FILE).exists());

    let flag_dir = dir.path().join("from-flag");
    let args = ["run", g, "--out-dir", flag_dir.to_str().unwrap(), "--jobs", "2", "--seed-offset", "3"];
    assert_eq!(wior(&args, Some(&env_dir)).0, EXIT_OK);
    assert!(flag_dir.join("wior_bo_independent_seed3.csv").exists());

    let div_dir = dir.path().join("div");
    let (code, _, err) = wior(&["run", diverging.to_str().unwrap(), "--out-dir", div_dir.to_str().unwrap()], None);
    assert_eq!(code, EXIT_DIVERGED, "{err}");

    let fit_dir = dir.path().join("fit");
    assert_eq!(wior(&["fit-errors", g, "--out-dir", fit_dir.to_str().unwrap()], None).0, EXIT_OK);
    assert!(fit_dir.join(FIT_FILE).exists());

    let blocked = dir.path().join("file-not-dir");
    fs::write(&blocked, "").unwrap();
    assert_eq!(wior(&["run", g, "--out-dir", blocked.to_str().unwrap()], None).0, EXIT_IO);
}
