use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use wior_core::linalg::{dist, norm};
use wior_core::oracle::{exact_hypergradient, SingleContext, REFERENCE_TOL};
use wior_core::problems::*;
use wior_core::solvers::*;
use wior_core::*;

fn one_d() -> QuadraticBilevel {
    let m1 = |v: f64| DMatrix::from_element(1, 1, v);
    let v1 = |v: f64| DVector::from_element(1, v);
    QuadraticBilevel::from_parts(vec![m1(2.0)], vec![m1(1.0)], vec![v1(0.0)], vec![v1(1.0)], vec![v1(0.0)], 1.0, None).unwrap()
}

fn small_quadratic(seed: u64) -> QuadraticBilevel {
    gen_quadratic_bilevel(4, 3, 6, 4, 5.0, seed).unwrap()
}

fn rates(eta: f64, gamma: f64, rho: f64) -> RateConfig {
    RateConfig::new(eta, gamma, rho).unwrap()
}

type Metrics = (usize, f64, Option<f64>, Option<f64>, Option<f64>, OracleCounters);

fn metrics(t: &RunTrace) -> Vec<Metrics> {
    t.records
        .iter()
        .map(|r| (r.step, r.hypergrad_norm, r.loss, r.y_err, r.u_err, r.counters))
        .collect()
}

#[test]
fn bo_single_step_by_hand() {
    let cfg = RunConfig::new(1, rates(0.1, 0.1, 0.1), Strategy::RandomReshuffle, 0);
    let t = wior_bo(&one_d(), &Iterate::zeros(1, 1), &cfg).unwrap();
    assert_eq!(t.final_iterate.x, vec![0.0]);
    assert_eq!(t.final_iterate.y, vec![0.0]);
    assert!((t.final_iterate.u[0] + 0.1).abs() <= 1e-15);
    assert_eq!(t.records.len(), 2);
    assert!((t.records[0].hypergrad_norm - 0.5).abs() < 1e-9);
}

#[test]
fn minimax_single_step_and_convergence_on_scalar_game() {
    let q = QuadMinimax::scalar_example();
    let init = Iterate::new(vec![1.0], vec![0.0], vec![]);
    let one = RunConfig::new(1, rates(0.1, 0.1, 0.0), Strategy::RandomReshuffle, 0);
    let t = wior_minimax(&q, &init, &one).unwrap();
    assert_eq!(t.final_iterate.x, vec![1.0]);
    assert!((t.final_iterate.y[0] - 0.1).abs() <= 1e-15);

    let long = RunConfig::new(2000, rates(0.1, 0.1, 0.0), Strategy::RandomReshuffle, 0).with_eval_interval(500);
    let t = wior_minimax(&q, &init, &long).unwrap();
    let it = &t.final_iterate;
    assert!(it.x[0].hypot(it.y[0]) < 1e-6, "{it:?}");
}

#[test]
fn zero_rates_are_a_fixed_point() {
    let zero = rates(0.0, 0.0, 0.0);
    let q = small_quadratic(0);
    let init = Iterate::new(vec![0.3, -0.2, 0.1, 0.4], vec![0.5, 0.0, -0.1], vec![0.01, 0.02, 0.0]);
    let t = wior_bo(&q, &init, &RunConfig::new(3, zero, Strategy::Independent, 1)).unwrap();
    assert_eq!(t.final_iterate, init);

    let comp = gen_linear_comp(3, 3, 4, 5, 0, false).unwrap();
    let init = Iterate::new(vec![0.1, 0.2, 0.3], vec![1.0, 0.0, 0.0], vec![0.0, 0.1, 0.0]);
    let t = wior_comp(&comp, &init, &RunConfig::new(3, zero, Strategy::ShuffleOnce, 1)).unwrap();
    assert_eq!(t.final_iterate, init);

    let mm = gen_quad_minimax(3, 2, 5, 0).unwrap();
    let init = Iterate::new(vec![0.1, 0.2, 0.3], vec![1.0, -1.0], vec![]);
    let t = wior_minimax(&mm, &init, &RunConfig::new(3, zero, Strategy::RandomReshuffle, 1)).unwrap();
    assert_eq!(t.final_iterate, init);
}

#[test]
fn zero_outer_rate_keeps_x_but_inner_loops_run() {
    let irm = gen_irm(6, 5, 3, 0.1, 0.1, 0).unwrap();
    let x0 = [0.4, -0.3, 0.2];
    let cfg = CondRunConfig::new(2, 3, rates(0.0, 0.2, 0.2), Strategy::RandomReshuffle, 0);
    let t = wior_cbo(&irm, &x0, &cfg).unwrap();
    assert_eq!(t.final_iterate.x, x0.to_vec());
    let steps = 2 * 6;
    assert_eq!(t.counters.gc_g, steps * 3 * 5);
    assert_eq!(t.counters.jv_g, steps);
    assert_ne!(t.final_iterate.y, vec![0.0]);

    let comp = gen_linear_comp(3, 3, 4, 2, 0, true).unwrap();
    let cfg = CondRunConfig::new(2, 2, rates(0.0, 0.5, 0.5), Strategy::Independent, 0);
    let t = wior_ccomp(&comp, &x0, &cfg).unwrap();
    assert_eq!(t.final_iterate.x, x0.to_vec());
}

#[test]
fn runs_are_deterministic() {
    let q = small_quadratic(2);
    for strategy in Strategy::ALL {
        let cfg = RunConfig::new(5, rates(0.05, 0.1, 0.1), strategy, 9).with_eval_interval(3);
        let a = wior_bo(&q, &Iterate::zeros(4, 3), &cfg).unwrap();
        let b = wior_bo(&q, &Iterate::zeros(4, 3), &cfg).unwrap();
        assert_eq!(metrics(&a), metrics(&b));
        assert_eq!(a.final_iterate, b.final_iterate);
    }
    let irm = gen_irm(8, 4, 3, 0.1, 0.1, 1).unwrap();
    let cfg = CondRunConfig::new(3, 2, rates(0.3, 0.2, 0.2), Strategy::RandomReshuffle, 5).with_eval_interval(2);
    let a = wior_cbo(&irm, &[0.0; 3], &cfg).unwrap();
    let b = wior_cbo(&irm, &[0.0; 3], &cfg).unwrap();
    assert_eq!(metrics(&a), metrics(&b));
    assert_eq!(a.final_iterate, b.final_iterate);
}

#[test]
fn different_seeds_give_different_reshuffled_runs() {
    let q = small_quadratic(2);
    let run = |seed| {
        let cfg = RunConfig::new(3, rates(0.05, 0.1, 0.1), Strategy::RandomReshuffle, seed);
        wior_bo(&q, &Iterate::zeros(4, 3), &cfg).unwrap().final_iterate
    };
    assert_ne!(run(1), run(2));
}

#[test]
fn u_is_projected_at_every_epoch_boundary() {
    let q = small_quadratic(3);
    let cfg = RunConfig::new(20, rates(0.05, 0.1, 0.3).with_iota(0.05), Strategy::RandomReshuffle, 0);
    let t = wior_bo(&q, &Iterate::zeros(4, 3), &cfg).unwrap();
    assert_eq!(t.iota, Some(0.05));
    assert_eq!(t.boundary_u_norms.len(), 20);
    assert!(t.boundary_u_norms.iter().all(|&n| n <= 0.05 + 1e-15));
    assert!(t.boundary_u_norms.iter().any(|&n| n > 0.049), "radius never binds");
    assert_eq!(t.projection_violations(), 0);

    let irm = gen_irm(5, 4, 3, 0.1, 0.1, 0).unwrap();
    let cfg = CondRunConfig::new(2, 3, rates(0.3, 0.5, 0.5).with_iota(0.1), Strategy::ShuffleOnce, 0);
    let t = wior_cbo(&irm, &[1.0, -1.0, 2.0], &cfg).unwrap();
    assert_eq!(t.boundary_u_norms.len(), 2 * 5 * 3);
    assert_eq!(t.projection_violations(), 0);
}

#[test]
fn independent_indices_are_uniform() {
    let n = 20;
    let draws = 100_000;
    let order = make_order(Strategy::Independent, n, draws, 12345).unwrap();
    let mut counts = vec![0usize; n];
    for &i in &order.indices {
        counts[i] += 1;
    }
    let expected = draws as f64 / n as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat);
    assert!(p > 1e-3, "chi-square {stat}, p = {p}");

    // consecutive pairs are independent too
    let mut pairs = vec![0usize; n * n];
    for w in order.indices.windows(2) {
        pairs[w[0] * n + w[1]] += 1;
    }
    let expected = (draws - 1) as f64 / (n * n) as f64;
    let stat: f64 = pairs.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((n * n - 1) as f64).unwrap().cdf(stat);
    assert!(p > 1e-3, "pair chi-square {stat}, p = {p}");
}

#[test]
fn divergence_returns_last_finite_trace() {
    let q = small_quadratic(0);
    let cfg = RunConfig::new(50, rates(1e3, 1e3, 1e3), Strategy::RandomReshuffle, 0);
    match wior_bo(&q, &Iterate::zeros(4, 3), &cfg) {
        Err(Error::Diverged { step, trace, .. }) => {
            assert!(step > 0);
            assert!(trace.final_iterate.is_finite());
            assert!(norm(&trace.final_iterate.x) <= DIVERGENCE_NORM);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn wall_clock_limit_truncates() {
    let q = gen_quadratic_bilevel(10, 10, 32, 32, 10.0, 0).unwrap();
    let cfg = RunConfig::new(100_000, rates(0.01, 0.01, 0.01), Strategy::RandomReshuffle, 0).with_max_wall_seconds(0.05);
    let t = wior_bo(&q, &Iterate::zeros(10, 10), &cfg).unwrap();
    assert!(t.truncated);
    let last = t.last().unwrap();
    assert!(last.step < 100_000 * 32);
    assert_eq!(last.step as u64 * 2, t.counters.gc_f);
}

#[test]
fn ccomp_unit_rates_copy_the_samples() {
    let q = gen_linear_comp(3, 3, 1, 1, 4, true).unwrap();
    let x0 = [0.5, -1.0, 2.0];
    let r = ConditionalCompositionalOracle::r(&q, &x0, 0, 0);
    let run = |s: usize| {
        let cfg = CondRunConfig::new(1, s, rates(0.0, 1.0, 1.0).with_iota(1e9), Strategy::RandomReshuffle, 0);
        wior_ccomp(&q, &x0, &cfg).unwrap().final_iterate
    };
    let one = run(1);
    assert!(dist(&one.y, &r) <= 1e-14);
    // u reads the pre-step y, which is still the zero start on the first pass
    let f0 = ConditionalCompositionalOracle::grad_f(&q, &[0.0; 3], 0);
    assert!(dist(&one.u, &f0) <= 1e-14);
    let two = run(2);
    assert!(dist(&two.y, &r) <= 1e-14);
    assert!(dist(&two.u, &ConditionalCompositionalOracle::grad_f(&q, &r, 0)) <= 1e-14);
}

#[test]
fn comp_unit_gamma_assigns_the_sample() {
    let q = gen_linear_comp(3, 3, 2, 1, 0, false).unwrap();
    let init = Iterate::new(vec![0.2, 0.1, -0.3], vec![5.0, 5.0, 5.0], vec![0.0; 3]);
    let cfg = RunConfig::new(1, rates(0.0, 1.0, 0.0).with_iota(1e9), Strategy::RandomReshuffle, 0);
    let t = wior_comp(&q, &init, &cfg).unwrap();
    let r = CompositionalOracle::r(&q, &init.x, 0);
    assert!(dist(&t.final_iterate.y, &r) <= 1e-15);
}

#[test]
fn single_context_cbo_follows_exact_hypergradient_descent() {
    let mut spec = QuadraticSpec::new(3, 3, 4, 4, 4.0, 7);
    spec.heterogeneity = 0.0;
    let q = QuadraticBilevel::generate(&spec).unwrap();
    let wrapped = SingleContext(&q);
    let eta = 0.2;
    let mut x = vec![0.5, -0.5, 1.0];
    for _ in 0..5 {
        let cfg = CondRunConfig::new(1, 200, rates(eta, 0.2, 0.2).with_iota(1e6), Strategy::RandomReshuffle, 3);
        let t = wior_cbo(&wrapped, &x, &cfg).unwrap();
        let y_x = q.y_of(&x);
        assert!(dist(&t.final_iterate.y, &y_x) <= 1e-8);
        assert!(dist(&t.final_iterate.u, &q.u_of(&x)) <= 1e-8);
        let g = exact_hypergradient(&q, &x, REFERENCE_TOL).unwrap();
        let expected: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - eta * b).collect();
        assert!(dist(&t.final_iterate.x, &expected) <= 1e-6);
        x = t.final_iterate.x;
    }
}

/// Slow outer rate and a nearly homogeneous instance keep the tracking lag
/// well above the reshuffling noise floor for the whole run.
#[test]
fn tracking_errors_shrink_epoch_by_epoch() {
    for seed in 0..5 {
        let mut spec = QuadraticSpec::new(10, 10, 32, 32, 10.0, seed);
        spec.heterogeneity = 1e-4;
        let q = QuadraticBilevel::generate(&spec).unwrap();
        let cfg = RunConfig::new(60, rates(0.002, 0.05, 0.05), Strategy::RandomReshuffle, seed).with_eval_interval(1);
        let t = wior_bo(&q, &Iterate::zeros(10, 10), &cfg).unwrap();
        let epoch_median = |pick: &dyn Fn(&TraceRecord) -> f64| -> Vec<f64> {
            (10..60)
                .map(|e| {
                    let mut v: Vec<f64> = t.records.iter().filter(|r| r.step > e * 32 && r.step <= (e + 1) * 32).map(pick).collect();
                    v.sort_by(f64::total_cmp);
                    0.5 * (v[(v.len() - 1) / 2] + v[v.len() / 2])
                })
                .collect()
        };
        for (name, med) in [
            ("y_err", epoch_median(&|r| r.y_err.unwrap())),
            ("u_err", epoch_median(&|r| r.u_err.unwrap())),
        ] {
            for w in med.windows(2) {
                assert!(w[1] <= w[0], "seed {seed}: {name} epoch medians rose: {med:?}");
            }
        }
    }
}

#[test]
fn trace_csv_has_one_row_per_record() {
    let q = small_quadratic(0);
    let cfg = RunConfig::new(4, rates(0.05, 0.1, 0.1), Strategy::ShuffleOnce, 0);
    let t = wior_bo(&q, &Iterate::zeros(4, 3), &cfg).unwrap();
    let csv = t.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), t.records.len() + 1);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 11));

    let mm = gen_quad_minimax(2, 2, 3, 0).unwrap();
    let cfg = RunConfig::new(2, rates(0.05, 0.1, 0.0), Strategy::ShuffleOnce, 0);
    let t = wior_minimax(&mm, &Iterate::new(vec![0.0; 2], vec![0.0; 2], vec![]), &cfg).unwrap();
    let row = t.to_csv().lines().nth(1).unwrap().to_string();
    // minimax has no u estimate
    assert_eq!(row.split(',').nth(5), Some(""));
}

#[test]
fn reference_work_is_tallied_separately() {
    let q = small_quadratic(0);
    let cfg = RunConfig::new(3, rates(0.05, 0.1, 0.1), Strategy::RandomReshuffle, 0);
    let t = wior_bo(&q, &Iterate::zeros(4, 3), &cfg).unwrap();
    let steps = 3 * 12;
    assert_eq!(t.counters.gc_f, 2 * steps);
    assert_eq!(t.counters.hv_g, steps);
    assert!(t.reference_counters.gc_g > 0);
}

#[test]
fn carry_over_warm_start_reuses_inner_state() {
    let irm = gen_irm(10, 5, 3, 0.1, 0.1, 0).unwrap();
    let base = CondRunConfig::new(3, 1, rates(0.2, 0.05, 0.05), Strategy::RandomReshuffle, 0);
    let fresh = wior_cbo(&irm, &[0.1; 3], &base).unwrap();
    let carried = wior_cbo(&irm, &[0.1; 3], &base.clone().with_warm_start(WarmStart::CarryOver)).unwrap();
    assert_ne!(fresh.final_iterate.x, carried.final_iterate.x);
    assert_eq!(fresh.counters, carried.counters);
}

#[test]
fn theory_rates_follow_the_constants() {
    let meta = ProblemMeta::new(1.0, 4.0, Some(2.0)).unwrap();
    let r = theory_rates(&meta, 2.0).unwrap();
    assert!((r.eta - 1.0 / 64.0).abs() < 1e-15);
    assert!((r.gamma - 1.0 / (256.0 * 2.0 * 4.0 * 4.0)).abs() < 1e-15);
    assert!((r.rho - r.gamma / 2.0).abs() < 1e-15);
    assert!(theory_rates(&meta, 0.0).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let q = small_quadratic(0);
    let cfg = RunConfig::new(0, rates(0.1, 0.1, 0.1), Strategy::RandomReshuffle, 0);
    assert!(wior_bo(&q, &Iterate::zeros(4, 3), &cfg).is_err());
    let cfg = RunConfig::new(1, rates(0.1, 0.1, 0.1), Strategy::RandomReshuffle, 0);
    assert!(matches!(
        wior_bo(&q, &Iterate::zeros(3, 3), &cfg),
        Err(Error::DimensionMismatch { .. })
    ));
    let irm = gen_irm(3, 2, 2, 0.1, 0.1, 0).unwrap();
    let cfg = CondRunConfig::new(1, 0, rates(0.1, 0.1, 0.1), Strategy::RandomReshuffle, 0);
    assert!(wior_cbo(&irm, &[0.0; 2], &cfg).is_err());
}
