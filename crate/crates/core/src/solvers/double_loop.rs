use super::trace::{divergence, Metrics, Recorder};
use super::{CondRunConfig, InnerMode, RunTrace, WarmStart};
use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist, norm};
use crate::oracle::{
    ccomp_objective, conditional_inner_solve, reference_hypergradient_ccomp, reference_hypergradient_conditional,
    ConditionalCompositionalOracle, ConditionalOracle, Counted, DEFAULT_MAX_INNER_ITERS,
};
use crate::sampler::{sub_seed, OrderSource};
use crate::types::{project_ball, Iterate, OracleCounters, ProblemMeta, RateConfig, Schedule};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Both,
    YOnly,
    UOnly,
}

/// Inner-loop settings shared by one outer step.
struct InnerLoop {
    epochs: usize,
    mode: InnerMode,
    gamma: f64,
    rho: f64,
    schedule: Schedule,
    iota: f64,
}

impl InnerLoop {
    fn from_config(config: &CondRunConfig, iota: f64) -> Self {
        Self {
            epochs: config.inner_epochs,
            mode: config.inner_mode,
            gamma: config.rates.gamma,
            rho: config.rates.rho,
            schedule: config.inner_schedule,
            iota,
        }
    }

    /// Runs the inner epochs for one outer step, updating `y` and `u` in place.
    ///
    /// `step(y, u, j, phase, γ, ρ)` returns the next `(y, u)`; `on_y_epoch`
    /// sees `y` after every epoch that moved it. Returns a divergence reason
    /// when the state stops being finite.
    #[allow(clippy::too_many_arguments)]
    fn run<S, P>(
        &self,
        src: &OrderSource,
        first_epoch: u64,
        y: &mut Vec<f64>,
        u: &mut Vec<f64>,
        boundary: &mut Vec<f64>,
        mut step: S,
        mut on_y_epoch: P,
    ) -> Result<Option<String>>
    where
        S: FnMut(&[f64], &[f64], usize, Phase, f64, f64) -> (Vec<f64>, Vec<f64>),
        P: FnMut(&[f64]),
    {
        let phases: &[Phase] = match self.mode {
            InnerMode::Simultaneous => &[Phase::Both],
            InnerMode::TwoPhase => &[Phase::YOnly, Phase::UOnly],
        };
        for &phase in phases {
            for s in 0..self.epochs {
                let order = src.epoch(first_epoch + s as u64, src.n_examples)?;
                if phase != Phase::YOnly {
                    if !all_finite(u) {
                        return Ok(Some("non-finite inner state".into()));
                    }
                    *u = project_ball(u, self.iota)?;
                    boundary.push(norm(u));
                }
                let f = self.schedule.factor(s);
                let (gamma, rho) = (self.gamma * f, self.rho * f);
                for &j in &order.indices {
                    let (ny, nu) = step(y, u, j, phase, gamma, rho);
                    *y = ny;
                    *u = nu;
                }
                if !(all_finite(y) && all_finite(u)) {
                    return Ok(Some("non-finite inner state".into()));
                }
                if phase != Phase::UOnly {
                    on_y_epoch(y);
                }
            }
        }
        Ok(None)
    }
}

fn check_x0(x0: &[f64], p: usize) -> Result<()> {
    if x0.len() != p {
        return Err(Error::DimensionMismatch {
            what: "x0",
            expected: p,
            got: x0.len(),
        });
    }
    if !all_finite(x0) {
        return Err(Error::NonFinite("x0"));
    }
    Ok(())
}

fn inner_source(config: &CondRunConfig, i: usize, n_i: usize) -> OrderSource {
    OrderSource::new(config.strategy, n_i, sub_seed(config.seed, &[1, i as u64]))
}

/// Outer loop shared by both conditional solvers.
///
/// `outer_step(x, i, η, y, u, boundary)` runs the inner loop of context `i`
/// from `(y, u)` and returns the next `x` or a divergence reason.
#[allow(clippy::too_many_arguments)]
fn drive<S, E>(
    name: &str,
    m: usize,
    d: usize,
    x0: &[f64],
    iota: f64,
    config: &CondRunConfig,
    counters: &dyn Fn() -> OracleCounters,
    reference_counters: &dyn Fn() -> OracleCounters,
    mut outer_step: S,
    mut evaluate: E,
) -> Result<RunTrace>
where
    S: FnMut(&[f64], usize, u64, f64, &mut Vec<f64>, &mut Vec<f64>, &mut Vec<f64>) -> Result<(Vec<f64>, Option<String>)>,
    E: FnMut(&[f64]) -> Result<Metrics>,
{
    if m == 0 {
        return Err(Error::InvalidDataset("empty outer dataset".into()));
    }
    let eval = config.eval_interval.unwrap_or(m);
    let mut it = Iterate::new(x0.to_vec(), vec![0.0; d], vec![0.0; d]);
    let mut rec = Recorder::new(name, config.strategy, config.seed, Some(iota), config.max_wall_seconds, &it);
    let outer = OrderSource::new(config.strategy, m, sub_seed(config.seed, &[0]));
    let mut boundary = Vec::new();
    rec.record(0, 0, counters(), evaluate(&it.x)?);
    let mut t = 0usize;
    for r in 0..config.outer_epochs {
        let order = outer.epoch(r as u64, m)?;
        let eta = config.rates.eta * config.rates.schedule.factor(r);
        for &i in &order.indices {
            let (mut y, mut u) = match config.warm_start {
                WarmStart::FreshEachOuterStep => (vec![0.0; d], vec![0.0; d]),
                WarmStart::CarryOver => (it.y.clone(), it.u.clone()),
            };
            let first_epoch = t as u64 * config.inner_epochs as u64;
            let (x, bad) = outer_step(&it.x, i, first_epoch, eta, &mut y, &mut u, &mut boundary)?;
            for b in boundary.drain(..) {
                rec.boundary_norm(b);
            }
            t += 1;
            let next = Iterate::new(x, y, u);
            if let Some(reason) = bad.or_else(|| divergence(&next)) {
                return Err(rec.diverged(t, reason, it, counters(), reference_counters()));
            }
            it = next;
            if t.is_multiple_of(eval) {
                rec.record(t, t / m, counters(), evaluate(&it.x)?);
            }
            if rec.out_of_time() {
                if rec.last_step() != Some(t) {
                    rec.record(t, t / m, counters(), evaluate(&it.x)?);
                }
                return Ok(rec.finish(it, counters(), reference_counters(), true));
            }
        }
    }
    if rec.last_step() != Some(t) {
        rec.record(t, t / m, counters(), evaluate(&it.x)?);
    }
    Ok(rec.finish(it, counters(), reference_counters(), false))
}

/// Double-loop conditional bilevel solver.
///
/// For each outer sample `i` (a permutation of the outer dataset per epoch,
/// or i.i.d. draws), `S` inner epochs over the inner dataset of `i` run
///
/// ```text
/// y ← y − γ ∇_y g(x, y; ζ_{i,j})
/// u ← u − ρ (∇²_yy g(x, y; ζ_{i,j}) u − ∇_y f(x, y; ξ_i))
/// ```
///
/// with `x` fixed and `u` projected at every inner-epoch start, followed by
/// `x ← x − η (∇_x f(x, y; ξ_i) − ∇²_xy g^{(i)}(x, y) u)`.
pub fn wior_cbo<O>(oracle: &O, x0: &[f64], config: &CondRunConfig) -> Result<RunTrace>
where
    O: ConditionalOracle + ?Sized,
{
    config.validate()?;
    let (p, d, m) = (oracle.outer_dim(), oracle.inner_dim(), oracle.outer_len());
    check_x0(x0, p)?;
    if (0..m).any(|i| oracle.inner_len(i) == 0) {
        return Err(Error::InvalidDataset("an outer example has an empty inner dataset".into()));
    }
    let iota = config.rates.resolve_iota(&oracle.meta())?;
    let run = Counted::new(oracle);
    let reference = Counted::new(oracle);
    let inner = InnerLoop::from_config(config, iota);
    let outer_step = |x: &[f64], i: usize, first: u64, eta: f64, y: &mut Vec<f64>, u: &mut Vec<f64>, b: &mut Vec<f64>| {
        let src = inner_source(config, i, oracle.inner_len(i));
        let bad = inner.run(&src, first, y, u, b, |y, u, j, phase, gamma, rho| cbo_inner_step(&run, x, y, u, i, j, phase, gamma, rho), |_| {})?;
        let fx = run.grad_f_x(x, y, i);
        let ju = run.ctx_jvp_g_xy(x, y, i, u);
        let next: Vec<f64> = (0..p).map(|k| x[k] - eta * (fx[k] - ju[k])).collect();
        Ok((next, bad))
    };
    let tol = config.reference_tol;
    let evaluate = |x: &[f64]| -> Result<Metrics> {
        let rep = reference_hypergradient_conditional(&reference, x, tol)?;
        let loss = (0..m)
            .map(|i| reference.value_f(x, &rep.ys[i], i))
            .sum::<Option<f64>>()
            .map(|s| s / m as f64);
        Ok(Metrics {
            hypergrad_norm: norm(&rep.grad),
            loss,
            y_err: None,
            u_err: None,
        })
    };
    drive("wior_cbo", m, d, x0, iota, config, &|| run.counters(), &|| reference.counters(), outer_step, evaluate)
}

#[allow(clippy::too_many_arguments)]
fn cbo_inner_step<O>(
    run: &Counted<'_, O>,
    x: &[f64],
    y: &[f64],
    u: &[f64],
    i: usize,
    j: usize,
    phase: Phase,
    gamma: f64,
    rho: f64,
) -> (Vec<f64>, Vec<f64>)
where
    O: ConditionalOracle + ?Sized,
{
    let d = y.len();
    let ny = if phase == Phase::UOnly {
        y.to_vec()
    } else {
        let gy = run.grad_g_y(x, y, i, j);
        (0..d).map(|k| y[k] - gamma * gy[k]).collect()
    };
    let nu = if phase == Phase::YOnly {
        u.to_vec()
    } else {
        let hu = run.hvp_g_yy(x, y, i, j, u);
        let fy = run.grad_f_y(x, y, i);
        (0..d).map(|k| u[k] - rho * (hu[k] - fy[k])).collect()
    };
    (ny, nu)
}

/// Double-loop conditional compositional solver: moving averages
/// `y ← (1 − γ) y + γ r(x; ζ_{i,j})`, `u ← (1 − ρ) u + ρ ∇f(y; ξ_i)` in the
/// inner loop, then `x ← x − η ∇r^{(i)}(x) u`.
pub fn wior_ccomp<O>(oracle: &O, x0: &[f64], config: &CondRunConfig) -> Result<RunTrace>
where
    O: ConditionalCompositionalOracle + ?Sized,
{
    config.validate()?;
    let (p, d, m) = (oracle.outer_dim(), oracle.inner_dim(), oracle.outer_len());
    check_x0(x0, p)?;
    if (0..m).any(|i| oracle.inner_len(i) == 0) {
        return Err(Error::InvalidDataset("an outer example has an empty inner dataset".into()));
    }
    let iota = config.rates.resolve_iota(&oracle.meta())?;
    let run = Counted::new(oracle);
    let reference = Counted::new(oracle);
    let inner = InnerLoop::from_config(config, iota);
    let outer_step = |x: &[f64], i: usize, first: u64, eta: f64, y: &mut Vec<f64>, u: &mut Vec<f64>, b: &mut Vec<f64>| {
        let src = inner_source(config, i, oracle.inner_len(i));
        let step = |y: &[f64], u: &[f64], j: usize, phase: Phase, gamma: f64, rho: f64| {
            let ny = if phase == Phase::UOnly {
                y.to_vec()
            } else {
                let rj = run.r(x, i, j);
                (0..d).map(|k| (1.0 - gamma) * y[k] + gamma * rj[k]).collect()
            };
            let nu = if phase == Phase::YOnly {
                u.to_vec()
            } else {
                let fy = run.grad_f(y, i);
                (0..d).map(|k| (1.0 - rho) * u[k] + rho * fy[k]).collect()
            };
            (ny, nu)
        };
        let bad = inner.run(&src, first, y, u, b, step, |_| {})?;
        let ju = run.ctx_jvp_r(x, i, u);
        let next: Vec<f64> = (0..p).map(|k| x[k] - eta * ju[k]).collect();
        Ok((next, bad))
    };
    let evaluate = |x: &[f64]| -> Result<Metrics> {
        let grad = reference_hypergradient_ccomp(&reference, x)?;
        Ok(Metrics {
            hypergrad_norm: norm(&grad),
            loss: ccomp_objective(oracle, x),
            y_err: None,
            u_err: None,
        })
    };
    drive("wior_ccomp", m, d, x0, iota, config, &|| run.counters(), &|| reference.counters(), outer_step, evaluate)
}

/// `‖y − y_x^{(i)}‖` after each of the `S` inner epochs of one outer step at
/// `x` for context `i`, starting from `y = 0` and using the strategy, seed,
/// rates and inner mode of `config`.
pub fn inner_contraction_probe<O>(oracle: &O, x: &[f64], i: usize, config: &CondRunConfig) -> Result<Vec<f64>>
where
    O: ConditionalOracle + ?Sized,
{
    config.validate()?;
    let d = oracle.inner_dim();
    check_x0(x, oracle.outer_dim())?;
    if i >= oracle.outer_len() {
        return Err(Error::invalid(format!("context {i} out of range")));
    }
    let iota = config.rates.resolve_iota(&oracle.meta())?;
    let y_star = conditional_inner_solve(oracle, x, i, config.reference_tol, DEFAULT_MAX_INNER_ITERS)?;
    let inner = InnerLoop::from_config(config, iota);
    let src = inner_source(config, i, oracle.inner_len(i));
    let (mut y, mut u) = (vec![0.0; d], vec![0.0; d]);
    let mut boundary = Vec::new();
    let mut errs = Vec::with_capacity(config.inner_epochs);
    let counted = Counted::new(oracle);
    let bad = inner.run(
        &src,
        0,
        &mut y,
        &mut u,
        &mut boundary,
        |y, u, j, phase, gamma, rho| cbo_inner_step(&counted, x, y, u, i, j, phase, gamma, rho),
        |y| errs.push(dist(y, &y_star)),
    )?;
    if let Some(reason) = bad {
        return Err(Error::invalid(format!("inner loop diverged: {reason}")));
    }
    Ok(errs)
}

/// Rates of the double-loop convergence analysis:
/// `η = 1/(8kL)`, `γ = 1/(256kLκ)`, `ρ = 1/(512kLκ)`, with `L` standing in
/// for the smoothness constant of the hyper-objective.
pub fn theory_rates(meta: &ProblemMeta, k: f64) -> Result<RateConfig> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::invalid(format!("k must be positive, got {k}")));
    }
    let (l, kappa) = (meta.l, meta.kappa());
    let rates = RateConfig::new(1.0 / (8.0 * k * l), 1.0 / (256.0 * k * l * kappa), 1.0 / (512.0 * k * l * kappa))?;
    Ok(match meta.default_iota() {
        Some(iota) => rates.with_iota(iota),
        None => rates,
    })
}
