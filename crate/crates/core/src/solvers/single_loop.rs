use super::trace::{divergence, Metrics, Recorder};
use super::{RunConfig, RunTrace};
use crate::error::{Error, Result};
use crate::linalg::{dist, norm};
use crate::oracle::{
    comp_objective, minimax_inner_solve, reference_hypergradient_comp, reference_hypergradient_from, BilevelOracle,
    CompositionalOracle, Counted, MinimaxOracle,
};
use crate::sampler::{sub_seed, OrderSource};
use crate::types::{plan_epoch_with_cap, project_ball, Iterate, OracleCounters};

fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

fn check_init(init: &Iterate, p: usize, d: usize, u_len: usize) -> Result<()> {
    check_len("x", &init.x, p)?;
    check_len("y", &init.y, d)?;
    check_len("u", &init.u, u_len)?;
    if !init.is_finite() {
        return Err(Error::NonFinite("initial iterate"));
    }
    Ok(())
}

/// Everything the epoch driver needs to know about one run.
struct Layout {
    name: &'static str,
    epoch_len: usize,
    outer: OrderSource,
    /// `None` when both samples come from the outer order.
    inner: Option<OrderSource>,
    iota: Option<f64>,
}

/// Runs `config.epochs` epochs. `step` maps the pre-step iterate, the two
/// sample indices and the epoch's rates to the next iterate.
fn drive<S, E>(
    layout: Layout,
    init: &Iterate,
    config: &RunConfig,
    counters: &dyn Fn() -> OracleCounters,
    reference_counters: &dyn Fn() -> OracleCounters,
    mut step: S,
    mut evaluate: E,
) -> Result<RunTrace>
where
    S: FnMut(&Iterate, usize, usize, (f64, f64, f64)) -> Iterate,
    E: FnMut(&Iterate) -> Result<Metrics>,
{
    let len = layout.epoch_len;
    let eval = config.eval_interval.unwrap_or(len);
    let mut rec = Recorder::new(layout.name, config.strategy, config.seed, layout.iota, config.max_wall_seconds, init);
    let mut it = init.clone();
    rec.record(0, 0, counters(), evaluate(&it)?);
    let mut t = 0usize;
    for r in 0..config.epochs {
        let xi = layout.outer.epoch(r as u64, len)?;
        let zeta = match &layout.inner {
            Some(src) => Some(src.epoch(r as u64, len)?),
            None => None,
        };
        if let Some(iota) = layout.iota {
            it.u = project_ball(&it.u, iota)?;
            rec.boundary(&it.u);
        }
        let rates = config.rates.at_epoch(r);
        for k in 0..len {
            let i = xi.indices[k];
            let j = zeta.as_ref().map_or(i, |z| z.indices[k]);
            let next = step(&it, i, j, rates);
            t += 1;
            if let Some(reason) = divergence(&next) {
                return Err(rec.diverged(t, reason, it, counters(), reference_counters()));
            }
            it = next;
            if t.is_multiple_of(eval) {
                rec.record(t, t / len, counters(), evaluate(&it)?);
            }
            if rec.out_of_time() {
                if rec.last_step() != Some(t) {
                    rec.record(t, t / len, counters(), evaluate(&it)?);
                }
                return Ok(rec.finish(it, counters(), reference_counters(), true));
            }
        }
    }
    if rec.last_step() != Some(t) {
        rec.record(t, t / len, counters(), evaluate(&it)?);
    }
    Ok(rec.finish(it, counters(), reference_counters(), false))
}

/// Single-loop bilevel solver. Per step, with `ξ_t`, `ζ_t` the outer and
/// inner samples and every derivative taken at the pre-step `(x, y, u)`:
///
/// ```text
/// y ← y − γ ∇_y g(x, y; ζ_t)
/// u ← u − ρ (∇²_yy g(x, y; ζ_t) u − ∇_y f(x, y; ξ_t))
/// x ← x − η (∇_x f(x, y; ξ_t) − ∇²_xy g(x, y; ζ_t) u)
/// ```
///
/// Epochs have length `lcm(m, n)`; `u` is projected onto the `ι`-ball at the
/// start of every epoch.
pub fn wior_bo<O>(oracle: &O, init: &Iterate, config: &RunConfig) -> Result<RunTrace>
where
    O: BilevelOracle + ?Sized,
{
    config.validate()?;
    let (p, d) = (oracle.outer_dim(), oracle.inner_dim());
    check_init(init, p, d, d)?;
    let plan = plan_epoch_with_cap(oracle.outer_len(), oracle.inner_len(), config.epoch_cap)?;
    let iota = config.rates.resolve_iota(&oracle.meta())?;
    let run = Counted::new(oracle);
    let reference = Counted::new(oracle);
    let layout = Layout {
        name: "wior_bo",
        epoch_len: plan.epoch_len,
        outer: OrderSource::new(config.strategy, plan.m, sub_seed(config.seed, &[0])),
        inner: Some(OrderSource::new(config.strategy, plan.n, sub_seed(config.seed, &[1]))),
        iota: Some(iota),
    };
    let tol = config.reference_tol;
    let mut y_warm = vec![0.0; d];
    let evaluate = |it: &Iterate| -> Result<Metrics> {
        let rep = reference_hypergradient_from(&reference, &it.x, y_warm.clone(), tol)?;
        let loss = reference.full_value_f(&it.x, &rep.y);
        let m = Metrics {
            hypergrad_norm: norm(&rep.grad),
            loss,
            y_err: Some(dist(&it.y, &rep.y)),
            u_err: Some(dist(&it.u, &rep.u)),
        };
        y_warm = rep.y;
        Ok(m)
    };
    let step = |it: &Iterate, i: usize, j: usize, (eta, gamma, rho): (f64, f64, f64)| -> Iterate {
        let (x, y, u) = (&it.x, &it.y, &it.u);
        let gy = run.grad_g_y(x, y, j);
        let fy = run.grad_f_y(x, y, i);
        let hu = run.hvp_g_yy(x, y, j, u);
        let fx = run.grad_f_x(x, y, i);
        let ju = run.jvp_g_xy(x, y, j, u);
        Iterate {
            x: (0..p).map(|k| x[k] - eta * (fx[k] - ju[k])).collect(),
            y: (0..d).map(|k| y[k] - gamma * gy[k]).collect(),
            u: (0..d).map(|k| u[k] - rho * (hu[k] - fy[k])).collect(),
        }
    };
    drive(layout, init, config, &|| run.counters(), &|| reference.counters(), step, evaluate)
}

/// Single-loop compositional solver: moving averages of the inner map and
/// of the outer gradient.
///
/// ```text
/// y ← (1 − γ) y + γ r(x; ζ_t)
/// u ← (1 − ρ) u + ρ ∇f(y; ξ_t)
/// x ← x − η ∇r(x; ζ_t) u
/// ```
pub fn wior_comp<O>(oracle: &O, init: &Iterate, config: &RunConfig) -> Result<RunTrace>
where
    O: CompositionalOracle + ?Sized,
{
    config.validate()?;
    let (p, d) = (oracle.outer_dim(), oracle.inner_dim());
    check_init(init, p, d, d)?;
    let plan = plan_epoch_with_cap(oracle.outer_len(), oracle.inner_len(), config.epoch_cap)?;
    let iota = config.rates.resolve_iota(&oracle.meta())?;
    let run = Counted::new(oracle);
    let reference = Counted::new(oracle);
    let layout = Layout {
        name: "wior_comp",
        epoch_len: plan.epoch_len,
        outer: OrderSource::new(config.strategy, plan.m, sub_seed(config.seed, &[0])),
        inner: Some(OrderSource::new(config.strategy, plan.n, sub_seed(config.seed, &[1]))),
        iota: Some(iota),
    };
    let evaluate = |it: &Iterate| -> Result<Metrics> {
        let rep = reference_hypergradient_comp(&reference, &it.x)?;
        Ok(Metrics {
            hypergrad_norm: norm(&rep.grad),
            loss: comp_objective(oracle, &it.x),
            y_err: Some(dist(&it.y, &rep.y)),
            u_err: Some(dist(&it.u, &rep.u)),
        })
    };
    let step = |it: &Iterate, i: usize, j: usize, (eta, gamma, rho): (f64, f64, f64)| -> Iterate {
        let (x, y, u) = (&it.x, &it.y, &it.u);
        let rj = run.r(x, j);
        let fy = run.grad_f(y, i);
        let ju = run.jvp_r(x, j, u);
        Iterate {
            x: (0..p).map(|k| x[k] - eta * ju[k]).collect(),
            y: (0..d).map(|k| (1.0 - gamma) * y[k] + gamma * rj[k]).collect(),
            u: (0..d).map(|k| (1.0 - rho) * u[k] + rho * fy[k]).collect(),
        }
    };
    drive(layout, init, config, &|| run.counters(), &|| reference.counters(), step, evaluate)
}

/// Gradient descent-ascent with one shared sample per step; `x` moves with
/// the pre-step `y`:
///
/// ```text
/// y ← y + γ ∇_y f(x, y; ξ_t)
/// x ← x − η ∇_x f(x, y; ξ_t)
/// ```
///
/// An epoch is one pass over the `m` examples. `init.u` must be empty and
/// `rates.rho` is unused.
pub fn wior_minimax<O>(oracle: &O, init: &Iterate, config: &RunConfig) -> Result<RunTrace>
where
    O: MinimaxOracle + ?Sized,
{
    config.validate()?;
    let (p, d) = (oracle.outer_dim(), oracle.inner_dim());
    check_init(init, p, d, 0)?;
    let m = oracle.outer_len();
    if m == 0 {
        return Err(Error::InvalidDataset("empty outer dataset".into()));
    }
    let run = Counted::new(oracle);
    let reference = Counted::new(oracle);
    let layout = Layout {
        name: "wior_minimax",
        epoch_len: m,
        outer: OrderSource::new(config.strategy, m, sub_seed(config.seed, &[0])),
        inner: None,
        iota: None,
    };
    let tol = config.reference_tol;
    let mut y_warm = vec![0.0; d];
    let evaluate = |it: &Iterate| -> Result<Metrics> {
        let y_x = minimax_inner_solve(&reference, &it.x, y_warm.clone(), tol)?;
        let grad = reference.full_grad_x(&it.x, &y_x);
        let loss = (0..m)
            .map(|i| oracle.value(&it.x, &y_x, i))
            .sum::<Option<f64>>()
            .map(|s| s / m as f64);
        let out = Metrics {
            hypergrad_norm: norm(&grad),
            loss,
            y_err: Some(dist(&it.y, &y_x)),
            u_err: None,
        };
        y_warm = y_x;
        Ok(out)
    };
    let step = |it: &Iterate, i: usize, _j: usize, (eta, gamma, _rho): (f64, f64, f64)| -> Iterate {
        let gy = run.grad_y(&it.x, &it.y, i);
        let gx = run.grad_x(&it.x, &it.y, i);
        Iterate {
            x: (0..p).map(|k| it.x[k] - eta * gx[k]).collect(),
            y: (0..d).map(|k| it.y[k] + gamma * gy[k]).collect(),
            u: Vec::new(),
        }
    };
    drive(layout, init, config, &|| run.counters(), &|| reference.counters(), step, evaluate)
}
