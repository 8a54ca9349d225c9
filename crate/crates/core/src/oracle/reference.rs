//! Reference quantities computed to tight tolerance from full-batch oracle
//! calls: inner solutions `y_x`, linear-system solutions `u_x`, and the
//! implicit hypergradient `∇h(x) = ∇_x f(x, y_x) − ∇²_xy g(x, y_x) u_x`.

use super::{
    BilevelOracle, CompositionalOracle, ConditionalCompositionalOracle, ConditionalOracle,
    MinimaxOracle,
};
use crate::error::{Error, Result};
use crate::linalg::{self, axpy, dot, norm};

/// Tolerance used by correctness checks.
pub const REFERENCE_TOL: f64 = 1e-10;
/// Tolerance used when logging solver traces.
pub const TRACE_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_INNER_ITERS: usize = 1_000_000;

/// Fixed-step gradient descent until `‖grad(y)‖ <= tol`.
///
/// Returns the final point and the number of steps taken.
pub fn descend_to_stationary<G>(
    mut grad: G,
    mut y: Vec<f64>,
    step: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize)>
where
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let mut iter = 0;
    loop {
        let g = grad(&y);
        let res = norm(&g);
        if !res.is_finite() {
            return Err(Error::NonFinite("inner gradient"));
        }
        if res <= tol {
            return Ok((y, iter));
        }
        if iter == max_iters {
            return Err(Error::NoConvergence {
                iterations: iter,
                residual: res,
            });
        }
        axpy(-step, &g, &mut y);
        iter += 1;
    }
}

/// Solves `A u = b` for symmetric positive-definite `A`, given only the
/// product `apply(v) = A v`, to residual `‖A u − b‖ <= tol`.
///
/// Fails with [`Error::IllConditioned`] on a non-positive curvature
/// direction, or when the residual has not improved for `dim` iterations.
pub fn conjugate_gradient<A>(mut apply: A, b: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>>
where
    A: FnMut(&[f64]) -> Vec<f64>,
{
    let dim = b.len();
    let mut u = vec![0.0; dim];
    let mut r = b.to_vec();
    let mut rs = dot(&r, &r);
    if rs.sqrt() <= tol {
        return Ok(u);
    }
    let mut p = r.clone();
    let mut best = rs.sqrt();
    let mut since_best = 0usize;
    for iter in 0..max_iters {
        let ap = apply(&p);
        let curv = dot(&p, &ap);
        if !(curv > 0.0) {
            return Err(Error::IllConditioned {
                iteration: iter,
                residual: rs.sqrt(),
            });
        }
        let alpha = rs / curv;
        axpy(alpha, &p, &mut u);
        axpy(-alpha, &ap, &mut r);
        // Recompute the true residual every `dim` steps to shed drift.
        if (iter + 1) % dim.max(1) == 0 {
            let au = apply(&u);
            r = linalg::sub(b, &au);
        }
        let rs_new = dot(&r, &r);
        let res = rs_new.sqrt();
        if !res.is_finite() {
            return Err(Error::NonFinite("conjugate gradient residual"));
        }
        if res <= tol {
            return Ok(u);
        }
        if res < best {
            best = res;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= dim.max(1) {
                return Err(Error::IllConditioned {
                    iteration: iter,
                    residual: res,
                });
            }
        }
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: rs.sqrt(),
    })
}

fn cg_budget(dim: usize) -> usize {
    20 * dim + 100
}

fn check_x(x: &[f64], p: usize) -> Result<()> {
    if x.len() != p {
        return Err(Error::DimensionMismatch {
            what: "outer variable",
            expected: p,
            got: x.len(),
        });
    }
    if !linalg::all_finite(x) {
        return Err(Error::NonFinite("outer variable"));
    }
    Ok(())
}

/// Reference solution record at a point `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct HypergradientReport {
    pub grad: Vec<f64>,
    /// `y_x`
    pub y: Vec<f64>,
    /// `u_x`
    pub u: Vec<f64>,
}

/// `y_x` by full-batch gradient descent with step `1/L`, starting from zero.
pub fn exact_inner_solve<O>(oracle: &O, x: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>>
where
    O: BilevelOracle + ?Sized,
{
    exact_inner_solve_from(oracle, x, vec![0.0; oracle.inner_dim()], tol, max_iters)
}

pub fn exact_inner_solve_from<O>(
    oracle: &O,
    x: &[f64],
    y0: Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>>
where
    O: BilevelOracle + ?Sized,
{
    check_x(x, oracle.outer_dim())?;
    let step = 1.0 / oracle.meta().l;
    descend_to_stationary(|y| oracle.full_grad_g_y(x, y), y0, step, tol, max_iters).map(|(y, _)| y)
}

pub fn reference_hypergradient<O>(oracle: &O, x: &[f64], tol: f64) -> Result<HypergradientReport>
where
    O: BilevelOracle + ?Sized,
{
    let y = exact_inner_solve(oracle, x, tol, DEFAULT_MAX_INNER_ITERS)?;
    hypergradient_at(oracle, x, y, tol)
}

/// As [`reference_hypergradient`], with the inner solve started at `y0`.
pub fn reference_hypergradient_from<O>(oracle: &O, x: &[f64], y0: Vec<f64>, tol: f64) -> Result<HypergradientReport>
where
    O: BilevelOracle + ?Sized,
{
    let y = exact_inner_solve_from(oracle, x, y0, tol, DEFAULT_MAX_INNER_ITERS)?;
    hypergradient_at(oracle, x, y, tol)
}

fn hypergradient_at<O>(oracle: &O, x: &[f64], y: Vec<f64>, tol: f64) -> Result<HypergradientReport>
where
    O: BilevelOracle + ?Sized,
{
    let rhs = oracle.full_grad_f_y(x, &y);
    let u = conjugate_gradient(
        |v| oracle.full_hvp_g_yy(x, &y, v),
        &rhs,
        tol,
        cg_budget(rhs.len()),
    )?;
    let mut grad = oracle.full_grad_f_x(x, &y);
    let cross = oracle.full_jvp_g_xy(x, &y, &u);
    axpy(-1.0, &cross, &mut grad);
    Ok(HypergradientReport { grad, y, u })
}

/// `∇h(x)` for a bilevel problem.
pub fn exact_hypergradient<O>(oracle: &O, x: &[f64], tol: f64) -> Result<Vec<f64>>
where
    O: BilevelOracle + ?Sized,
{
    reference_hypergradient(oracle, x, tol).map(|r| r.grad)
}

/// `h(x) = f(x, y_x)`; needs `value_f`.
pub fn hyper_objective<O>(oracle: &O, x: &[f64], tol: f64) -> Result<f64>
where
    O: BilevelOracle + ?Sized,
{
    let y = exact_inner_solve(oracle, x, tol, DEFAULT_MAX_INNER_ITERS)?;
    oracle
        .full_value_f(x, &y)
        .ok_or(Error::Unsupported("problem does not expose value_f"))
}

/// Central finite differences of `h` against [`exact_hypergradient`]:
/// returns `max_k |fd_k − ∇h_k| / (1 + |∇h_k|)`.
pub fn fd_check_hypergradient<O>(oracle: &O, x: &[f64], h_step: f64, inner_tol: f64) -> Result<f64>
where
    O: BilevelOracle + ?Sized,
{
    check_x(x, oracle.outer_dim())?;
    let center = exact_inner_solve(oracle, x, inner_tol, DEFAULT_MAX_INNER_ITERS)?;
    if oracle.full_value_f(x, &center).is_none() {
        return Err(Error::Unsupported("problem does not expose value_f"));
    }
    let grad = hypergradient_at(oracle, x, center.clone(), inner_tol)?.grad;
    let h_at = |xs: &[f64]| -> Result<f64> {
        let y = exact_inner_solve_from(oracle, xs, center.clone(), inner_tol, DEFAULT_MAX_INNER_ITERS)?;
        oracle
            .full_value_f(xs, &y)
            .ok_or(Error::Unsupported("problem does not expose value_f"))
    };
    central_difference_error(x, &grad, h_step, h_at)
}

fn central_difference_error<H>(x: &[f64], grad: &[f64], h_step: f64, mut h_at: H) -> Result<f64>
where
    H: FnMut(&[f64]) -> Result<f64>,
{
    if !(h_step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut worst = 0.0f64;
    let mut xs = x.to_vec();
    for k in 0..x.len() {
        xs[k] = x[k] + h_step;
        let plus = h_at(&xs)?;
        xs[k] = x[k] - h_step;
        let minus = h_at(&xs)?;
        xs[k] = x[k];
        let fd = (plus - minus) / (2.0 * h_step);
        worst = worst.max((fd - grad[k]).abs() / (1.0 + grad[k].abs()));
    }
    Ok(worst)
}

/// Reference record for a conditional problem: per-example `y_x^{(i)}`, `u_x^{(i)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalReport {
    pub grad: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
    pub us: Vec<Vec<f64>>,
}

/// `y_x^{(i)}` for context `i`, starting from zero.
pub fn conditional_inner_solve<O>(oracle: &O, x: &[f64], i: usize, tol: f64, max_iters: usize) -> Result<Vec<f64>>
where
    O: ConditionalOracle + ?Sized,
{
    let step = 1.0 / oracle.meta().l;
    descend_to_stationary(
        |y| oracle.ctx_grad_g_y(x, y, i),
        vec![0.0; oracle.inner_dim()],
        step,
        tol,
        max_iters,
    )
    .map(|(y, _)| y)
}

pub fn reference_hypergradient_conditional<O>(oracle: &O, x: &[f64], tol: f64) -> Result<ConditionalReport>
where
    O: ConditionalOracle + ?Sized,
{
    check_x(x, oracle.outer_dim())?;
    let m = oracle.outer_len();
    let p = oracle.outer_dim();
    let mut grad = vec![0.0; p];
    let mut ys = Vec::with_capacity(m);
    let mut us = Vec::with_capacity(m);
    for i in 0..m {
        let y = conditional_inner_solve(oracle, x, i, tol, DEFAULT_MAX_INNER_ITERS)?;
        let rhs = oracle.grad_f_y(x, &y, i);
        let u = conjugate_gradient(
            |v| oracle.ctx_hvp_g_yy(x, &y, i, v),
            &rhs,
            tol,
            cg_budget(rhs.len()),
        )?;
        let gx = oracle.grad_f_x(x, &y, i);
        let cross = oracle.ctx_jvp_g_xy(x, &y, i, &u);
        for k in 0..p {
            grad[k] += gx[k] - cross[k];
        }
        ys.push(y);
        us.push(u);
    }
    linalg::scale(1.0 / m as f64, &mut grad);
    Ok(ConditionalReport { grad, ys, us })
}

pub fn exact_hypergradient_conditional<O>(oracle: &O, x: &[f64], tol: f64) -> Result<Vec<f64>>
where
    O: ConditionalOracle + ?Sized,
{
    reference_hypergradient_conditional(oracle, x, tol).map(|r| r.grad)
}

pub fn hyper_objective_conditional<O>(oracle: &O, x: &[f64], tol: f64) -> Result<f64>
where
    O: ConditionalOracle + ?Sized,
{
    let m = oracle.outer_len();
    let mut acc = 0.0;
    for i in 0..m {
        let y = conditional_inner_solve(oracle, x, i, tol, DEFAULT_MAX_INNER_ITERS)?;
        acc += oracle
            .value_f(x, &y, i)
            .ok_or(Error::Unsupported("problem does not expose value_f"))?;
    }
    Ok(acc / m as f64)
}

pub fn fd_check_hypergradient_conditional<O>(oracle: &O, x: &[f64], h_step: f64, inner_tol: f64) -> Result<f64>
where
    O: ConditionalOracle + ?Sized,
{
    let grad = exact_hypergradient_conditional(oracle, x, inner_tol)?;
    central_difference_error(x, &grad, h_step, |xs| hyper_objective_conditional(oracle, xs, inner_tol))
}

/// For compositional problems `y_x = r̄(x)` and `u_x = ∇f̄(r̄(x))` are explicit.
pub fn reference_hypergradient_comp<O>(oracle: &O, x: &[f64]) -> Result<HypergradientReport>
where
    O: CompositionalOracle + ?Sized,
{
    check_x(x, oracle.outer_dim())?;
    let y = oracle.full_r(x);
    let u = oracle.full_grad_f(&y);
    let grad = oracle.full_jvp_r(x, &u);
    Ok(HypergradientReport { grad, y, u })
}

pub fn comp_objective<O>(oracle: &O, x: &[f64]) -> Option<f64>
where
    O: CompositionalOracle + ?Sized,
{
    let y = oracle.full_r(x);
    let m = oracle.outer_len();
    let mut acc = 0.0;
    for i in 0..m {
        acc += oracle.value_f(&y, i)?;
    }
    Some(acc / m as f64)
}

pub fn reference_hypergradient_ccomp<O>(oracle: &O, x: &[f64]) -> Result<Vec<f64>>
where
    O: ConditionalCompositionalOracle + ?Sized,
{
    check_x(x, oracle.outer_dim())?;
    let m = oracle.outer_len();
    let mut grad = vec![0.0; oracle.outer_dim()];
    for i in 0..m {
        let y = oracle.ctx_r(x, i);
        let u = oracle.grad_f(&y, i);
        axpy(1.0, &oracle.ctx_jvp_r(x, i, &u), &mut grad);
    }
    linalg::scale(1.0 / m as f64, &mut grad);
    Ok(grad)
}

pub fn ccomp_objective<O>(oracle: &O, x: &[f64]) -> Option<f64>
where
    O: ConditionalCompositionalOracle + ?Sized,
{
    let m = oracle.outer_len();
    let mut acc = 0.0;
    for i in 0..m {
        let y = oracle.ctx_r(x, i);
        acc += oracle.value_f(&y, i)?;
    }
    Some(acc / m as f64)
}

/// `y_x = argmax_y f̄(x, y)` by gradient ascent with step `1/L`.
pub fn minimax_inner_solve<O>(oracle: &O, x: &[f64], y0: Vec<f64>, tol: f64) -> Result<Vec<f64>>
where
    O: MinimaxOracle + ?Sized,
{
    check_x(x, oracle.outer_dim())?;
    let step = 1.0 / oracle.meta().l;
    descend_to_stationary(
        |y| {
            let mut g = oracle.full_grad_y(x, y);
            linalg::scale(-1.0, &mut g);
            g
        },
        y0,
        step,
        tol,
        DEFAULT_MAX_INNER_ITERS,
    )
    .map(|(y, _)| y)
}

/// `∇h(x) = ∇_x f̄(x, y_x)`; returns `(grad, y_x)`.
pub fn reference_hypergradient_minimax<O>(oracle: &O, x: &[f64], tol: f64) -> Result<(Vec<f64>, Vec<f64>)>
where
    O: MinimaxOracle + ?Sized,
{
    let y = minimax_inner_solve(oracle, x, vec![0.0; oracle.inner_dim()], tol)?;
    Ok((oracle.full_grad_x(x, &y), y))
}
