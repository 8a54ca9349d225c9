//! Per-example derivative contracts for the four problem families, a
//! counting wrapper that tallies oracle calls, and reference computations
//! (exact inner solves, hypergradients, finite-difference checks).
//!
//! Vectors are plain `&[f64]` slices: `x` has length `p` (outer variable),
//! `y` and `u` have length `d` (inner variable).

mod counting;
pub mod reference;

pub use counting::Counted;
pub use reference::*;

use crate::linalg::mean_of;
use crate::types::ProblemMeta;

/// Finite-sum bilevel problem
/// `min_x (1/m) Σ_i f(x, y_x; ξ_i)` s.t. `y_x = argmin_y (1/n) Σ_j g(x, y; ζ_j)`.
pub trait BilevelOracle: Sync {
    fn outer_dim(&self) -> usize;
    fn inner_dim(&self) -> usize;
    /// Number of outer examples `m`.
    fn outer_len(&self) -> usize;
    /// Number of inner examples `n`.
    fn inner_len(&self) -> usize;
    fn meta(&self) -> ProblemMeta;

    fn grad_f_x(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64>;
    fn grad_f_y(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64>;
    fn grad_g_y(&self, x: &[f64], y: &[f64], j: usize) -> Vec<f64>;
    /// `∇²_yy g(x, y; ζ_j) v`
    fn hvp_g_yy(&self, x: &[f64], y: &[f64], j: usize, v: &[f64]) -> Vec<f64>;
    /// `∇²_xy g(x, y; ζ_j) v`, a vector of length `p`.
    fn jvp_g_xy(&self, x: &[f64], y: &[f64], j: usize, v: &[f64]) -> Vec<f64>;

    fn full_grad_f_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        mean_of(self.outer_len(), self.outer_dim(), |i| self.grad_f_x(x, y, i))
    }
    fn full_grad_f_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        mean_of(self.outer_len(), self.inner_dim(), |i| self.grad_f_y(x, y, i))
    }
    fn full_grad_g_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        mean_of(self.inner_len(), self.inner_dim(), |j| self.grad_g_y(x, y, j))
    }
    fn full_hvp_g_yy(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        mean_of(self.inner_len(), self.inner_dim(), |j| self.hvp_g_yy(x, y, j, v))
    }
    fn full_jvp_g_xy(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        mean_of(self.inner_len(), self.outer_dim(), |j| self.jvp_g_xy(x, y, j, v))
    }

    fn value_f(&self, _x: &[f64], _y: &[f64], _i: usize) -> Option<f64> {
        None
    }
    fn full_value_f(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        let m = self.outer_len();
        let mut acc = 0.0;
        for i in 0..m {
            acc += self.value_f(x, y, i)?;
        }
        Some(acc / m as f64)
    }
    fn value_g(&self, _x: &[f64], _y: &[f64], _j: usize) -> Option<f64> {
        None
    }
}

/// Conditional bilevel problem: outer example `i` owns an inner problem
/// `g^{(i)}(x, y) = (1/n_i) Σ_j g(x, y; ζ_{i,j})` with its own solution `y_x^{(i)}`.
pub trait ConditionalOracle: Sync {
    fn outer_dim(&self) -> usize;
    fn inner_dim(&self) -> usize;
    fn outer_len(&self) -> usize;
    /// Size `n_i` of the inner dataset attached to outer example `i`.
    fn inner_len(&self, i: usize) -> usize;
    fn meta(&self) -> ProblemMeta;

    fn grad_f_x(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64>;
    fn grad_f_y(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64>;
    fn grad_g_y(&self, x: &[f64], y: &[f64], i: usize, j: usize) -> Vec<f64>;
    fn hvp_g_yy(&self, x: &[f64], y: &[f64], i: usize, j: usize, v: &[f64]) -> Vec<f64>;
    fn jvp_g_xy(&self, x: &[f64], y: &[f64], i: usize, j: usize, v: &[f64]) -> Vec<f64>;

    /// `∇_y g^{(i)}(x, y)`
    fn ctx_grad_g_y(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        mean_of(self.inner_len(i), self.inner_dim(), |j| self.grad_g_y(x, y, i, j))
    }
    fn ctx_hvp_g_yy(&self, x: &[f64], y: &[f64], i: usize, v: &[f64]) -> Vec<f64> {
        mean_of(self.inner_len(i), self.inner_dim(), |j| self.hvp_g_yy(x, y, i, j, v))
    }
    fn ctx_jvp_g_xy(&self, x: &[f64], y: &[f64], i: usize, v: &[f64]) -> Vec<f64> {
        mean_of(self.inner_len(i), self.outer_dim(), |j| self.jvp_g_xy(x, y, i, j, v))
    }

    fn value_f(&self, _x: &[f64], _y: &[f64], _i: usize) -> Option<f64> {
        None
    }
}

/// Compositional problem `min_x (1/m) Σ_i f((1/n) Σ_j r(x; ζ_j); ξ_i)`,
/// seen as bilevel with inner `g(x, y) = ½‖y − r(x)‖²`.
pub trait CompositionalOracle: Sync {
    fn outer_dim(&self) -> usize;
    fn inner_dim(&self) -> usize;
    fn outer_len(&self) -> usize;
    fn inner_len(&self) -> usize;
    fn meta(&self) -> ProblemMeta;

    fn r(&self, x: &[f64], j: usize) -> Vec<f64>;
    /// `∇_x r(x; ζ_j) v` (the transposed Jacobian applied to `v ∈ R^d`).
    fn jvp_r(&self, x: &[f64], j: usize, v: &[f64]) -> Vec<f64>;
    fn grad_f(&self, y: &[f64], i: usize) -> Vec<f64>;

    fn full_r(&self, x: &[f64]) -> Vec<f64> {
        mean_of(self.inner_len(), self.inner_dim(), |j| self.r(x, j))
    }
    fn full_jvp_r(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        mean_of(self.inner_len(), self.outer_dim(), |j| self.jvp_r(x, j, v))
    }
    fn full_grad_f(&self, y: &[f64]) -> Vec<f64> {
        mean_of(self.outer_len(), self.inner_dim(), |i| self.grad_f(y, i))
    }
    fn value_f(&self, _y: &[f64], _i: usize) -> Option<f64> {
        None
    }
}

/// Conditional compositional problem
/// `min_x (1/m) Σ_i f((1/n_i) Σ_j r(x; ζ_{i,j}); ξ_i)`.
pub trait ConditionalCompositionalOracle: Sync {
    fn outer_dim(&self) -> usize;
    fn inner_dim(&self) -> usize;
    fn outer_len(&self) -> usize;
    fn inner_len(&self, i: usize) -> usize;
    fn meta(&self) -> ProblemMeta;

    fn r(&self, x: &[f64], i: usize, j: usize) -> Vec<f64>;
    fn jvp_r(&self, x: &[f64], i: usize, j: usize, v: &[f64]) -> Vec<f64>;
    fn grad_f(&self, y: &[f64], i: usize) -> Vec<f64>;

    fn ctx_r(&self, x: &[f64], i: usize) -> Vec<f64> {
        mean_of(self.inner_len(i), self.inner_dim(), |j| self.r(x, i, j))
    }
    fn ctx_jvp_r(&self, x: &[f64], i: usize, v: &[f64]) -> Vec<f64> {
        mean_of(self.inner_len(i), self.outer_dim(), |j| self.jvp_r(x, i, j, v))
    }
    fn value_f(&self, _y: &[f64], _i: usize) -> Option<f64> {
        None
    }
}

/// Minimax problem `min_x (1/m) Σ_i max_y f(x, y; ξ_i)` with `f` strongly
/// concave in `y`; `meta().mu` is the concavity modulus.
pub trait MinimaxOracle: Sync {
    fn outer_dim(&self) -> usize;
    fn inner_dim(&self) -> usize;
    fn outer_len(&self) -> usize;
    fn meta(&self) -> ProblemMeta;

    fn grad_x(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64>;
    fn grad_y(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64>;

    fn full_grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        mean_of(self.outer_len(), self.outer_dim(), |i| self.grad_x(x, y, i))
    }
    fn full_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        mean_of(self.outer_len(), self.inner_dim(), |i| self.grad_y(x, y, i))
    }
    fn value(&self, _x: &[f64], _y: &[f64], _i: usize) -> Option<f64> {
        None
    }
}

/// Views an unconditional bilevel problem as a conditional one with a single
/// outer example whose loss is the full outer objective.
pub struct SingleContext<'a, O: ?Sized>(pub &'a O);

impl<O: BilevelOracle + ?Sized> ConditionalOracle for SingleContext<'_, O> {
    fn outer_dim(&self) -> usize {
        self.0.outer_dim()
    }
    fn inner_dim(&self) -> usize {
        self.0.inner_dim()
    }
    fn outer_len(&self) -> usize {
        1
    }
    fn inner_len(&self, _i: usize) -> usize {
        self.0.inner_len()
    }
    fn meta(&self) -> ProblemMeta {
        self.0.meta()
    }
    fn grad_f_x(&self, x: &[f64], y: &[f64], _i: usize) -> Vec<f64> {
        self.0.full_grad_f_x(x, y)
    }
    fn grad_f_y(&self, x: &[f64], y: &[f64], _i: usize) -> Vec<f64> {
        self.0.full_grad_f_y(x, y)
    }
    fn grad_g_y(&self, x: &[f64], y: &[f64], _i: usize, j: usize) -> Vec<f64> {
        self.0.grad_g_y(x, y, j)
    }
    fn hvp_g_yy(&self, x: &[f64], y: &[f64], _i: usize, j: usize, v: &[f64]) -> Vec<f64> {
        self.0.hvp_g_yy(x, y, j, v)
    }
    fn jvp_g_xy(&self, x: &[f64], y: &[f64], _i: usize, j: usize, v: &[f64]) -> Vec<f64> {
        self.0.jvp_g_xy(x, y, j, v)
    }
    fn ctx_grad_g_y(&self, x: &[f64], y: &[f64], _i: usize) -> Vec<f64> {
        self.0.full_grad_g_y(x, y)
    }
    fn ctx_hvp_g_yy(&self, x: &[f64], y: &[f64], _i: usize, v: &[f64]) -> Vec<f64> {
        self.0.full_hvp_g_yy(x, y, v)
    }
    fn ctx_jvp_g_xy(&self, x: &[f64], y: &[f64], _i: usize, v: &[f64]) -> Vec<f64> {
        self.0.full_jvp_g_xy(x, y, v)
    }
    fn value_f(&self, x: &[f64], y: &[f64], _i: usize) -> Option<f64> {
        self.0.full_value_f(x, y)
    }
}
