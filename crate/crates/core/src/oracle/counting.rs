use super::{
    BilevelOracle, CompositionalOracle, ConditionalCompositionalOracle, ConditionalOracle,
    MinimaxOracle,
};
use crate::types::{CounterTally, OracleCounters, ProblemMeta};

/// Wraps an oracle and tallies every derivative evaluation.
///
/// Per-example calls add one to their counter. Full-batch calls on
/// unconditional oracles add the number of examples averaged over. Calls to
/// the per-context (`ctx_*`) derivatives of conditional oracles count once:
/// they evaluate one function `g^{(i)}`.
///
/// | call | counter |
/// |---|---|
/// | `grad_f_x`, `grad_f_y`, compositional `grad_f`, minimax `grad_x`/`grad_y` | `gc_f` |
/// | `grad_g_y`, compositional `r` | `gc_g` |
/// | `jvp_g_xy`, compositional `jvp_r` | `jv_g` |
/// | `hvp_g_yy` | `hv_g` |
pub struct Counted<'a, O: ?Sized> {
    inner: &'a O,
    tally: CounterTally,
}

impl<'a, O: ?Sized> Counted<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            tally: CounterTally::new(),
        }
    }

    pub fn counters(&self) -> OracleCounters {
        self.tally.snapshot()
    }

    pub fn inner(&self) -> &'a O {
        self.inner
    }
}

impl<O: BilevelOracle + ?Sized> BilevelOracle for Counted<'_, O> {
    fn outer_dim(&self) -> usize {
        self.inner.outer_dim()
    }
    fn inner_dim(&self) -> usize {
        self.inner.inner_dim()
    }
    fn outer_len(&self) -> usize {
        self.inner.outer_len()
    }
    fn inner_len(&self) -> usize {
        self.inner.inner_len()
    }
    fn meta(&self) -> ProblemMeta {
        self.inner.meta()
    }
    fn grad_f_x(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        self.tally.add_gc_f(1);
        self.inner.grad_f_x(x, y, i)
    }
    fn grad_f_y(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        self.tally.add_gc_f(1);
        self.inner.grad_f_y(x, y, i)
    }
    fn grad_g_y(&self, x: &[f64], y: &[f64], j: usize) -> Vec<f64> {
        self.tally.add_gc_g(1);
        self.inner.grad_g_y(x, y, j)
    }
    fn hvp_g_yy(&self, x: &[f64], y: &[f64], j: usize, v: &[f64]) -> Vec<f64> {
        self.tally.add_hv_g(1);
        self.inner.hvp_g_yy(x, y, j, v)
    }
    fn jvp_g_xy(&self, x: &[f64], y: &[f64], j: usize, v: &[f64]) -> Vec<f64> {
        self.tally.add_jv_g(1);
        self.inner.jvp_g_xy(x, y, j, v)
    }
    fn full_grad_f_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.tally.add_gc_f(self.inner.outer_len() as u64);
        self.inner.full_grad_f_x(x, y)
    }
    fn full_grad_f_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.tally.add_gc_f(self.inner.outer_len() as u64);
        self.inner.full_grad_f_y(x, y)
    }
    fn full_grad_g_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.tally.add_gc_g(self.inner.inner_len() as u64);
        self.inner.full_grad_g_y(x, y)
    }
    fn full_hvp_g_yy(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        self.tally.add_hv_g(self.inner.inner_len() as u64);
        self.inner.full_hvp_g_yy(x, y, v)
    }
    fn full_jvp_g_xy(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        self.tally.add_jv_g(self.inner.inner_len() as u64);
        self.inner.full_jvp_g_xy(x, y, v)
    }
    fn value_f(&self, x: &[f64], y: &[f64], i: usize) -> Option<f64> {
        self.inner.value_f(x, y, i)
    }
    fn full_value_f(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        self.inner.full_value_f(x, y)
    }
    fn value_g(&self, x: &[f64], y: &[f64], j: usize) -> Option<f64> {
        self.inner.value_g(x, y, j)
    }
}

impl<O: ConditionalOracle + ?Sized> ConditionalOracle for Counted<'_, O> {
    fn outer_dim(&self) -> usize {
        self.inner.outer_dim()
    }
    fn inner_dim(&self) -> usize {
        self.inner.inner_dim()
    }
    fn outer_len(&self) -> usize {
        self.inner.outer_len()
    }
    fn inner_len(&self, i: usize) -> usize {
        self.inner.inner_len(i)
    }
    fn meta(&self) -> ProblemMeta {
        self.inner.meta()
    }
    fn grad_f_x(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        self.tally.add_gc_f(1);
        self.inner.grad_f_x(x, y, i)
    }
    fn grad_f_y(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        self.tally.add_gc_f(1);
        self.inner.grad_f_y(x, y, i)
    }
    fn grad_g_y(&self, x: &[f64], y: &[f64], i: usize, j: usize) -> Vec<f64> {
        self.tally.add_gc_g(1);
        self.inner.grad_g_y(x, y, i, j)
    }
    fn hvp_g_yy(&self, x: &[f64], y: &[f64], i: usize, j: usize, v: &[f64]) -> Vec<f64> {
        self.tally.add_hv_g(1);
        self.inner.hvp_g_yy(x, y, i, j, v)
    }
    fn jvp_g_xy(&self, x: &[f64], y: &[f64], i: usize, j: usize, v: &[f64]) -> Vec<f64> {
        self.tally.add_jv_g(1);
        self.inner.jvp_g_xy(x, y, i, j, v)
    }
    fn ctx_grad_g_y(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        self.tally.add_gc_g(1);
        self.inner.ctx_grad_g_y(x, y, i)
    }
    fn ctx_hvp_g_yy(&self, x: &[f64], y: &[f64], i: usize, v: &[f64]) -> Vec<f64> {
        self.tally.add_hv_g(1);
        self.inner.ctx_hvp_g_yy(x, y, i, v)
    }
    fn ctx_jvp_g_xy(&self, x: &[f64], y: &[f64], i: usize, v: &[f64]) -> Vec<f64> {
        self.tally.add_jv_g(1);
        self.inner.ctx_jvp_g_xy(x, y, i, v)
    }
    fn value_f(&self, x: &[f64], y: &[f64], i: usize) -> Option<f64> {
        self.inner.value_f(x, y, i)
    }
}

impl<O: CompositionalOracle + ?Sized> CompositionalOracle for Counted<'_, O> {
    fn outer_dim(&self) -> usize {
        self.inner.outer_dim()
    }
    fn inner_dim(&self) -> usize {
        self.inner.inner_dim()
    }
    fn outer_len(&self) -> usize {
        self.inner.outer_len()
    }
    fn inner_len(&self) -> usize {
        self.inner.inner_len()
    }
    fn meta(&self) -> ProblemMeta {
        self.inner.meta()
    }
    fn r(&self, x: &[f64], j: usize) -> Vec<f64> {
        self.tally.add_gc_g(1);
        self.inner.r(x, j)
    }
    fn jvp_r(&self, x: &[f64], j: usize, v: &[f64]) -> Vec<f64> {
        self.tally.add_jv_g(1);
        self.inner.jvp_r(x, j, v)
    }
    fn grad_f(&self, y: &[f64], i: usize) -> Vec<f64> {
        self.tally.add_gc_f(1);
        self.inner.grad_f(y, i)
    }
    fn full_r(&self, x: &[f64]) -> Vec<f64> {
        self.tally.add_gc_g(self.inner.inner_len() as u64);
        self.inner.full_r(x)
    }
    fn full_jvp_r(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        self.tally.add_jv_g(self.inner.inner_len() as u64);
        self.inner.full_jvp_r(x, v)
    }
    fn full_grad_f(&self, y: &[f64]) -> Vec<f64> {
        self.tally.add_gc_f(self.inner.outer_len() as u64);
        self.inner.full_grad_f(y)
    }
    fn value_f(&self, y: &[f64], i: usize) -> Option<f64> {
        self.inner.value_f(y, i)
    }
}

impl<O: ConditionalCompositionalOracle + ?Sized> ConditionalCompositionalOracle for Counted<'_, O> {
    fn outer_dim(&self) -> usize {
        self.inner.outer_dim()
    }
    fn inner_dim(&self) -> usize {
        self.inner.inner_dim()
    }
    fn outer_len(&self) -> usize {
        self.inner.outer_len()
    }
    fn inner_len(&self, i: usize) -> usize {
        self.inner.inner_len(i)
    }
    fn meta(&self) -> ProblemMeta {
        self.inner.meta()
    }
    fn r(&self, x: &[f64], i: usize, j: usize) -> Vec<f64> {
        self.tally.add_gc_g(1);
        self.inner.r(x, i, j)
    }
    fn jvp_r(&self, x: &[f64], i: usize, j: usize, v: &[f64]) -> Vec<f64> {
        self.tally.add_jv_g(1);
        self.inner.jvp_r(x, i, j, v)
    }
    fn grad_f(&self, y: &[f64], i: usize) -> Vec<f64> {
        self.tally.add_gc_f(1);
        self.inner.grad_f(y, i)
    }
    fn ctx_r(&self, x: &[f64], i: usize) -> Vec<f64> {
        self.tally.add_gc_g(1);
        self.inner.ctx_r(x, i)
    }
    fn ctx_jvp_r(&self, x: &[f64], i: usize, v: &[f64]) -> Vec<f64> {
        self.tally.add_jv_g(1);
        self.inner.ctx_jvp_r(x, i, v)
    }
    fn value_f(&self, y: &[f64], i: usize) -> Option<f64> {
        self.inner.value_f(y, i)
    }
}

impl<O: MinimaxOracle + ?Sized> MinimaxOracle for Counted<'_, O> {
    fn outer_dim(&self) -> usize {
        self.inner.outer_dim()
    }
    fn inner_dim(&self) -> usize {
        self.inner.inner_dim()
    }
    fn outer_len(&self) -> usize {
        self.inner.outer_len()
    }
    fn meta(&self) -> ProblemMeta {
        self.inner.meta()
    }
    fn grad_x(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        self.tally.add_gc_f(1);
        self.inner.grad_x(x, y, i)
    }
    fn grad_y(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        self.tally.add_gc_f(1);
        self.inner.grad_y(x, y, i)
    }
    fn full_grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.tally.add_gc_f(self.inner.outer_len() as u64);
        self.inner.full_grad_x(x, y)
    }
    fn full_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.tally.add_gc_f(self.inner.outer_len() as u64);
        self.inner.full_grad_y(x, y)
    }
    fn value(&self, x: &[f64], y: &[f64], i: usize) -> Option<f64> {
        self.inner.value(x, y, i)
    }
}
