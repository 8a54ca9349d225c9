//! Domain types shared by every solver: iterates, rates, epoch planning,
//! oracle-call counters and the projection onto the `u`-ball.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default cap on `lcm(m, n)` accepted by [`plan_epoch`].
pub const DEFAULT_EPOCH_CAP: usize = 1_000_000;

/// Solver state `(x, y, u)`. `u` estimates the solution of the inner linear
/// system `∇²_yy g · u = ∇_y f`; minimax runs leave it empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
}

impl Iterate {
    pub fn new(x: Vec<f64>, y: Vec<f64>, u: Vec<f64>) -> Self {
        Self { x, y, u }
    }

    pub fn zeros(p: usize, d: usize) -> Self {
        Self::new(vec![0.0; p], vec![0.0; d], vec![0.0; d])
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.x) && linalg::all_finite(&self.y) && linalg::all_finite(&self.u)
    }
}

/// How the base rates evolve across epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    #[default]
    Constant,
    /// Every rate is multiplied by `decay^r` during epoch `r` (0-based).
    Geometric { decay: f64 },
}

impl Schedule {
    pub fn factor(&self, epoch: usize) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::Geometric { decay } => decay.powi(epoch.min(i32::MAX as usize) as i32),
        }
    }
}

/// Step sizes: `eta` (outer), `gamma` (inner), `rho` (linear system), and
/// the optional projection radius `iota` for `u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub eta: f64,
    pub gamma: f64,
    pub rho: f64,
    #[serde(default)]
    pub iota: Option<f64>,
    #[serde(default)]
    pub schedule: Schedule,
}

impl RateConfig {
    pub fn new(eta: f64, gamma: f64, rho: f64) -> Result<Self> {
        let rates = Self {
            eta,
            gamma,
            rho,
            iota: None,
            schedule: Schedule::Constant,
        };
        rates.validate()?;
        Ok(rates)
    }

    /// `gamma = c1 * eta`, `rho = c2 * eta`.
    pub fn from_ratios(eta: f64, c1: f64, c2: f64) -> Result<Self> {
        Self::new(eta, c1 * eta, c2 * eta)
    }

    pub fn with_iota(mut self, iota: f64) -> Self {
        self.iota = Some(iota);
        self
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("gamma", self.gamma), ("rho", self.rho)] {
            // zero is allowed: it freezes the corresponding variable
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("rate {name} must be finite and >= 0, got {v}")));
            }
        }
        if let Some(iota) = self.iota {
            if !iota.is_finite() || iota <= 0.0 {
                return Err(Error::invalid(format!("iota must be finite and > 0, got {iota}")));
            }
        }
        if let Schedule::Geometric { decay } = self.schedule {
            if !(decay > 0.0 && decay <= 1.0) {
                return Err(Error::invalid(format!("geometric decay must lie in (0, 1], got {decay}")));
            }
        }
        Ok(())
    }

    /// Rates in effect during `epoch`.
    pub fn at_epoch(&self, epoch: usize) -> (f64, f64, f64) {
        let s = self.schedule.factor(epoch);
        (self.eta * s, self.gamma * s, self.rho * s)
    }

    /// Projection radius: the explicit `iota`, else `C_f / mu` from the problem.
    pub fn resolve_iota(&self, meta: &ProblemMeta) -> Result<f64> {
        match (self.iota, meta.default_iota()) {
            (Some(iota), _) => Ok(iota),
            (None, Some(iota)) => Ok(iota),
            (None, None) => Err(Error::invalid(
                "no projection radius: set iota or provide C_f in the problem metadata",
            )),
        }
    }
}

/// Constants of the inner problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemMeta {
    /// Strong-convexity modulus of the inner problem.
    pub mu: f64,
    /// Smoothness constant.
    pub l: f64,
    /// Bound on `‖∇_y f‖`, when one is known.
    pub c_f: Option<f64>,
}

impl ProblemMeta {
    pub fn new(mu: f64, l: f64, c_f: Option<f64>) -> Result<Self> {
        if !(mu > 0.0 && l.is_finite() && mu <= l) {
            return Err(Error::invalid(format!("need 0 < mu <= L, got mu={mu}, L={l}")));
        }
        if let Some(c) = c_f {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("C_f must be positive, got {c}")));
            }
        }
        Ok(Self { mu, l, c_f })
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }

    /// `C_f / mu`, which bounds `‖u_x‖ = ‖(∇²_yy g)⁻¹ ∇_y f‖`.
    pub fn default_iota(&self) -> Option<f64> {
        self.c_f.map(|c| c / self.mu)
    }
}

/// Epoch layout for datasets of sizes `m` (outer) and `n` (inner).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub m: usize,
    pub n: usize,
    pub epoch_len: usize,
    pub outer_reps: usize,
    pub inner_reps: usize,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn plan_epoch(m: usize, n: usize) -> Result<EpochPlan> {
    plan_epoch_with_cap(m, n, DEFAULT_EPOCH_CAP)
}

pub fn plan_epoch_with_cap(m: usize, n: usize, cap: usize) -> Result<EpochPlan> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidDataset(format!(
            "dataset sizes must be positive (m={m}, n={n})"
        )));
    }
    let (m128, n128) = (m as u128, n as u128);
    let lcm = m128 / gcd(m128, n128) * n128;
    if lcm > cap as u128 {
        return Err(Error::EpochTooLong { m, n, lcm, cap });
    }
    let epoch_len = lcm as usize;
    Ok(EpochPlan {
        m,
        n,
        epoch_len,
        outer_reps: epoch_len / m,
        inner_reps: epoch_len / n,
    })
}

/// Euclidean projection onto the ball of radius `iota`.
pub fn project_ball(u: &[f64], iota: f64) -> Result<Vec<f64>> {
    if !linalg::all_finite(u) {
        return Err(Error::NonFinite("projected vector"));
    }
    if !(iota > 0.0) {
        return Err(Error::invalid(format!("projection radius must be > 0, got {iota}")));
    }
    let norm = linalg::norm(u);
    if norm <= iota {
        return Ok(u.to_vec());
    }
    let s = iota / norm;
    let mut out: Vec<f64> = u.iter().map(|v| v * s).collect();
    // rounding in the scale can leave the norm a few ulps above iota
    while linalg::norm(&out) > iota {
        out.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
    }
    Ok(out)
}

/// Tallies of oracle evaluations, in the units of the usual complexity
/// tables: gradients of `f` and `g`, Jacobian-vector and Hessian-vector
/// products of `g`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounters {
    pub gc_f: u64,
    pub gc_g: u64,
    pub jv_g: u64,
    pub hv_g: u64,
}

impl OracleCounters {
    pub fn delta(&self, earlier: &OracleCounters) -> OracleCounters {
        OracleCounters {
            gc_f: self.gc_f - earlier.gc_f,
            gc_g: self.gc_g - earlier.gc_g,
            jv_g: self.jv_g - earlier.jv_g,
            hv_g: self.hv_g - earlier.hv_g,
        }
    }

    pub fn dominates(&self, earlier: &OracleCounters) -> bool {
        self.gc_f >= earlier.gc_f
            && self.gc_g >= earlier.gc_g
            && self.jv_g >= earlier.jv_g
            && self.hv_g >= earlier.hv_g
    }
}

impl std::ops::Add for OracleCounters {
    type Output = OracleCounters;

    fn add(self, rhs: Self) -> Self {
        OracleCounters {
            gc_f: self.gc_f + rhs.gc_f,
            gc_g: self.gc_g + rhs.gc_g,
            jv_g: self.jv_g + rhs.jv_g,
            hv_g: self.hv_g + rhs.hv_g,
        }
    }
}

impl std::iter::Sum for OracleCounters {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(OracleCounters::default(), |a, b| a + b)
    }
}

/// Thread-safe accumulator behind [`OracleCounters`]. Only ever increases.
#[derive(Debug, Default)]
pub struct CounterTally {
    gc_f: AtomicU64,
    gc_g: AtomicU64,
    jv_g: AtomicU64,
    hv_g: AtomicU64,
}

impl CounterTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_gc_f(&self, k: u64) {
        self.gc_f.fetch_add(k, Ordering::Relaxed);
    }

    pub fn add_gc_g(&self, k: u64) {
        self.gc_g.fetch_add(k, Ordering::Relaxed);
    }

    pub fn add_jv_g(&self, k: u64) {
        self.jv_g.fetch_add(k, Ordering::Relaxed);
    }

    pub fn add_hv_g(&self, k: u64) {
        self.hv_g.fetch_add(k, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> OracleCounters {
        OracleCounters {
            gc_f: self.gc_f.load(Ordering::Relaxed),
            gc_g: self.gc_g.load(Ordering::Relaxed),
            jv_g: self.jv_g.load(Ordering::Relaxed),
            hv_g: self.hv_g.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn project_ball_examples() {
        assert_eq!(project_ball(&[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(project_ball(&[3.0, 4.0], 5.0).unwrap(), vec![3.0, 4.0]);
        let p = project_ball(&[3.0, 4.0], 1.0).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn project_ball_rejects_non_finite() {
        assert!(matches!(project_ball(&[f64::NAN, 1.0], 1.0), Err(Error::NonFinite(_))));
        assert!(matches!(project_ball(&[f64::INFINITY], 1.0), Err(Error::NonFinite(_))));
        assert!(project_ball(&[1.0], 0.0).is_err());
    }

    #[test]
    fn plan_epoch_examples() {
        let p = plan_epoch(2, 3).unwrap();
        assert_eq!((p.epoch_len, p.outer_reps, p.inner_reps), (6, 3, 2));
        let p = plan_epoch(4, 6).unwrap();
        assert_eq!((p.epoch_len, p.outer_reps, p.inner_reps), (12, 3, 2));
        let p = plan_epoch(5, 5).unwrap();
        assert_eq!((p.epoch_len, p.outer_reps, p.inner_reps), (5, 1, 1));
    }

    #[test]
    fn plan_epoch_errors() {
        assert!(matches!(plan_epoch(0, 3), Err(Error::InvalidDataset(_))));
        assert!(matches!(plan_epoch(3, 0), Err(Error::InvalidDataset(_))));
        assert!(matches!(plan_epoch(999_983, 999_979), Err(Error::EpochTooLong { .. })));
        assert!(matches!(plan_epoch_with_cap(7, 11, 50), Err(Error::EpochTooLong { lcm: 77, .. })));
    }

    #[test]
    fn plan_epoch_divisibility_exhaustive() {
        for m in 1..=64 {
            for n in 1..=64 {
                let p = plan_epoch(m, n).unwrap();
                assert_eq!(p.epoch_len % m, 0);
                assert_eq!(p.epoch_len % n, 0);
                assert_eq!(p.outer_reps * m, p.epoch_len);
                assert_eq!(p.inner_reps * n, p.epoch_len);
            }
        }
    }

    #[test]
    fn ratio_mode_is_exact() {
        let r = RateConfig::from_ratios(0.013, 3.0, 7.0).unwrap();
        assert_eq!(r.gamma, 3.0 * 0.013);
        assert_eq!(r.rho, 7.0 * 0.013);
        assert!(RateConfig::new(-1.0, 0.1, 0.1).is_err());
        assert!(RateConfig::new(f64::NAN, 0.1, 0.1).is_err());
    }

    #[test]
    fn iota_defaults_to_cf_over_mu() {
        let meta = ProblemMeta::new(0.5, 2.0, Some(3.0)).unwrap();
        assert_eq!(meta.kappa(), 4.0);
        let r = RateConfig::new(0.1, 0.1, 0.1).unwrap();
        assert_eq!(r.resolve_iota(&meta).unwrap(), 6.0);
        assert_eq!(r.with_iota(2.0).resolve_iota(&meta).unwrap(), 2.0);
        let no_cf = ProblemMeta::new(0.5, 2.0, None).unwrap();
        assert!(r.resolve_iota(&no_cf).is_err());
        assert!(ProblemMeta::new(3.0, 2.0, None).is_err());
    }

    #[test]
    fn tally_snapshot_and_delta() {
        let t = CounterTally::new();
        let a = t.snapshot();
        t.add_gc_f(2);
        t.add_hv_g(1);
        let b = t.snapshot();
        assert!(b.dominates(&a));
        assert_eq!(b.delta(&a), OracleCounters { gc_f: 2, gc_g: 0, jv_g: 0, hv_g: 1 });
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_nonexpanding(
            u in prop::collection::vec(-1e3f64..1e3, 1..12),
            iota in 1e-3f64..1e3,
        ) {
            let once = project_ball(&u, iota).unwrap();
            let twice = project_ball(&once, iota).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(linalg::norm(&once) <= iota);
            prop_assert!(linalg::norm(&once) <= linalg::norm(&u));
        }
    }
}
