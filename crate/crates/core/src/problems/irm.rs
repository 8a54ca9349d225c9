//! Synthetic invariant-risk-minimization instance (conditional bilevel).
//!
//! Outer example `i` has input `c_i`, label `b_i = sign(⟨c_i, x_true⟩)` and
//! `n_i` noisy observations `c_{j,i} = c_i + σ·N(0, I)`. The inner variable is
//! the scalar logit `y`:
//!
//! - `g(x, y; ζ_{i,j}) = ½(y − ⟨c_{j,i}, x⟩)²`, so `y_x^{(i)} = ⟨c̄_i, x⟩`
//! - `f(x, y; ξ_i) = log(1 + exp(−b_i y)) + ½λ‖x‖²`

use nalgebra::{DMatrix, DVector};

use super::text::{TextInstance, TextReader, TextWriter};
use super::{gaussian_mat, gaussian_vec, rng};
use crate::error::{Error, Result};
use crate::oracle::ConditionalOracle;
use crate::types::ProblemMeta;

/// Default generator parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IrmParams {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub lambda_out: f64,
    /// Step size used for all three rates in the reference experiment.
    pub lr: f64,
}

pub const IRM_DEFAULTS: IrmParams = IrmParams {
    m: 1000,
    n: 100,
    p: 10,
    sigma: 0.1,
    lambda_out: 0.1,
    lr: 0.001,
};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticIrm {
    x_true: DVector<f64>,
    inputs: Vec<DVector<f64>>,
    labels: Vec<f64>,
    /// `obs[i]` is `n_i × p`, row `j` is `c_{j,i}`.
    obs: Vec<DMatrix<f64>>,
    obs_mean: Vec<DVector<f64>>,
    sigma: f64,
    lambda: f64,
}

pub fn gen_irm(m: usize, n: usize, p: usize, sigma: f64, lambda_out: f64, seed: u64) -> Result<SyntheticIrm> {
    if m == 0 || n == 0 || p == 0 {
        return Err(Error::invalid("m, n and p must be positive"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut rng = rng(seed);
    let scale = 1.0 / (p as f64).sqrt();
    let x_true = gaussian_vec(&mut rng, p, 1.0);
    let mut inputs = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let c = loop {
            let c = gaussian_vec(&mut rng, p, scale);
            if c.dot(&x_true) != 0.0 {
                break c;
            }
        };
        labels.push(c.dot(&x_true).signum());
        inputs.push(c);
    }
    let obs = inputs
        .iter()
        .map(|c| {
            let noise = gaussian_mat(&mut rng, n, p, sigma);
            DMatrix::from_fn(n, p, |j, k| c[k] + noise[(j, k)])
        })
        .collect();
    SyntheticIrm::from_parts(x_true, inputs, labels, obs, sigma, lambda_out)
}

impl SyntheticIrm {
    pub fn from_parts(
        x_true: DVector<f64>,
        inputs: Vec<DVector<f64>>,
        labels: Vec<f64>,
        obs: Vec<DMatrix<f64>>,
        sigma: f64,
        lambda: f64,
    ) -> Result<Self> {
        let p = x_true.len();
        let m = inputs.len();
        if p == 0 || m == 0 || labels.len() != m || obs.len() != m {
            return Err(Error::invalid("inconsistent IRM example counts"));
        }
        if inputs.iter().any(|c| c.len() != p) || obs.iter().any(|o| o.ncols() != p || o.nrows() == 0) {
            return Err(Error::invalid("inconsistent IRM shapes"));
        }
        if labels.iter().any(|&b| b != 1.0 && b != -1.0) {
            return Err(Error::invalid("labels must be +1 or -1"));
        }
        if !(lambda >= 0.0 && sigma >= 0.0) {
            return Err(Error::invalid("lambda and sigma must be >= 0"));
        }
        let obs_mean = obs
            .iter()
            .map(|o| o.row_mean().transpose())
            .collect();
        Ok(Self {
            x_true,
            inputs,
            labels,
            obs,
            obs_mean,
            sigma,
            lambda,
        })
    }

    pub fn x_true(&self) -> &[f64] {
        self.x_true.as_slice()
    }
    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }
    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `c̄_i`, the mean observation of outer example `i`.
    pub fn mean_observation(&self, i: usize) -> &[f64] {
        self.obs_mean[i].as_slice()
    }

    fn obs_dot(&self, i: usize, j: usize, x: &[f64]) -> f64 {
        let row = self.obs[i].row(j);
        row.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn y_of(&self, x: &[f64], i: usize) -> f64 {
        self.obs_mean[i].as_slice().iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Closed-form hypergradient: a regularized logistic-regression gradient
    /// with features `c̄_i`.
    pub fn hypergrad(&self, x: &[f64]) -> Vec<f64> {
        let m = self.inputs.len();
        let mut g: Vec<f64> = x.iter().map(|v| self.lambda * v).collect();
        for i in 0..m {
            let s = dloss(self.labels[i], self.y_of(x, i)) / m as f64;
            for (gk, ck) in g.iter_mut().zip(self.obs_mean[i].iter()) {
                *gk += s * ck;
            }
        }
        g
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let m = self.inputs.len();
        let reg = 0.5 * self.lambda * crate::linalg::norm_sq(x);
        let loss: f64 = (0..m).map(|i| softplus(-self.labels[i] * self.y_of(x, i))).sum::<f64>() / m as f64;
        loss + reg
    }

    /// Fraction of outer examples whose sign of `⟨c_i, x⟩` matches the label.
    pub fn accuracy(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        let hits = self
            .inputs
            .iter()
            .zip(&self.labels)
            .filter(|(c, &b)| b * c.dot(&x) > 0.0)
            .count();
        hits as f64 / self.inputs.len() as f64
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `d/dy log(1 + exp(−b y))`
fn dloss(b: f64, y: f64) -> f64 {
    -b * sigmoid(-b * y)
}

impl ConditionalOracle for SyntheticIrm {
    fn outer_dim(&self) -> usize {
        self.x_true.len()
    }
    fn inner_dim(&self) -> usize {
        1
    }
    fn outer_len(&self) -> usize {
        self.inputs.len()
    }
    fn inner_len(&self, i: usize) -> usize {
        self.obs[i].nrows()
    }
    fn meta(&self) -> ProblemMeta {
        // inner Hessian is exactly 1; |∂_y f| < 1
        ProblemMeta::new(1.0, 1.0, Some(1.0)).expect("valid constants")
    }

    fn grad_f_x(&self, x: &[f64], _y: &[f64], _i: usize) -> Vec<f64> {
        x.iter().map(|v| self.lambda * v).collect()
    }
    fn grad_f_y(&self, _x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        vec![dloss(self.labels[i], y[0])]
    }
    fn grad_g_y(&self, x: &[f64], y: &[f64], i: usize, j: usize) -> Vec<f64> {
        vec![y[0] - self.obs_dot(i, j, x)]
    }
    fn hvp_g_yy(&self, _x: &[f64], _y: &[f64], _i: usize, _j: usize, v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
    fn jvp_g_xy(&self, _x: &[f64], _y: &[f64], i: usize, j: usize, v: &[f64]) -> Vec<f64> {
        self.obs[i].row(j).iter().map(|c| -c * v[0]).collect()
    }

    fn ctx_grad_g_y(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        vec![y[0] - self.y_of(x, i)]
    }
    fn ctx_hvp_g_yy(&self, _x: &[f64], _y: &[f64], _i: usize, v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
    fn ctx_jvp_g_xy(&self, _x: &[f64], _y: &[f64], i: usize, v: &[f64]) -> Vec<f64> {
        self.obs_mean[i].iter().map(|c| -c * v[0]).collect()
    }

    fn value_f(&self, x: &[f64], y: &[f64], i: usize) -> Option<f64> {
        Some(softplus(-self.labels[i] * y[0]) + 0.5 * self.lambda * crate::linalg::norm_sq(x))
    }
}

impl TextInstance for SyntheticIrm {
    fn to_text(&self) -> String {
        let labels = DVector::from_column_slice(&self.labels);
        TextWriter::new("synthetic_irm")
            .scalar("sigma", self.sigma)
            .scalar("lambda", self.lambda)
            .vector("x_true", self.x_true.as_slice())
            .vector("labels", labels.as_slice())
            .vectors("inputs", &self.inputs)
            .matrices("observations", &self.obs)
            .finish()
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut r = TextReader::new(text, "synthetic_irm")?;
        let sigma = r.scalar("sigma")?;
        let lambda = r.scalar("lambda")?;
        let x_true = r.vector("x_true")?;
        let labels = r.vector("labels")?;
        let inputs = r.vectors("inputs")?;
        let obs = r.matrices("observations")?;
        r.finish()?;
        Self::from_parts(x_true, inputs, labels.as_slice().to_vec(), obs, sigma, lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_agree_with_ground_truth() {
        for seed in 0..5 {
            let irm = gen_irm(100, 20, 10, 0.1, 0.1, seed).unwrap();
            let xt = DVector::from_column_slice(irm.x_true());
            for (c, b) in irm.inputs().iter().zip(irm.labels()) {
                assert!(b * c.dot(&xt) > 0.0);
            }
            assert_eq!(irm.accuracy(irm.x_true()), 1.0);
        }
    }

    #[test]
    fn noiseless_inner_solution_is_the_input_projection() {
        let irm = gen_irm(7, 3, 4, 0.0, 0.1, 2).unwrap();
        let x = [0.3, -0.2, 1.0, 0.5];
        for i in 0..7 {
            let want: f64 = irm.inputs()[i].iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((irm.y_of(&x, i) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn hypergradient_matches_difference_quotients_of_objective() {
        let irm = gen_irm(30, 5, 6, 0.1, 0.1, 9).unwrap();
        let x: Vec<f64> = (0..6).map(|k| 0.2 * k as f64 - 0.5).collect();
        let g = irm.hypergrad(&x);
        let h = 1e-6;
        for k in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (irm.objective(&xp) - irm.objective(&xm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn defaults_and_validation() {
        assert_eq!((IRM_DEFAULTS.m, IRM_DEFAULTS.n), (1000, 100));
        assert_eq!(IRM_DEFAULTS.sigma, 0.1);
        assert_eq!(IRM_DEFAULTS.lambda_out, 0.1);
        assert!(gen_irm(0, 1, 1, 0.1, 0.1, 0).is_err());
        assert!(gen_irm(1, 1, 1, -0.1, 0.1, 0).is_err());
        assert_eq!(gen_irm(5, 4, 3, 0.1, 0.1, 1).unwrap(), gen_irm(5, 4, 3, 0.1, 0.1, 1).unwrap());
    }

    #[test]
    fn text_roundtrip() {
        let irm = gen_irm(6, 3, 4, 0.1, 0.1, 5).unwrap();
        assert_eq!(SyntheticIrm::from_text(&irm.to_text()).unwrap(), irm);
    }
}
