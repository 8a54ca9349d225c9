//! Hyper-data-cleaning on two-class Gaussian blobs.
//!
//! The outer variable `x ∈ R^{N_tr}` holds one logit per training example;
//! example `n` enters the inner loss with weight `σ(x_n)`. The inner variable
//! `y = (w, bias)` is a logistic-regression model:
//!
//! - `g(x, y; ζ_n) = σ(x_n)·ℓ(y; a_n, b_n) + ½λ‖y‖²` over the (corrupted) train set
//! - `f(x, y; ξ_i) = ℓ(y; a_i, b_i)` over the clean validation set
//!
//! with `ℓ(y; a, b) = log(1 + exp(−b·⟨(a, 1), y⟩))`.

use nalgebra::{DMatrix, DVector};

use super::text::{TextInstance, TextReader, TextWriter};
use super::{normal, rng};
use crate::error::{Error, Result};
use crate::oracle::BilevelOracle;
use crate::types::ProblemMeta;

pub const DATA_CLEANING_L2: f64 = 1e-3;
pub const FEATURE_DIM: usize = 2;
/// Distance of each class mean from the origin along the diagonal.
const BLOB_OFFSET: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DataCleaningSmall {
    /// Rows are `(a_n, 1)`.
    train: DMatrix<f64>,
    train_labels: Vec<f64>,
    corrupted: Vec<bool>,
    val: DMatrix<f64>,
    val_labels: Vec<f64>,
    lambda: f64,
    meta: ProblemMeta,
}

pub fn gen_data_cleaning_small(n_train: usize, n_val: usize, corrupt_frac: f64, seed: u64) -> Result<DataCleaningSmall> {
    if n_train < 2 || n_val < 2 {
        return Err(Error::invalid("need at least two train and two validation examples"));
    }
    if !(0.0..=1.0).contains(&corrupt_frac) {
        return Err(Error::invalid(format!("corrupt_frac must lie in [0, 1], got {corrupt_frac}")));
    }
    for attempt in 0u64.. {
        let sub = crate::sampler::sub_seed(seed, &[attempt]);
        let s = if attempt == 0 { seed } else { sub };
        let (train, clean) = blobs(n_train, s, 0);
        let (val, val_labels) = blobs(n_val, s, 1);
        let both = |l: &[f64]| l.contains(&1.0) && l.contains(&-1.0);
        if !both(&clean) || !both(&val_labels) {
            continue;
        }
        let n_bad = (corrupt_frac * n_train as f64).round() as usize;
        let mut r = rng(crate::sampler::sub_seed(s, &[2]));
        let mut idx: Vec<usize> = (0..n_train).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut r);
        let mut corrupted = vec![false; n_train];
        for &k in &idx[..n_bad] {
            corrupted[k] = true;
        }
        let train_labels: Vec<f64> = clean
            .iter()
            .zip(&corrupted)
            .map(|(&b, &c)| if c { -b } else { b })
            .collect();
        if !both(&train_labels) {
            continue;
        }
        return DataCleaningSmall::from_parts(train, train_labels, corrupted, val, val_labels, DATA_CLEANING_L2);
    }
    unreachable!()
}

fn blobs(count: usize, seed: u64, stream: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut r = rng(crate::sampler::sub_seed(seed, &[stream]));
    let mut rows = DMatrix::zeros(count, FEATURE_DIM + 1);
    let mut labels = Vec::with_capacity(count);
    for n in 0..count {
        let b = if rand::Rng::random_bool(&mut r, 0.5) { 1.0 } else { -1.0 };
        for k in 0..FEATURE_DIM {
            rows[(n, k)] = b * BLOB_OFFSET + normal(&mut r);
        }
        rows[(n, FEATURE_DIM)] = 1.0;
        labels.push(b);
    }
    (rows, labels)
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn row_dot(m: &DMatrix<f64>, n: usize, y: &[f64]) -> f64 {
    m.row(n).iter().zip(y).map(|(a, b)| a * b).sum()
}

impl DataCleaningSmall {
    pub fn from_parts(
        train: DMatrix<f64>,
        train_labels: Vec<f64>,
        corrupted: Vec<bool>,
        val: DMatrix<f64>,
        val_labels: Vec<f64>,
        lambda: f64,
    ) -> Result<Self> {
        let d = train.ncols();
        if d == 0 || val.ncols() != d || train.nrows() == 0 || val.nrows() == 0 {
            return Err(Error::invalid("inconsistent feature dimensions"));
        }
        if train_labels.len() != train.nrows() || corrupted.len() != train.nrows() || val_labels.len() != val.nrows() {
            return Err(Error::invalid("label counts do not match example counts"));
        }
        if train_labels.iter().chain(&val_labels).any(|&b| b != 1.0 && b != -1.0) {
            return Err(Error::invalid("labels must be +1 or -1"));
        }
        if !(lambda > 0.0) {
            return Err(Error::invalid("L2 strength must be positive"));
        }
        let row_sq = |m: &DMatrix<f64>| (0..m.nrows()).map(|n| m.row(n).norm_squared()).fold(0.0, f64::max);
        // σ(x_n) <= 1 and the logistic curvature is at most 1/4
        let l = 0.25 * row_sq(&train) + lambda;
        let c_f = row_sq(&val).sqrt();
        let meta = ProblemMeta::new(lambda, l, Some(c_f))?;
        Ok(Self {
            train,
            train_labels,
            corrupted,
            val,
            val_labels,
            lambda,
            meta,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train.nrows()
    }
    pub fn n_val(&self) -> usize {
        self.val.nrows()
    }
    pub fn corrupted(&self) -> &[bool] {
        &self.corrupted
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn train_loss_grad(&self, y: &[f64], n: usize) -> (f64, f64) {
        // returns (dℓ/dz, d²ℓ/dz²) at z = ⟨φ_n, y⟩
        let b = self.train_labels[n];
        let z = row_dot(&self.train, n, y);
        let s = sigmoid(-b * z);
        (-b * s, s * (1.0 - s))
    }

    /// Inner minimizer for explicit example weights, by damped Newton.
    pub fn inner_solution_with_weights(&self, w: &[f64]) -> Result<Vec<f64>> {
        let d = self.train.ncols();
        let n = self.n_train();
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                what: "weights",
                expected: n,
                got: w.len(),
            });
        }
        let mut y = DVector::zeros(d);
        for _ in 0..100 {
            let mut grad = &y * self.lambda;
            let mut hess = DMatrix::identity(d, d) * self.lambda;
            for (k, wk) in w.iter().enumerate().take(n) {
                let (g1, g2) = self.train_loss_grad(y.as_slice(), k);
                let phi = self.train.row(k).transpose();
                grad += &phi * (wk * g1 / n as f64);
                hess += &phi * phi.transpose() * (wk * g2 / n as f64);
            }
            if grad.norm() <= 1e-13 {
                return Ok(y.as_slice().to_vec());
            }
            let step = hess
                .cholesky()
                .ok_or(Error::IllConditioned {
                    iteration: 0,
                    residual: grad.norm(),
                })?
                .solve(&grad);
            y -= step;
        }
        Err(Error::NoConvergence {
            iterations: 100,
            residual: f64::NAN,
        })
    }

    pub fn validation_loss(&self, y: &[f64]) -> f64 {
        let m = self.n_val();
        (0..m)
            .map(|i| softplus(-self.val_labels[i] * row_dot(&self.val, i, y)))
            .sum::<f64>()
            / m as f64
    }

    pub fn validation_accuracy(&self, y: &[f64]) -> f64 {
        let m = self.n_val();
        let hits = (0..m).filter(|&i| self.val_labels[i] * row_dot(&self.val, i, y) > 0.0).count();
        hits as f64 / m as f64
    }

    /// F1 score of flagging example `n` as corrupt when `x_n` is below the
    /// mean of `x`.
    pub fn f1_score(&self, x: &[f64]) -> f64 {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (xn, &bad) in x.iter().zip(&self.corrupted) {
            match (xn - mean < 0.0, bad) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        if tp == 0 {
            return 0.0;
        }
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }
}

impl BilevelOracle for DataCleaningSmall {
    fn outer_dim(&self) -> usize {
        self.n_train()
    }
    fn inner_dim(&self) -> usize {
        self.train.ncols()
    }
    fn outer_len(&self) -> usize {
        self.n_val()
    }
    fn inner_len(&self) -> usize {
        self.n_train()
    }
    fn meta(&self) -> ProblemMeta {
        self.meta
    }

    fn grad_f_x(&self, x: &[f64], _y: &[f64], _i: usize) -> Vec<f64> {
        vec![0.0; x.len()]
    }
    fn grad_f_y(&self, _x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        let b = self.val_labels[i];
        let s = -b * sigmoid(-b * row_dot(&self.val, i, y));
        self.val.row(i).iter().map(|a| s * a).collect()
    }
    fn grad_g_y(&self, x: &[f64], y: &[f64], j: usize) -> Vec<f64> {
        let (g1, _) = self.train_loss_grad(y, j);
        let c = sigmoid(x[j]) * g1;
        self.train
            .row(j)
            .iter()
            .zip(y)
            .map(|(a, yk)| c * a + self.lambda * yk)
            .collect()
    }
    fn hvp_g_yy(&self, x: &[f64], y: &[f64], j: usize, v: &[f64]) -> Vec<f64> {
        let (_, g2) = self.train_loss_grad(y, j);
        let c = sigmoid(x[j]) * g2 * row_dot(&self.train, j, v);
        self.train
            .row(j)
            .iter()
            .zip(v)
            .map(|(a, vk)| c * a + self.lambda * vk)
            .collect()
    }
    fn jvp_g_xy(&self, x: &[f64], y: &[f64], j: usize, v: &[f64]) -> Vec<f64> {
        let (g1, _) = self.train_loss_grad(y, j);
        let s = sigmoid(x[j]);
        let mut out = vec![0.0; x.len()];
        out[j] = s * (1.0 - s) * g1 * row_dot(&self.train, j, v);
        out
    }

    fn full_grad_f_x(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
    fn full_jvp_g_xy(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.n_train() as f64;
        (0..self.n_train())
            .map(|j| {
                let (g1, _) = self.train_loss_grad(y, j);
                let s = sigmoid(x[j]);
                s * (1.0 - s) * g1 * row_dot(&self.train, j, v) / n
            })
            .collect()
    }

    fn value_f(&self, _x: &[f64], y: &[f64], i: usize) -> Option<f64> {
        Some(softplus(-self.val_labels[i] * row_dot(&self.val, i, y)))
    }
    fn value_g(&self, x: &[f64], y: &[f64], j: usize) -> Option<f64> {
        let z = row_dot(&self.train, j, y);
        let reg = 0.5 * self.lambda * crate::linalg::norm_sq(y);
        Some(sigmoid(x[j]) * softplus(-self.train_labels[j] * z) + reg)
    }
}

impl TextInstance for DataCleaningSmall {
    fn to_text(&self) -> String {
        let flags: Vec<f64> = self.corrupted.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        TextWriter::new("data_cleaning_small")
            .scalar("lambda", self.lambda)
            .matrix("train", &self.train)
            .vector("train_labels", &self.train_labels)
            .vector("corrupted", &flags)
            .matrix("val", &self.val)
            .vector("val_labels", &self.val_labels)
            .finish()
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut r = TextReader::new(text, "data_cleaning_small")?;
        let lambda = r.scalar("lambda")?;
        let train = r.matrix("train")?;
        let train_labels = r.vector("train_labels")?.as_slice().to_vec();
        let corrupted = r.vector("corrupted")?.iter().map(|&f| f != 0.0).collect();
        let val = r.matrix("val")?;
        let val_labels = r.vector("val_labels")?.as_slice().to_vec();
        r.finish()?;
        Self::from_parts(train, train_labels, corrupted, val, val_labels, lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::exact_inner_solve;

    #[test]
    fn corruption_touches_only_train_labels() {
        let clean = gen_data_cleaning_small(200, 50, 0.0, 4).unwrap();
        let noisy = gen_data_cleaning_small(200, 50, 0.6, 4).unwrap();
        assert_eq!(clean.val, noisy.val);
        assert_eq!(clean.val_labels, noisy.val_labels);
        assert_eq!(clean.train, noisy.train);
        let flipped = clean
            .train_labels
            .iter()
            .zip(&noisy.train_labels)
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(flipped, 120);
        assert_eq!(noisy.corrupted().iter().filter(|&&c| c).count(), 120);
        for ((a, b), &c) in clean.train_labels.iter().zip(&noisy.train_labels).zip(noisy.corrupted()) {
            assert_eq!(a != b, c);
        }
    }

    #[test]
    fn defaults_and_validation() {
        let dc = gen_data_cleaning_small(20, 10, 0.6, 0).unwrap();
        assert_eq!(dc.lambda(), 1e-3);
        assert_eq!(dc.meta().mu, 1e-3);
        assert!(gen_data_cleaning_small(20, 10, 1.5, 0).is_err());
        assert!(gen_data_cleaning_small(20, 10, -0.1, 0).is_err());
        assert_eq!(dc, gen_data_cleaning_small(20, 10, 0.6, 0).unwrap());
    }

    #[test]
    fn newton_and_descent_agree() {
        let dc = gen_data_cleaning_small(40, 10, 0.3, 1).unwrap();
        let x: Vec<f64> = (0..40).map(|k| ((k % 5) as f64 - 2.0) * 0.3).collect();
        let w: Vec<f64> = x.iter().map(|&t| sigmoid(t)).collect();
        let newton = dc.inner_solution_with_weights(&w).unwrap();
        let gd = exact_inner_solve(&dc, &x, 1e-11, 10_000_000).unwrap();
        assert!(crate::linalg::dist(&newton, &gd) < 1e-6);
    }

    #[test]
    fn removing_corrupted_examples_helps_validation() {
        for seed in 0..3 {
            let dc = gen_data_cleaning_small(200, 50, 0.6, seed).unwrap();
            let uniform = vec![1.0; dc.n_train()];
            let oracle: Vec<f64> = dc.corrupted().iter().map(|&c| if c { 0.0 } else { 1.0 }).collect();
            let base = dc.validation_loss(&dc.inner_solution_with_weights(&uniform).unwrap());
            let cleaned = dc.validation_loss(&dc.inner_solution_with_weights(&oracle).unwrap());
            assert!(cleaned < base, "seed {seed}: {cleaned} vs {base}");
            let y = dc.inner_solution_with_weights(&oracle).unwrap();
            assert!(dc.validation_accuracy(&y) > 0.8);
        }
    }

    #[test]
    fn f1_convention() {
        let dc = gen_data_cleaning_small(10, 4, 0.5, 3).unwrap();
        let perfect: Vec<f64> = dc.corrupted().iter().map(|&c| if c { -1.0 } else { 1.0 }).collect();
        assert_eq!(dc.f1_score(&perfect), 1.0);
        let inverted: Vec<f64> = perfect.iter().map(|v| -v).collect();
        assert_eq!(dc.f1_score(&inverted), 0.0);
    }

    #[test]
    fn text_roundtrip() {
        let dc = gen_data_cleaning_small(12, 5, 0.25, 8).unwrap();
        assert_eq!(DataCleaningSmall::from_text(&dc.to_text()).unwrap(), dc);
    }
}
