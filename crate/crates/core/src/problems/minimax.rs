//! Convex-strongly-concave quadratic minimax instance.
//!
//! `f(x, y; ξ_i) = ½xᵀP_i x + s_iᵀx + yᵀC_i x − ½yᵀD_i y` with `D̄ ≻ 0`.
//! The saddle solves `(P̄ + C̄ᵀD̄⁻¹C̄) x* = −s̄`, `y* = D̄⁻¹C̄ x*`.

use nalgebra::{DMatrix, DVector};

use super::text::{TextInstance, TextReader, TextWriter};
use super::{
    centered_perturbations, centered_vectors, dv, gaussian_mat, gaussian_vec, is_symmetric, mat_t_vec, mat_vec,
    mean_mat, mean_vec, random_orthogonal, rng, spectral_norm, sym_eigen_range,
};
use crate::error::{Error, Result};
use crate::oracle::MinimaxOracle;
use crate::types::ProblemMeta;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadMinimax {
    p_mat: Vec<DMatrix<f64>>,
    s: Vec<DVector<f64>>,
    c: Vec<DMatrix<f64>>,
    d_mat: Vec<DMatrix<f64>>,
    p_bar: DMatrix<f64>,
    s_bar: DVector<f64>,
    c_bar: DMatrix<f64>,
    d_bar_inv: DMatrix<f64>,
    meta: ProblemMeta,
    x_star: Vec<f64>,
    y_star: Vec<f64>,
}

pub fn gen_quad_minimax(p: usize, d: usize, m: usize, seed: u64) -> Result<QuadMinimax> {
    if p == 0 || d == 0 || m == 0 {
        return Err(Error::invalid("dimensions and dataset size must be positive"));
    }
    let mut rng = rng(seed);
    let spectrum = |rng: &mut rand_chacha::ChaCha8Rng, k: usize, lo: f64, hi: f64| {
        let q = random_orthogonal(rng, k);
        let e = DVector::from_fn(k, |i, _| if k == 1 { lo } else { lo + (hi - lo) * i as f64 / (k - 1) as f64 });
        let a = &q * DMatrix::from_diagonal(&e) * q.transpose();
        (&a + a.transpose()) * 0.5
    };
    let sym_noise = |rng: &mut rand_chacha::ChaCha8Rng, k: usize| -> Vec<DMatrix<f64>> {
        (0..m)
            .map(|_| {
                let g = gaussian_mat(rng, k, k, 1.0);
                (&g + g.transpose()) * 0.5
            })
            .collect()
    };
    let p_bar = spectrum(&mut rng, p, 0.5, 1.5);
    let noise = sym_noise(&mut rng, p);
    let p_mat = centered_perturbations(noise, 0.1).into_iter().map(|e| &p_bar + e).collect();
    let d_bar = spectrum(&mut rng, d, 1.0, 2.0);
    let noise = sym_noise(&mut rng, d);
    let d_mat = centered_perturbations(noise, 0.1).into_iter().map(|e| &d_bar + e).collect();
    let c_bar = gaussian_mat(&mut rng, d, p, 1.0 / (p as f64).sqrt());
    let c_noise: Vec<DMatrix<f64>> = (0..m).map(|_| gaussian_mat(&mut rng, d, p, 1.0)).collect();
    let c_noise = centered_perturbations(c_noise, 0.1);
    let c = c_noise.into_iter().map(|e| &c_bar + e).collect();
    let s_bar = gaussian_vec(&mut rng, p, 1.0);
    let s = centered_vectors((0..m).map(|_| gaussian_vec(&mut rng, p, 0.1)).collect())
        .into_iter()
        .map(|v| v + &s_bar)
        .collect();
    QuadMinimax::from_parts(p_mat, s, c, d_mat)
}

impl QuadMinimax {
    pub fn from_parts(
        p_mat: Vec<DMatrix<f64>>,
        s: Vec<DVector<f64>>,
        c: Vec<DMatrix<f64>>,
        d_mat: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let m = p_mat.len();
        if m == 0 || s.len() != m || c.len() != m || d_mat.len() != m {
            return Err(Error::invalid("inconsistent example counts"));
        }
        let p = p_mat[0].nrows();
        let d = d_mat[0].nrows();
        let ok = p_mat.iter().all(|a| a.shape() == (p, p) && is_symmetric(a))
            && d_mat.iter().all(|a| a.shape() == (d, d) && is_symmetric(a))
            && c.iter().all(|a| a.shape() == (d, p))
            && s.iter().all(|v| v.len() == p);
        if !ok || p == 0 || d == 0 {
            return Err(Error::invalid("inconsistent shapes or non-symmetric blocks"));
        }
        let p_bar = mean_mat(&p_mat);
        let d_bar = mean_mat(&d_mat);
        let c_bar = mean_mat(&c);
        let s_bar = mean_vec(&s);
        let (mu, _) = sym_eigen_range(&d_bar);
        if !(mu > 0.0) {
            return Err(Error::invalid("mean concavity block is not positive definite"));
        }
        let d_bar_inv = d_bar.try_inverse().ok_or_else(|| Error::invalid("singular concavity block"))?;
        let schur = &p_bar + c_bar.transpose() * &d_bar_inv * &c_bar;
        let x = schur
            .lu()
            .solve(&(-&s_bar))
            .ok_or_else(|| Error::invalid("saddle system is singular"))?;
        let y = &d_bar_inv * &c_bar * &x;
        let l = d_mat
            .iter()
            .map(|a| sym_eigen_range(a).1)
            .chain(c.iter().map(spectral_norm))
            .chain(p_mat.iter().map(spectral_norm))
            .fold(mu, f64::max);
        Ok(Self {
            p_mat,
            s,
            c,
            d_mat,
            p_bar,
            s_bar,
            c_bar,
            d_bar_inv,
            meta: ProblemMeta::new(mu, l, None)?,
            x_star: x.as_slice().to_vec(),
            y_star: y.as_slice().to_vec(),
        })
    }

    /// `f(x, y) = xy − ½y²` with a single example.
    pub fn scalar_example() -> Self {
        let m1 = |v: f64| DMatrix::from_element(1, 1, v);
        Self::from_parts(vec![m1(0.0)], vec![DVector::zeros(1)], vec![m1(1.0)], vec![m1(1.0)])
            .expect("valid scalar instance")
    }

    pub fn saddle(&self) -> (&[f64], &[f64]) {
        (&self.x_star, &self.y_star)
    }

    pub fn y_of(&self, x: &[f64]) -> Vec<f64> {
        (&self.d_bar_inv * (&self.c_bar * dv(x))).as_slice().to_vec()
    }

    /// `∇h(x) = ∇_x f(x, y_x)`.
    pub fn hypergrad(&self, x: &[f64]) -> Vec<f64> {
        let y = self.y_of(x);
        self.full_grad_x(x, &y)
    }
}

impl MinimaxOracle for QuadMinimax {
    fn outer_dim(&self) -> usize {
        self.p_bar.nrows()
    }
    fn inner_dim(&self) -> usize {
        self.d_bar_inv.nrows()
    }
    fn outer_len(&self) -> usize {
        self.p_mat.len()
    }
    fn meta(&self) -> ProblemMeta {
        self.meta
    }

    fn grad_x(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        let v = &self.p_mat[i] * dv(x) + &self.s[i] + self.c[i].tr_mul(&dv(y));
        v.as_slice().to_vec()
    }
    fn grad_y(&self, x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        let v = &self.c[i] * dv(x) - &self.d_mat[i] * dv(y);
        v.as_slice().to_vec()
    }
    fn full_grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut v = mat_vec(&self.p_bar, x);
        for ((a, s), c) in v.iter_mut().zip(self.s_bar.iter()).zip(mat_t_vec(&self.c_bar, y)) {
            *a += s + c;
        }
        v
    }
    fn value(&self, x: &[f64], y: &[f64], i: usize) -> Option<f64> {
        let (xv, yv) = (dv(x), dv(y));
        Some(
            0.5 * xv.dot(&(&self.p_mat[i] * &xv)) + self.s[i].dot(&xv) + yv.dot(&(&self.c[i] * &xv))
                - 0.5 * yv.dot(&(&self.d_mat[i] * &yv)),
        )
    }
}

impl TextInstance for QuadMinimax {
    fn to_text(&self) -> String {
        TextWriter::new("quad_minimax")
            .matrices("P", &self.p_mat)
            .vectors("s", &self.s)
            .matrices("C", &self.c)
            .matrices("D", &self.d_mat)
            .finish()
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut r = TextReader::new(text, "quad_minimax")?;
        let p_mat = r.matrices("P")?;
        let s = r.vectors("s")?;
        let c = r.matrices("C")?;
        let d_mat = r.matrices("D")?;
        r.finish()?;
        Self::from_parts(p_mat, s, c, d_mat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;

    #[test]
    fn scalar_saddle_is_origin() {
        let q = QuadMinimax::scalar_example();
        let (x, y) = q.saddle();
        assert_eq!((x[0], y[0]), (0.0, 0.0));
        assert_eq!(q.grad_y(&[1.0], &[0.0], 0), vec![1.0]);
        assert_eq!(q.grad_x(&[1.0], &[0.0], 0), vec![0.0]);
    }

    #[test]
    fn decoupled_inner_maximizer_is_zero() {
        let eye = DMatrix::identity(2, 2);
        let q = QuadMinimax::from_parts(
            vec![eye.clone()],
            vec![DVector::from_vec(vec![1.0, -1.0])],
            vec![DMatrix::zeros(2, 2)],
            vec![eye],
        )
        .unwrap();
        for x in [[0.0, 0.0], [3.0, -2.0]] {
            assert_eq!(q.y_of(&x), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn generated_saddle_is_stationary() {
        let q = gen_quad_minimax(5, 5, 16, 0).unwrap();
        let (x, y) = q.saddle();
        assert!(norm(&q.full_grad_x(x, y)) < 1e-12);
        assert!(norm(&q.full_grad_y(x, y)) < 1e-12);
        assert!(q.meta().mu > 0.0);
        assert_eq!(q, gen_quad_minimax(5, 5, 16, 0).unwrap());
    }

    #[test]
    fn text_roundtrip() {
        let q = gen_quad_minimax(3, 2, 4, 1).unwrap();
        assert_eq!(QuadMinimax::from_text(&q.to_text()).unwrap(), q);
    }
}
