//! Quadratic bilevel instance with closed-form references.
//!
//! Outer: `f(x, y; ξ_i) = ½‖y − t_i‖² + ½λ‖x‖² + s_iᵀx`.
//! Inner: `g(x, y; ζ_j) = ½yᵀA_j y + yᵀ(B_j x + b_j)`.
//!
//! With `Ā, B̄, b̄, t̄, s̄` the example means:
//! `y_x = −Ā⁻¹(B̄x + b̄)`, `u_x = Ā⁻¹(y_x − t̄)`,
//! `∇h(x) = λx + s̄ − B̄ᵀu_x`, which is affine in `x`.

use nalgebra::{DMatrix, DVector};

use super::text::{TextInstance, TextReader, TextWriter};
use super::{
    centered_perturbations, centered_vectors, dv, gaussian_mat, gaussian_vec, is_symmetric, mat_t_vec,
    mat_vec, mean_mat, mean_vec, random_orthogonal, rng, spectral_norm, sym_eigen_range,
};
use crate::error::{Error, Result};
use crate::oracle::BilevelOracle;
use crate::types::ProblemMeta;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticBilevel {
    a: Vec<DMatrix<f64>>,
    b_mat: Vec<DMatrix<f64>>,
    b_vec: Vec<DVector<f64>>,
    targets: Vec<DVector<f64>>,
    lin: Vec<DVector<f64>>,
    lambda: f64,
    a_bar: DMatrix<f64>,
    b_mat_bar: DMatrix<f64>,
    b_vec_bar: DVector<f64>,
    t_bar: DVector<f64>,
    s_bar: DVector<f64>,
    a_bar_inv: DMatrix<f64>,
    meta: ProblemMeta,
    solution: QuadraticSolution,
}

/// Closed-form optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticSolution {
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
    pub h_star: f64,
}

/// Generator parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticSpec {
    pub p: usize,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub kappa: f64,
    pub seed: u64,
    /// Outer regularization `λ`.
    pub lambda: f64,
    /// Scale of per-example deviations from the mean data (default 0.005).
    pub heterogeneity: f64,
}

impl QuadraticSpec {
    pub fn new(p: usize, d: usize, m: usize, n: usize, kappa: f64, seed: u64) -> Self {
        Self {
            p,
            d,
            m,
            n,
            kappa,
            seed,
            lambda: 0.5,
            heterogeneity: 0.005,
        }
    }
}

/// Random instance with `λ_max(A_j) / λ_min(Ā) <= kappa`.
pub fn gen_quadratic_bilevel(
    p: usize,
    d: usize,
    m: usize,
    n: usize,
    kappa: f64,
    seed: u64,
) -> Result<QuadraticBilevel> {
    QuadraticBilevel::generate(&QuadraticSpec::new(p, d, m, n, kappa, seed))
}

impl QuadraticBilevel {
    pub fn generate(spec: &QuadraticSpec) -> Result<Self> {
        let QuadraticSpec {
            p,
            d,
            m,
            n,
            kappa,
            seed,
            lambda,
            heterogeneity: het,
        } = *spec;
        if p == 0 || d == 0 || m == 0 || n == 0 {
            return Err(Error::invalid("dimensions and dataset sizes must be positive"));
        }
        if !(kappa >= 1.0 && kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa must be >= 1, got {kappa}")));
        }
        if !(het >= 0.0 && lambda >= 0.0) {
            return Err(Error::invalid("heterogeneity and lambda must be >= 0"));
        }
        let mut rng = rng(seed);

        // Spectrum of Ā in [1, top]; per-example perturbations of norm
        // <= eps keep every A_j positive definite and λ_max(A_j) <= kappa.
        let eps = (0.4 * het.min(1.0)).min(0.5 * (kappa - 1.0));
        let top = (kappa - eps).max(1.0);
        let q = random_orthogonal(&mut rng, d);
        let mut eig = DVector::from_fn(d, |_, _| 0.0);
        for k in 0..d {
            let u: f64 = rand::Rng::random(&mut rng);
            eig[k] = 1.0 + (top - 1.0) * u;
        }
        eig[0] = 1.0;
        if d > 1 {
            eig[d - 1] = top;
        }
        let a_bar = &q * DMatrix::from_diagonal(&eig) * q.transpose();
        let a_bar = (&a_bar + a_bar.transpose()) * 0.5;
        let noise: Vec<DMatrix<f64>> = (0..n)
            .map(|_| {
                let g = gaussian_mat(&mut rng, d, d, 1.0);
                (&g + g.transpose()) * 0.5
            })
            .collect();
        let a: Vec<DMatrix<f64>> = centered_perturbations(noise, eps)
            .into_iter()
            .map(|e| &a_bar + e)
            .collect();

        let bm_bar = gaussian_mat(&mut rng, d, p, 1.0 / (p as f64).sqrt());
        let bm_noise: Vec<DMatrix<f64>> = (0..n)
            .map(|_| gaussian_mat(&mut rng, d, p, 0.3 * het / (p as f64).sqrt()))
            .collect();
        let bm_noise = centered_perturbations_keep_scale(bm_noise);
        let b_mat: Vec<DMatrix<f64>> = bm_noise.into_iter().map(|e| &bm_bar + e).collect();

        let bv_bar = gaussian_vec(&mut rng, d, 1.0);
        let b_vec = shifted(centered_vectors((0..n).map(|_| gaussian_vec(&mut rng, d, 0.5 * het)).collect()), &bv_bar);
        let t_bar = gaussian_vec(&mut rng, d, 1.0);
        let targets = shifted(centered_vectors((0..m).map(|_| gaussian_vec(&mut rng, d, het)).collect()), &t_bar);
        let s_bar = gaussian_vec(&mut rng, p, 0.5);
        let lin = shifted(centered_vectors((0..m).map(|_| gaussian_vec(&mut rng, p, het)).collect()), &s_bar);

        let mut inst = Self::from_parts(a, b_mat, b_vec, targets, lin, lambda, None)?;
        let kappa_eff = inst.meta.kappa();
        if kappa_eff > kappa * (1.0 + 1e-9) {
            return Err(Error::invalid(format!(
                "generated condition number {kappa_eff} exceeds target {kappa}"
            )));
        }
        inst.meta.c_f = Some(inst.regional_cf());
        Ok(inst)
    }

    /// Builds an instance from explicit data. When `c_f` is `None` a bound on
    /// `‖∇_y f(x, y_x; ξ_i)‖` over `‖x‖ <= 2‖x*‖ + 1` is used.
    pub fn from_parts(
        a: Vec<DMatrix<f64>>,
        b_mat: Vec<DMatrix<f64>>,
        b_vec: Vec<DVector<f64>>,
        targets: Vec<DVector<f64>>,
        lin: Vec<DVector<f64>>,
        lambda: f64,
        c_f: Option<f64>,
    ) -> Result<Self> {
        let n = a.len();
        let m = targets.len();
        if n == 0 || m == 0 || b_mat.len() != n || b_vec.len() != n || lin.len() != m {
            return Err(Error::invalid("inconsistent example counts"));
        }
        let d = a[0].nrows();
        let p = b_mat[0].ncols();
        if d == 0 || p == 0 {
            return Err(Error::invalid("empty dimensions"));
        }
        let shapes_ok = a.iter().all(|x| x.shape() == (d, d) && is_symmetric(x))
            && b_mat.iter().all(|x| x.shape() == (d, p))
            && b_vec.iter().all(|x| x.len() == d)
            && targets.iter().all(|x| x.len() == d)
            && lin.iter().all(|x| x.len() == p);
        if !shapes_ok {
            return Err(Error::invalid("inconsistent shapes or non-symmetric A_j"));
        }
        if !(lambda >= 0.0) {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        let a_bar = mean_mat(&a);
        let (mu, _) = sym_eigen_range(&a_bar);
        if !(mu > 0.0) {
            return Err(Error::invalid("mean inner Hessian is not positive definite"));
        }
        let l = a.iter().map(|x| sym_eigen_range(x).1).fold(mu, f64::max);
        let a_bar_inv = a_bar
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::invalid("singular mean inner Hessian"))?;
        let b_mat_bar = mean_mat(&b_mat);
        let b_vec_bar = mean_vec(&b_vec);
        let t_bar = mean_vec(&targets);
        let s_bar = mean_vec(&lin);

        let mut inst = Self {
            a,
            b_mat,
            b_vec,
            targets,
            lin,
            lambda,
            a_bar,
            b_mat_bar,
            b_vec_bar,
            t_bar,
            s_bar,
            a_bar_inv,
            meta: ProblemMeta::new(mu, l, None)?,
            solution: QuadraticSolution {
                x_star: vec![],
                y_star: vec![],
                h_star: 0.0,
            },
        };
        inst.solution = inst.solve()?;
        inst.meta.c_f = Some(match c_f {
            Some(c) => c,
            None => inst.regional_cf(),
        });
        Ok(inst)
    }

    fn solve(&self) -> Result<QuadraticSolution> {
        // ∇h(x) = Hx + c with H = λI + B̄ᵀĀ⁻²B̄ and c = ∇h(0).
        let p = self.b_mat_bar.ncols();
        let ainv_b = &self.a_bar_inv * &self.b_mat_bar;
        let h = DMatrix::identity(p, p) * self.lambda + ainv_b.tr_mul(&ainv_b);
        let c = dv(&self.hypergrad(&vec![0.0; p]));
        let x = h
            .lu()
            .solve(&(-c))
            .ok_or_else(|| Error::invalid("hypergradient system is singular"))?;
        let x_star = x.as_slice().to_vec();
        let y_star = self.y_of(&x_star);
        let h_star = self.objective(&x_star);
        Ok(QuadraticSolution {
            x_star,
            y_star,
            h_star,
        })
    }

    fn regional_cf(&self) -> f64 {
        let radius = 2.0 * crate::linalg::norm(&self.solution.x_star) + 1.0;
        let gain = spectral_norm(&(&self.a_bar_inv * &self.b_mat_bar));
        let offset = (&self.a_bar_inv * &self.b_vec_bar).norm();
        let t_max = self.targets.iter().map(|t| t.norm()).fold(0.0, f64::max);
        gain * radius + offset + t_max
    }

    pub fn solution(&self) -> &QuadraticSolution {
        &self.solution
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `Ā`
    pub fn mean_inner_hessian(&self) -> &DMatrix<f64> {
        &self.a_bar
    }

    pub fn y_of(&self, x: &[f64]) -> Vec<f64> {
        let rhs = &self.b_mat_bar * dv(x) + &self.b_vec_bar;
        (-(&self.a_bar_inv * rhs)).as_slice().to_vec()
    }

    pub fn u_of(&self, x: &[f64]) -> Vec<f64> {
        let y = dv(&self.y_of(x));
        (&self.a_bar_inv * (y - &self.t_bar)).as_slice().to_vec()
    }

    pub fn hypergrad(&self, x: &[f64]) -> Vec<f64> {
        let u = self.u_of(x);
        let cross = mat_t_vec(&self.b_mat_bar, &u);
        x.iter()
            .zip(self.s_bar.iter())
            .zip(&cross)
            .map(|((xi, si), ci)| self.lambda * xi + si - ci)
            .collect()
    }

    /// `h(x) = f(x, y_x)`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let y = self.y_of(x);
        self.full_value_f(x, &y).expect("quadratic exposes values")
    }
}

fn shifted(items: Vec<DVector<f64>>, by: &DVector<f64>) -> Vec<DVector<f64>> {
    items.into_iter().map(|v| v + by).collect()
}

fn centered_perturbations_keep_scale(mut items: Vec<DMatrix<f64>>) -> Vec<DMatrix<f64>> {
    let mean = mean_mat(&items);
    for it in items.iter_mut() {
        *it -= &mean;
    }
    items
}

impl BilevelOracle for QuadraticBilevel {
    fn outer_dim(&self) -> usize {
        self.b_mat_bar.ncols()
    }
    fn inner_dim(&self) -> usize {
        self.a_bar.nrows()
    }
    fn outer_len(&self) -> usize {
        self.targets.len()
    }
    fn inner_len(&self) -> usize {
        self.a.len()
    }
    fn meta(&self) -> ProblemMeta {
        self.meta
    }

    fn grad_f_x(&self, x: &[f64], _y: &[f64], i: usize) -> Vec<f64> {
        x.iter()
            .zip(self.lin[i].iter())
            .map(|(xi, si)| self.lambda * xi + si)
            .collect()
    }
    fn grad_f_y(&self, _x: &[f64], y: &[f64], i: usize) -> Vec<f64> {
        y.iter().zip(self.targets[i].iter()).map(|(a, b)| a - b).collect()
    }
    fn grad_g_y(&self, x: &[f64], y: &[f64], j: usize) -> Vec<f64> {
        let v = &self.a[j] * dv(y) + &self.b_mat[j] * dv(x) + &self.b_vec[j];
        v.as_slice().to_vec()
    }
    fn hvp_g_yy(&self, _x: &[f64], _y: &[f64], j: usize, v: &[f64]) -> Vec<f64> {
        mat_vec(&self.a[j], v)
    }
    fn jvp_g_xy(&self, _x: &[f64], _y: &[f64], j: usize, v: &[f64]) -> Vec<f64> {
        mat_t_vec(&self.b_mat[j], v)
    }

    fn full_grad_f_x(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.s_bar.iter())
            .map(|(xi, si)| self.lambda * xi + si)
            .collect()
    }
    fn full_grad_f_y(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
        y.iter().zip(self.t_bar.iter()).map(|(a, b)| a - b).collect()
    }
    fn full_grad_g_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let v = &self.a_bar * dv(y) + &self.b_mat_bar * dv(x) + &self.b_vec_bar;
        v.as_slice().to_vec()
    }
    fn full_hvp_g_yy(&self, _x: &[f64], _y: &[f64], v: &[f64]) -> Vec<f64> {
        mat_vec(&self.a_bar, v)
    }
    fn full_jvp_g_xy(&self, _x: &[f64], _y: &[f64], v: &[f64]) -> Vec<f64> {
        mat_t_vec(&self.b_mat_bar, v)
    }

    fn value_f(&self, x: &[f64], y: &[f64], i: usize) -> Option<f64> {
        let dy = dv(y) - &self.targets[i];
        let xv = dv(x);
        Some(0.5 * dy.norm_squared() + 0.5 * self.lambda * xv.norm_squared() + self.lin[i].dot(&xv))
    }
    fn value_g(&self, x: &[f64], y: &[f64], j: usize) -> Option<f64> {
        let yv = dv(y);
        let lin = &self.b_mat[j] * dv(x) + &self.b_vec[j];
        Some(0.5 * yv.dot(&(&self.a[j] * &yv)) + yv.dot(&lin))
    }
}

impl TextInstance for QuadraticBilevel {
    fn to_text(&self) -> String {
        TextWriter::new("quadratic_bilevel")
            .scalar("lambda", self.lambda)
            .scalar("c_f", self.meta.c_f.unwrap_or(0.0))
            .matrices("A", &self.a)
            .matrices("B", &self.b_mat)
            .vectors("b", &self.b_vec)
            .vectors("t", &self.targets)
            .vectors("s", &self.lin)
            .finish()
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut r = TextReader::new(text, "quadratic_bilevel")?;
        let lambda = r.scalar("lambda")?;
        let c_f = r.scalar("c_f")?;
        let a = r.matrices("A")?;
        let b_mat = r.matrices("B")?;
        let b_vec = r.vectors("b")?;
        let targets = r.vectors("t")?;
        let lin = r.vectors("s")?;
        r.finish()?;
        Self::from_parts(a, b_mat, b_vec, targets, lin, lambda, (c_f > 0.0).then_some(c_f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_err;

    fn one_d() -> QuadraticBilevel {
        let m1 = |v: f64| DMatrix::from_element(1, 1, v);
        let v1 = |v: f64| DVector::from_element(1, v);
        QuadraticBilevel::from_parts(vec![m1(2.0)], vec![m1(1.0)], vec![v1(0.0)], vec![v1(1.0)], vec![v1(0.0)], 1.0, None)
            .unwrap()
    }

    #[test]
    fn one_dimensional_closed_form() {
        let q = one_d();
        let s = q.solution();
        assert!((s.x_star[0] + 0.4).abs() < 1e-15);
        assert!((s.y_star[0] - 0.2).abs() < 1e-15);
        assert!((s.h_star - 0.4).abs() < 1e-15);
        for x in [-1.0, 0.0, 0.3, 2.0] {
            assert!((q.hypergrad(&[x])[0] - (1.25 * x + 0.5)).abs() < 1e-15);
        }
        assert_eq!(q.meta().mu, 2.0);
        assert_eq!(q.meta().kappa(), 1.0);
    }

    #[test]
    fn decoupled_levels_when_b_vanishes() {
        let spec = QuadraticSpec::new(3, 2, 4, 5, 4.0, 7);
        let q = QuadraticBilevel::generate(&spec).unwrap();
        let zero_b = vec![DMatrix::zeros(2, 3); 5];
        let q0 = QuadraticBilevel::from_parts(
            q.a.clone(),
            zero_b,
            q.b_vec.clone(),
            q.targets.clone(),
            q.lin.clone(),
            q.lambda,
            None,
        )
        .unwrap();
        let x1 = [0.3, -1.0, 2.0];
        let x2 = [5.0, 1.0, -2.0];
        assert!(rel_err(&q0.y_of(&x1), &q0.y_of(&x2), 1.0) < 1e-14);
        let y = q0.y_of(&x1);
        assert!(rel_err(&q0.hypergrad(&x1), &q0.full_grad_f_x(&x1, &y), 1.0) < 1e-14);
    }

    #[test]
    fn generator_respects_kappa_and_is_deterministic() {
        for kappa in [1.0, 1.5, 3.0, 10.0, 100.0] {
            let spec = QuadraticSpec::new(4, 5, 6, 7, kappa, 3);
            let q = QuadraticBilevel::generate(&spec).unwrap();
            assert!(q.meta().kappa() <= kappa * (1.0 + 1e-9));
            for a in &q.a {
                assert!(sym_eigen_range(a).0 > 0.0);
            }
            assert_eq!(q, QuadraticBilevel::generate(&spec).unwrap());
        }
        assert!(gen_quadratic_bilevel(0, 1, 1, 1, 2.0, 0).is_err());
        assert!(gen_quadratic_bilevel(1, 1, 1, 1, 0.5, 0).is_err());
    }

    #[test]
    fn closed_form_is_stationary() {
        let q = gen_quadratic_bilevel(10, 10, 32, 32, 10.0, 0).unwrap();
        let g = q.hypergrad(&q.solution().x_star);
        assert!(crate::linalg::norm(&g) < 1e-12);
    }

    #[test]
    fn text_roundtrip() {
        let q = gen_quadratic_bilevel(3, 2, 4, 5, 5.0, 11).unwrap();
        let back = QuadraticBilevel::from_text(&q.to_text()).unwrap();
        assert_eq!(back, q);
    }
}
