//! Shipped problem instances with analytic derivatives and closed-form
//! references.

mod data_cleaning;
mod irm;
mod linear_comp;
mod minimax;
mod quadratic;
pub mod text;

pub use data_cleaning::{gen_data_cleaning_small, DataCleaningSmall};
pub use irm::{gen_irm, SyntheticIrm, IRM_DEFAULTS};
pub use linear_comp::{gen_linear_comp, LinearComp};
pub use minimax::{gen_quad_minimax, QuadMinimax};
pub use quadratic::{gen_quadratic_bilevel, QuadraticBilevel, QuadraticSolution, QuadraticSpec};
pub use text::TextInstance;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub(crate) fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * normal(rng))
}

pub(crate) fn gaussian_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    // column-major fill keeps the draw order fixed for a given shape
    DMatrix::from_fn(rows, cols, |_, _| scale * normal(rng))
}

pub(crate) fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    gaussian_mat(rng, d, d, 1.0).qr().q()
}

pub(crate) fn sym_eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = a.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub(crate) fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

pub(crate) fn mean_mat(items: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut acc = items[0].clone() * 0.0;
    for it in items {
        acc += it;
    }
    acc / items.len() as f64
}

pub(crate) fn mean_vec(items: &[DVector<f64>]) -> DVector<f64> {
    let mut acc = items[0].clone() * 0.0;
    for it in items {
        acc += it;
    }
    acc / items.len() as f64
}

/// Centers a family of perturbations so that they average to exactly zero
/// (up to rounding), then scales the largest to spectral norm `target`.
pub(crate) fn centered_perturbations(mut items: Vec<DMatrix<f64>>, target: f64) -> Vec<DMatrix<f64>> {
    let mean = mean_mat(&items);
    for it in items.iter_mut() {
        *it -= &mean;
    }
    let largest = items.iter().map(spectral_norm).fold(0.0, f64::max);
    if largest > 0.0 {
        let s = target / largest;
        for it in items.iter_mut() {
            *it *= s;
        }
    }
    items
}

pub(crate) fn centered_vectors(mut items: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    let mean = mean_vec(&items);
    for it in items.iter_mut() {
        *it -= &mean;
    }
    items
}

pub(crate) fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * dv(v)).as_slice().to_vec()
}

pub(crate) fn mat_t_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m.tr_mul(&dv(v))).as_slice().to_vec()
}

pub(crate) fn is_symmetric(a: &DMatrix<f64>) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= 1e-12 * a.amax().max(1.0)
}
