//! Example orders and the averaged-gradient-error analyzer.
//!
//! Orders are drawn from ChaCha8 streams seeded by a `u64`; permutations use
//! Fisher–Yates (`SliceRandom::shuffle`). Both are platform independent, so a
//! `(strategy, n_examples, length, seed)` tuple always yields the same order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Squared errors at or below this are treated as exact zeros by the fit.
pub const ZERO_ERROR_FLOOR: f64 = 1e-24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// i.i.d. uniform draws (with replacement).
    Independent,
    /// One permutation, reused for every pass.
    ShuffleOnce,
    /// A fresh permutation per pass.
    RandomReshuffle,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::Independent,
        Strategy::ShuffleOnce,
        Strategy::RandomReshuffle,
    ];

    pub fn is_permutation(&self) -> bool {
        !matches!(self, Strategy::Independent)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Independent => "independent",
            Strategy::ShuffleOnce => "shuffle_once",
            Strategy::RandomReshuffle => "random_reshuffle",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Strategy::Independent),
            "shuffle_once" => Ok(Strategy::ShuffleOnce),
            "random_reshuffle" => Ok(Strategy::RandomReshuffle),
            other => Err(Error::invalid(format!("unknown sampling strategy {other:?}"))),
        }
    }
}

/// A finite sequence of example indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOrder {
    pub indices: Vec<usize>,
    pub n_examples: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

impl SampleOrder {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Mixes `tags` into `seed` (splitmix64 finalizer per tag).
pub fn sub_seed(seed: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(seed), |acc, &t| mix(acc ^ mix(t)))
}

pub fn make_order(strategy: Strategy, n_examples: usize, length: usize, seed: u64) -> Result<SampleOrder> {
    if n_examples == 0 {
        return Err(Error::InvalidDataset("order over zero examples".into()));
    }
    if strategy.is_permutation() && !length.is_multiple_of(n_examples) {
        return Err(Error::Misaligned { length, n_examples });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = match strategy {
        Strategy::Independent => (0..length).map(|_| rng.random_range(0..n_examples)).collect(),
        Strategy::RandomReshuffle => {
            let mut out = Vec::with_capacity(length);
            let mut perm: Vec<usize> = (0..n_examples).collect();
            for _ in 0..length / n_examples {
                perm.shuffle(&mut rng);
                out.extend_from_slice(&perm);
            }
            out
        }
        Strategy::ShuffleOnce => {
            let mut perm: Vec<usize> = (0..n_examples).collect();
            perm.shuffle(&mut rng);
            perm.iter().copied().cycle().take(length).collect()
        }
    };
    Ok(SampleOrder {
        indices,
        n_examples,
        strategy,
        seed,
    })
}

/// Per-epoch orders for one dataset inside a solver run.
///
/// Random reshuffling and independent sampling draw a fresh order per epoch
/// from a sub-seed; shuffle-once replays the order of its base seed.
#[derive(Clone, Copy, Debug)]
pub struct OrderSource {
    pub strategy: Strategy,
    pub n_examples: usize,
    pub seed: u64,
}

impl OrderSource {
    pub fn new(strategy: Strategy, n_examples: usize, seed: u64) -> Self {
        Self {
            strategy,
            n_examples,
            seed,
        }
    }

    pub fn epoch(&self, epoch: u64, length: usize) -> Result<SampleOrder> {
        let seed = match self.strategy {
            Strategy::ShuffleOnce => self.seed,
            _ => sub_seed(self.seed, &[epoch]),
        };
        make_order(self.strategy, self.n_examples, length, seed)
    }
}

/// Fitted `‖window mean − full mean‖² ≈ C² k^{-α}` over window lengths `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientErrorFit {
    pub k_values: Vec<usize>,
    pub sq_errors: Vec<f64>,
    /// `+inf` when every window mean is exact.
    #[serde(with = "signed_inf")]
    pub alpha_hat: f64,
    pub c_hat: f64,
    /// Largest single-example deviation `max_i ‖g_i − ḡ‖`.
    pub a_hat: f64,
}

/// For each `k`, the worst squared deviation over all start positions of the
/// `k`-window mean of `per_example_grads[order[τ]]` from the full mean, then
/// a least-squares fit of `log sq_error = log C² − α log k`.
pub fn measure_avg_gradient_error(
    per_example_grads: &[Vec<f64>],
    order: &SampleOrder,
    k_values: &[usize],
) -> Result<GradientErrorFit> {
    if k_values.is_empty() {
        return Err(Error::invalid("empty k list"));
    }
    if per_example_grads.len() != order.n_examples {
        return Err(Error::DimensionMismatch {
            what: "per-example gradients vs order examples",
            expected: order.n_examples,
            got: per_example_grads.len(),
        });
    }
    let dim = per_example_grads[0].len();
    if let Some(bad) = per_example_grads.iter().find(|g| g.len() != dim) {
        return Err(Error::DimensionMismatch {
            what: "per-example gradient length",
            expected: dim,
            got: bad.len(),
        });
    }
    if order.indices.iter().any(|&i| i >= order.n_examples) {
        return Err(Error::invalid("order index out of range"));
    }
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks[0] == 0 || *ks.last().unwrap() > order.len() {
        return Err(Error::invalid(format!(
            "window lengths must lie in 1..={}",
            order.len()
        )));
    }

    let n = per_example_grads.len();
    let full = linalg::mean_of(n, dim, |i| per_example_grads[i].clone());
    let a_hat = per_example_grads
        .iter()
        .map(|g| linalg::dist(g, &full))
        .fold(0.0, f64::max);

    let mut window = vec![0.0; dim];
    let sq_errors: Vec<f64> = ks
        .iter()
        .map(|&k| {
            let mut worst = 0.0f64;
            for start in 0..=order.len() - k {
                window.iter_mut().for_each(|w| *w = 0.0);
                for &idx in &order.indices[start..start + k] {
                    linalg::axpy(1.0, &per_example_grads[idx], &mut window);
                }
                let inv = 1.0 / k as f64;
                let err: f64 = window
                    .iter()
                    .zip(&full)
                    .map(|(w, g)| (w * inv - g) * (w * inv - g))
                    .sum();
                worst = worst.max(err);
            }
            worst
        })
        .collect();

    let pts: Vec<(f64, f64)> = ks
        .iter()
        .zip(&sq_errors)
        .filter(|(_, &e)| e > ZERO_ERROR_FLOOR)
        .map(|(&k, &e)| ((k as f64).ln(), e.ln()))
        .collect();

    let (alpha_hat, c_hat) = if pts.is_empty() {
        (f64::INFINITY, 0.0)
    } else if pts.len() == 1 {
        return Err(Error::invalid(
            "only one window length has non-zero error; cannot fit an exponent",
        ));
    } else {
        let np = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / np;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / np;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        (-slope, (intercept / 2.0).exp())
    };

    Ok(GradientErrorFit {
        k_values: ks,
        sq_errors,
        alpha_hat,
        c_hat,
        a_hat,
    })
}

/// Serializes infinities as the strings `"inf"` / `"-inf"` so JSON stays valid.
pub mod signed_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad float {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use proptest::prelude::*;

    fn sorted(v: &[usize]) -> Vec<usize> {
        let mut v = v.to_vec();
        v.sort_unstable();
        v
    }

    #[test]
    fn order_examples() {
        let rr = make_order(Strategy::RandomReshuffle, 3, 6, 11).unwrap();
        assert_eq!(sorted(&rr.indices[0..3]), vec![0, 1, 2]);
        assert_eq!(sorted(&rr.indices[3..6]), vec![0, 1, 2]);

        let so = make_order(Strategy::ShuffleOnce, 4, 8, 5).unwrap();
        assert_eq!(so.indices[0..4], so.indices[4..8]);

        let ind = make_order(Strategy::Independent, 1, 5, 9).unwrap();
        assert_eq!(ind.indices, vec![0; 5]);
    }

    #[test]
    fn order_errors() {
        assert!(matches!(
            make_order(Strategy::RandomReshuffle, 3, 7, 0),
            Err(Error::Misaligned { length: 7, n_examples: 3 })
        ));
        assert!(matches!(
            make_order(Strategy::ShuffleOnce, 4, 2, 0),
            Err(Error::Misaligned { .. })
        ));
        assert!(make_order(Strategy::Independent, 4, 7, 0).is_ok());
        assert!(matches!(make_order(Strategy::Independent, 0, 3, 0), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn block_permutation_property() {
        for n in 1..=16usize {
            for blocks in 1..=8usize {
                for strategy in [Strategy::RandomReshuffle, Strategy::ShuffleOnce] {
                    let o = make_order(strategy, n, n * blocks, (n * 31 + blocks) as u64).unwrap();
                    let first = &o.indices[0..n];
                    for b in o.indices.chunks(n) {
                        assert_eq!(sorted(b), (0..n).collect::<Vec<_>>());
                        if strategy == Strategy::ShuffleOnce {
                            assert_eq!(b, first);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reshuffle_draws_fresh_permutations() {
        let o = make_order(Strategy::RandomReshuffle, 10, 100, 1).unwrap();
        let distinct: std::collections::HashSet<_> = o.indices.chunks(10).collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn order_source_epochs() {
        let so = OrderSource::new(Strategy::ShuffleOnce, 6, 3);
        assert_eq!(so.epoch(0, 12).unwrap().indices, so.epoch(7, 12).unwrap().indices);
        let rr = OrderSource::new(Strategy::RandomReshuffle, 6, 3);
        assert_ne!(rr.epoch(0, 12).unwrap().indices, rr.epoch(1, 12).unwrap().indices);
        assert_eq!(rr.epoch(4, 12).unwrap(), rr.epoch(4, 12).unwrap());
    }

    #[test]
    fn aligned_full_window_is_exact() {
        let grads: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64 - 3.0]).collect();
        let order = make_order(Strategy::RandomReshuffle, 5, 5, 2).unwrap();
        let fit = measure_avg_gradient_error(&grads, &order, &[5]).unwrap();
        assert!(fit.sq_errors[0] <= ZERO_ERROR_FLOOR);
        assert_eq!(fit.alpha_hat, f64::INFINITY);
        assert_eq!(fit.c_hat, 0.0);
    }

    #[test]
    fn identical_gradients_have_zero_error() {
        let grads = vec![vec![1.5, -2.0]; 7];
        let order = make_order(Strategy::Independent, 7, 40, 0).unwrap();
        let fit = measure_avg_gradient_error(&grads, &order, &[1, 2, 5, 13, 40]).unwrap();
        assert!(fit.sq_errors.iter().all(|&e| e == 0.0));
        assert_eq!(fit.alpha_hat, f64::INFINITY);
        assert_eq!(fit.a_hat, 0.0);
    }

    #[test]
    fn analyzer_errors() {
        let grads = vec![vec![1.0], vec![2.0]];
        let order = make_order(Strategy::Independent, 2, 4, 0).unwrap();
        assert!(measure_avg_gradient_error(&grads, &order, &[]).is_err());
        assert!(measure_avg_gradient_error(&grads, &order, &[5]).is_err());
        assert!(measure_avg_gradient_error(&grads, &order, &[0, 1]).is_err());
        assert!(measure_avg_gradient_error(&grads[..1], &order, &[1]).is_err());
    }

    #[test]
    fn fit_recovers_power_law() {
        // Two examples ±1 with a shuffle-once order [0, 1, 0, 1, ...]: odd
        // windows have error 1/k², even windows are exact.
        let grads = vec![vec![1.0], vec![-1.0]];
        let order = make_order(Strategy::ShuffleOnce, 2, 64, 0).unwrap();
        let fit = measure_avg_gradient_error(&grads, &order, &[1, 3, 5, 7, 9, 15, 31, 2, 4]).unwrap();
        assert!((fit.alpha_hat - 2.0).abs() < 1e-9, "{}", fit.alpha_hat);
        assert!((fit.c_hat - 1.0).abs() < 1e-9);
        assert_eq!(fit.a_hat, 1.0);
    }

    #[test]
    fn fit_serializes_infinite_alpha() {
        let fit = GradientErrorFit {
            k_values: vec![1],
            sq_errors: vec![0.0],
            alpha_hat: f64::INFINITY,
            c_hat: 0.0,
            a_hat: 0.0,
        };
        let json = serde_json::to_string(&fit).unwrap();
        assert!(json.contains("\"alpha_hat\":\"inf\""));
        let back: GradientErrorFit = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fit);
    }

    proptest! {
        #[test]
        fn orders_deterministic_and_in_range(
            n in 1usize..20, blocks in 1usize..6, seed in any::<u64>(), which in 0usize..3,
        ) {
            let strategy = Strategy::ALL[which];
            let a = make_order(strategy, n, n * blocks, seed).unwrap();
            let b = make_order(strategy, n, n * blocks, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.indices.iter().all(|&i| i < n));
        }
    }
}
