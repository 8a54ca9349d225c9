//! Linear compositional instance, unconditional or conditional.
//!
//! Maps `r(x; ζ_j) = M_j x + o_j`, outer losses `f(y; ξ_i) = ½‖y − a_i‖²`.
//! Outer example `i` composes with the mean of the maps listed in `groups[i]`;
//! for an unconditional instance every group holds all maps.

use nalgebra::{DMatrix, DVector};

use super::text::{TextInstance, TextReader, TextWriter};
use super::{centered_perturbations, centered_vectors, dv, gaussian_mat, gaussian_vec, mean_mat, mean_vec, random_orthogonal, rng, spectral_norm};
use crate::error::{Error, Result};
use crate::oracle::{CompositionalOracle, ConditionalCompositionalOracle};
use crate::types::ProblemMeta;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearComp {
    maps: Vec<DMatrix<f64>>,
    offsets: Vec<DVector<f64>>,
    targets: Vec<DVector<f64>>,
    groups: Vec<Vec<usize>>,
    conditional: bool,
    /// Per-group mean map and offset.
    group_maps: Vec<DMatrix<f64>>,
    group_offsets: Vec<DVector<f64>>,
    map_bar: DMatrix<f64>,
    offset_bar: DVector<f64>,
    x_star: Vec<f64>,
    meta: ProblemMeta,
}

/// Unconditional: `n` shared maps. Conditional: each outer example owns `n`
/// maps of its own.
pub fn gen_linear_comp(p: usize, d: usize, m: usize, n: usize, seed: u64, conditional: bool) -> Result<LinearComp> {
    if p == 0 || d == 0 || m == 0 || n == 0 {
        return Err(Error::invalid("dimensions and dataset sizes must be positive"));
    }
    if d < p {
        return Err(Error::invalid(format!("need d >= p for a unique minimizer, got d={d}, p={p}")));
    }
    let mut rng = rng(seed);
    let basis = random_orthogonal(&mut rng, d).columns(0, p).into_owned();
    let right = random_orthogonal(&mut rng, p);
    let sv = DVector::from_fn(p, |k, _| if p == 1 { 1.0 } else { 1.0 + k as f64 / (p - 1) as f64 });
    let base = basis * DMatrix::from_diagonal(&sv) * right.transpose();
    let n_maps = if conditional { m * n } else { n };
    let groups: Vec<Vec<usize>> = if conditional {
        (0..m).map(|i| (i * n..(i + 1) * n).collect()).collect()
    } else {
        vec![(0..n).collect(); m]
    };
    let noise: Vec<DMatrix<f64>> = (0..n_maps).map(|_| gaussian_mat(&mut rng, d, p, 1.0)).collect();
    let offsets_noise: Vec<DVector<f64>> = (0..n_maps).map(|_| gaussian_vec(&mut rng, d, 0.3)).collect();
    let (maps, offsets) = if conditional {
        // each group is centered on `base` separately
        let mut maps = Vec::with_capacity(n_maps);
        let mut offs = Vec::with_capacity(n_maps);
        for g in &groups {
            let chunk: Vec<DMatrix<f64>> = g.iter().map(|&j| noise[j].clone()).collect();
            let ochunk: Vec<DVector<f64>> = g.iter().map(|&j| offsets_noise[j].clone()).collect();
            let shift = gaussian_mat(&mut rng, d, p, 0.1);
            maps.extend(centered_perturbations(chunk, 0.3).into_iter().map(|e| &base + &shift + e));
            offs.extend(centered_vectors(ochunk));
        }
        (maps, offs)
    } else {
        let maps = centered_perturbations(noise, 0.3).into_iter().map(|e| &base + e).collect();
        (maps, centered_vectors(offsets_noise))
    };
    let a_bar = gaussian_vec(&mut rng, d, 1.0);
    let targets = centered_vectors((0..m).map(|_| gaussian_vec(&mut rng, d, 0.5)).collect())
        .into_iter()
        .map(|v| v + &a_bar)
        .collect();
    LinearComp::from_parts(maps, offsets, targets, groups, conditional)
}

impl LinearComp {
    pub fn from_parts(
        maps: Vec<DMatrix<f64>>,
        offsets: Vec<DVector<f64>>,
        targets: Vec<DVector<f64>>,
        groups: Vec<Vec<usize>>,
        conditional: bool,
    ) -> Result<Self> {
        let n_maps = maps.len();
        let m = targets.len();
        if n_maps == 0 || m == 0 || offsets.len() != n_maps || groups.len() != m {
            return Err(Error::invalid("inconsistent example counts"));
        }
        let (d, p) = maps[0].shape();
        let ok = maps.iter().all(|a| a.shape() == (d, p))
            && offsets.iter().all(|v| v.len() == d)
            && targets.iter().all(|v| v.len() == d)
            && groups.iter().all(|g| !g.is_empty() && g.iter().all(|&j| j < n_maps));
        if !ok || d == 0 || p == 0 {
            return Err(Error::invalid("inconsistent shapes or group indices"));
        }
        if !conditional && groups.iter().any(|g| g.len() != n_maps || g.iter().enumerate().any(|(k, &j)| k != j)) {
            return Err(Error::invalid("unconditional instances use every map in every group"));
        }
        let pick = |g: &Vec<usize>| -> (DMatrix<f64>, DVector<f64>) {
            let ms: Vec<DMatrix<f64>> = g.iter().map(|&j| maps[j].clone()).collect();
            let os: Vec<DVector<f64>> = g.iter().map(|&j| offsets[j].clone()).collect();
            (mean_mat(&ms), mean_vec(&os))
        };
        let (group_maps, group_offsets): (Vec<_>, Vec<_>) = groups.iter().map(pick).unzip();
        let map_bar = mean_mat(&maps);
        let offset_bar = mean_vec(&offsets);

        // normal equations of (1/m) Σ_i ½‖M̄_i x + ō_i − a_i‖²
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for i in 0..m {
            gram += group_maps[i].tr_mul(&group_maps[i]);
            rhs += group_maps[i].tr_mul(&(&targets[i] - &group_offsets[i]));
        }
        let x = gram
            .cholesky()
            .ok_or_else(|| Error::invalid("composed map is rank deficient"))?
            .solve(&rhs);
        let x_star = x.as_slice().to_vec();

        let radius = 2.0 * x.norm() + 1.0;
        let c_f = (0..m)
            .map(|i| spectral_norm(&group_maps[i]) * radius + group_offsets[i].norm() + targets[i].norm())
            .fold(0.0, f64::max);
        Ok(Self {
            maps,
            offsets,
            targets,
            groups,
            conditional,
            group_maps,
            group_offsets,
            map_bar,
            offset_bar,
            x_star,
            meta: ProblemMeta::new(1.0, 1.0, Some(c_f))?,
        })
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }
    pub fn is_conditional(&self) -> bool {
        self.conditional
    }
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Objective `(1/m) Σ_i ½‖M̄_i x + ō_i − a_i‖²`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let xv = dv(x);
        let m = self.targets.len();
        (0..m)
            .map(|i| 0.5 * (&self.group_maps[i] * &xv + &self.group_offsets[i] - &self.targets[i]).norm_squared())
            .sum::<f64>()
            / m as f64
    }

    pub fn hypergrad(&self, x: &[f64]) -> Vec<f64> {
        let xv = dv(x);
        let m = self.targets.len();
        let mut g = DVector::zeros(x.len());
        for i in 0..m {
            let res = &self.group_maps[i] * &xv + &self.group_offsets[i] - &self.targets[i];
            g += self.group_maps[i].tr_mul(&res);
        }
        (g / m as f64).as_slice().to_vec()
    }
}

impl CompositionalOracle for LinearComp {
    fn outer_dim(&self) -> usize {
        self.map_bar.ncols()
    }
    fn inner_dim(&self) -> usize {
        self.map_bar.nrows()
    }
    fn outer_len(&self) -> usize {
        self.targets.len()
    }
    fn inner_len(&self) -> usize {
        self.maps.len()
    }
    fn meta(&self) -> ProblemMeta {
        self.meta
    }
    fn r(&self, x: &[f64], j: usize) -> Vec<f64> {
        (&self.maps[j] * dv(x) + &self.offsets[j]).as_slice().to_vec()
    }
    fn jvp_r(&self, _x: &[f64], j: usize, v: &[f64]) -> Vec<f64> {
        self.maps[j].tr_mul(&dv(v)).as_slice().to_vec()
    }
    fn grad_f(&self, y: &[f64], i: usize) -> Vec<f64> {
        y.iter().zip(self.targets[i].iter()).map(|(a, b)| a - b).collect()
    }
    fn full_r(&self, x: &[f64]) -> Vec<f64> {
        (&self.map_bar * dv(x) + &self.offset_bar).as_slice().to_vec()
    }
    fn full_jvp_r(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        self.map_bar.tr_mul(&dv(v)).as_slice().to_vec()
    }
    fn value_f(&self, y: &[f64], i: usize) -> Option<f64> {
        Some(0.5 * (dv(y) - &self.targets[i]).norm_squared())
    }
}

impl ConditionalCompositionalOracle for LinearComp {
    fn outer_dim(&self) -> usize {
        self.map_bar.ncols()
    }
    fn inner_dim(&self) -> usize {
        self.map_bar.nrows()
    }
    fn outer_len(&self) -> usize {
        self.targets.len()
    }
    fn inner_len(&self, i: usize) -> usize {
        self.groups[i].len()
    }
    fn meta(&self) -> ProblemMeta {
        self.meta
    }
    fn r(&self, x: &[f64], i: usize, j: usize) -> Vec<f64> {
        CompositionalOracle::r(self, x, self.groups[i][j])
    }
    fn jvp_r(&self, x: &[f64], i: usize, j: usize, v: &[f64]) -> Vec<f64> {
        CompositionalOracle::jvp_r(self, x, self.groups[i][j], v)
    }
    fn grad_f(&self, y: &[f64], i: usize) -> Vec<f64> {
        CompositionalOracle::grad_f(self, y, i)
    }
    fn ctx_r(&self, x: &[f64], i: usize) -> Vec<f64> {
        (&self.group_maps[i] * dv(x) + &self.group_offsets[i]).as_slice().to_vec()
    }
    fn ctx_jvp_r(&self, _x: &[f64], i: usize, v: &[f64]) -> Vec<f64> {
        self.group_maps[i].tr_mul(&dv(v)).as_slice().to_vec()
    }
    fn value_f(&self, y: &[f64], i: usize) -> Option<f64> {
        CompositionalOracle::value_f(self, y, i)
    }
}

impl TextInstance for LinearComp {
    fn to_text(&self) -> String {
        let mut w = TextWriter::new("linear_comp");
        w.count("conditional", self.conditional as usize)
            .matrices("M", &self.maps)
            .vectors("o", &self.offsets)
            .vectors("a", &self.targets);
        let groups: Vec<DVector<f64>> = self
            .groups
            .iter()
            .map(|g| DVector::from_iterator(g.len(), g.iter().map(|&j| j as f64)))
            .collect();
        w.vectors("groups", &groups).finish()
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut r = TextReader::new(text, "linear_comp")?;
        let conditional = r.count("conditional")? != 0;
        let maps = r.matrices("M")?;
        let offsets = r.vectors("o")?;
        let targets = r.vectors("a")?;
        let groups = r
            .vectors("groups")?
            .iter()
            .map(|g| g.iter().map(|&v| v as usize).collect())
            .collect();
        r.finish()?;
        Self::from_parts(maps, offsets, targets, groups, conditional)
    }
}
