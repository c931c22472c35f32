//! Gaussian location mixtures with identity component covariance.
//!
//! A [`MixingMeasure`] is a finite discrete probability measure on R^d. Its
//! mixture density is `f(x) = Σ_j w_j φ_d(x − a_j)` with `φ_d` the standard
//! d-variate normal density. Everything here works in log space with a
//! max-shift so that densities far in the tails stay finite.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NpmleError, Result};
use crate::gaussian::Mvn;

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log of the standard normal density normalizer in dimension `dim`, `−(d/2)·ln(2π)`.
#[inline]
pub fn log_normalizer(dim: usize) -> f64 {
    -0.5 * dim as f64 * LN_2PI
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A single point of R^d with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(NpmleError::contract("point must have dimension >= 1"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(NpmleError::contract("point coordinates must be finite"));
        }
        Ok(Point(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `n` points of R^d stored row-major in one buffer.
///
/// Used for observations, latent means and estimate vectors alike.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    coords: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from a flat row-major buffer.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(NpmleError::contract("dataset dimension must be >= 1"));
        }
        if coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(NpmleError::contract(format!(
                "dataset buffer of length {} is not a non-empty multiple of dim {dim}",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(NpmleError::contract(format!(
                "non-finite coordinate at row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Dataset { dim, coords })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| NpmleError::contract("dataset must contain at least one point"))?;
        let dim = first.as_ref().len();
        let mut coords = Vec::with_capacity(dim * rows.len());
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(NpmleError::contract(format!(
                    "row {i} has {} coordinates, expected {dim}",
                    r.len()
                )));
            }
            coords.extend_from_slice(r);
        }
        Dataset::new(dim, coords)
    }

    pub fn from_points(points: &[Point]) -> Result<Self> {
        Dataset::from_rows(points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Always false: a dataset holds at least one point.
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_points(&self) -> Vec<Point> {
        self.iter().map(|p| Point(p.to_vec())).collect()
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> Dataset {
        Dataset {
            dim: self.dim,
            coords: self.coords.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn translated(&self, shift: &[f64]) -> Dataset {
        assert_eq!(shift.len(), self.dim);
        let mut coords = self.coords.clone();
        for row in coords.chunks_exact_mut(self.dim) {
            for (c, s) in row.iter_mut().zip(shift) {
                *c += s;
            }
        }
        Dataset { dim: self.dim, coords }
    }

    /// Rows reordered so that row `i` of the result is row `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Dataset {
        let mut coords = Vec::with_capacity(self.coords.len());
        for &i in order {
            coords.extend_from_slice(self.point(i));
        }
        Dataset { dim: self.dim, coords }
    }

    /// Coordinatewise (min, max) over all points.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.iter() {
            for k in 0..self.dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.iter() {
            for (acc, c) in m.iter_mut().zip(p) {
                *acc += c;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// A finite probability measure on R^d: atoms with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl MixingMeasure {
    /// Weights must already sum to one within `1e-12`.
    pub fn new(atoms: Dataset, weights: Vec<f64>) -> Result<Self> {
        Self::validate(&atoms, &weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(NpmleError::contract(format!(
                "mixing weights sum to {total}, expected 1"
            )));
        }
        Ok(MixingMeasure {
            dim: atoms.dim(),
            atoms: atoms.coords,
            weights,
        })
    }

    /// Normalizes `weights` by their sum.
    pub fn from_unnormalized(atoms: Dataset, weights: Vec<f64>) -> Result<Self> {
        Self::validate(&atoms, &weights)?;
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(NpmleError::contract("mixing weights must have a positive finite sum"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(MixingMeasure {
            dim: atoms.dim(),
            atoms: atoms.coords,
            weights,
        })
    }

    /// Point mass at `atom`.
    pub fn dirac(atom: &[f64]) -> Result<Self> {
        Self::new(Dataset::new(atom.len(), atom.to_vec())?, vec![1.0])
    }

    /// Uniform weights over the rows of `atoms` (repeated rows keep their multiplicity).
    pub fn uniform(atoms: Dataset) -> Result<Self> {
        let m = atoms.len();
        Self::from_unnormalized(atoms, vec![1.0; m])
    }

    /// Empirical measure of a set of points, merging exact duplicates.
    ///
    /// Atoms appear in order of first occurrence.
    pub fn empirical(points: &Dataset) -> Result<Self> {
        let dim = points.dim();
        let mut index: std::collections::HashMap<Vec<u64>, usize> = Default::default();
        let mut atoms = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        for p in points.iter() {
            let key: Vec<u64> = p.iter().map(|c| c.to_bits()).collect();
            match index.get(&key) {
                Some(&j) => counts[j] += 1.0,
                None => {
                    index.insert(key, counts.len());
                    atoms.extend_from_slice(p);
                    counts.push(1.0);
                }
            }
        }
        Self::from_unnormalized(Dataset::new(dim, atoms)?, counts)
    }

    fn validate(atoms: &Dataset, weights: &[f64]) -> Result<()> {
        if atoms.len() != weights.len() {
            return Err(NpmleError::contract(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(NpmleError::contract("mixing weights must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j * self.dim..(j + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> Dataset {
        Dataset {
            dim: self.dim,
            coords: self.atoms.clone(),
        }
    }

    pub fn atom_iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.atoms.chunks_exact(self.dim)
    }

    pub fn translated(&self, shift: &[f64]) -> MixingMeasure {
        MixingMeasure {
            dim: self.dim,
            atoms: self.atoms().translated(shift).coords,
            weights: self.weights.clone(),
        }
    }

    /// Atoms multiplied by `factor`, weights unchanged.
    pub fn scaled(&self, factor: f64) -> MixingMeasure {
        MixingMeasure {
            dim: self.dim,
            atoms: self.atoms.iter().map(|c| c * factor).collect(),
            weights: self.weights.clone(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(NpmleError::contract(format!(
                "point has dimension {}, mixture has dimension {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Largest per-atom log term `ln w_j − ‖x − a_j‖²/2`, the log-sum-exp shift.
    #[inline]
    fn max_log_term(&self, x: &[f64]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (a, &w) in self.atom_iter().zip(&self.weights) {
            if w > 0.0 {
                let t = w.ln() - 0.5 * sq_dist(x, a);
                if t > best {
                    best = t;
                }
            }
        }
        best
    }

    /// `ln f(x)` without the dimension check.
    #[inline]
    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let shift = self.max_log_term(x);
        let mut acc = 0.0;
        for (a, &w) in self.atom_iter().zip(&self.weights) {
            if w > 0.0 {
                acc += (w.ln() - 0.5 * sq_dist(x, a) - shift).exp();
            }
        }
        shift + acc.ln() + log_normalizer(self.dim)
    }

    /// Writes the score `∇f(x)/f(x)` into `out` and returns `ln f(x)`.
    ///
    /// The score is `Σ_j r_j (a_j − x)` with responsibilities
    /// `r_j ∝ w_j φ(x − a_j)` normalized by softmax.
    pub(crate) fn score_into(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let shift = self.max_log_term(x);
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut total = 0.0;
        for (a, &w) in self.atom_iter().zip(&self.weights) {
            if w > 0.0 {
                let r = (w.ln() - 0.5 * sq_dist(x, a) - shift).exp();
                total += r;
                for k in 0..self.dim {
                    out[k] += r * (a[k] - x[k]);
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= total);
        shift + total.ln() + log_normalizer(self.dim)
    }

    /// Normalized responsibilities `r_j(x)` of every atom, written into `out`.
    pub(crate) fn responsibilities_into(&self, x: &[f64], out: &mut [f64]) {
        let shift = self.max_log_term(x);
        let mut total = 0.0;
        for ((a, &w), r) in self.atom_iter().zip(&self.weights).zip(out.iter_mut()) {
            *r = if w > 0.0 {
                (w.ln() - 0.5 * sq_dist(x, a) - shift).exp()
            } else {
                0.0
            };
            total += *r;
        }
        out.iter_mut().for_each(|r| *r /= total);
    }

    /// Log mixture density `ln f_G(x)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.log_density_unchecked(x))
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        self.log_density(x).map(f64::exp)
    }

    /// Score `∇f_G(x)/f_G(x)`, equal to the posterior mean of `θ − x`.
    pub fn score(&self, x: &[f64]) -> Result<Point> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.dim];
        self.score_into(x, &mut out);
        Ok(Point(out))
    }

    /// Mean log-likelihood `(1/n) Σ_i ln f_G(X_i)`, summed in index order.
    pub fn log_likelihood(&self, data: &Dataset) -> Result<f64> {
        if data.dim() != self.dim {
            return Err(NpmleError::contract(format!(
                "data has dimension {}, mixture has dimension {}",
                data.dim(),
                self.dim
            )));
        }
        let total: f64 = data.iter().map(|x| self.log_density_unchecked(x)).sum();
        Ok(total / data.len() as f64)
    }

    /// Draws `θ_i ~ G` and `X_i = θ_i + Z_i` with `Z_i ~ N(0, Σ)`.
    pub fn sample(&self, n: usize, noise: &Noise, seed: u64) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, noise, &mut rng)
    }

    pub fn sample_with<R: rand::Rng + ?Sized>(
        &self,
        n: usize,
        noise: &Noise,
        rng: &mut R,
    ) -> Result<Sample> {
        if n == 0 {
            return Err(NpmleError::contract("sample size must be >= 1"));
        }
        let chooser = WeightedIndex::new(&self.weights)
            .map_err(|e| NpmleError::contract(format!("invalid mixing weights: {e}")))?;
        let components: Vec<usize> = (0..n).map(|_| chooser.sample(rng)).collect();
        let mut latents = Vec::with_capacity(n * self.dim);
        for &j in &components {
            latents.extend_from_slice(self.atom(j));
        }
        let latents = Dataset::new(self.dim, latents)?;
        let data = noise.perturb(&latents, rng)?;
        Ok(Sample {
            data,
            latents,
            components,
        })
    }
}

/// Observation noise covariance for [`MixingMeasure::sample`].
#[derive(Debug, Clone)]
pub enum Noise {
    /// `Σ = I_d`.
    Identity,
    /// `Σ = variance · I_d`.
    Isotropic(f64),
    /// One SPD covariance matrix per observation.
    PerPoint(Vec<nalgebra::DMatrix<f64>>),
}

impl Noise {
    /// Returns `latents + Z` with `Z_i ~ N(0, Σ_i)`.
    pub fn perturb<R: rand::Rng + ?Sized>(&self, latents: &Dataset, rng: &mut R) -> Result<Dataset> {
        let d = latents.dim();
        let mut coords = latents.as_flat().to_vec();
        match self {
            Noise::Identity => {
                for c in coords.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *c += z;
                }
            }
            Noise::Isotropic(var) => {
                if !(*var > 0.0 && var.is_finite()) {
                    return Err(NpmleError::config(format!(
                        "isotropic noise variance must be positive, got {var}"
                    )));
                }
                let sd = var.sqrt();
                for c in coords.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *c += sd * z;
                }
            }
            Noise::PerPoint(covs) => {
                if covs.len() != latents.len() {
                    return Err(NpmleError::config(format!(
                        "{} covariance matrices for {} points",
                        covs.len(),
                        latents.len()
                    )));
                }
                let mut z = vec![0.0; d];
                for (row, cov) in coords.chunks_exact_mut(d).zip(covs) {
                    let mvn = Mvn::new(&vec![0.0; d], cov)?;
                    z.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
                    let draw = mvn.transform_standard(&z);
                    for (c, e) in row.iter_mut().zip(draw) {
                        *c += e;
                    }
                }
            }
        }
        Dataset::new(d, coords)
    }
}

/// Observations together with the latent means that generated them.
#[derive(Debug, Clone)]
pub struct Sample {
    pub data: Dataset,
    pub latents: Dataset,
    /// Atom index drawn for each observation.
    pub components: Vec<usize>,
}

/// The density `s^{−d} f(x/s)` of `s·X` where `X` has mixture density `f`.
///
/// Equivalently a location mixture with atoms `s·a_j` and component
/// covariance `s²·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledMixture {
    pub mixture: MixingMeasure,
    pub scale: f64,
}

impl ScaledMixture {
    pub fn new(mixture: MixingMeasure, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(NpmleError::contract(format!("scale must be positive, got {scale}")));
        }
        Ok(ScaledMixture { mixture, scale })
    }

    pub fn dim(&self) -> usize {
        self.mixture.dim()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.mixture.check_dim(x)?;
        Ok(self.log_density_unchecked(x))
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let inv = 1.0 / self.scale;
        let y: Vec<f64> = x.iter().map(|c| c * inv).collect();
        self.mixture.log_density_unchecked(&y) - self.dim() as f64 * self.scale.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mix1(atoms: &[f64], weights: &[f64]) -> MixingMeasure {
        MixingMeasure::new(Dataset::new(1, atoms.to_vec()).unwrap(), weights.to_vec()).unwrap()
    }

    #[test]
    fn standard_normal_at_mode() {
        let g = MixingMeasure::dirac(&[0.0]).unwrap();
        assert_relative_eq!(g.log_density(&[0.0]).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_two_point_at_origin() {
        let g = mix1(&[-1.0, 1.0], &[0.5, 0.5]);
        // ½φ(1) + ½φ(−1) = φ(1)
        let phi1 = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(g.log_density(&[0.0]).unwrap(), phi1.ln(), epsilon = 1e-12);
        assert_relative_eq!(phi1, 0.241_970_724_519_143_37, epsilon = 1e-15);
    }

    #[test]
    fn score_examples() {
        let g = MixingMeasure::dirac(&[1.5, -2.0]).unwrap();
        let s = g.score(&[0.5, 1.0]).unwrap();
        assert_relative_eq!(s[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(s[1], -3.0, epsilon = 1e-14);

        let g = mix1(&[0.0, 2.0], &[0.5, 0.5]);
        assert!(g.score(&[1.0]).unwrap()[0].abs() < 1e-15);

        let g = mix1(&[2.0, 0.0], &[0.75, 0.25]);
        assert_relative_eq!(g.score(&[1.0]).unwrap()[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn far_tail_stays_finite() {
        let g = mix1(&[0.0, 1.0], &[0.5, 0.5]);
        let ld = g.log_density(&[60.0]).unwrap();
        assert!(ld.is_finite());
        // ‖x − a‖² = 3481 at the nearer atom
        let expected = 0.5f64.ln() + log_normalizer(1) - 0.5 * 59.0 * 59.0
            + (1.0 + (-0.5f64 * (3600.0 - 3481.0)).exp()).ln();
        assert_relative_eq!(ld, expected, epsilon = 1e-9);
        let s = g.score(&[60.0]).unwrap();
        assert_relative_eq!(s[0], -59.0, epsilon = 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let g = MixingMeasure::dirac(&[0.0, 0.0]).unwrap();
        assert!(matches!(g.log_density(&[0.0]), Err(NpmleError::Contract(_))));
        assert!(matches!(g.score(&[0.0, 1.0, 2.0]), Err(NpmleError::Contract(_))));
        let data = Dataset::new(1, vec![0.0]).unwrap();
        assert!(g.log_likelihood(&data).is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let atoms = Dataset::new(1, vec![0.0, 1.0]).unwrap();
        assert!(MixingMeasure::new(atoms.clone(), vec![0.5, 0.4]).is_err());
        assert!(MixingMeasure::new(atoms.clone(), vec![0.5]).is_err());
        assert!(MixingMeasure::new(atoms, vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn single_observation_likelihood() {
        let data = Dataset::new(3, vec![0.3, -1.0, 2.0]).unwrap();
        let g = MixingMeasure::dirac(data.point(0)).unwrap();
        assert_relative_eq!(g.log_likelihood(&data).unwrap(), log_normalizer(3), epsilon = 1e-14);
    }

    #[test]
    fn likelihood_permutation_invariant() {
        let data = Dataset::new(1, vec![0.1, 2.0, -3.0, 0.7]).unwrap();
        let g = mix1(&[0.0, 1.0, -2.0], &[0.2, 0.5, 0.3]);
        let a = g.log_likelihood(&data).unwrap();
        let b = g.log_likelihood(&data.permuted(&[3, 1, 0, 2])).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-14);
    }

    #[test]
    fn normalizes_to_one_in_1d() {
        let g = mix1(&[-3.0, 0.5, 4.0], &[0.2, 0.3, 0.5]);
        // composite Simpson on [min atom − 8, max atom + 8]
        let (lo, hi) = (-11.0, 12.0);
        let steps = 20_000;
        let h = (hi - lo) / steps as f64;
        let mut acc = 0.0;
        for k in 0..=steps {
            let x = lo + k as f64 * h;
            let c = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += c * g.density(&[x]).unwrap();
        }
        assert_relative_eq!(acc * h / 3.0, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn sample_is_deterministic() {
        let g = mix1(&[0.0, 5.0], &[0.3, 0.7]);
        let a = g.sample(50, &Noise::Identity, 9).unwrap();
        let b = g.sample(50, &Noise::Identity, 9).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.latents, b.latents);
        let c = g.sample(50, &Noise::Identity, 10).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn sample_mean_concentrates() {
        let g = MixingMeasure::dirac(&[0.0]).unwrap();
        let n = 10_000;
        let s = g.sample(n, &Noise::Identity, 1).unwrap();
        assert!(s.data.mean()[0].abs() < 4.0 / (n as f64).sqrt());
        assert!(s.latents.iter().all(|p| p[0] == 0.0));
    }

    #[test]
    fn sample_component_frequencies() {
        let atoms = Dataset::new(2, vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let g = MixingMeasure::new(atoms, vec![0.5, 0.5]).unwrap();
        let n = 100_000;
        let s = g.sample(n, &Noise::Identity, 3).unwrap();
        let at_origin = s.latents.iter().filter(|p| p[0] == 0.0 && p[1] == 0.0).count();
        assert!((at_origin as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn sample_full_covariance() {
        use nalgebra::DMatrix;
        let g = MixingMeasure::dirac(&[1.0, -1.0]).unwrap();
        let n = 20_000;
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let s = g.sample(n, &Noise::PerPoint(vec![cov; n]), 4).unwrap();
        let m = s.data.mean();
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in s.data.iter() {
            let (a, b) = (p[0] - m[0], p[1] - m[1]);
            sxx += a * a;
            sxy += a * b;
            syy += b * b;
        }
        let nf = n as f64;
        assert!((sxx / nf - 4.0).abs() < 0.15);
        assert!((sxy / nf - 1.0).abs() < 0.1);
        assert!((syy / nf - 2.0).abs() < 0.1);

        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            g.sample(1, &Noise::PerPoint(vec![bad]), 0),
            Err(NpmleError::Config(_))
        ));
    }

    #[test]
    fn empirical_merges_duplicates() {
        let pts = Dataset::new(1, vec![1.0, 2.0, 1.0, 1.0]).unwrap();
        let g = MixingMeasure::empirical(&pts).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.weights(), &[0.75, 0.25]);
    }

    fn arb_case() -> impl Strategy<Value = (MixingMeasure, Vec<f64>)> {
        (1usize..=3, 1usize..=6).prop_flat_map(|(d, m)| {
            (
                prop::collection::vec(-6.0f64..6.0, d * m),
                prop::collection::vec(0.01f64..1.0, m),
                prop::collection::vec(-9.0f64..9.0, d),
            )
                .prop_map(move |(atoms, w, x)| {
                    let g = MixingMeasure::from_unnormalized(Dataset::new(d, atoms).unwrap(), w).unwrap();
                    (g, x)
                })
        })
    }

    proptest! {
        #[test]
        fn density_ceiling((g, x) in arb_case()) {
            let ceiling = log_normalizer(g.dim()).exp();
            prop_assert!(g.density(&x).unwrap() <= ceiling + 1e-12);
        }

        #[test]
        fn score_bound((g, x) in arb_case()) {
            let ld = g.log_density(&x).unwrap();
            let s = g.score(&x).unwrap();
            let norm2: f64 = s.iter().map(|v| v * v).sum();
            // ‖s‖² ≤ ln((2π)^{−d} / f²)
            let rhs = 2.0 * log_normalizer(g.dim()) - 2.0 * ld;
            prop_assert!(norm2 <= rhs + 1e-9, "{norm2} > {rhs}");
        }

        #[test]
        fn score_matches_finite_differences((g, x) in arb_case()) {
            let s = g.score(&x).unwrap();
            let h = 1e-5;
            for k in 0..g.dim() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (g.log_density(&xp).unwrap() - g.log_density(&xm).unwrap()) / (2.0 * h);
                let scale = s[k].abs().max(1.0);
                prop_assert!((fd - s[k]).abs() <= 1e-6 * scale, "k={k} fd={fd} s={}", s[k]);
            }
        }

        #[test]
        fn translation_equivariance((g, x) in arb_case(), c in -5.0f64..5.0) {
            let shift = vec![c; g.dim()];
            let xs: Vec<f64> = x.iter().map(|v| v + c).collect();
            let a = g.log_density(&x).unwrap();
            let b = g.translated(&shift).log_density(&xs).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
