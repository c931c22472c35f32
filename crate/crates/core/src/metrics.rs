//! Distances between mixture densities and risks between estimate vectors.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NpmleError, Result};
use crate::mixture::{Dataset, MixingMeasure, ScaledMixture};

/// Unit-variance Gaussian mass beyond this many standard deviations is below 1e-15.
const TAIL_SD: f64 = 8.0;

/// A density that can be evaluated, sampled and bounded, as needed by the
/// distance estimators. Implemented by plain and scaled mixtures.
pub trait MixtureDensity: Sync {
    fn dim(&self) -> usize;
    fn ln_density(&self, x: &[f64]) -> f64;
    /// Coordinatewise bounds of the (scaled) atoms.
    fn atom_bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// Standard deviation of each mixture component.
    fn component_sd(&self) -> f64;
    fn draw<R: rand::Rng + ?Sized>(&self, picker: &WeightedIndex<f64>, rng: &mut R, out: &mut [f64]);
    fn weights(&self) -> &[f64];
    /// The single atom and component sd, when the mixture has exactly one atom.
    fn single_atom(&self) -> Option<(Vec<f64>, f64)>;
}

impl MixtureDensity for MixingMeasure {
    fn dim(&self) -> usize {
        MixingMeasure::dim(self)
    }

    fn ln_density(&self, x: &[f64]) -> f64 {
        self.log_density_unchecked(x)
    }

    fn atom_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.atoms().bounding_box()
    }

    fn component_sd(&self) -> f64 {
        1.0
    }

    fn draw<R: rand::Rng + ?Sized>(&self, picker: &WeightedIndex<f64>, rng: &mut R, out: &mut [f64]) {
        let a = self.atom(picker.sample(rng));
        for (o, c) in out.iter_mut().zip(a) {
            let z: f64 = StandardNormal.sample(rng);
            *o = c + z;
        }
    }

    fn weights(&self) -> &[f64] {
        MixingMeasure::weights(self)
    }

    fn single_atom(&self) -> Option<(Vec<f64>, f64)> {
        let live: Vec<usize> = (0..self.len()).filter(|&j| self.weights()[j] > 0.0).collect();
        (live.len() == 1).then(|| (self.atom(live[0]).to_vec(), 1.0))
    }
}

impl MixtureDensity for ScaledMixture {
    fn dim(&self) -> usize {
        ScaledMixture::dim(self)
    }

    fn ln_density(&self, x: &[f64]) -> f64 {
        self.log_density_unchecked(x)
    }

    fn atom_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = self.mixture.atoms().bounding_box();
        let s = self.scale;
        (lo.iter().map(|v| v * s).collect(), hi.iter().map(|v| v * s).collect())
    }

    fn component_sd(&self) -> f64 {
        self.scale
    }

    fn draw<R: rand::Rng + ?Sized>(&self, picker: &WeightedIndex<f64>, rng: &mut R, out: &mut [f64]) {
        self.mixture.draw(picker, rng, out);
        out.iter_mut().for_each(|v| *v *= self.scale);
    }

    fn weights(&self) -> &[f64] {
        self.mixture.weights()
    }

    fn single_atom(&self) -> Option<(Vec<f64>, f64)> {
        self.mixture
            .single_atom()
            .map(|(a, _)| (a.iter().map(|v| v * self.scale).collect(), self.scale))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceMethod {
    /// Tensor Gauss–Legendre quadrature (d ≤ 2).
    Quadrature,
    /// Importance sampling with the first density as proposal.
    MonteCarlo,
    /// Closed form for two single-atom mixtures with equal component
    /// covariance, otherwise quadrature when d ≤ 2 and Monte Carlo beyond.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HellingerEstimate {
    /// `H² = 2 − 2∫√(fg)`, in `[0, 2]`.
    pub value_sq: f64,
    pub method: DistanceMethod,
    /// Monte Carlo only.
    pub std_error: Option<f64>,
    /// Density-pair evaluations used.
    pub n_eval: usize,
}

/// Default nodes per axis: 512 in one dimension, 256 in two.
pub fn default_quadrature_nodes(dim: usize) -> usize {
    if dim <= 1 {
        512
    } else {
        256
    }
}

pub const DEFAULT_MC_SAMPLES: usize = 100_000;

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n(x) and P_{n−1}(x)
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn check_pair<F: MixtureDensity, G: MixtureDensity>(f: &F, g: &G) -> Result<()> {
    if f.dim() != g.dim() {
        return Err(NpmleError::contract(format!(
            "densities have dimensions {} and {}",
            f.dim(),
            g.dim()
        )));
    }
    Ok(())
}

/// `∫ h(ln f(x), ln g(x)) dx` by tensor Gauss–Legendre over the joint atom
/// box widened by eight component standard deviations.
fn quadrature<F, G, H>(f: &F, g: &G, nodes_per_axis: usize, integrand: H) -> Result<(f64, usize)>
where
    F: MixtureDensity,
    G: MixtureDensity,
    H: Fn(f64, f64) -> f64 + Sync,
{
    let d = f.dim();
    if d > 2 {
        return Err(NpmleError::config(format!(
            "quadrature is limited to d <= 2 (got d = {d}); use Monte Carlo"
        )));
    }
    if nodes_per_axis == 0 {
        return Err(NpmleError::config("quadrature needs at least one node per axis"));
    }
    let (flo, fhi) = f.atom_bounds();
    let (glo, ghi) = g.atom_bounds();
    let pad = TAIL_SD * f.component_sd().max(g.component_sd());
    let lo: Vec<f64> = (0..d).map(|k| flo[k].min(glo[k]) - pad).collect();
    let hi: Vec<f64> = (0..d).map(|k| fhi[k].max(ghi[k]) + pad).collect();
    let (t, w) = gauss_legendre(nodes_per_axis);
    let axis = |k: usize| -> (Vec<f64>, Vec<f64>) {
        let (mid, half) = (0.5 * (lo[k] + hi[k]), 0.5 * (hi[k] - lo[k]));
        (
            t.iter().map(|u| mid + half * u).collect(),
            w.iter().map(|v| v * half).collect(),
        )
    };
    let at = |x: &[f64]| integrand(f.ln_density(x), g.ln_density(x));
    if d == 1 {
        let (xs, ws) = axis(0);
        let vals: Vec<f64> = xs.par_iter().map(|&x| at(&[x])).collect();
        Ok((vals.iter().zip(&ws).map(|(v, w)| v * w).sum(), xs.len()))
    } else {
        let (xs, wx) = axis(0);
        let (ys, wy) = axis(1);
        let rows: Vec<f64> = xs
            .par_iter()
            .map(|&x| ys.iter().zip(&wy).map(|(&y, w)| w * at(&[x, y])).sum::<f64>())
            .collect();
        Ok((rows.iter().zip(&wx).map(|(r, w)| r * w).sum(), xs.len() * ys.len()))
    }
}

/// Sample mean and standard error of `h(ln f(X), ln g(X))` for `X ~ f`.
fn monte_carlo<F, G, H>(f: &F, g: &G, samples: usize, seed: u64, integrand: H) -> Result<(f64, f64)>
where
    F: MixtureDensity,
    G: MixtureDensity,
    H: Fn(f64, f64) -> f64,
{
    if samples < 2 {
        return Err(NpmleError::config("Monte Carlo needs at least 2 samples"));
    }
    let picker = WeightedIndex::new(f.weights().to_vec())
        .map_err(|e| NpmleError::contract(format!("invalid mixing weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; f.dim()];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        f.draw(&picker, &mut rng, &mut x);
        let v = integrand(f.ln_density(&x), g.ln_density(&x));
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Closed form for two unit-covariance Gaussians: `2(1 − exp(−‖a − b‖²/8))`.
pub fn hellinger_squared_gaussians(a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    2.0 * (1.0 - (-r2 / 8.0).exp())
}

/// Squared Hellinger distance `2 − 2∫√(f g)` between two mixture densities.
///
/// `budget` is nodes per axis for quadrature and sample count for Monte Carlo.
pub fn hellinger_squared<F, G>(
    f: &F,
    g: &G,
    method: DistanceMethod,
    budget: Option<usize>,
    seed: u64,
) -> Result<HellingerEstimate>
where
    F: MixtureDensity,
    G: MixtureDensity,
{
    check_pair(f, g)?;
    let d = f.dim();
    let method = match method {
        DistanceMethod::Auto => {
            if let (Some((a, sa)), Some((b, sb))) = (f.single_atom(), g.single_atom()) {
                if sa == sb {
                    let scaled: Vec<f64> = a.iter().map(|v| v / sa).collect();
                    let other: Vec<f64> = b.iter().map(|v| v / sb).collect();
                    return Ok(HellingerEstimate {
                        value_sq: hellinger_squared_gaussians(&scaled, &other),
                        method: DistanceMethod::Auto,
                        std_error: None,
                        n_eval: 0,
                    });
                }
            }
            if d <= 2 {
                DistanceMethod::Quadrature
            } else {
                DistanceMethod::MonteCarlo
            }
        }
        m => m,
    };
    match method {
        DistanceMethod::Quadrature => {
            let nodes = budget.unwrap_or_else(|| default_quadrature_nodes(d));
            let (affinity, n_eval) = quadrature(f, g, nodes, |lf, lg| (0.5 * (lf + lg)).exp())?;
            Ok(HellingerEstimate {
                value_sq: (2.0 - 2.0 * affinity).clamp(0.0, 2.0),
                method,
                std_error: None,
                n_eval,
            })
        }
        DistanceMethod::MonteCarlo => {
            let samples = budget.unwrap_or(DEFAULT_MC_SAMPLES);
            let (mean, se) = monte_carlo(f, g, samples, seed, |lf, lg| (0.5 * (lg - lf)).exp())?;
            Ok(HellingerEstimate {
                value_sq: (2.0 - 2.0 * mean).clamp(0.0, 2.0),
                method,
                std_error: Some(2.0 * se),
                n_eval: samples,
            })
        }
        DistanceMethod::Auto => unreachable!("resolved above"),
    }
}

/// Total variation distance `½∫|f − g|`.
pub fn total_variation<F, G>(f: &F, g: &G, method: DistanceMethod, budget: Option<usize>, seed: u64) -> Result<f64>
where
    F: MixtureDensity,
    G: MixtureDensity,
{
    check_pair(f, g)?;
    let d = f.dim();
    let use_quadrature = match method {
        DistanceMethod::Quadrature => true,
        DistanceMethod::MonteCarlo => false,
        DistanceMethod::Auto => d <= 2,
    };
    let tv = if use_quadrature {
        let nodes = budget.unwrap_or_else(|| default_quadrature_nodes(d));
        0.5 * quadrature(f, g, nodes, |lf, lg| (lf.exp() - lg.exp()).abs())?.0
    } else {
        let samples = budget.unwrap_or(DEFAULT_MC_SAMPLES);
        monte_carlo(f, g, samples, seed, |lf, lg| (1.0 - (lg - lf).exp()).max(0.0))?.0
    };
    Ok(tv.clamp(0.0, 1.0))
}

/// `(1/n) Σ_i ‖a_i − b_i‖²`, summed in index order.
pub fn mean_squared_error(a: &Dataset, b: &Dataset) -> Result<f64> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(NpmleError::contract(format!(
            "cannot compare {} points in R^{} with {} points in R^{}",
            a.len(),
            a.dim(),
            b.len(),
            b.dim()
        )));
    }
    let total: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum();
    Ok(total / a.len() as f64)
}
