//! Candidate support sets for the finite-dimensional likelihood problem.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NpmleError, Result};
use crate::mixture::Dataset;

/// Largest tensor grid `build_support` will materialize.
pub const DEFAULT_GRID_CAP: usize = 1_000_000;

/// How atoms of the candidate support are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupportStrategy {
    /// One atom per observation.
    Exemplar,
    /// Tensor grid over the data bounding box.
    Grid { points_per_dim: usize },
    /// `m` observations drawn without replacement.
    Subsample { m: usize, seed: u64 },
    /// Bin centers used both as atoms and as weighted pseudo-observations.
    Binned { bins_per_dim: usize },
}

/// Grid resolution used when none is given: `⌈√n⌉^(1/d)`, at least 8 per axis.
pub fn default_grid_points(n: usize, dim: usize) -> usize {
    let total = (n as f64).sqrt().ceil();
    let per_axis = total.powf(1.0 / dim as f64).ceil() as usize;
    per_axis.max(8)
}

/// The output of [`build_support`]: atoms plus the (possibly weighted)
/// observations the solver should fit.
#[derive(Debug, Clone)]
pub struct Support {
    pub atoms: Dataset,
    /// The data itself, or bin centers for [`SupportStrategy::Binned`].
    pub observations: Dataset,
    /// Multiplicity of each observation; all ones unless binned.
    pub obs_weights: Vec<f64>,
}

impl SupportStrategy {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            SupportStrategy::Exemplar => Ok(()),
            SupportStrategy::Grid { points_per_dim } if points_per_dim < 2 => Err(
                NpmleError::config(format!("grid needs >= 2 points per axis, got {points_per_dim}")),
            ),
            SupportStrategy::Subsample { m, .. } if m == 0 || m > n => Err(NpmleError::config(
                format!("subsample size must be in 1..={n}, got {m}"),
            )),
            SupportStrategy::Binned { bins_per_dim: 0 } => {
                Err(NpmleError::config("binning needs >= 1 bin per axis"))
            }
            _ => Ok(()),
        }
    }
}

pub fn build_support(data: &Dataset, strategy: SupportStrategy) -> Result<Support> {
    build_support_capped(data, strategy, DEFAULT_GRID_CAP)
}

/// As [`build_support`] with an explicit limit on the number of grid atoms.
pub fn build_support_capped(data: &Dataset, strategy: SupportStrategy, grid_cap: usize) -> Result<Support> {
    if data.is_empty() {
        return Err(NpmleError::contract("cannot build a support from an empty dataset"));
    }
    let n = data.len();
    strategy.validate(n)?;
    let unit = || vec![1.0; n];
    match strategy {
        SupportStrategy::Exemplar => Ok(Support {
            atoms: data.clone(),
            observations: data.clone(),
            obs_weights: unit(),
        }),
        SupportStrategy::Grid { points_per_dim } => Ok(Support {
            atoms: tensor_grid(data, points_per_dim, grid_cap)?,
            observations: data.clone(),
            obs_weights: unit(),
        }),
        SupportStrategy::Subsample { m, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picks = rand::seq::index::sample(&mut rng, n, m).into_vec();
            Ok(Support {
                atoms: data.permuted(&picks),
                observations: data.clone(),
                obs_weights: unit(),
            })
        }
        SupportStrategy::Binned { bins_per_dim } => {
            let (centers, counts) = bin(data, bins_per_dim)?;
            Ok(Support {
                atoms: centers.clone(),
                observations: centers,
                obs_weights: counts,
            })
        }
    }
}

/// Axis values `lo, …, hi` in `k` equal steps; a single value on a flat axis.
fn axis_values(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let step = (hi - lo) / (k - 1) as f64;
    (0..k)
        .map(|i| if i == k - 1 { hi } else { lo + i as f64 * step })
        .collect()
}

fn tensor_grid(data: &Dataset, points_per_dim: usize, cap: usize) -> Result<Dataset> {
    let d = data.dim();
    let (lo, hi) = data.bounding_box();
    let axes: Vec<Vec<f64>> = (0..d).map(|k| axis_values(lo[k], hi[k], points_per_dim)).collect();
    let total = axes
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
        .filter(|&t| t <= cap)
        .ok_or_else(|| {
            NpmleError::config(format!(
                "grid of {points_per_dim}^{d} atoms exceeds the cap of {cap}"
            ))
        })?;
    let mut coords = Vec::with_capacity(total * d);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        for k in 0..d {
            coords.push(axes[k][idx[k]]);
        }
        // last axis varies fastest
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    Dataset::new(d, coords)
}

fn bin(data: &Dataset, bins_per_dim: usize) -> Result<(Dataset, Vec<f64>)> {
    let d = data.dim();
    let (lo, hi) = data.bounding_box();
    let width: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / bins_per_dim as f64).collect();
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for p in data.iter() {
        let key: Vec<usize> = (0..d)
            .map(|k| {
                if width[k] > 0.0 {
                    (((p[k] - lo[k]) / width[k]).floor() as usize).min(bins_per_dim - 1)
                } else {
                    0
                }
            })
            .collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    let mut centers = Vec::with_capacity(counts.len() * d);
    let mut weights = Vec::with_capacity(counts.len());
    for (key, count) in counts {
        for k in 0..d {
            centers.push(lo[k] + (key[k] as f64 + 0.5) * width[k]);
        }
        weights.push(count as f64);
    }
    Ok((Dataset::new(d, centers)?, weights))
}
