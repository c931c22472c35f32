//! k-means, the gap statistic, and mixture-based cluster assignment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NpmleError, Result};
use crate::mixture::{sq_dist, Dataset, MixingMeasure};

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_LLOYD_ITERS: usize = 300;
pub const DEFAULT_GAP_REFS: usize = 10;
pub const DEFAULT_GAP_K_MAX: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Dataset,
    pub labels: Vec<usize>,
    pub within_ss: f64,
}

impl KMeansResult {
    /// Each point replaced by its cluster center.
    pub fn fitted(&self) -> Dataset {
        let d = self.centers.dim();
        let mut out = Vec::with_capacity(self.labels.len() * d);
        for &l in &self.labels {
            out.extend_from_slice(self.centers.point(l));
        }
        Dataset::new(d, out).expect("centers are finite")
    }
}

fn nearest(x: &[f64], centers: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.chunks_exact(d).enumerate() {
        let dist = sq_dist(x, c);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

/// One Lloyd run from the given initial centers.
fn lloyd(data: &Dataset, mut centers: Vec<f64>, k: usize) -> KMeansResult {
    let d = data.dim();
    let n = data.len();
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (i, x) in data.iter().enumerate() {
            let (j, dist) = nearest(x, &centers, d);
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
            dists[i] = dist;
        }
        if !changed {
            break;
        }
        sums.iter_mut().for_each(|v| *v = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for (x, &l) in data.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for t in 0..d {
                    centers[j * d + t] = sums[j * d + t] / counts[j] as f64;
                }
            } else {
                // reseed an empty cluster at the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("n >= k >= 1");
                centers[j * d..(j + 1) * d].copy_from_slice(data.point(far));
                dists[far] = 0.0;
            }
        }
    }
    let within_ss = data.iter().zip(&labels).map(|(x, &l)| sq_dist(x, &centers[l * d..(l + 1) * d])).sum();
    KMeansResult {
        centers: Dataset::new(d, centers).expect("centers are finite"),
        labels,
        within_ss,
    }
}

/// Lloyd's algorithm from `restarts` random-point initializations; returns the
/// run with the smallest within-cluster sum of squares.
pub fn kmeans(data: &Dataset, k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    let n = data.len();
    if k == 0 || k > n {
        return Err(NpmleError::contract(format!("k must be in 1..={n}, got {k}")));
    }
    if restarts == 0 {
        return Err(NpmleError::config("k-means needs at least one start"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let picks = rand::seq::index::sample(&mut rng, n, k).into_vec();
        let init: Vec<f64> = picks.iter().flat_map(|&i| data.point(i).iter().copied()).collect();
        let run = lloyd(data, init, k);
        if best.as_ref().is_none_or(|b| run.within_ss < b.within_ss) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapResult {
    /// Selected number of clusters.
    pub k: usize,
    /// `Gap(k)` for `k = 1..=k_max`.
    pub gaps: Vec<f64>,
    /// `s_k = sd_k · √(1 + 1/B)`.
    pub s: Vec<f64>,
    /// `ln W_k` of the data.
    pub log_w: Vec<f64>,
    /// The k-means solution at the selected `k`.
    pub clustering: KMeansResult,
}

/// Gap statistic with `b_refs` uniform reference sets over the bounding box
/// and [`DEFAULT_RESTARTS`] k-means starts.
pub fn gap_statistic(data: &Dataset, k_max: usize, b_refs: usize, seed: u64) -> Result<GapResult> {
    gap_statistic_with(data, k_max, b_refs, DEFAULT_RESTARTS, seed)
}

pub fn gap_statistic_with(data: &Dataset, k_max: usize, b_refs: usize, restarts: usize, seed: u64) -> Result<GapResult> {
    if k_max == 0 || b_refs == 0 {
        return Err(NpmleError::config("gap statistic needs k_max >= 1 and at least one reference set"));
    }
    let n = data.len();
    if n == 0 {
        return Err(NpmleError::contract("gap statistic on an empty dataset"));
    }
    let k_max = k_max.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fits = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        fits.push(kmeans(data, k, restarts, rng.random())?);
    }
    let log_w: Vec<f64> = fits.iter().map(|f| f.within_ss.ln()).collect();
    if !log_w[0].is_finite() {
        // all points identical
        return Ok(GapResult {
            k: 1,
            gaps: vec![0.0; k_max],
            s: vec![0.0; k_max],
            log_w,
            clustering: fits.swap_remove(0),
        });
    }
    let (lo, hi) = data.bounding_box();
    let d = data.dim();
    let mut ref_logs = vec![Vec::with_capacity(b_refs); k_max];
    for _ in 0..b_refs {
        let coords: Vec<f64> = (0..n * d)
            .map(|i| {
                let t = i % d;
                if hi[t] > lo[t] {
                    rng.random_range(lo[t]..hi[t])
                } else {
                    lo[t]
                }
            })
            .collect();
        let reference = Dataset::new(d, coords)?;
        for k in 1..=k_max {
            let w = kmeans(&reference, k, restarts, rng.random())?.within_ss;
            ref_logs[k - 1].push(w.max(f64::MIN_POSITIVE).ln());
        }
    }
    let b = b_refs as f64;
    let mut gaps = Vec::with_capacity(k_max);
    let mut s = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let mean = ref_logs[k].iter().sum::<f64>() / b;
        let sd = (ref_logs[k].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / b).sqrt();
        // W_k can reach zero once k matches the number of distinct points
        let lw = if log_w[k].is_finite() { log_w[k] } else { f64::MIN_POSITIVE.ln() };
        gaps.push(mean - lw);
        s.push(sd * (1.0 + 1.0 / b).sqrt());
    }
    let k = (0..k_max.saturating_sub(1))
        .find(|&k| gaps[k] >= gaps[k + 1] - s[k + 1])
        .map_or(k_max, |k| k + 1);
    Ok(GapResult {
        k,
        gaps,
        s,
        log_w,
        clustering: fits.swap_remove(k - 1),
    })
}

/// Assigns each point to the fitted atom with the largest posterior
/// responsibility; ties go to the lowest atom index.
pub fn eb_cluster_assign(fit: &MixingMeasure, data: &Dataset) -> Result<Vec<usize>> {
    if fit.dim() != data.dim() {
        return Err(NpmleError::contract(format!(
            "mixture has dimension {}, data has dimension {}",
            fit.dim(),
            data.dim()
        )));
    }
    let mut r = vec![0.0; fit.len()];
    Ok(data
        .iter()
        .map(|x| {
            fit.responsibilities_into(x, &mut r);
            let mut best = 0;
            for j in 1..r.len() {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}
