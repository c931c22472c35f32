//! Maximum likelihood over mixing weights on a fixed support.
//!
//! Given observations `X_1..X_n` with multiplicities `ω_i` and candidate atoms
//! `a_1..a_m`, maximize `Σ_i ω_i ln (A w)_i` over the probability simplex,
//! where `A_ij = φ_d(X_i − a_j)`. The objective is concave, so the first-order
//! certificate
//!
//! ```text
//! gap(w) = max_j (1/W) Σ_i ω_i A_ij / (A w)_i − 1,   W = Σ_i ω_i
//! ```
//!
//! is nonnegative and vanishes exactly at the restricted optimum.
//!
//! The kernel is stored row-scaled: row `i` is divided by its largest entry.
//! The certificate and the EM/Frank–Wolfe updates are invariant to that
//! scaling, and scaled entries never underflow for the nearest atom.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NpmleError, Result};
use crate::mixture::{log_normalizer, sq_dist, Dataset, MixingMeasure};
use crate::nnls::nnls_gram;
use crate::support::{build_support, SupportStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Multiplicative EM updates only.
    Em,
    /// Frank–Wolfe with away steps and exact line search.
    FrankWolfe,
    /// `em_sweeps` EM iterations followed by Frank–Wolfe.
    EmThenFw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub max_iters: usize,
    /// Target for the per-observation duality gap.
    pub gap_tol: f64,
    /// Weights below this are zeroed after convergence; `None` means `1e-10 / m`.
    pub prune_tol: Option<f64>,
    /// EM sweeps run before switching to Frank–Wolfe under [`Method::EmThenFw`].
    pub em_sweeps: usize,
    /// Largest `n·m` for which the kernel matrix is held in memory;
    /// larger problems recompute kernel columns on demand.
    pub materialize_limit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::EmThenFw,
            max_iters: 20_000,
            gap_tol: 1e-6,
            prune_tol: None,
            em_sweeps: 200,
            materialize_limit: 50_000_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) {
            return Err(NpmleError::config(format!("gap_tol must be > 0, got {}", self.gap_tol)));
        }
        if let Some(p) = self.prune_tol {
            if !(p >= 0.0) {
                return Err(NpmleError::config(format!("prune_tol must be >= 0, got {p}")));
            }
        }
        if self.max_iters == 0 {
            return Err(NpmleError::config("max_iters must be >= 1"));
        }
        Ok(())
    }
}

/// A solved mixture and the solver's diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Atoms with positive weight, in support order.
    pub mixture: MixingMeasure,
    /// Weights over the full support (pruned atoms are zero).
    pub support_weights: Vec<f64>,
    /// `ln f̂(X_i)` at each observation the solver saw.
    pub fitted_log_densities: Vec<f64>,
    /// Certificate at the returned weights.
    pub duality_gap: f64,
    pub iterations: usize,
    /// Weighted mean log-likelihood after every iteration, starting with the initial point.
    pub loglik_trace: Vec<f64>,
    /// False when `max_iters` ran out before the gap reached `gap_tol`.
    pub converged: bool,
    /// Observation multiplicities when the fit used binned data.
    pub weights_multiplicity: Option<Vec<f64>>,
}

impl FitResult {
    /// Weighted mean of the fitted log-densities.
    pub fn log_likelihood(&self) -> f64 {
        match &self.weights_multiplicity {
            None => {
                self.fitted_log_densities.iter().sum::<f64>() / self.fitted_log_densities.len() as f64
            }
            Some(w) => {
                let total: f64 = w.iter().sum();
                self.fitted_log_densities.iter().zip(w).map(|(l, w)| l * w).sum::<f64>() / total
            }
        }
    }
}

enum Storage {
    /// Column-major, `cols[j*n + i] = K_ij`.
    Dense(Vec<f64>),
    Streamed,
}

/// Row-scaled kernel `K_ij = A_ij / max_l A_il`.
struct Kernel<'a> {
    obs: &'a Dataset,
    atoms: &'a Dataset,
    n: usize,
    m: usize,
    /// `max_j ln A_ij`
    row_shift: Vec<f64>,
    storage: Storage,
}

impl<'a> Kernel<'a> {
    fn new(obs: &'a Dataset, atoms: &'a Dataset, materialize_limit: usize) -> Self {
        let (n, m) = (obs.len(), atoms.len());
        let norm = log_normalizer(obs.dim());
        let row_shift: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = obs.point(i);
                let best = atoms
                    .iter()
                    .map(|a| sq_dist(x, a))
                    .fold(f64::INFINITY, f64::min);
                norm - 0.5 * best
            })
            .collect();
        let mut kernel = Kernel {
            obs,
            atoms,
            n,
            m,
            row_shift,
            storage: Storage::Streamed,
        };
        if n.saturating_mul(m) <= materialize_limit {
            let mut cols = vec![0.0; n * m];
            cols.par_chunks_mut(n).enumerate().for_each(|(j, col)| kernel.fill_column(j, col));
            kernel.storage = Storage::Dense(cols);
        }
        kernel
    }

    fn fill_column(&self, j: usize, col: &mut [f64]) {
        let a = self.atoms.point(j);
        let norm = log_normalizer(self.obs.dim());
        for (i, c) in col.iter_mut().enumerate() {
            *c = (norm - 0.5 * sq_dist(self.obs.point(i), a) - self.row_shift[i]).exp();
        }
    }

    fn column(&self, j: usize, buf: &mut Vec<f64>) {
        match &self.storage {
            Storage::Dense(cols) => {
                buf.clear();
                buf.extend_from_slice(&cols[j * self.n..(j + 1) * self.n]);
            }
            Storage::Streamed => {
                buf.resize(self.n, 0.0);
                self.fill_column(j, buf);
            }
        }
    }

    /// `s = K w`, accumulating atoms in index order.
    fn matvec(&self, w: &[f64], s: &mut [f64]) {
        match &self.storage {
            Storage::Dense(cols) => {
                s.par_chunks_mut(1024).enumerate().for_each(|(c, chunk)| {
                    let start = c * 1024;
                    chunk.iter_mut().for_each(|v| *v = 0.0);
                    for (j, &wj) in w.iter().enumerate() {
                        if wj != 0.0 {
                            let col = &cols[j * self.n + start..j * self.n + start + chunk.len()];
                            for (v, k) in chunk.iter_mut().zip(col) {
                                *v += wj * k;
                            }
                        }
                    }
                });
            }
            Storage::Streamed => {
                let norm = log_normalizer(self.obs.dim());
                s.par_iter_mut().enumerate().for_each(|(i, v)| {
                    let x = self.obs.point(i);
                    let mut acc = 0.0;
                    for (j, &wj) in w.iter().enumerate() {
                        if wj != 0.0 {
                            acc += wj * (norm - 0.5 * sq_dist(x, self.atoms.point(j)) - self.row_shift[i]).exp();
                        }
                    }
                    *v = acc;
                });
            }
        }
    }

    /// `g = Kᵀ u`.
    fn transpose_matvec(&self, u: &[f64], g: &mut [f64]) {
        match &self.storage {
            Storage::Dense(cols) => {
                g.par_iter_mut().enumerate().for_each(|(j, gj)| {
                    let col = &cols[j * self.n..(j + 1) * self.n];
                    *gj = col.iter().zip(u).map(|(k, u)| k * u).sum();
                });
            }
            Storage::Streamed => {
                g.par_iter_mut().enumerate().for_each(|(j, gj)| {
                    let mut col = vec![0.0; self.n];
                    self.fill_column(j, &mut col);
                    *gj = col.iter().zip(u).map(|(k, u)| k * u).sum();
                });
            }
        }
    }
}

/// Mutable solver state: weights, `s = K w`, and the gradient `g = Kᵀ(ω/s)`.
struct State<'k, 'a> {
    kernel: &'k Kernel<'a>,
    obs_weights: &'k [f64],
    total_weight: f64,
    w: Vec<f64>,
    s: Vec<f64>,
    g: Vec<f64>,
    u: Vec<f64>,
}

impl<'k, 'a> State<'k, 'a> {
    fn new(kernel: &'k Kernel<'a>, obs_weights: &'k [f64], w: Vec<f64>) -> Result<Self> {
        let mut st = State {
            kernel,
            obs_weights,
            total_weight: obs_weights.iter().sum(),
            w,
            s: vec![0.0; kernel.n],
            g: vec![0.0; kernel.m],
            u: vec![0.0; kernel.n],
        };
        st.refresh_s()?;
        Ok(st)
    }

    fn refresh_s(&mut self) -> Result<()> {
        self.kernel.matvec(&self.w, &mut self.s);
        self.check_positive()
    }

    fn check_positive(&self) -> Result<()> {
        if let Some(i) = self.s.iter().position(|&v| !(v > 0.0)) {
            return Err(NpmleError::Underflow {
                index: i,
                detail: "observation is numerically infinitely far from every weighted atom".into(),
            });
        }
        Ok(())
    }

    fn refresh_gradient(&mut self) {
        for ((u, &om), &s) in self.u.iter_mut().zip(self.obs_weights).zip(&self.s) {
            *u = om / s;
        }
        self.kernel.transpose_matvec(&self.u, &mut self.g);
    }

    /// `(1/W) Σ ω_i (ln s_i + c_i)`, the weighted mean log-likelihood.
    fn objective(&self) -> f64 {
        let total: f64 = self
            .s
            .iter()
            .zip(&self.kernel.row_shift)
            .zip(self.obs_weights)
            .map(|((s, c), om)| om * (s.ln() + c))
            .sum();
        total / self.total_weight
    }

    /// Index of the largest gradient entry (lowest index on ties).
    fn best_vertex(&self) -> usize {
        let mut best = 0;
        for (j, &gj) in self.g.iter().enumerate() {
            if gj > self.g[best] {
                best = j;
            }
        }
        best
    }

    fn gap(&self) -> f64 {
        self.g[self.best_vertex()] / self.total_weight - 1.0
    }

    fn em_step(&mut self) -> Result<()> {
        let inv = 1.0 / self.total_weight;
        for (w, g) in self.w.iter_mut().zip(&self.g) {
            *w *= g * inv;
        }
        let total: f64 = self.w.iter().sum();
        self.w.iter_mut().for_each(|w| *w /= total);
        self.refresh_s()
    }

    /// Newton step restricted to the atoms that currently carry weight.
    ///
    /// The second-order model of the Lagrangian `Σ_i ω_i ln (K v)_i − W Σ_j v_j`
    /// around `s` is, up to a constant, `−½ Σ_i ω_i ((K v)_i / s_i − 2)² − W Σ_j v_j`;
    /// its maximizer over `v ≥ 0` is a nonnegative least-squares problem whose
    /// fixed points are exactly the optimal weights. The normalized solution is
    /// then approached with a backtracking search that only accepts increases.
    fn corrective_step(&mut self, col: &mut Vec<f64>) -> Result<bool> {
        let active: Vec<usize> = (0..self.w.len()).filter(|&j| self.w[j] > 0.0).collect();
        let p = active.len();
        if p < 2 {
            return Ok(false);
        }
        let n = self.kernel.n;
        let mut scaled = vec![0.0; n * p];
        for (a, &j) in active.iter().enumerate() {
            self.kernel.column(j, col);
            for ((y, k), s) in scaled[a * n..(a + 1) * n].iter_mut().zip(col.iter()).zip(&self.s) {
                *y = k / s;
            }
        }
        let mut q = nalgebra::DMatrix::zeros(p, p);
        for a in 0..p {
            let ya = &scaled[a * n..(a + 1) * n];
            for b in a..p {
                let yb = &scaled[b * n..(b + 1) * n];
                let v: f64 = ya.iter().zip(yb).zip(self.obs_weights).map(|((x, y), om)| om * x * y).sum();
                q[(a, b)] = v;
                q[(b, a)] = v;
            }
        }
        let c: Vec<f64> = active.iter().map(|&j| 2.0 * self.g[j] - self.total_weight).collect();
        let warm: Vec<usize> = (0..p).collect();
        let v = nnls_gram(&q, &c, &warm);
        let total: f64 = v.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Ok(false);
        }
        let target: Vec<f64> = v.iter().map(|x| x / total).collect();
        let s_target: Vec<f64> = (0..n)
            .map(|i| {
                let acc: f64 = (0..p).map(|a| target[a] * scaled[a * n + i]).sum();
                acc * self.s[i]
            })
            .collect();

        let weighted_log = |s: &[f64]| -> f64 {
            s.iter().zip(self.obs_weights).map(|(s, om)| om * s.ln()).sum()
        };
        let base = weighted_log(&self.s);
        let mut alpha = 1.0;
        let mut trial = vec![0.0; n];
        for _ in 0..40 {
            for ((t, s), st) in trial.iter_mut().zip(&self.s).zip(&s_target) {
                *t = (1.0 - alpha) * s + alpha * st;
            }
            if trial.iter().all(|&t| t > 0.0) && weighted_log(&trial) > base {
                for (&j, &tw) in active.iter().zip(&target) {
                    self.w[j] = (1.0 - alpha) * self.w[j] + alpha * tw;
                }
                let total: f64 = self.w.iter().sum();
                self.w.iter_mut().for_each(|w| *w /= total);
                self.s.copy_from_slice(&trial);
                if total != 1.0 {
                    self.s.iter_mut().for_each(|s| *s /= total);
                }
                return Ok(true);
            }
            alpha *= 0.5;
        }
        Ok(false)
    }

    /// One Frank–Wolfe or away step. Returns false when neither direction improves.
    fn fw_step(&mut self, col: &mut Vec<f64>, dir: &mut Vec<f64>) -> bool {
        let toward = self.best_vertex();
        let mut away = None;
        for (j, (&wj, &gj)) in self.w.iter().zip(&self.g).enumerate() {
            if wj > 0.0 && away.is_none_or(|k: usize| gj < self.g[k]) {
                away = Some(j);
            }
        }
        let wg: f64 = self.w.iter().zip(&self.g).map(|(w, g)| w * g).sum();
        let fw_gain = self.g[toward] - wg;
        let away_gain = away.map_or(f64::NEG_INFINITY, |k| {
            if self.w[k] < 1.0 { wg - self.g[k] } else { f64::NEG_INFINITY }
        });
        if !(fw_gain > 0.0 || away_gain > 0.0) {
            return false;
        }

        if fw_gain >= away_gain {
            self.kernel.column(toward, col);
            dir.clear();
            dir.extend(col.iter().zip(&self.s).map(|(k, s)| k - s));
            let gamma = line_search(&self.s, dir, self.obs_weights, 1.0);
            if gamma <= 0.0 {
                return false;
            }
            for w in self.w.iter_mut() {
                *w *= 1.0 - gamma;
            }
            self.w[toward] += gamma;
            for (s, k) in self.s.iter_mut().zip(col.iter()) {
                *s = (1.0 - gamma) * *s + gamma * k;
            }
        } else {
            let k = away.expect("away gain is finite only with an away atom");
            let wk = self.w[k];
            let gamma_max = wk / (1.0 - wk);
            self.kernel.column(k, col);
            dir.clear();
            dir.extend(self.s.iter().zip(col.iter()).map(|(s, c)| s - c));
            let gamma = line_search(&self.s, dir, self.obs_weights, gamma_max);
            if gamma <= 0.0 {
                return false;
            }
            for w in self.w.iter_mut() {
                *w *= 1.0 + gamma;
            }
            if gamma >= gamma_max {
                self.w[k] = 0.0;
            } else {
                self.w[k] -= gamma;
            }
            for (s, c) in self.s.iter_mut().zip(col.iter()) {
                *s = (1.0 + gamma) * *s - gamma * c;
            }
        }
        true
    }
}

/// Maximizes `Σ ω_i ln(s_i + γ d_i)` over `γ ∈ [0, γ_max]` by bisection on the
/// derivative, which is decreasing in `γ`.
fn line_search(s: &[f64], d: &[f64], omega: &[f64], gamma_max: f64) -> f64 {
    let slope = |gamma: f64| -> f64 {
        let mut acc = 0.0;
        for ((&si, &di), &om) in s.iter().zip(d).zip(omega) {
            if di != 0.0 {
                let denom = si + gamma * di;
                if denom <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                acc += om * di / denom;
            }
        }
        acc
    };
    if !(slope(0.0) > 0.0) {
        return 0.0;
    }
    if slope(gamma_max) >= 0.0 {
        return gamma_max;
    }
    let (mut lo, mut hi) = (0.0, gamma_max);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn check_inputs(obs: &Dataset, atoms: &Dataset, obs_weights: &[f64]) -> Result<()> {
    if atoms.dim() != obs.dim() {
        return Err(NpmleError::contract(format!(
            "atoms have dimension {}, observations have dimension {}",
            atoms.dim(),
            obs.dim()
        )));
    }
    if obs_weights.len() != obs.len() {
        return Err(NpmleError::contract(format!(
            "{} observation weights for {} observations",
            obs_weights.len(),
            obs.len()
        )));
    }
    if obs_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(NpmleError::contract("observation weights must be positive and finite"));
    }
    Ok(())
}

/// Maximizes the weighted log-likelihood over mixing weights on `atoms`.
///
/// Non-convergence within `max_iters` is reported through
/// [`FitResult::converged`], not as an error.
pub fn solve(obs: &Dataset, atoms: &Dataset, obs_weights: &[f64], cfg: &SolverConfig) -> Result<FitResult> {
    cfg.validate()?;
    check_inputs(obs, atoms, obs_weights)?;
    let m = atoms.len();
    let kernel = Kernel::new(obs, atoms, cfg.materialize_limit);
    let mut st = State::new(&kernel, obs_weights, vec![1.0 / m as f64; m])?;
    st.refresh_gradient();

    let prune_tol = cfg.prune_tol.unwrap_or(1e-10 / m as f64);
    let mut trace = vec![st.objective()];
    let mut iterations = 0;
    let mut gap = st.gap();
    let mut col = Vec::with_capacity(kernel.n);
    let mut dir = Vec::with_capacity(kernel.n);

    let em_budget = match cfg.method {
        Method::Em => usize::MAX,
        Method::FrankWolfe => 0,
        Method::EmThenFw => cfg.em_sweeps,
    };
    let mut em_done = 0;

    // Rounds of: iterate to tolerance, prune, re-check the certificate.
    for _round in 0..4 {
        let mut since_refresh = 0;
        while gap > cfg.gap_tol && iterations < cfg.max_iters {
            if em_done < em_budget {
                st.em_step()?;
                em_done += 1;
            } else {
                let stepped = st.fw_step(&mut col, &mut dir);
                if stepped {
                    st.refresh_gradient();
                }
                let corrected = st.corrective_step(&mut col)?;
                if !stepped && !corrected {
                    // stalled at roundoff; recompute from scratch before giving up
                    st.refresh_s()?;
                    st.refresh_gradient();
                    if !st.fw_step(&mut col, &mut dir) {
                        break;
                    }
                }
                since_refresh += 1;
                if since_refresh >= 50 {
                    st.refresh_s()?;
                    since_refresh = 0;
                } else {
                    st.check_positive()?;
                }
            }
            iterations += 1;
            st.refresh_gradient();
            gap = st.gap();
            trace.push(st.objective());
        }

        let mut pruned = false;
        for w in st.w.iter_mut() {
            if *w != 0.0 && *w < prune_tol {
                *w = 0.0;
                pruned = true;
            }
        }
        let total: f64 = st.w.iter().sum();
        st.w.iter_mut().for_each(|w| *w /= total);
        st.refresh_s()?;
        st.refresh_gradient();
        gap = st.gap();
        if !pruned || gap <= cfg.gap_tol || iterations >= cfg.max_iters {
            break;
        }
    }

    finish(obs, atoms, st.w, gap, iterations, trace, gap <= cfg.gap_tol, obs_weights)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    obs: &Dataset,
    atoms: &Dataset,
    weights: Vec<f64>,
    gap: f64,
    iterations: usize,
    trace: Vec<f64>,
    converged: bool,
    obs_weights: &[f64],
) -> Result<FitResult> {
    let keep: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] > 0.0).collect();
    let kept_atoms = atoms.permuted(&keep);
    let kept_weights: Vec<f64> = keep.iter().map(|&j| weights[j]).collect();
    let mixture = MixingMeasure::from_unnormalized(kept_atoms, kept_weights)?;
    let fitted_log_densities: Vec<f64> = obs.iter().map(|x| mixture.log_density_unchecked(x)).collect();
    let multiplicity = if obs_weights.iter().all(|&w| w == 1.0) {
        None
    } else {
        Some(obs_weights.to_vec())
    };
    Ok(FitResult {
        mixture,
        support_weights: weights,
        fitted_log_densities,
        duality_gap: gap,
        iterations,
        loglik_trace: trace,
        converged,
        weights_multiplicity: multiplicity,
    })
}

/// The certificate `max_j (1/W) Σ_i ω_i A_ij/(A w)_i − 1` at weights `w`.
pub fn duality_gap(obs: &Dataset, atoms: &Dataset, obs_weights: &[f64], w: &[f64]) -> Result<f64> {
    check_inputs(obs, atoms, obs_weights)?;
    if w.len() != atoms.len() {
        return Err(NpmleError::contract(format!(
            "{} weights for {} atoms",
            w.len(),
            atoms.len()
        )));
    }
    if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(NpmleError::contract("weights must lie on the probability simplex"));
    }
    let kernel = Kernel::new(obs, atoms, usize::MAX);
    let mut st = State::new(&kernel, obs_weights, w.to_vec())?;
    st.refresh_gradient();
    Ok(st.gap())
}

/// Builds the support for `strategy` and solves on it.
pub fn fit(data: &Dataset, strategy: SupportStrategy, cfg: &SolverConfig) -> Result<FitResult> {
    let support = build_support(data, strategy)?;
    solve(&support.observations, &support.atoms, &support.obs_weights, cfg)
}
