//! Empirical-Bayes and oracle denoisers.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{NpmleError, Result};
use crate::gaussian::{min_eigenvalue, FullCovMixture};
use crate::metrics::mean_squared_error;
use crate::mixture::{log_normalizer, sq_dist, Dataset, MixingMeasure, ScaledMixture};
use crate::solver::{fit, FitResult, SolverConfig};
use crate::support::SupportStrategy;

/// Relative slack allowed when checking `λ_min(Σ_i) ≥ σ_min²`.
const EIGEN_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseResult {
    pub estimates: Dataset,
    pub oracle: Option<Dataset>,
    /// Mean squared distance between estimates and oracle.
    pub risk_vs_oracle: Option<f64>,
    /// Mean squared distance between estimates and the true means.
    pub risk_vs_truth: Option<f64>,
    pub rho_used: f64,
}

/// Fitted-density floor `(2π)^{−d/2}/n`, below which no exemplar-support
/// NPMLE ever evaluates at an observation.
pub fn canonical_rho(n: usize, dim: usize) -> f64 {
    log_normalizer(dim).exp() / n as f64
}

fn check_dims(fit: &MixingMeasure, data: &Dataset) -> Result<()> {
    if fit.dim() != data.dim() {
        return Err(NpmleError::contract(format!(
            "mixture has dimension {}, data has dimension {}",
            fit.dim(),
            data.dim()
        )));
    }
    Ok(())
}

/// `X_i + ∇f(X_i)/max(f(X_i), ρ)`; `rho = None` means no truncation.
pub fn tweedie_denoise(fit: &MixingMeasure, data: &Dataset, rho: Option<f64>) -> Result<DenoiseResult> {
    check_dims(fit, data)?;
    let rho = rho.unwrap_or(0.0);
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(NpmleError::config(format!("rho must be a finite nonnegative number, got {rho}")));
    }
    let d = data.dim();
    let ln_rho = rho.ln();
    let mut out = vec![0.0; data.as_flat().len()];
    out.par_chunks_mut(d).zip(data.as_flat().par_chunks(d)).for_each(|(o, x)| {
        let ln_f = fit.score_into(x, o);
        // below the floor ∇f/ρ = score · f/ρ
        let factor = if ln_f >= ln_rho { 1.0 } else { (ln_f - ln_rho).exp() };
        for (o, &xk) in o.iter_mut().zip(x) {
            *o = xk + factor * *o;
        }
    });
    Ok(DenoiseResult {
        estimates: Dataset::new(d, out)?,
        oracle: None,
        risk_vs_oracle: None,
        risk_vs_truth: None,
        rho_used: rho,
    })
}

/// Posterior means under the prior `truth` and unit Gaussian noise.
pub fn oracle_bayes(truth: &MixingMeasure, data: &Dataset) -> Result<Dataset> {
    Ok(tweedie_denoise(truth, data, None)?.estimates)
}

/// `(1/n) Σ ‖estimate_i − reference_i‖²`.
pub fn denoising_risk(result: &DenoiseResult, reference: &Dataset) -> Result<f64> {
    mean_squared_error(&result.estimates, reference)
}

/// Right-hand side of the oracle-risk bound for a `k`-atom truth:
/// `(k−1)/(2√(2π)) Σ_{j≠l} (p_j + p_l) ‖a_j − a_l‖ exp(−‖a_j − a_l‖²/8)`.
pub fn oracle_risk_bound(truth: &MixingMeasure) -> f64 {
    let live: Vec<usize> = (0..truth.len()).filter(|&j| truth.weights()[j] > 0.0).collect();
    let k = live.len() as f64;
    let p = truth.weights();
    let mut sum = 0.0;
    for &j in &live {
        for &l in &live {
            if j != l {
                let r2 = sq_dist(truth.atom(j), truth.atom(l));
                sum += (p[j] + p[l]) * r2.sqrt() * (-r2 / 8.0).exp();
            }
        }
    }
    (k - 1.0) / (2.0 * (2.0 * std::f64::consts::PI).sqrt()) * sum
}

/// Per-observation covariance model `X_i ~ N(θ_i, Σ_i)` with `Σ_i ⪰ σ_min² I`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroModel {
    pub sigma_min: f64,
    pub sigma_max: Option<f64>,
    pub per_point_cov: Option<Vec<DMatrix<f64>>>,
}

impl HeteroModel {
    pub fn new(sigma_min: f64, sigma_max: Option<f64>, per_point_cov: Option<Vec<DMatrix<f64>>>) -> Result<Self> {
        let model = HeteroModel {
            sigma_min,
            sigma_max,
            per_point_cov,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return Err(NpmleError::contract(format!("sigma_min must be positive, got {}", self.sigma_min)));
        }
        if let Some(s) = self.sigma_max {
            if !(s >= self.sigma_min && s.is_finite()) {
                return Err(NpmleError::contract(format!(
                    "sigma_max = {s} is below sigma_min = {}",
                    self.sigma_min
                )));
            }
        }
        Ok(())
    }

    /// Checks count, shape and `λ_min(Σ_i) ≥ σ_min²` of the per-point covariances.
    pub fn check_covariances(&self, data: &Dataset) -> Result<()> {
        let Some(covs) = &self.per_point_cov else {
            return Ok(());
        };
        if covs.len() != data.len() {
            return Err(NpmleError::contract(format!(
                "{} covariance matrices for {} observations",
                covs.len(),
                data.len()
            )));
        }
        let floor = self.sigma_min * self.sigma_min;
        for (i, cov) in covs.iter().enumerate() {
            if cov.nrows() != data.dim() || cov.ncols() != data.dim() {
                return Err(NpmleError::contract(format!(
                    "covariance {i} is {}x{}, data has dimension {}",
                    cov.nrows(),
                    cov.ncols(),
                    data.dim()
                )));
            }
            let lambda = min_eigenvalue(cov);
            if lambda < floor * (1.0 - EIGEN_SLACK) {
                return Err(NpmleError::contract(format!(
                    "covariance {i} has smallest eigenvalue {lambda}, below sigma_min^2 = {floor}"
                )));
            }
        }
        Ok(())
    }
}

/// Output of [`hetero_fit_and_denoise`].
#[derive(Debug, Clone)]
pub struct HeteroFit {
    /// `σ_min^{−d} f̂(x/σ_min)`.
    pub density: ScaledMixture,
    /// The fit on the scaled data.
    pub fit: FitResult,
    /// Estimates, with the target `θ̆*` as oracle when latents are known.
    pub result: DenoiseResult,
    /// Best separable rule at each observation, when latents are known.
    pub best_separable: Option<Dataset>,
    /// `(1/n) Σ ‖θ̆*_i − T*(X_i)‖²`, when latents are known.
    pub target_discrepancy: Option<f64>,
}

/// Fits the NPMLE to `X/σ_min` and maps Tweedie estimates back by `σ_min`.
///
/// With `latent_means` and `model.per_point_cov` both given, also computes
/// `θ̆*_i = X_i + σ_min² ∇log h(X_i)` with `h = (1/n) Σ_j N(θ_j, Σ_j)`,
/// the best separable rule, and the associated risks.
pub fn hetero_fit_and_denoise(
    data: &Dataset,
    model: &HeteroModel,
    support: SupportStrategy,
    cfg: &SolverConfig,
    rho: Option<f64>,
    latent_means: Option<&Dataset>,
) -> Result<HeteroFit> {
    model.validate()?;
    model.check_covariances(data)?;
    let s = model.sigma_min;
    let scaled = data.scaled(1.0 / s);
    let fitted = fit(&scaled, support, cfg)?;
    let mut result = tweedie_denoise(&fitted.mixture, &scaled, rho)?;
    result.estimates = result.estimates.scaled(s);
    let mut best_separable = None;
    let mut target_discrepancy = None;
    if let Some(means) = latent_means {
        if means.len() != data.len() || means.dim() != data.dim() {
            return Err(NpmleError::contract("latent means must match the data in count and dimension"));
        }
        result.risk_vs_truth = Some(mean_squared_error(&result.estimates, means)?);
        if let Some(covs) = &model.per_point_cov {
            let target = hetero_target(means, covs, data, s)?;
            let separable = best_separable_oracle(means, covs, data)?;
            result.risk_vs_oracle = Some(mean_squared_error(&result.estimates, &target)?);
            target_discrepancy = Some(mean_squared_error(&target, &separable)?);
            result.oracle = Some(target);
            best_separable = Some(separable);
        }
    }
    Ok(HeteroFit {
        density: ScaledMixture::new(fitted.mixture.clone(), s)?,
        fit: fitted,
        result,
        best_separable,
        target_discrepancy,
    })
}

/// `θ̆*_i = X_i + σ_min² ∇log h(X_i)` where `h = (1/n) Σ_j N(θ_j, Σ_j)` is the
/// marginal density under the prior `(1/n) Σ_j N(θ_j, Σ_j − σ_min² I)`.
pub fn hetero_target(means: &Dataset, covs: &[DMatrix<f64>], data: &Dataset, sigma_min: f64) -> Result<Dataset> {
    let h = FullCovMixture::new(means, covs)?;
    if h.dim() != data.dim() {
        return Err(NpmleError::contract("latent and data dimensions differ"));
    }
    let s2 = sigma_min * sigma_min;
    let d = data.dim();
    let mut out = vec![0.0; data.as_flat().len()];
    out.par_chunks_mut(d)
        .zip(data.as_flat().par_chunks(d))
        .for_each_init(
            || vec![0.0; h.len()],
            |buf, (o, x)| {
                h.score_into(x, o, buf);
                for (o, &xk) in o.iter_mut().zip(x) {
                    *o = xk + s2 * *o;
                }
            },
        );
    Dataset::new(d, out)
}

/// `T*(x) = Σ_j θ_j φ(x; θ_j, Σ_j) / Σ_j φ(x; θ_j, Σ_j)` at every observation.
pub fn best_separable_oracle(means: &Dataset, covs: &[DMatrix<f64>], data: &Dataset) -> Result<Dataset> {
    if means.len() != data.len() {
        return Err(NpmleError::contract(format!(
            "{} latents for {} observations",
            means.len(),
            data.len()
        )));
    }
    let h = FullCovMixture::new(means, covs)?;
    if h.dim() != data.dim() {
        return Err(NpmleError::contract("latent and data dimensions differ"));
    }
    let d = data.dim();
    let mut out = vec![0.0; data.as_flat().len()];
    out.par_chunks_mut(d)
        .zip(data.as_flat().par_chunks(d))
        .for_each_init(|| vec![0.0; h.len()], |buf, (o, x)| h.posterior_mean_into(x, o, buf));
    Dataset::new(d, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{hellinger_squared, DistanceMethod};
    use crate::mixture::Noise;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn identity_covs(n: usize, d: usize, var: f64) -> Vec<DMatrix<f64>> {
        vec![DMatrix::identity(d, d) * var; n]
    }

    fn tight() -> SolverConfig {
        SolverConfig {
            gap_tol: 1e-9,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn dirac_fit_returns_atom() {
        let g = MixingMeasure::dirac(&[1.5, -2.0]).unwrap();
        let data = Dataset::new(2, vec![0.0, 0.0, 10.0, 3.0, -4.0, 7.0]).unwrap();
        let r = tweedie_denoise(&g, &data, None).unwrap();
        for p in r.estimates.iter() {
            assert!((p[0] - 1.5).abs() < 1e-12 && (p[1] + 2.0).abs() < 1e-12);
        }
        assert_eq!(r.rho_used, 0.0);
    }

    #[test]
    fn symmetric_pair_fixes_midpoint() {
        let g = MixingMeasure::uniform(Dataset::new(1, vec![0.0, 2.0]).unwrap()).unwrap();
        let r = tweedie_denoise(&g, &Dataset::new(1, vec![1.0]).unwrap(), None).unwrap();
        assert_eq!(r.estimates.point(0), &[1.0]);
        let g = MixingMeasure::uniform(Dataset::new(2, vec![1.0, 2.0, -1.0, -2.0]).unwrap()).unwrap();
        let est = oracle_bayes(&g, &Dataset::new(2, vec![0.0, 0.0]).unwrap()).unwrap();
        assert!(est.point(0).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn truncation_scales_score() {
        let g = MixingMeasure::dirac(&[0.0]).unwrap();
        let data = Dataset::new(1, vec![10.0]).unwrap();
        let f = g.density(&[10.0]).unwrap();
        let rho = 1e-6;
        assert!(f < rho);
        let r = tweedie_denoise(&g, &data, Some(rho)).unwrap();
        // ∇f = −x f
        let expected = 10.0 - 10.0 * f / rho;
        assert!((r.estimates.point(0)[0] - expected).abs() < 1e-12);
        assert!(tweedie_denoise(&g, &data, Some(-1.0)).is_err());
    }

    #[test]
    fn floor_never_binds_on_exemplar_fits() {
        for (seed, d, n) in [(1u64, 1usize, 80usize), (2, 2, 120), (3, 2, 60)] {
            let truth = MixingMeasure::uniform(Dataset::new(d, (0..3 * d).map(|v| v as f64 * 1.5).collect()).unwrap()).unwrap();
            let data = truth.sample(n, &Noise::Identity, seed).unwrap().data;
            let res = fit(&data, SupportStrategy::Exemplar, &tight()).unwrap();
            let rho = canonical_rho(n, d);
            assert!(res.fitted_log_densities.iter().all(|&l| l >= rho.ln() - 1e-12));
            let plain = tweedie_denoise(&res.mixture, &data, None).unwrap();
            let floored = tweedie_denoise(&res.mixture, &data, Some(rho)).unwrap();
            assert_eq!(plain.estimates, floored.estimates);
        }
    }

    #[test]
    fn shrinks_toward_single_cluster() {
        let theta0 = [2.0, -1.0];
        let truth = MixingMeasure::dirac(&theta0).unwrap();
        let data = truth.sample(1000, &Noise::Identity, 41).unwrap().data;
        let res = fit(&data, SupportStrategy::Exemplar, &SolverConfig::default()).unwrap();
        let est = tweedie_denoise(&res.mixture, &data, None).unwrap().estimates;
        let closer = est
            .iter()
            .zip(data.iter())
            .filter(|(e, x)| sq_dist(e, &theta0) <= sq_dist(x, &theta0))
            .count();
        assert!(closer >= 950, "{closer}");
    }

    #[test]
    fn oracle_risk_bound_for_three_atoms() {
        let truth = MixingMeasure::new(
            Dataset::new(2, vec![0.0, 0.0, 0.0, 2.0, 2.0, -2.0]).unwrap(),
            vec![0.25, 0.25, 0.5],
        )
        .unwrap();
        let bound = oracle_risk_bound(&truth);
        // pairs: r=2 (p sum 0.5), r=√8 (0.75), r=√20 (0.75), each counted twice
        let c = 2.0 / (2.0 * (2.0 * std::f64::consts::PI).sqrt());
        let expected = c
            * 2.0
            * (0.5 * 2.0 * (-0.5f64).exp() + 0.75 * 8f64.sqrt() * (-1.0f64).exp() + 0.75 * 20f64.sqrt() * (-2.5f64).exp());
        assert!((bound - expected).abs() < 1e-12);
        assert_eq!(oracle_risk_bound(&MixingMeasure::dirac(&[1.0]).unwrap()), 0.0);
    }

    #[test]
    fn oracle_risk_within_bound_small_scale() {
        let atoms = Dataset::new(2, vec![0.0, 0.0, 0.0, 2.0, 2.0, -2.0]).unwrap();
        let mut coords = Vec::new();
        for (j, count) in [(0usize, 50usize), (1, 50), (2, 100)] {
            for _ in 0..count {
                coords.extend_from_slice(atoms.point(j));
            }
        }
        let latents = Dataset::new(2, coords).unwrap();
        let prior = MixingMeasure::empirical(&latents).unwrap();
        let bound = oracle_risk_bound(&prior);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let reps = 40;
        let risks: Vec<f64> = (0..reps)
            .map(|_| {
                let data = Noise::Identity.perturb(&latents, &mut rng).unwrap();
                let est = oracle_bayes(&prior, &data).unwrap();
                mean_squared_error(&est, &latents).unwrap()
            })
            .collect();
        let mean = risks.iter().sum::<f64>() / reps as f64;
        let sd = (risks.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!(mean <= bound + 3.0 * sd / (reps as f64).sqrt(), "{mean} vs {bound}");
    }

    #[test]
    fn unit_scale_matches_plain_pipeline() {
        let truth = MixingMeasure::uniform(Dataset::new(2, vec![0.0, 0.0, 3.0, 3.0]).unwrap()).unwrap();
        let data = truth.sample(150, &Noise::Identity, 5).unwrap().data;
        let model = HeteroModel::new(1.0, None, Some(identity_covs(150, 2, 1.0))).unwrap();
        let h = hetero_fit_and_denoise(&data, &model, SupportStrategy::Exemplar, &tight(), None, None).unwrap();
        let plain_fit = fit(&data, SupportStrategy::Exemplar, &tight()).unwrap();
        let plain = tweedie_denoise(&plain_fit.mixture, &data, None).unwrap();
        assert_eq!(h.result.estimates, plain.estimates);
        assert_eq!(h.density.mixture, plain_fit.mixture);
        assert_eq!(h.density.scale, 1.0);
    }

    #[test]
    fn scaling_preserves_hellinger() {
        let truth = MixingMeasure::uniform(Dataset::new(1, vec![-2.0, 0.0, 3.0]).unwrap()).unwrap();
        let s = 1.7;
        let sample = truth.sample(300, &Noise::Identity, 9).unwrap();
        // Y = s·X has density s^{-1} f*(y/s)
        let data = sample.data.scaled(s);
        let model = HeteroModel::new(s, None, None).unwrap();
        let h = hetero_fit_and_denoise(&data, &model, SupportStrategy::Exemplar, &tight(), None, None).unwrap();
        let h_star = ScaledMixture::new(truth.clone(), s).unwrap();
        let a = hellinger_squared(&h.density, &h_star, DistanceMethod::Quadrature, None, 0).unwrap().value_sq;
        let b = hellinger_squared(&h.fit.mixture, &truth, DistanceMethod::Quadrature, None, 0).unwrap().value_sq;
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn rejects_covariance_below_floor() {
        let data = Dataset::new(2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let covs = vec![DMatrix::identity(2, 2) * 4.0, DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 2.0])];
        let model = HeteroModel::new(1.5, None, Some(covs)).unwrap();
        let r = hetero_fit_and_denoise(&data, &model, SupportStrategy::Exemplar, &tight(), None, None);
        assert!(matches!(r, Err(NpmleError::Contract(_))));
        assert!(HeteroModel::new(0.0, None, None).is_err());
        assert!(HeteroModel::new(2.0, Some(1.0), None).is_err());
    }

    #[test]
    fn constant_mean_discrepancy_small_scale() {
        let (n, d, var, reps) = (200, 2, 4.0, 40);
        let latents = Dataset::new(d, vec![1.0; n * d]).unwrap();
        let covs = identity_covs(n, d, var);
        let noise = Noise::Isotropic(var);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let vals: Vec<f64> = (0..reps)
            .map(|_| {
                let data = noise.perturb(&latents, &mut rng).unwrap();
                let target = hetero_target(&latents, &covs, &data, 1.0).unwrap();
                let sep = best_separable_oracle(&latents, &covs, &data).unwrap();
                mean_squared_error(&target, &sep).unwrap()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let sd = (vals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let expected = d as f64 * var * (1.0 - 1.0 / var).powi(2);
        assert!((mean - expected).abs() <= 3.0 * sd / (reps as f64).sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn separable_oracle_with_identity_is_oracle_bayes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let latents = Dataset::new(2, (0..60).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let data = Noise::Identity.perturb(&latents, &mut rng).unwrap();
        let sep = best_separable_oracle(&latents, &identity_covs(30, 2, 1.0), &data).unwrap();
        let ob = oracle_bayes(&MixingMeasure::empirical(&latents).unwrap(), &data).unwrap();
        for (a, b) in sep.as_flat().iter().zip(ob.as_flat()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn separable_oracle_edge_cases() {
        let one = Dataset::new(2, vec![0.3, -7.1]).unwrap();
        let x = Dataset::new(2, vec![5.0, 5.0]).unwrap();
        let cov = vec![DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])];
        assert_eq!(best_separable_oracle(&one, &cov, &x).unwrap(), one);

        let two = Dataset::new(2, vec![0.0, 0.0, 20.0, 0.0]).unwrap();
        let x = Dataset::new(2, vec![0.4, -0.2, 19.5, 0.3]).unwrap();
        let est = best_separable_oracle(&two, &identity_covs(2, 2, 1.0), &x).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert!((est.point(i)[k] - two.point(i)[k]).abs() < 1e-6);
            }
        }
        let singular = vec![DMatrix::zeros(2, 2), DMatrix::identity(2, 2)];
        assert!(matches!(best_separable_oracle(&two, &singular, &x), Err(NpmleError::Numerical(_))));
    }

    #[test]
    fn risk_delegates_to_mse() {
        let g = MixingMeasure::dirac(&[0.0]).unwrap();
        let data = Dataset::new(1, vec![1.0, 2.0]).unwrap();
        let r = tweedie_denoise(&g, &data, None).unwrap();
        let reference = Dataset::new(1, vec![1.0, -1.0]).unwrap();
        assert!((denoising_risk(&r, &reference).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(denoising_risk(&r, &r.estimates).unwrap(), 0.0);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, usize)> {
        (1usize..3, 1usize..6).prop_flat_map(|(d, m)| {
            (
                prop::collection::vec(-5.0f64..5.0, m * d),
                prop::collection::vec(0.05f64..1.0, m),
                prop::collection::vec(-8.0f64..8.0, d),
                Just(d),
            )
        })
    }

    proptest! {
        #[test]
        fn tweedie_equals_direct_posterior_mean((atoms, w, x, d) in arb_case()) {
            let g = MixingMeasure::from_unnormalized(Dataset::new(d, atoms).unwrap(), w).unwrap();
            let est = tweedie_denoise(&g, &Dataset::new(d, x.clone()).unwrap(), None).unwrap();
            // Σ p_j a_j φ(x − a_j) / Σ p_j φ(x − a_j), computed with scaled exponents
            let logs: Vec<f64> = (0..g.len()).map(|j| g.weights()[j].ln() - 0.5 * sq_dist(&x, g.atom(j))).collect();
            let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let r: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = r.iter().sum();
            for k in 0..d {
                let pm: f64 = (0..g.len()).map(|j| r[j] * g.atom(j)[k]).sum::<f64>() / total;
                prop_assert!((est.estimates.point(0)[k] - pm).abs() < 1e-10);
            }
        }

        #[test]
        fn translation_equivariance((atoms, w, x, d) in arb_case(), shift in prop::collection::vec(-5.0f64..5.0, 2)) {
            let g = MixingMeasure::from_unnormalized(Dataset::new(d, atoms).unwrap(), w).unwrap();
            let c = &shift[..d];
            let data = Dataset::new(d, x).unwrap();
            let base = tweedie_denoise(&g, &data, None).unwrap().estimates;
            let moved = tweedie_denoise(&g.translated(c), &data.translated(c), None).unwrap().estimates;
            for (a, b) in base.translated(c).as_flat().iter().zip(moved.as_flat()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heteroscedastic_pipeline_reports_risks() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 120;
        let latents = Dataset::new(2, (0..2 * n).map(|i| if i % 4 < 2 { 0.0 } else { 3.0 }).collect()).unwrap();
        let covs: Vec<DMatrix<f64>> = (0..n).map(|i| DMatrix::identity(2, 2) * (1.0 + (i % 3) as f64)).collect();
        let mut coords = Vec::with_capacity(2 * n);
        for (i, cov) in covs.iter().enumerate() {
            let sd = cov[(0, 0)].sqrt();
            for k in 0..2 {
                let z: f64 = rng.sample(StandardNormal);
                coords.push(latents.point(i)[k] + sd * z);
            }
        }
        let data = Dataset::new(2, coords).unwrap();
        let model = HeteroModel::new(1.0, Some(3f64.sqrt()), Some(covs)).unwrap();
        let h = hetero_fit_and_denoise(&data, &model, SupportStrategy::Exemplar, &tight(), None, Some(&latents)).unwrap();
        assert!(h.result.risk_vs_truth.unwrap() >= 0.0);
        assert!(h.result.risk_vs_oracle.unwrap() >= 0.0);
        assert!(h.target_discrepancy.unwrap() >= 0.0);
        assert_eq!(h.result.oracle.as_ref().unwrap().len(), n);
    }
}
