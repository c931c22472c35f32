//! Full-covariance multivariate normal densities via Cholesky factors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{NpmleError, Result};
use crate::mixture::{Dataset, LN_2PI};

/// `N(mean, cov)` with a cached Cholesky factor of `cov`.
#[derive(Debug, Clone)]
pub struct Mvn {
    mean: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `−(d/2)·ln(2π) − ½·ln det(cov)`
    log_norm: f64,
}

impl Mvn {
    pub fn new(mean: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(NpmleError::contract(format!(
                "covariance is {}x{}, expected {d}x{d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(NpmleError::config("covariance has non-finite entries"));
        }
        let asym = (cov - cov.transpose()).abs().max();
        if asym > 1e-10 * cov.abs().max().max(1.0) {
            return Err(NpmleError::config("covariance matrix is not symmetric"));
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| NpmleError::config("covariance matrix is not positive definite"))?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(NpmleError::Numerical("singular covariance matrix".into()));
        }
        Ok(Mvn {
            mean: mean.to_vec(),
            chol,
            log_norm: -0.5 * d as f64 * LN_2PI - 0.5 * log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(self.dim(), x.iter().zip(&self.mean).map(|(a, b)| a - b));
        let l = self.chol.l_dirty();
        let z = l
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }

    /// `cov⁻¹ · (mean − x)`, the gradient of `log_pdf` at `x`.
    pub fn log_pdf_gradient(&self, x: &[f64]) -> Vec<f64> {
        let diff = DVector::from_iterator(self.dim(), self.mean.iter().zip(x).map(|(m, a)| m - a));
        self.chol.solve(&diff).iter().copied().collect()
    }

    /// `L·z` for a standard normal draw `z`, giving a draw from `N(0, cov)`.
    pub fn transform_standard(&self, z: &[f64]) -> Vec<f64> {
        let z = DVector::from_column_slice(z);
        (self.chol.l() * z).iter().copied().collect()
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(cov: &DMatrix<f64>) -> f64 {
    cov.clone().symmetric_eigenvalues().min()
}

/// Equal-weight mixture `(1/n) Σ_j N(μ_j, Σ_j)` with per-component covariance.
#[derive(Debug, Clone)]
pub struct FullCovMixture {
    dim: usize,
    means: Vec<f64>,
    /// Row-major `L_j⁻¹` for each component.
    inv_factors: Vec<f64>,
    /// Row-major `Σ_j⁻¹` for each component.
    precisions: Vec<f64>,
    log_norms: Vec<f64>,
}

impl FullCovMixture {
    /// Fails with a numerical error when any covariance is not positive definite.
    pub fn new(means: &Dataset, covs: &[DMatrix<f64>]) -> Result<Self> {
        let d = means.dim();
        if covs.len() != means.len() {
            return Err(NpmleError::contract(format!(
                "{} means but {} covariance matrices",
                means.len(),
                covs.len()
            )));
        }
        let n = means.len();
        let mut inv_factors = Vec::with_capacity(n * d * d);
        let mut precisions = Vec::with_capacity(n * d * d);
        let mut log_norms = Vec::with_capacity(n);
        for (j, cov) in covs.iter().enumerate() {
            if cov.nrows() != d || cov.ncols() != d {
                return Err(NpmleError::contract(format!(
                    "covariance {j} is {}x{}, expected {d}x{d}",
                    cov.nrows(),
                    cov.ncols()
                )));
            }
            let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
                NpmleError::Numerical(format!("covariance {j} is singular or not positive definite"))
            })?;
            let l = chol.l();
            let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let linv = l
                .solve_lower_triangular(&DMatrix::identity(d, d))
                .filter(|m| m.iter().all(|v| v.is_finite()) && log_det.is_finite())
                .ok_or_else(|| NpmleError::Numerical(format!("covariance {j} is singular")))?;
            let prec = linv.transpose() * &linv;
            for r in 0..d {
                for c in 0..d {
                    inv_factors.push(linv[(r, c)]);
                    precisions.push(prec[(r, c)]);
                }
            }
            log_norms.push(-0.5 * d as f64 * LN_2PI - 0.5 * log_det);
        }
        Ok(FullCovMixture {
            dim: d,
            means: means.as_flat().to_vec(),
            inv_factors,
            precisions,
            log_norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.log_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_norms.is_empty()
    }

    fn mean(&self, j: usize) -> &[f64] {
        &self.means[j * self.dim..(j + 1) * self.dim]
    }

    /// Component log-densities at `x` into `terms`; returns their maximum.
    fn log_terms(&self, x: &[f64], terms: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut best = f64::NEG_INFINITY;
        let mut diff = [0.0f64; 8];
        let mut heap;
        let diff: &mut [f64] = if d <= 8 {
            &mut diff[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for (j, t) in terms.iter_mut().enumerate() {
            let mu = self.mean(j);
            for k in 0..d {
                diff[k] = x[k] - mu[k];
            }
            let linv = &self.inv_factors[j * d * d..(j + 1) * d * d];
            let mut q = 0.0;
            for r in 0..d {
                let z: f64 = (0..=r).map(|c| linv[r * d + c] * diff[c]).sum();
                q += z * z;
            }
            *t = self.log_norms[j] - 0.5 * q;
            best = best.max(*t);
        }
        best
    }

    /// Turns log terms into normalized responsibilities in place; returns `ln h(x)`.
    fn normalize(&self, terms: &mut [f64], best: f64) -> f64 {
        let mut total = 0.0;
        for t in terms.iter_mut() {
            *t = (*t - best).exp();
            total += *t;
        }
        terms.iter_mut().for_each(|t| *t /= total);
        best + total.ln() - (self.len() as f64).ln()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut terms = vec![0.0; self.len()];
        let best = self.log_terms(x, &mut terms);
        self.normalize(&mut terms, best)
    }

    /// Writes `∇h(x)/h(x) = Σ_j r_j Σ_j⁻¹(μ_j − x)` into `out`; `buf` needs
    /// one slot per component. Returns `ln h(x)`.
    pub fn score_into(&self, x: &[f64], out: &mut [f64], buf: &mut [f64]) -> f64 {
        let d = self.dim;
        let best = self.log_terms(x, buf);
        let lh = self.normalize(buf, best);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, &r) in buf.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let mu = self.mean(j);
            let prec = &self.precisions[j * d * d..(j + 1) * d * d];
            for a in 0..d {
                let g: f64 = (0..d).map(|b| prec[a * d + b] * (mu[b] - x[b])).sum();
                out[a] += r * g;
            }
        }
        lh
    }

    /// Writes the posterior mean `Σ_j r_j μ_j` of the component mean into `out`.
    pub fn posterior_mean_into(&self, x: &[f64], out: &mut [f64], buf: &mut [f64]) {
        let best = self.log_terms(x, buf);
        self.normalize(buf, best);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, &r) in buf.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            for (o, m) in out.iter_mut().zip(self.mean(j)) {
                *o += r * m;
            }
        }
    }
}
