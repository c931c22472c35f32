//! Nonnegative least squares in Gram form (Lawson–Hanson active set).
//!
//! Minimizes `½ vᵀ Q v − cᵀ v` over `v ≥ 0` for a symmetric positive
//! semidefinite `Q`, which is `min ‖B v − b‖²` with `Q = BᵀB`, `c = Bᵀb`.

use nalgebra::{DMatrix, DVector};

/// Solves the passive-set system `Q_PP z = c_P`, regularizing if `Q_PP` is
/// numerically singular.
fn solve_passive(q: &DMatrix<f64>, c: &[f64], passive: &[usize]) -> Option<Vec<f64>> {
    let p = passive.len();
    let sub = DMatrix::from_fn(p, p, |a, b| q[(passive[a], passive[b])]);
    let rhs = DVector::from_iterator(p, passive.iter().map(|&j| c[j]));
    let scale = (0..p).map(|a| sub[(a, a)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut m = sub.clone();
        for a in 0..p {
            m[(a, a)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            let z = ch.solve(&rhs);
            if z.iter().all(|v| v.is_finite()) {
                return Some(z.iter().copied().collect());
            }
        }
        jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 100.0 };
    }
    None
}

/// Lawson–Hanson NNLS. `warm` lists indices to start in the passive set.
pub(crate) fn nnls_gram(q: &DMatrix<f64>, c: &[f64], warm: &[usize]) -> Vec<f64> {
    let k = c.len();
    let mut v = vec![0.0; k];
    let mut passive: Vec<usize> = Vec::new();
    let tol = 1e-12 * c.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);

    // warm start: accept the unconstrained solution on `warm` if it is feasible
    if !warm.is_empty() {
        let mut set = warm.to_vec();
        set.sort_unstable();
        set.dedup();
        if let Some(z) = solve_passive(q, c, &set) {
            if z.iter().all(|&x| x > 0.0) {
                for (&j, &x) in set.iter().zip(&z) {
                    v[j] = x;
                }
                passive = set;
            }
        }
    }

    for _outer in 0..3 * k + 10 {
        // negative gradient c − Q v
        let grad: Vec<f64> = (0..k)
            .map(|j| c[j] - (0..k).map(|l| q[(j, l)] * v[l]).sum::<f64>())
            .collect();
        let mut entering = None;
        for j in 0..k {
            if !passive.contains(&j) && grad[j] > tol && entering.is_none_or(|e: usize| grad[j] > grad[e]) {
                entering = Some(j);
            }
        }
        let Some(j) = entering else { break };
        passive.push(j);
        passive.sort_unstable();

        for _inner in 0..k + 5 {
            let Some(z) = solve_passive(q, c, &passive) else {
                return v;
            };
            if z.iter().all(|&x| x > 0.0) {
                v.iter_mut().for_each(|x| *x = 0.0);
                for (&j, &x) in passive.iter().zip(&z) {
                    v[j] = x;
                }
                break;
            }
            // step toward z until the first passive coordinate hits zero
            let mut alpha = 1.0f64;
            for (&j, &x) in passive.iter().zip(&z) {
                if x <= 0.0 {
                    let denom = v[j] - x;
                    if denom > 0.0 {
                        alpha = alpha.min(v[j] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            for (&j, &x) in passive.iter().zip(&z) {
                v[j] += alpha * (x - v[j]);
            }
            passive.retain(|&j| v[j] > 1e-300);
            for j in 0..k {
                if !passive.contains(&j) {
                    v[j] = 0.0;
                }
            }
            if passive.is_empty() {
                break;
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force over all passive sets for tiny problems.
    fn brute(q: &DMatrix<f64>, c: &[f64]) -> f64 {
        let k = c.len();
        let obj = |v: &[f64]| -> f64 {
            let mut acc = 0.0;
            for a in 0..k {
                for b in 0..k {
                    acc += 0.5 * v[a] * q[(a, b)] * v[b];
                }
                acc -= c[a] * v[a];
            }
            acc
        };
        let mut best = 0.0;
        for mask in 1u32..(1 << k) {
            let set: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
            if let Some(z) = solve_passive(q, c, &set) {
                if z.iter().all(|&x| x >= 0.0) {
                    let mut v = vec![0.0; k];
                    for (&j, &x) in set.iter().zip(&z) {
                        v[j] = x;
                    }
                    best = f64::min(best, obj(&v));
                }
            }
        }
        best
    }

    #[test]
    fn matches_enumeration() {
        let bs = [
            vec![1.0, 0.2, 0.0, 0.5, 1.0, 0.3, 0.1, 0.1, 1.0, 0.4, 0.4, 0.4],
            vec![1.0, 0.9, 0.8, 0.9, 1.0, 0.9, 0.8, 0.9, 1.0, 0.1, 0.2, 0.3],
            vec![0.3, -1.0, 0.2, 0.7, 0.5, 0.5, 2.0, 0.1, -0.4, 1.0, 1.0, 1.0],
        ];
        let targets = [vec![1.0, 2.0, 0.5, -1.0], vec![2.0, 2.0, 2.0, 2.0], vec![-1.0, 0.5, 3.0, 0.0]];
        for bflat in &bs {
            let b = DMatrix::from_row_slice(4, 3, bflat);
            for t in &targets {
                let q = b.transpose() * &b;
                let c: Vec<f64> = (b.transpose() * DVector::from_column_slice(t)).iter().copied().collect();
                let v = nnls_gram(&q, &c, &[]);
                assert!(v.iter().all(|&x| x >= 0.0));
                let vv = DVector::from_column_slice(&v);
                let got = 0.5 * (vv.transpose() * &q * &vv)[(0, 0)] - c.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
                let want = brute(&q, &c);
                assert!((got - want).abs() < 1e-10, "{got} vs {want}");
                let warm = nnls_gram(&q, &c, &[0, 1, 2]);
                for (a, b) in v.iter().zip(&warm) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
