//! Adjusted Rand index between two partitions.

use std::collections::HashMap;

use crate::error::{NpmleError, Result};

fn pairs(m: u64) -> f64 {
    (m * m.saturating_sub(1) / 2) as f64
}

/// Chance-corrected pair-counting agreement. Equals 1 for identical
/// partitions up to relabeling, including when both are trivial.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(NpmleError::contract(format!(
            "partitions have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    // integer counts, so the sums below do not depend on hash order
    let index: f64 = table.values().map(|&m| pairs(m)).sum();
    let sum_a: f64 = rows.values().map(|&m| pairs(m)).sum();
    let sum_b: f64 = cols.values().map(|&m| pairs(m)).sum();
    let total = pairs(a.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let a = [0, 0, 1, 1, 2, 2];
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&a, &[5, 5, 3, 3, 9, 9]).unwrap(), 1.0);
        let singletons: Vec<usize> = (0..6).collect();
        assert_eq!(adjusted_rand_index(&singletons, &[0; 6]).unwrap(), 0.0);
        assert_eq!(adjusted_rand_index(&[0; 4], &[1; 4]).unwrap(), 1.0);
        assert!(adjusted_rand_index(&a, &[0, 1]).is_err());
    }

    #[test]
    fn known_value() {
        // contingency [[2,1],[0,2]]: index 2, sums 4 and 4, total 10
        let a = [0, 0, 0, 1, 1];
        let b = [0, 0, 1, 1, 1];
        let expected = (2.0 - 4.0 * 4.0 / 10.0) / (4.0 - 1.6);
        assert!((adjusted_rand_index(&a, &b).unwrap() - expected).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bounded_symmetric_and_relabel_invariant(
            a in prop::collection::vec(0usize..4, 2..40),
            seed in any::<u64>(),
        ) {
            let b: Vec<usize> = a.iter().enumerate().map(|(i, &x)| (x + (seed as usize >> (i % 8))) % 3).collect();
            let ab = adjusted_rand_index(&a, &b).unwrap();
            prop_assert!(ab <= 1.0 + 1e-12);
            prop_assert!((ab - adjusted_rand_index(&b, &a).unwrap()).abs() < 1e-12);
            let relabeled: Vec<usize> = a.iter().map(|&x| 10 - x).collect();
            prop_assert!((adjusted_rand_index(&a, &relabeled).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
