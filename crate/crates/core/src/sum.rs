//! Order-fixed summation.
//!
//! Parallel and serial code paths both funnel through these routines, so the
//! floating-point reduction tree is a function of the input length only.

const BLOCK: usize = 32;

/// Pairwise (cascade) summation with a fixed tree shape.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise mean; `NaN` for an empty slice.
pub fn pairwise_mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Element-wise pairwise sum of equally sized vectors.
pub fn pairwise_sum_vectors(parts: &[Vec<f64>], dim: usize) -> Vec<f64> {
    match parts.len() {
        0 => vec![0.0; dim],
        1 => parts[0].clone(),
        n => {
            let mid = n / 2;
            let mut left = pairwise_sum_vectors(&parts[..mid], dim);
            let right = pairwise_sum_vectors(&parts[mid..], dim);
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            left
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..10_001).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 10_000.0 * 10_001.0 / 2.0);
    }

    #[test]
    fn pairwise_is_more_accurate_than_naive() {
        let xs = vec![0.1; 1 << 20];
        let naive: f64 = xs.iter().sum();
        let exact = 0.1 * (1u64 << 20) as f64;
        assert!((pairwise_sum(&xs) - exact).abs() <= (naive - exact).abs());
    }

    #[test]
    fn vector_sum() {
        let parts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        assert_eq!(pairwise_sum_vectors(&parts, 2), vec![9.0, 12.0]);
        assert_eq!(pairwise_sum_vectors(&[], 3), vec![0.0; 3]);
    }
}
