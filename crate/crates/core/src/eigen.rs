//! Top eigenvalues of symmetric positive semidefinite matrices.

use nalgebra::DMatrix;

/// Above this dimension the dense solver is replaced by power iteration.
pub const DENSE_LIMIT: usize = 512;
pub const POWER_TOL: f64 = 1e-8;
pub const POWER_MAX_ITER: usize = 1000;

/// All eigenvalues of a symmetric matrix, sorted descending.
pub fn symmetric_eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let eig = m.clone().symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

/// Largest `k` eigenvalues (descending). Dense solve for small matrices,
/// power iteration with deflation for large ones.
pub fn top_k_eigenvalues(m: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let k = k.min(m.nrows());
    if m.nrows() <= DENSE_LIMIT {
        let mut vals = symmetric_eigenvalues_desc(m);
        vals.truncate(k);
        vals
    } else {
        power_iteration_top_k(m, k, POWER_TOL, POWER_MAX_ITER)
    }
}

/// Power iteration with Hotelling deflation. Intended for PSD input, where
/// the dominant eigenvalue is also the largest.
///
/// Each eigenpair stops when the Rayleigh quotient changes by less than
/// `tol` (relative) or after `max_iter` steps. The start vector is fixed so
/// results are reproducible.
pub fn power_iteration_top_k(m: &DMatrix<f64>, k: usize, tol: f64, max_iter: usize) -> Vec<f64> {
    let n = m.nrows();
    let mut work = m.clone();
    let mut found: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(k);
    let mut vals = Vec::with_capacity(k);
    for _ in 0..k.min(n) {
        // deterministic, non-degenerate start
        let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 101) as f64 / 101.0);
        orthogonalize(&mut v, &found);
        if v.norm() == 0.0 {
            vals.push(0.0);
            continue;
        }
        v.normalize_mut();
        let mut lambda = 0.0;
        for it in 0..max_iter {
            let mut w = &work * &v;
            orthogonalize(&mut w, &found);
            let next = v.dot(&w);
            let nrm = w.norm();
            if nrm == 0.0 {
                lambda = 0.0;
                break;
            }
            v = w / nrm;
            let done = it > 0 && (next - lambda).abs() <= tol * next.abs().max(f64::MIN_POSITIVE);
            lambda = next;
            if done {
                break;
            }
        }
        work -= lambda * &v * v.transpose();
        vals.push(lambda);
        found.push(v);
    }
    vals
}

fn orthogonalize(v: &mut nalgebra::DVector<f64>, basis: &[nalgebra::DVector<f64>]) {
    for b in basis {
        let c = v.dot(b);
        v.axpy(-c, b, 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        // well-separated spectrum 1, 1/2, 1/3, ... rotated by a fixed orthogonal matrix
        let a = DMatrix::from_fn(n, n, |i, j| ((i * 31 + j * 17) % 13) as f64 - 6.0);
        let q = a.qr().q();
        let d = DMatrix::from_fn(n, n, |i, j| if i == j { 10.0 / (i + 1) as f64 } else { 0.0 });
        &q * d * q.transpose()
    }

    #[test]
    fn dense_sorted_desc() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        assert_eq!(top_k_eigenvalues(&m, 2), vec![9.0, 4.0]);
    }

    #[test]
    fn power_matches_dense() {
        let m = spd(20);
        let dense = symmetric_eigenvalues_desc(&m);
        let power = power_iteration_top_k(&m, 4, 1e-12, 5000);
        for (p, d) in power.iter().zip(&dense) {
            assert!((p - d).abs() < 1e-6 * d, "{p} vs {d}");
        }
    }

    #[test]
    fn power_handles_rank_deficiency() {
        let mut m = DMatrix::zeros(5, 5);
        m[(0, 0)] = 3.0;
        let v = power_iteration_top_k(&m, 3, 1e-10, 100);
        assert!((v[0] - 3.0).abs() < 1e-9);
        assert!(v[1].abs() < 1e-9 && v[2].abs() < 1e-9);
    }
}
