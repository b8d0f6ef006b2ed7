#![allow(dead_code)]

use collapse_cert::dataset::{EmbeddingDataset, Labeling};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dataset(d: usize, rows: &[Vec<f64>], labels: &[u32]) -> EmbeddingDataset {
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    EmbeddingDataset::new(d, data, vec![Labeling::from_labels("y", labels.to_vec())], "test").unwrap()
}

/// `k` classes of `n` points each; class means spread at scale `spread`,
/// noise mixed through a random matrix so covariances are anisotropic.
pub fn random_dataset(seed: u64, k: usize, n: usize, d: usize, spread: f64) -> EmbeddingDataset {
    let mut r = rng(seed);
    let mut data = Vec::with_capacity(k * n * d);
    let mut labels = Vec::with_capacity(k * n);
    for c in 0..k {
        let mean: Vec<f64> = (0..d).map(|_| spread * r.sample::<f64, _>(StandardNormal)).collect();
        let mix: Vec<f64> = (0..d * d).map(|_| r.sample::<f64, _>(StandardNormal) / (d as f64).sqrt()).collect();
        for _ in 0..n {
            let g: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            for a in 0..d {
                let noise: f64 = (0..d).map(|b| mix[a * d + b] * g[b]).sum();
                data.push(mean[a] + noise);
            }
            labels.push(c as u32);
        }
    }
    EmbeddingDataset::new(d, data, vec![Labeling::new("y", k, labels)], "random").unwrap()
}

pub fn random_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal)).qr().q()
}

pub fn random_unit(d: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn rotate(ds: &EmbeddingDataset, q: &DMatrix<f64>) -> EmbeddingDataset {
    let d = ds.d();
    ds.map_rows(|row| (0..d).map(|a| (0..d).map(|b| q[(a, b)] * row[b]).sum()).collect())
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Naive per-class mean and explicit covariance matrix (1/n), by loops.
pub fn explicit_moments(ds: &EmbeddingDataset, class: u32) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = ds.d();
    let labels = &ds.labelings()[0].labels;
    let rows: Vec<&[f64]> = (0..ds.n()).filter(|&i| labels[i] == class).map(|i| ds.row(i)).collect();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in &rows {
        for a in 0..d {
            mean[a] += r[a] / n;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in &rows {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]) / n;
            }
        }
    }
    (mean, cov)
}

pub fn quad(cov: &[Vec<f64>], u: &[f64]) -> f64 {
    let d = u.len();
    (0..d).map(|a| (0..d).map(|b| u[a] * cov[a][b] * u[b]).sum::<f64>()).sum()
}

/// Standard normal CDF via the complementary error function.
pub fn phi(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}
