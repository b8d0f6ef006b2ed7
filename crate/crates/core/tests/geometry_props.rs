mod common;

use collapse_cert::geometry::{
    self, cdnv_averages, class_stats, decompose_covariance, directional_variance, pair_geometry,
    variance_decomposition, LabelingGeometry,
};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn standard_gaussian_moments() {
    // v = d, M4 = d² + 2d for N(0, I_d)
    let mut r = rng(3);
    let n = 1_000_000;
    let d = 4;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rand::Rng::sample::<f64, _>(&mut r, rand_distr::StandardNormal)).collect())
        .collect();
    let ds = dataset(d, &rows, &vec![0; n]);
    let s = class_stats(&ds, "y", 0).unwrap();
    assert!((s.variance - 4.0).abs() < 0.08, "{}", s.variance);
    assert!((s.fourth_moment - 24.0).abs() < 0.48, "{}", s.fourth_moment);
}

#[test]
fn anisotropic_pair_example() {
    // class i: ±1 on e1 and ±10 on e2 independently → diag(1, 100)
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (a, b) in [(1.0, 10.0), (1.0, -10.0), (-1.0, 10.0), (-1.0, -10.0)] {
        rows.push(vec![a, b]);
        labels.push(0);
        rows.push(vec![4.0 + a, b]);
        labels.push(1);
    }
    let ds = dataset(2, &rows, &labels);
    let pg = pair_geometry(&ds, "y", 0, 1).unwrap();
    assert_eq!(pg.gap, 4.0);
    assert_eq!(pg.axis, vec![1.0, 0.0]);
    assert!((pg.dir_cdnv - 1.0 / 16.0).abs() < 1e-15);
    assert!((pg.cdnv - 12.625).abs() < 1e-12);
}

#[test]
fn directional_variance_explicit_oracle_8d() {
    let ds = random_dataset(8, 2, 200, 8, 3.0);
    let mut r = rng(81);
    for _ in 0..10 {
        let u = random_unit(8, &mut r);
        let (_, cov) = explicit_moments(&ds, 0);
        let got = directional_variance(&ds, "y", 0, &u).unwrap();
        assert!(rel_close(got, quad(&cov, &u), 1e-10));
    }
    let bad = vec![1.0; 8];
    assert!(directional_variance(&ds, "y", 0, &bad).is_err());
}

#[test]
fn decomposition_examples() {
    // Σ = diag(4, 9), u = e1
    let cov = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
    let (axis, cum, total) = decompose_covariance(&cov, &[1.0, 0.0], &[1]).unwrap();
    assert!((axis - 4.0).abs() < 1e-14);
    assert!((total - 9.0).abs() < 1e-14);
    assert!((cum[0].1 - 9.0).abs() < 1e-12);
    // isotropic in d = 10
    let mut r = rng(5);
    let u = random_unit(10, &mut r);
    let (axis, cum, total) = decompose_covariance(&DMatrix::identity(10, 10), &u, &[1, 3, 9]).unwrap();
    assert!((axis - 1.0).abs() < 1e-12);
    assert!((total - 9.0).abs() < 1e-12);
    for (k, v) in cum {
        assert!((v - k as f64).abs() < 1e-10, "{k}: {v}");
    }
    assert!(decompose_covariance(&DMatrix::identity(3, 3), &[1.0, 0.0, 0.0], &[3]).is_err());
}

#[test]
fn decomposition_on_dataset_matches_pooled_covariance() {
    // pooled over both classes, each centred at its own mean
    let rows = vec![vec![2.0, 3.0], vec![-2.0, -3.0], vec![12.0, 3.0], vec![8.0, -3.0]];
    let ds = dataset(2, &rows, &[0, 0, 1, 1]);
    let rep = variance_decomposition(&ds, "y", 0, 1, &[1]).unwrap();
    assert!((rep.axis_variance - 4.0).abs() < 1e-12);
    assert!((rep.ortho_total - 9.0).abs() < 1e-12);
    assert!((rep.trace - 13.0).abs() < 1e-12);
    assert!(matches!(
        variance_decomposition(&ds, "y", 0, 1, &[2]),
        Err(geometry::GeometryError::RankTooLarge { .. })
    ));
}

#[test]
fn trace_conservation_16d() {
    let ds = random_dataset(16, 3, 150, 16, 2.0);
    let geo = LabelingGeometry::new(&ds, "y").unwrap();
    for (i, j) in [(0, 1), (1, 2), (0, 2)] {
        let rep = geometry::variance_decomposition_cached(&geo, i, j, &[1, 5, 15]).unwrap();
        assert!(rel_close(rep.axis_variance + rep.ortho_total, rep.trace, 1e-9));
        let vals: Vec<f64> = rep.ortho_cumulative.iter().map(|x| x.1).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        assert!(vals.iter().all(|&v| v <= rep.ortho_total * (1.0 + 1e-12)));
        assert!(rel_close(vals[2], rep.ortho_total, 1e-9));
    }
}

#[test]
fn averages_match_brute_force() {
    let ds = random_dataset(21, 3, 80, 5, 4.0);
    let avg = cdnv_averages(&ds, "y", None).unwrap();
    let mut dir = 0.0;
    let mut cd = 0.0;
    let mut sq = 0.0;
    for i in 0..3u32 {
        for j in 0..3u32 {
            if i == j {
                continue;
            }
            let (mi, ci) = explicit_moments(&ds, i);
            let (mj, cj) = explicit_moments(&ds, j);
            let diff: Vec<f64> = mj.iter().zip(&mi).map(|(a, b)| a - b).collect();
            let g2: f64 = diff.iter().map(|x| x * x).sum();
            let u: Vec<f64> = diff.iter().map(|x| x / g2.sqrt()).collect();
            let vi: f64 = (0..5).map(|a| ci[a][a]).sum();
            let vj: f64 = (0..5).map(|a| cj[a][a]).sum();
            dir += quad(&ci, &u) / g2;
            cd += (vi + vj) / g2;
            sq += ((vi + vj) / g2).sqrt();
        }
    }
    assert!(rel_close(avg.avg_dir_cdnv, dir / 6.0, 1e-12));
    assert!(rel_close(avg.avg_cdnv, cd / 6.0, 1e-12));
    assert!(rel_close(avg.avg_sqrt_cdnv, sq / 6.0, 1e-12));
    assert_eq!(avg.num_classes, 3);
}

#[test]
fn symmetric_two_class_average_equals_pair() {
    let rows = vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![3.0, 0.0], vec![5.0, 0.0]];
    let ds = dataset(2, &rows, &[0, 0, 1, 1]);
    let avg = cdnv_averages(&ds, "y", None).unwrap();
    let pg = pair_geometry(&ds, "y", 0, 1).unwrap();
    assert_eq!(avg.avg_dir_cdnv, pg.dir_cdnv);
}

#[test]
fn random_pairs_are_distinct_and_seeded() {
    let a = geometry::random_pairs(30, 20, 9).unwrap();
    let b = geometry::random_pairs(30, 20, 9).unwrap();
    assert_eq!(a, b);
    let mut s = a.clone();
    s.sort_unstable();
    s.dedup();
    assert_eq!(s.len(), 20);
    assert!(a.iter().all(|&(i, j)| i < j && j < 30));
    assert!(geometry::random_pairs(3, 4, 0).is_err());
}

#[test]
fn degenerate_and_singleton_errors() {
    let rows = vec![vec![1.0], vec![-1.0], vec![2.0], vec![-2.0], vec![9.0]];
    let ds = dataset(1, &rows, &[0, 0, 1, 1, 2]);
    assert!(matches!(
        pair_geometry(&ds, "y", 0, 1),
        Err(geometry::GeometryError::DegeneratePair { .. })
    ));
    assert!(matches!(
        pair_geometry(&ds, "y", 2, 0),
        Err(geometry::GeometryError::TooFewSamples { .. })
    ));
}

fn ratios(ds: &collapse_cert::EmbeddingDataset) -> Vec<f64> {
    let geo = LabelingGeometry::new(ds, "y").unwrap();
    let mut out = Vec::new();
    for pg in geo.ordered_pairs(&geo.all_classes()).unwrap() {
        out.extend([pg.cdnv, pg.dir_cdnv, pg.theta]);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rotation_invariance(seed in 0u64..10_000, d in 2usize..10) {
        let ds = random_dataset(seed, 3, 40, d, 3.0);
        let rot = rotate(&ds, &random_orthogonal(d, seed ^ 0xabc));
        let geo_a = LabelingGeometry::new(&ds, "y").unwrap();
        let geo_b = LabelingGeometry::new(&rot, "y").unwrap();
        for (a, b) in geo_a.stats.iter().zip(&geo_b.stats) {
            prop_assert!(rel_close(a.variance, b.variance, 1e-9));
            prop_assert!(rel_close(a.fourth_moment, b.fourth_moment, 1e-9));
        }
        let pa = geo_a.ordered_pairs(&[0, 1, 2]).unwrap();
        let pb = geo_b.ordered_pairs(&[0, 1, 2]).unwrap();
        for (a, b) in pa.iter().zip(&pb) {
            prop_assert!(rel_close(a.gap, b.gap, 1e-9));
            prop_assert!(rel_close(a.cdnv, b.cdnv, 1e-9));
            prop_assert!(rel_close(a.dir_cdnv, b.dir_cdnv, 1e-9));
            prop_assert!(rel_close(a.theta, b.theta, 1e-9));
        }
        let ks: Vec<usize> = (1..d).collect();
        let ra = geometry::variance_decomposition_cached(&geo_a, 0, 1, &ks).unwrap();
        let rb = geometry::variance_decomposition_cached(&geo_b, 0, 1, &ks).unwrap();
        prop_assert!(rel_close(ra.axis_variance, rb.axis_variance, 1e-9));
        for (x, y) in ra.ortho_cumulative.iter().zip(&rb.ortho_cumulative) {
            prop_assert!(rel_close(x.1, y.1, 1e-9));
        }
    }

    #[test]
    fn scale_equivariance(seed in 0u64..10_000, alpha in 0.01f64..100.0) {
        let ds = random_dataset(seed, 2, 30, 3, 2.0);
        let scaled = ds.map_rows(|r| r.iter().map(|x| alpha * x).collect());
        let a = pair_geometry(&ds, "y", 0, 1).unwrap();
        let b = pair_geometry(&scaled, "y", 0, 1).unwrap();
        prop_assert!(rel_close(b.gap, alpha * a.gap, 1e-12));
        prop_assert!(rel_close(b.v_i, alpha * alpha * a.v_i, 1e-12));
        prop_assert!(rel_close(b.cdnv, a.cdnv, 1e-12));
        prop_assert!(rel_close(b.dir_cdnv, a.dir_cdnv, 1e-12));
        prop_assert!(rel_close(b.theta, a.theta, 1e-12));
        let sa = class_stats(&ds, "y", 0).unwrap();
        let sb = class_stats(&scaled, "y", 0).unwrap();
        prop_assert!(rel_close(sb.fourth_moment, alpha.powi(4) * sa.fourth_moment, 1e-12));
        prop_assert_eq!(ratios(&ds).len(), ratios(&scaled).len());
    }

    #[test]
    fn ordering_and_jensen(seed in 0u64..10_000, d in 1usize..12, k in 2usize..5) {
        let ds = random_dataset(seed, k, 12, d, 1.5);
        let geo = LabelingGeometry::new(&ds, "y").unwrap();
        for s in &geo.stats {
            prop_assert!(s.variance >= 0.0);
            prop_assert!(s.fourth_moment >= s.variance * s.variance * (1.0 - 1e-12));
        }
        for pg in geo.ordered_pairs(&geo.all_classes()).unwrap() {
            prop_assert!(pg.dir_cdnv >= 0.0);
            prop_assert!(pg.dir_cdnv <= pg.cdnv * (1.0 + 1e-12));
            let n: f64 = pg.axis.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
            let rev = geo.pair(pg.j, pg.i).unwrap();
            prop_assert_eq!(rev.gap, pg.gap);
            prop_assert_eq!(rev.cdnv, pg.cdnv);
            prop_assert_eq!(rev.theta, pg.theta);
            for (a, b) in rev.axis.iter().zip(&pg.axis) {
                prop_assert_eq!(*a, -*b);
            }
        }
    }

    #[test]
    fn projected_matches_explicit_covariance(seed in 0u64..10_000, d in 1usize..=32) {
        let ds = random_dataset(seed, 2, 50, d, 2.0);
        let pg = pair_geometry(&ds, "y", 0, 1).unwrap();
        let (_, cov) = explicit_moments(&ds, 0);
        let explicit = quad(&cov, &pg.axis) / (pg.gap * pg.gap);
        prop_assert!(rel_close(pg.dir_cdnv, explicit, 1e-10), "{} vs {}", pg.dir_cdnv, explicit);
    }

    #[test]
    fn trace_conservation(seed in 0u64..10_000, d in 2usize..20) {
        let ds = random_dataset(seed, 2, 25, d, 2.0);
        let rep = variance_decomposition(&ds, "y", 0, 1, &[1, d - 1]).unwrap();
        prop_assert!(rel_close(rep.axis_variance + rep.ortho_total, rep.trace, 1e-9));
        prop_assert!(rep.ortho_cumulative[0].1 <= rep.ortho_cumulative[1].1 + 1e-12);
    }
}
