//! Per-class moments and per-pair decision-axis geometry.
//!
//! All moments use population (divide-by-`n_c`) estimators. Reductions go
//! through [`crate::sum`] with a fixed tree, so serial and parallel builds
//! agree bit-for-bit.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{DatasetError, EmbeddingDataset, Labeling};
use crate::eigen;
use crate::par;
use crate::rng;
use crate::sum::{dot, pairwise_mean, pairwise_sum_vectors, squared_distance};

const CHUNK_ROWS: usize = 256;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("degenerate pair ({i}, {j}): class means coincide")]
    DegeneratePair { i: u32, j: u32 },
    #[error("class {class} has {count} sample(s); at least {needed} required")]
    TooFewSamples { class: u32, count: usize, needed: usize },
    #[error("axis must be unit norm (got norm {norm})")]
    NonUnitAxis { norm: f64 },
    #[error("axis has dimension {got}, expected {expected}")]
    AxisDimension { got: usize, expected: usize },
    #[error("k = {k} exceeds d - 1 = {max}")]
    RankTooLarge { k: usize, max: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("cannot draw {wanted} distinct pairs from {available}")]
    TooManyPairs { wanted: usize, available: usize },
}

/// Per-class first, second and fourth centred moments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub class_id: u32,
    pub count: usize,
    pub mean: Vec<f64>,
    /// Mean of ‖z − μ‖².
    pub variance: f64,
    /// Mean of ‖z − μ‖⁴.
    pub fourth_moment: f64,
}

/// Geometry of an ordered class pair `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairGeometry {
    pub i: u32,
    pub j: u32,
    /// ‖μ_i − μ_j‖.
    pub gap: f64,
    /// (μ_j − μ_i) / gap.
    pub axis: Vec<f64>,
    pub v_i: f64,
    pub v_j: f64,
    /// (v_i + v_j) / gap².
    pub cdnv: f64,
    /// Class-i variance along the axis over gap².
    pub dir_cdnv: f64,
    /// (M4_i + M4_j) / gap⁴.
    pub theta: f64,
}

/// Split of the pooled pair covariance into the decision-axis component and
/// the spectrum of its orthogonal complement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub i: u32,
    pub j: u32,
    pub axis_variance: f64,
    /// (k, sum of the top-k eigenvalues of P⊥ Σ P⊥).
    pub ortho_cumulative: Vec<(usize, f64)>,
    pub ortho_total: f64,
    pub trace: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdnvAverages {
    pub avg_dir_cdnv: f64,
    pub avg_cdnv: f64,
    pub avg_sqrt_cdnv: f64,
    pub num_classes: usize,
}

fn class_rows<'a>(
    labeling: &Labeling,
    rows: &'a [Vec<usize>],
    class: u32,
) -> Result<&'a [usize], GeometryError> {
    rows.get(class as usize).map(Vec::as_slice).ok_or_else(|| {
        DatasetError::UnknownClass {
            labeling: labeling.name.clone(),
            class,
            classes: labeling.num_classes,
        }
        .into()
    })
}

fn require(class: u32, count: usize, needed: usize) -> Result<(), GeometryError> {
    if count < needed {
        Err(GeometryError::TooFewSamples { class, count, needed })
    } else {
        Ok(())
    }
}

/// Mean of the given rows with a fixed chunked reduction.
pub fn mean_of_rows(ds: &EmbeddingDataset, rows: &[usize]) -> Vec<f64> {
    let d = ds.d();
    let chunks: Vec<&[usize]> = rows.chunks(CHUNK_ROWS).collect();
    let partial = par::map_slice(&chunks, |chunk| {
        let mut acc = vec![0.0; d];
        for &r in *chunk {
            for (a, x) in acc.iter_mut().zip(ds.row(r)) {
                *a += x;
            }
        }
        acc
    });
    let mut mean = pairwise_sum_vectors(&partial, d);
    let n = rows.len() as f64;
    mean.iter_mut().for_each(|x| *x /= n);
    mean
}

/// Moments of an arbitrary row subset.
pub fn stats_for_rows(ds: &EmbeddingDataset, class_id: u32, rows: &[usize]) -> ClassStats {
    let mean = mean_of_rows(ds, rows);
    let sq: Vec<f64> = par::map_slice(rows, |&r| squared_distance(ds.row(r), &mean));
    let sq4: Vec<f64> = sq.iter().map(|s| s * s).collect();
    ClassStats {
        class_id,
        count: rows.len(),
        variance: pairwise_mean(&sq),
        fourth_moment: pairwise_mean(&sq4),
        mean,
    }
}

/// Mean over `rows` of ((z − mean)·axis)², i.e. axisᵀ Σ axis without
/// forming Σ.
pub fn projected_variance(ds: &EmbeddingDataset, rows: &[usize], mean: &[f64], axis: &[f64]) -> f64 {
    let proj: Vec<f64> = par::map_slice(rows, |&r| {
        let p: f64 = ds
            .row(r)
            .iter()
            .zip(mean)
            .zip(axis)
            .map(|((z, m), u)| (z - m) * u)
            .sum();
        p * p
    });
    pairwise_mean(&proj)
}

/// Population covariance of the given rows about `mean` (d×d).
pub fn covariance_of_rows(ds: &EmbeddingDataset, rows: &[usize], mean: &[f64]) -> DMatrix<f64> {
    let centred: Vec<(usize, &[f64])> = rows.iter().map(|&r| (r, mean)).collect();
    scatter(ds, &centred) / rows.len() as f64
}

/// Sum of outer products (z_r − c_r)(z_r − c_r)ᵀ with a fixed reduction.
fn scatter(ds: &EmbeddingDataset, rows: &[(usize, &[f64])]) -> DMatrix<f64> {
    let d = ds.d();
    let chunks: Vec<&[(usize, &[f64])]> = rows.chunks(CHUNK_ROWS).collect();
    let partial = par::map_slice(&chunks, |chunk| {
        let mut acc = vec![0.0; d * d];
        let mut c = vec![0.0; d];
        for &(r, centre) in *chunk {
            for ((x, z), m) in c.iter_mut().zip(ds.row(r)).zip(centre) {
                *x = z - m;
            }
            for a in 0..d {
                let ca = c[a];
                let row = &mut acc[a * d..(a + 1) * d];
                for (dst, cb) in row.iter_mut().zip(&c) {
                    *dst += ca * cb;
                }
            }
        }
        acc
    });
    let total = pairwise_sum_vectors(&partial, d * d);
    DMatrix::from_row_slice(d, d, &total)
}

/// Cached per-class statistics for one labeling.
#[derive(Debug, Clone)]
pub struct LabelingGeometry<'a> {
    pub ds: &'a EmbeddingDataset,
    pub labeling: &'a Labeling,
    pub rows: Vec<Vec<usize>>,
    pub stats: Vec<ClassStats>,
}

impl<'a> LabelingGeometry<'a> {
    pub fn new(ds: &'a EmbeddingDataset, labeling: &str) -> Result<Self, GeometryError> {
        let labeling = ds.labeling(labeling)?;
        let rows = labeling.class_rows();
        let stats = par::map_indexed(rows.len(), |c| stats_for_rows(ds, c as u32, &rows[c]));
        if let Some(s) = stats.iter().find(|s| s.count == 0) {
            return Err(GeometryError::TooFewSamples {
                class: s.class_id,
                count: 0,
                needed: 1,
            });
        }
        Ok(LabelingGeometry { ds, labeling, rows, stats })
    }

    pub fn num_classes(&self) -> usize {
        self.labeling.num_classes
    }

    pub fn class(&self, c: u32) -> Result<&ClassStats, GeometryError> {
        class_rows(self.labeling, &self.rows, c)?;
        Ok(&self.stats[c as usize])
    }

    pub fn pair(&self, i: u32, j: u32) -> Result<PairGeometry, GeometryError> {
        let rows_i = class_rows(self.labeling, &self.rows, i)?;
        class_rows(self.labeling, &self.rows, j)?;
        require(i, rows_i.len(), 2)?;
        pair_from_stats(self.ds, rows_i, &self.stats[i as usize], &self.stats[j as usize])
    }

    /// All ordered pairs `i ≠ j` over `subset`, row-major in subset order.
    pub fn ordered_pairs(&self, subset: &[u32]) -> Result<Vec<PairGeometry>, GeometryError> {
        let idx: Vec<(u32, u32)> = subset
            .iter()
            .flat_map(|&i| subset.iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
            .collect();
        par::map_slice(&idx, |&(i, j)| self.pair(i, j))
            .into_iter()
            .collect()
    }

    /// Class ids `0..K`.
    pub fn all_classes(&self) -> Vec<u32> {
        (0..self.num_classes() as u32).collect()
    }
}

/// Builds a pair from precomputed class stats; `rows_i` are class i's rows.
pub fn pair_from_stats(
    ds: &EmbeddingDataset,
    rows_i: &[usize],
    si: &ClassStats,
    sj: &ClassStats,
) -> Result<PairGeometry, GeometryError> {
    let diff: Vec<f64> = sj.mean.iter().zip(&si.mean).map(|(a, b)| a - b).collect();
    let gap = dot(&diff, &diff).sqrt();
    if !(gap > 0.0) {
        return Err(GeometryError::DegeneratePair {
            i: si.class_id,
            j: sj.class_id,
        });
    }
    let axis: Vec<f64> = diff.iter().map(|x| x / gap).collect();
    let gap2 = gap * gap;
    let on_axis = projected_variance(ds, rows_i, &si.mean, &axis);
    Ok(PairGeometry {
        i: si.class_id,
        j: sj.class_id,
        gap,
        axis,
        v_i: si.variance,
        v_j: sj.variance,
        cdnv: (si.variance + sj.variance) / gap2,
        dir_cdnv: on_axis / gap2,
        theta: (si.fourth_moment + sj.fourth_moment) / (gap2 * gap2),
    })
}

pub fn class_stats(
    ds: &EmbeddingDataset,
    labeling: &str,
    class: u32,
) -> Result<ClassStats, GeometryError> {
    let l = ds.labeling(labeling)?;
    let rows = l.class_rows();
    let r = class_rows(l, &rows, class)?;
    require(class, r.len(), 1)?;
    Ok(stats_for_rows(ds, class, r))
}

pub fn pair_geometry(
    ds: &EmbeddingDataset,
    labeling: &str,
    i: u32,
    j: u32,
) -> Result<PairGeometry, GeometryError> {
    let l = ds.labeling(labeling)?;
    let rows = l.class_rows();
    let ri = class_rows(l, &rows, i)?;
    let rj = class_rows(l, &rows, j)?;
    require(i, ri.len(), 2)?;
    require(j, rj.len(), 1)?;
    let si = stats_for_rows(ds, i, ri);
    let sj = stats_for_rows(ds, j, rj);
    pair_from_stats(ds, ri, &si, &sj)
}

pub fn check_unit(axis: &[f64], d: usize, tol: f64) -> Result<(), GeometryError> {
    if axis.len() != d {
        return Err(GeometryError::AxisDimension {
            got: axis.len(),
            expected: d,
        });
    }
    let norm = dot(axis, axis).sqrt();
    if (norm - 1.0).abs() > tol {
        return Err(GeometryError::NonUnitAxis { norm });
    }
    Ok(())
}

/// uᵀ Σ_c u for a unit axis, via the projected second moment.
pub fn directional_variance(
    ds: &EmbeddingDataset,
    labeling: &str,
    class: u32,
    axis: &[f64],
) -> Result<f64, GeometryError> {
    check_unit(axis, ds.d(), 1e-9)?;
    let l = ds.labeling(labeling)?;
    let rows = l.class_rows();
    let r = class_rows(l, &rows, class)?;
    require(class, r.len(), 2)?;
    let mean = mean_of_rows(ds, r);
    Ok(projected_variance(ds, r, &mean, axis))
}

/// Pooled within-class covariance of classes `i` and `j`, each sample
/// centred at its own class mean.
pub fn pooled_pair_covariance(geo: &LabelingGeometry<'_>, i: u32, j: u32) -> Result<DMatrix<f64>, GeometryError> {
    let ri = class_rows(geo.labeling, &geo.rows, i)?;
    let rj = class_rows(geo.labeling, &geo.rows, j)?;
    let mi = geo.stats[i as usize].mean.as_slice();
    let mj = geo.stats[j as usize].mean.as_slice();
    let rows: Vec<(usize, &[f64])> = ri
        .iter()
        .map(|&r| (r, mi))
        .chain(rj.iter().map(|&r| (r, mj)))
        .collect();
    if rows.len() < 2 {
        return Err(GeometryError::TooFewSamples {
            class: i,
            count: rows.len(),
            needed: 2,
        });
    }
    Ok(scatter(geo.ds, &rows) / rows.len() as f64)
}

/// Splits a covariance into its component along `axis` and the spectrum of
/// the projected-out part.
pub fn decompose_covariance(
    cov: &DMatrix<f64>,
    axis: &[f64],
    ks: &[usize],
) -> Result<(f64, Vec<(usize, f64)>, f64), GeometryError> {
    let d = cov.nrows();
    let max_k = d.saturating_sub(1);
    if let Some(&k) = ks.iter().find(|&&k| k > max_k) {
        return Err(GeometryError::RankTooLarge { k, max: max_k });
    }
    let u = nalgebra::DVector::from_column_slice(axis);
    let su = cov * &u;
    let axis_variance = u.dot(&su);
    // P⊥ Σ P⊥ = Σ − u (Σu)ᵀ − (Σu) uᵀ + (uᵀΣu) u uᵀ
    let proj = cov - &u * su.transpose() - &su * u.transpose()
        + (axis_variance * &u) * u.transpose();
    let proj = (&proj + proj.transpose()) * 0.5;
    let ortho_total = proj.trace();
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let top = eigen::top_k_eigenvalues(&proj, kmax);
    let mut prefix = Vec::with_capacity(top.len() + 1);
    prefix.push(0.0);
    for v in &top {
        prefix.push(prefix.last().unwrap() + v.max(0.0));
    }
    let cumulative = ks.iter().map(|&k| (k, prefix[k])).collect();
    Ok((axis_variance, cumulative, ortho_total))
}

pub fn variance_decomposition_cached(
    geo: &LabelingGeometry<'_>,
    i: u32,
    j: u32,
    ks: &[usize],
) -> Result<DecompositionReport, GeometryError> {
    let d = geo.ds.d();
    if let Some(&k) = ks.iter().find(|&&k| k + 1 > d) {
        return Err(GeometryError::RankTooLarge { k, max: d.saturating_sub(1) });
    }
    let pg = geo.pair(i, j)?;
    let cov = pooled_pair_covariance(geo, i, j)?;
    let trace = cov.trace();
    let (axis_variance, ortho_cumulative, ortho_total) = decompose_covariance(&cov, &pg.axis, ks)?;
    Ok(DecompositionReport {
        i,
        j,
        axis_variance,
        ortho_cumulative,
        ortho_total,
        trace,
    })
}

pub fn variance_decomposition(
    ds: &EmbeddingDataset,
    labeling: &str,
    i: u32,
    j: u32,
    ks: &[usize],
) -> Result<DecompositionReport, GeometryError> {
    let geo = LabelingGeometry::new(ds, labeling)?;
    variance_decomposition_cached(&geo, i, j, ks)
}

/// Averages of Ṽ_ij, V_ij and √V_ij over ordered pairs `i ≠ j`.
pub fn averages_of(pairs: &[PairGeometry], num_classes: usize) -> CdnvAverages {
    let n = pairs.len() as f64;
    let dir: Vec<f64> = pairs.iter().map(|p| p.dir_cdnv).collect();
    let cd: Vec<f64> = pairs.iter().map(|p| p.cdnv).collect();
    let sq: Vec<f64> = pairs.iter().map(|p| p.cdnv.sqrt()).collect();
    CdnvAverages {
        avg_dir_cdnv: crate::sum::pairwise_sum(&dir) / n,
        avg_cdnv: crate::sum::pairwise_sum(&cd) / n,
        avg_sqrt_cdnv: crate::sum::pairwise_sum(&sq) / n,
        num_classes,
    }
}

pub fn cdnv_averages(
    ds: &EmbeddingDataset,
    labeling: &str,
    subset: Option<&[u32]>,
) -> Result<CdnvAverages, GeometryError> {
    let geo = LabelingGeometry::new(ds, labeling)?;
    let all = geo.all_classes();
    let subset = subset.unwrap_or(&all);
    if subset.len() < 2 {
        return Err(GeometryError::TooFewClasses(subset.len()));
    }
    let pairs = geo.ordered_pairs(subset)?;
    Ok(averages_of(&pairs, subset.len()))
}

/// Draws `count` distinct unordered class pairs (without replacement) from
/// `num_classes` classes; each pair is returned as `(min, max)`.
pub fn random_pairs(num_classes: usize, count: usize, seed: u64) -> Result<Vec<(u32, u32)>, GeometryError> {
    let all: Vec<(u32, u32)> = (0..num_classes as u32)
        .flat_map(|i| (i + 1..num_classes as u32).map(move |j| (i, j)))
        .collect();
    if count > all.len() {
        return Err(GeometryError::TooManyPairs {
            wanted: count,
            available: all.len(),
        });
    }
    let mut rng = rng::stream(seed, rng::AUX_STREAM);
    Ok(sample(&mut rng, all.len(), count)
        .into_iter()
        .map(|k| all[k])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Labeling;

    fn ds_from(rows: &[&[f64]], labels: &[u32]) -> EmbeddingDataset {
        let d = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        EmbeddingDataset::new(d, data, vec![Labeling::from_labels("y", labels.to_vec())], "t").unwrap()
    }

    #[test]
    fn two_symmetric_points() {
        let ds = ds_from(&[&[0.0, 0.0], &[2.0, 0.0]], &[0, 0]);
        let s = class_stats(&ds, "y", 0).unwrap();
        assert_eq!(s.mean, vec![1.0, 0.0]);
        assert_eq!(s.variance, 1.0);
        assert_eq!(s.fourth_moment, 1.0);
    }

    #[test]
    fn identical_samples_have_zero_moments() {
        let ds = ds_from(&[&[3.0, -1.0], &[3.0, -1.0], &[3.0, -1.0]], &[0, 0, 0]);
        let s = class_stats(&ds, "y", 0).unwrap();
        assert_eq!((s.variance, s.fourth_moment), (0.0, 0.0));
    }

    #[test]
    fn unit_variance_along_axis() {
        // class 0 at (0,0) with ±1 along e1; class 1 at (4,0)
        let ds = ds_from(
            &[&[-1.0, 0.0], &[1.0, 0.0], &[3.0, 0.0], &[5.0, 0.0]],
            &[0, 0, 1, 1],
        );
        let pg = pair_geometry(&ds, "y", 0, 1).unwrap();
        assert_eq!(pg.gap, 4.0);
        assert_eq!(pg.axis, vec![1.0, 0.0]);
        assert_eq!(pg.dir_cdnv, 1.0 / 16.0);
    }

    #[test]
    fn anisotropic_class_keeps_directional_cdnv() {
        // class 0: covariance diag(1, 100) via the four points (±1, ±10)
        // class 1: same shape around (4, 0)
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for (cx, lab) in [(0.0, 0u32), (4.0, 1)] {
            for (a, b) in [(1.0, 10.0), (1.0, -10.0), (-1.0, 10.0), (-1.0, -10.0)] {
                rows.push(vec![cx + a, b]);
                labels.push(lab);
            }
        }
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let ds = ds_from(&refs, &labels);
        let pg = pair_geometry(&ds, "y", 0, 1).unwrap();
        assert_eq!(pg.dir_cdnv, 1.0 / 16.0);
        assert_eq!(pg.cdnv, 202.0 / 16.0);
        assert_eq!(pg.cdnv, 12.625);
    }

    #[test]
    fn degenerate_pair_is_error() {
        let ds = ds_from(&[&[0.0], &[2.0], &[1.0], &[1.0]], &[0, 0, 1, 1]);
        assert!(matches!(
            pair_geometry(&ds, "y", 0, 1),
            Err(GeometryError::DegeneratePair { i: 0, j: 1 })
        ));
    }

    #[test]
    fn singleton_class_i_rejected() {
        let ds = ds_from(&[&[0.0], &[2.0], &[3.0]], &[0, 1, 1]);
        assert!(matches!(
            pair_geometry(&ds, "y", 0, 1),
            Err(GeometryError::TooFewSamples { class: 0, .. })
        ));
        assert!(pair_geometry(&ds, "y", 1, 0).is_ok());
    }

    #[test]
    fn directional_variance_projects() {
        let ds = ds_from(&[&[-1.0, 5.0], &[1.0, -5.0]], &[0, 0]);
        assert_eq!(directional_variance(&ds, "y", 0, &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(directional_variance(&ds, "y", 0, &[0.0, 1.0]).unwrap(), 25.0);
        assert!(matches!(
            directional_variance(&ds, "y", 0, &[1.0, 1.0]),
            Err(GeometryError::NonUnitAxis { .. })
        ));
    }

    #[test]
    fn decomposition_axis_aligned_diagonal() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let (axis, cum, total) = decompose_covariance(&cov, &[1.0, 0.0], &[1]).unwrap();
        assert_eq!(axis, 4.0);
        assert_eq!(total, 9.0);
        assert!((cum[0].1 - 9.0).abs() < 1e-12);
    }

    #[test]
    fn decomposition_isotropic() {
        let cov = DMatrix::<f64>::identity(10, 10);
        let u: Vec<f64> = (0..10).map(|k| if k < 4 { 0.5 } else { 0.0 }).collect();
        let ks: Vec<usize> = (1..10).collect();
        let (axis, cum, total) = decompose_covariance(&cov, &u, &ks).unwrap();
        assert!((axis - 1.0).abs() < 1e-12);
        assert!((total - 9.0).abs() < 1e-12);
        for (k, c) in cum {
            assert!((c - k as f64).abs() < 1e-9, "k={k} c={c}");
        }
    }

    #[test]
    fn decomposition_rejects_large_k() {
        let cov = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            decompose_covariance(&cov, &[1.0, 0.0, 0.0], &[3]),
            Err(GeometryError::RankTooLarge { k: 3, max: 2 })
        ));
    }

    #[test]
    fn averages_over_two_symmetric_classes() {
        let ds = ds_from(
            &[&[-1.0, 0.0], &[1.0, 0.0], &[3.0, 0.0], &[5.0, 0.0]],
            &[0, 0, 1, 1],
        );
        let avg = cdnv_averages(&ds, "y", None).unwrap();
        assert_eq!(avg.avg_dir_cdnv, 1.0 / 16.0);
        assert_eq!(avg.avg_cdnv, 2.0 / 16.0);
    }

    #[test]
    fn random_pairs_distinct_and_seeded() {
        let a = random_pairs(10, 20, 5).unwrap();
        let b = random_pairs(10, 20, 5).unwrap();
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 20);
        assert!(random_pairs(3, 4, 0).is_err());
    }
}
