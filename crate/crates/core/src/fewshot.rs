//! Seeded Monte Carlo estimation of few-shot NCC error.
//!
//! Each trial draws `m` support points per class, forms empirical centroids,
//! and classifies test points by nearest centroid. Trial `t` uses the
//! ChaCha8 stream `t` keyed by the master seed, and per-trial results are
//! reduced in trial order, so estimates are bitwise reproducible for any
//! worker count.

use rand::seq::index::sample;
use serde::Serialize;
use thiserror::Error;

use crate::certificates::{
    self, AsymptoticVariant, BoundVariant, CertificateError, PairInputs,
};
use crate::dataset::EmbeddingDataset;
use crate::geometry::{mean_of_rows, GeometryError, LabelingGeometry};
use crate::par;
use crate::rng::{self, StreamRng};
use crate::sum::{pairwise_mean, squared_distance};

#[derive(Debug, Error)]
pub enum FewShotError {
    #[error("m = {m} exceeds the {available} training samples of class {class}")]
    ShotsExceedClass { class: u32, m: usize, available: usize },
    #[error("m must be >= 1")]
    ZeroShots,
    #[error("trials must be >= 1")]
    ZeroTrials,
    #[error("class {0} is not available in this source")]
    UnknownClass(u32),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class {class} has no test samples")]
    NoTestSamples { class: u32 },
    #[error("support and test sets overlap for class {class}")]
    Overlap { class: u32 },
    #[error("test fraction must lie in (0, 1), got {0}")]
    BadTestFraction(f64),
    #[error("empty centroid set")]
    NoCentroids,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
}

/// Shots per class; `Infinite` uses the true class means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Shots {
    Finite(usize),
    Infinite,
}

/// Anything that can supply support centroids and test points per class.
pub trait FewShotSource: Sync {
    fn num_classes(&self) -> usize;
    fn dim(&self) -> usize;
    /// Empirical centroid of `m` support draws, or the true mean.
    fn centroid(&self, class: u32, shots: Shots, rng: &mut StreamRng) -> Result<Vec<f64>, FewShotError>;
    /// Calls `f` on every test point of `class` for one trial.
    fn for_each_test(&self, class: u32, rng: &mut StreamRng, f: &mut dyn FnMut(&[f64]));
    /// Population (or full-sample) moments of the ordered pair.
    fn pair_inputs(&self, i: u32, j: u32) -> Result<PairInputs, FewShotError>;
    /// Checks that `shots` is feasible for every class in `classes`.
    fn check_shots(&self, _classes: &[u32], _shots: Shots) -> Result<(), FewShotError> {
        Ok(())
    }
}

/// A per-class generative model with fresh i.i.d. draws.
pub trait ClassSampler: Sync {
    fn num_classes(&self) -> usize;
    fn dim(&self) -> usize;
    fn true_mean(&self, class: usize) -> Vec<f64>;
    /// Writes one draw of `class` into `out`.
    fn draw(&self, class: usize, rng: &mut StreamRng, out: &mut [f64]);
    /// Analytic moments of the ordered pair.
    fn pair_inputs(&self, i: usize, j: usize) -> PairInputs;
}

/// Wraps a [`ClassSampler`]; support and test points are fresh draws.
pub struct GeneratorSource<'a, S: ClassSampler + ?Sized> {
    pub sampler: &'a S,
    pub test_per_class: usize,
}

impl<'a, S: ClassSampler + ?Sized> GeneratorSource<'a, S> {
    pub fn new(sampler: &'a S, test_per_class: usize) -> Self {
        GeneratorSource { sampler, test_per_class }
    }
}

impl<S: ClassSampler + ?Sized> FewShotSource for GeneratorSource<'_, S> {
    fn num_classes(&self) -> usize {
        self.sampler.num_classes()
    }

    fn dim(&self) -> usize {
        self.sampler.dim()
    }

    fn centroid(&self, class: u32, shots: Shots, rng: &mut StreamRng) -> Result<Vec<f64>, FewShotError> {
        let c = class as usize;
        if c >= self.num_classes() {
            return Err(FewShotError::UnknownClass(class));
        }
        match shots {
            Shots::Infinite => Ok(self.sampler.true_mean(c)),
            Shots::Finite(0) => Err(FewShotError::ZeroShots),
            Shots::Finite(m) => {
                let d = self.dim();
                let mut acc = vec![0.0; d];
                let mut buf = vec![0.0; d];
                for _ in 0..m {
                    self.sampler.draw(c, rng, &mut buf);
                    for (a, x) in acc.iter_mut().zip(&buf) {
                        *a += x;
                    }
                }
                let inv = 1.0 / m as f64;
                acc.iter_mut().for_each(|x| *x *= inv);
                Ok(acc)
            }
        }
    }

    fn for_each_test(&self, class: u32, rng: &mut StreamRng, f: &mut dyn FnMut(&[f64])) {
        let mut buf = vec![0.0; self.dim()];
        for _ in 0..self.test_per_class {
            self.sampler.draw(class as usize, rng, &mut buf);
            f(&buf);
        }
    }

    fn pair_inputs(&self, i: u32, j: u32) -> Result<PairInputs, FewShotError> {
        let k = self.num_classes();
        if i as usize >= k {
            return Err(FewShotError::UnknownClass(i));
        }
        if j as usize >= k {
            return Err(FewShotError::UnknownClass(j));
        }
        Ok(self.sampler.pair_inputs(i as usize, j as usize).with_classes(i, j))
    }
}

/// A dataset split once into per-class train and test rows.
pub struct DatasetSource<'a> {
    geo: LabelingGeometry<'a>,
    train: Vec<Vec<usize>>,
    test: Vec<Vec<usize>>,
}

impl<'a> DatasetSource<'a> {
    /// Splits each class with a seeded permutation; the first
    /// `ceil(test_fraction · n_c)` rows become the fixed test set.
    pub fn new(
        ds: &'a EmbeddingDataset,
        labeling: &str,
        test_fraction: f64,
        seed: u64,
    ) -> Result<Self, FewShotError> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(FewShotError::BadTestFraction(test_fraction));
        }
        let geo = LabelingGeometry::new(ds, labeling)?;
        let mut rng = rng::stream(seed, rng::AUX_STREAM);
        let mut train = Vec::with_capacity(geo.rows.len());
        let mut test = Vec::with_capacity(geo.rows.len());
        for rows in &geo.rows {
            let n = rows.len();
            let n_test = ((test_fraction * n as f64).ceil() as usize).min(n);
            let perm = sample(&mut rng, n, n);
            let mut te: Vec<usize> = perm.iter().take(n_test).map(|k| rows[k]).collect();
            let mut tr: Vec<usize> = perm.iter().skip(n_test).map(|k| rows[k]).collect();
            te.sort_unstable();
            tr.sort_unstable();
            test.push(te);
            train.push(tr);
        }
        Ok(DatasetSource { geo, train, test })
    }

    pub fn train_rows(&self, class: u32) -> &[usize] {
        &self.train[class as usize]
    }

    pub fn test_rows(&self, class: u32) -> &[usize] {
        &self.test[class as usize]
    }
}

impl FewShotSource for DatasetSource<'_> {
    fn num_classes(&self) -> usize {
        self.geo.num_classes()
    }

    fn dim(&self) -> usize {
        self.geo.ds.d()
    }

    fn centroid(&self, class: u32, shots: Shots, rng: &mut StreamRng) -> Result<Vec<f64>, FewShotError> {
        let c = class as usize;
        if c >= self.num_classes() {
            return Err(FewShotError::UnknownClass(class));
        }
        match shots {
            Shots::Infinite => Ok(self.geo.stats[c].mean.clone()),
            Shots::Finite(0) => Err(FewShotError::ZeroShots),
            Shots::Finite(m) => {
                let pool = &self.train[c];
                if m > pool.len() {
                    return Err(FewShotError::ShotsExceedClass {
                        class,
                        m,
                        available: pool.len(),
                    });
                }
                let picked: Vec<usize> = sample(rng, pool.len(), m).into_iter().map(|k| pool[k]).collect();
                Ok(mean_of_rows(self.geo.ds, &picked))
            }
        }
    }

    fn for_each_test(&self, class: u32, _rng: &mut StreamRng, f: &mut dyn FnMut(&[f64])) {
        for &r in &self.test[class as usize] {
            f(self.geo.ds.row(r));
        }
    }

    fn pair_inputs(&self, i: u32, j: u32) -> Result<PairInputs, FewShotError> {
        Ok(PairInputs::from(&self.geo.pair(i, j)?))
    }

    fn check_shots(&self, classes: &[u32], shots: Shots) -> Result<(), FewShotError> {
        for &c in classes {
            let tr = self.train.get(c as usize).ok_or(FewShotError::UnknownClass(c))?;
            let te = &self.test[c as usize];
            if te.is_empty() {
                return Err(FewShotError::NoTestSamples { class: c });
            }
            if tr.iter().any(|r| te.binary_search(r).is_ok()) {
                return Err(FewShotError::Overlap { class: c });
            }
            if let Shots::Finite(m) = shots {
                if m > tr.len() {
                    return Err(FewShotError::ShotsExceedClass {
                        class: c,
                        m,
                        available: tr.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Nearest centroid by squared Euclidean distance; ties go to the smallest
/// class id.
pub fn ncc_classify(centroids: &[(u32, Vec<f64>)], z: &[f64]) -> Result<u32, FewShotError> {
    let mut best: Option<(f64, u32)> = None;
    for (c, mu) in centroids {
        let dist = squared_distance(z, mu);
        best = match best {
            Some((bd, bc)) if bd < dist || (bd == dist && bc < *c) => Some((bd, bc)),
            _ => Some((dist, *c)),
        };
    }
    best.map(|(_, c)| c).ok_or(FewShotError::NoCentroids)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewShotConfig {
    /// Class subset; `None` means every class of the source.
    pub classes: Option<Vec<u32>>,
    pub shots: Shots,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedProvenance {
    pub master: u64,
    pub derivation: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewShotEstimate {
    pub classes: Vec<u32>,
    pub shots: Shots,
    pub trials: usize,
    pub mean_error: f64,
    /// `None` for a single trial.
    pub std_error: Option<f64>,
    /// `pair_errors[a][b]`: mean fraction of class `classes[a]` test points
    /// predicted as `classes[b]` (zero on the diagonal).
    pub pair_errors: Vec<Vec<f64>>,
    /// Row sums of `pair_errors`.
    pub class_errors: Vec<f64>,
    pub seed: SeedProvenance,
}

struct TrialOutcome {
    error: f64,
    confusion: Vec<f64>,
}

fn resolve_classes(source: &dyn FewShotSource, classes: Option<&[u32]>) -> Result<Vec<u32>, FewShotError> {
    let cls: Vec<u32> = match classes {
        Some(c) => c.to_vec(),
        None => (0..source.num_classes() as u32).collect(),
    };
    if cls.len() < 2 {
        return Err(FewShotError::TooFewClasses(cls.len()));
    }
    if let Some(&c) = cls.iter().find(|&&c| c as usize >= source.num_classes()) {
        return Err(FewShotError::UnknownClass(c));
    }
    Ok(cls)
}

fn run_trial(
    source: &dyn FewShotSource,
    classes: &[u32],
    shots: Shots,
    rng: &mut StreamRng,
) -> Result<TrialOutcome, FewShotError> {
    let k = classes.len();
    let centroids = classes
        .iter()
        .map(|&c| source.centroid(c, shots, rng).map(|mu| (c, mu)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut confusion = vec![0.0; k * k];
    let mut class_err = Vec::with_capacity(k);
    for (a, &c) in classes.iter().enumerate() {
        let mut counts = vec![0u64; k];
        let mut total = 0u64;
        let mut failure = None;
        source.for_each_test(c, rng, &mut |z| match ncc_classify(&centroids, z) {
            Ok(pred) => {
                let b = classes.iter().position(|&x| x == pred).unwrap_or(a);
                counts[b] += 1;
                total += 1;
            }
            Err(e) => failure = Some(e),
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if total == 0 {
            return Err(FewShotError::NoTestSamples { class: c });
        }
        let mut wrong = 0u64;
        for (b, &n) in counts.iter().enumerate() {
            if b != a {
                confusion[a * k + b] = n as f64 / total as f64;
                wrong += n;
            }
        }
        class_err.push(wrong as f64 / total as f64);
    }
    Ok(TrialOutcome {
        error: class_err.iter().sum::<f64>() / k as f64,
        confusion,
    })
}

/// Monte Carlo estimate of the class-balanced m-shot NCC error.
pub fn run_fewshot_estimate(
    source: &dyn FewShotSource,
    cfg: &FewShotConfig,
) -> Result<FewShotEstimate, FewShotError> {
    if cfg.trials == 0 {
        return Err(FewShotError::ZeroTrials);
    }
    if cfg.shots == Shots::Finite(0) {
        return Err(FewShotError::ZeroShots);
    }
    let classes = resolve_classes(source, cfg.classes.as_deref())?;
    source.check_shots(&classes, cfg.shots)?;
    let outcomes = par::map_indexed(cfg.trials, |t| {
        let mut rng = rng::stream(cfg.seed, t as u64);
        run_trial(source, &classes, cfg.shots, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let k = classes.len();
    let errors: Vec<f64> = outcomes.iter().map(|o| o.error).collect();
    let mean_error = pairwise_mean(&errors);
    let std_error = (cfg.trials > 1).then(|| {
        let dev: Vec<f64> = errors.iter().map(|e| (e - mean_error).powi(2)).collect();
        let var = crate::sum::pairwise_sum(&dev) / (cfg.trials - 1) as f64;
        (var / cfg.trials as f64).sqrt()
    });
    let mut pair_errors = vec![vec![0.0; k]; k];
    let mut cell = Vec::with_capacity(cfg.trials);
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            cell.clear();
            cell.extend(outcomes.iter().map(|o| o.confusion[a * k + b]));
            pair_errors[a][b] = pairwise_mean(&cell);
        }
    }
    let class_errors = pair_errors.iter().map(|row| row.iter().sum()).collect();
    Ok(FewShotEstimate {
        classes,
        shots: cfg.shots,
        trials: cfg.trials,
        mean_error,
        std_error,
        pair_errors,
        class_errors,
        seed: SeedProvenance {
            master: cfg.seed,
            derivation: rng::DERIVATION,
        },
    })
}

/// Known-centroid pairwise error `Pr(Δ_{i→j} ≤ 0)` with
/// `Δ = ‖z − μ_j‖² − ‖z − μ_i‖²`, estimated from `draws` fresh class-i
/// samples. Exact ties count as errors.
pub fn known_centroid_pair_error<S: ClassSampler + ?Sized>(
    sampler: &S,
    i: usize,
    j: usize,
    draws: usize,
    seed: u64,
) -> f64 {
    const CHUNK: usize = 1 << 14;
    let mu_i = sampler.true_mean(i);
    let mu_j = sampler.true_mean(j);
    let chunks = draws.div_ceil(CHUNK);
    let counts = par::map_indexed(chunks, |c| {
        let mut rng = rng::stream(seed, c as u64);
        let n = CHUNK.min(draws - c * CHUNK);
        let mut buf = vec![0.0; sampler.dim()];
        let mut hits = 0u64;
        for _ in 0..n {
            sampler.draw(i, &mut rng, &mut buf);
            if squared_distance(&buf, &mu_j) - squared_distance(&buf, &mu_i) <= 0.0 {
                hits += 1;
            }
        }
        hits
    });
    counts.iter().sum::<u64>() as f64 / draws as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub m: usize,
    pub mc_error: f64,
    pub mc_stderr: Option<f64>,
    pub bound_optimized: Option<f64>,
    pub bound_equal: Option<f64>,
    /// Known-centroid one-sided Chebyshev value (1/C′)ΣΣ 4Ṽ/(1+4Ṽ).
    pub bound_cantelli: f64,
    pub bound_prior: f64,
    /// Known-centroid linear value (1/C′)ΣΣ 4Ṽ.
    pub bound_linear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub classes: Vec<u32>,
    pub trials: usize,
    pub seed: SeedProvenance,
    pub pairs: Vec<PairInputs>,
    pub rows: Vec<SweepRow>,
    pub warnings: Vec<String>,
}

pub const SWEEP_CSV_HEADER: &str =
    "m,mc_error,mc_stderr,bound_optimized,bound_equal,bound_cantelli,bound_prior,bound_linear";

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.17e}"));
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.17e},{},{},{},{:.17e},{:.17e},{:.17e}\n",
                r.m,
                r.mc_error,
                opt(r.mc_stderr),
                opt(r.bound_optimized),
                opt(r.bound_equal),
                r.bound_cantelli,
                r.bound_prior,
                r.bound_linear
            ));
        }
        out
    }
}

/// Ordered pair inputs `i ≠ j` over `classes`, in row-major order.
pub fn ordered_pair_inputs(
    source: &dyn FewShotSource,
    classes: &[u32],
) -> Result<Vec<PairInputs>, FewShotError> {
    classes
        .iter()
        .flat_map(|&i| classes.iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
        .map(|(i, j)| source.pair_inputs(i, j))
        .collect()
}

/// Monte Carlo error next to every certificate, one row per shot count.
/// The trial seed for shot count `m` is `derive_seed(seed, m)`.
pub fn bound_vs_error_sweep(
    source: &dyn FewShotSource,
    classes: Option<&[u32]>,
    m_values: &[usize],
    trials: usize,
    seed: u64,
) -> Result<SweepReport, FewShotError> {
    let classes = resolve_classes(source, classes)?;
    let pairs = ordered_pair_inputs(source, &classes)?;
    let averages = certificates::averages_from_inputs(&pairs)?;
    let bound_cantelli = certificates::multiclass_asymptotic(&pairs, AsymptoticVariant::Cantelli)?;
    let bound_linear = certificates::multiclass_asymptotic(&pairs, AsymptoticVariant::Linear)?;
    let mut warnings = Vec::new();
    if trials == 1 {
        warnings.push("trials = 1: standard error undefined, reported as null".to_string());
    }
    let mut rows = Vec::with_capacity(m_values.len());
    for &m in m_values {
        if m == 0 {
            return Err(FewShotError::ZeroShots);
        }
        let cfg = FewShotConfig {
            classes: Some(classes.clone()),
            shots: Shots::Finite(m),
            trials,
            seed: rng::derive_seed(seed, m as u64),
        };
        let est = run_fewshot_estimate(source, &cfg)?;
        let mut bound = |variant: BoundVariant| match certificates::multiclass_bound(&pairs, m as u64, variant) {
            Ok(b) => Some(b.total),
            Err(e) => {
                warnings.push(format!("m = {m}, {}: {e}", variant.label()));
                None
            }
        };
        let bound_optimized = bound(BoundVariant::Optimized);
        let bound_equal = bound(BoundVariant::Equal);
        if m < certificates::OPTIMIZED_MIN_SHOTS as usize {
            warnings.push(format!("m = {m} is below 10, outside the stated regime of the optimized bound"));
        }
        rows.push(SweepRow {
            m,
            mc_error: est.mean_error,
            mc_stderr: est.std_error,
            bound_optimized,
            bound_equal,
            bound_cantelli,
            bound_prior: certificates::baseline_from_averages(&averages, m as u64),
            bound_linear,
        });
    }
    Ok(SweepReport {
        classes,
        trials,
        seed: SeedProvenance {
            master: seed,
            derivation: rng::DERIVATION,
        },
        pairs,
        rows,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ncc_examples() {
        let c = vec![(0, vec![0.0, 0.0]), (1, vec![4.0, 0.0])];
        assert_eq!(ncc_classify(&c, &[1.0, 0.0]).unwrap(), 0);
        assert_eq!(ncc_classify(&c, &[2.0, 0.0]).unwrap(), 0);
        let flipped = vec![(1, vec![4.0, 0.0]), (0, vec![0.0, 0.0])];
        assert_eq!(ncc_classify(&flipped, &[2.0, 0.0]).unwrap(), 0);
        let s3 = 3f64.sqrt();
        let tri = vec![(0, vec![0.0, 0.0]), (1, vec![2.0, 0.0]), (2, vec![1.0, s3])];
        assert_eq!(ncc_classify(&tri, &[1.0, s3]).unwrap(), 2);
        assert!(matches!(ncc_classify(&[], &[0.0]), Err(FewShotError::NoCentroids)));
    }
}
