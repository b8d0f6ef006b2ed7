//! Synthetic class distributions with closed-form ground truth.
//!
//! * Gaussian classes with isotropic, diagonal or full covariance.
//! * The orthogonal factor model `z = Σ_ℓ (Δ_ℓ/2) t_ℓ v_ℓ + η + ξ` with one
//!   binary labeling per task.
//! * The two-point law on `{t, −a}` that attains the one-sided Chebyshev
//!   bound.
//!
//! All samplers are pure functions of `(spec, n, seed)`; bulk generation is
//! chunked and every chunk gets its own counter-based stream.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::PairInputs;
use crate::dataset::{EmbeddingDataset, Labeling};
use crate::fewshot::ClassSampler;
use crate::par;
use crate::rng::{self, StreamRng};

const GEN_CHUNK: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyntheticError {
    #[error("covariance is not positive semidefinite (smallest eigenvalue {0})")]
    NotPsd(f64),
    #[error("covariance is not symmetric")]
    NotSymmetric,
    #[error("covariance dimension {got} does not match dim {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("gap must be positive, got {0}")]
    NonPositiveGap(f64),
    #[error("task count M = {tasks} exceeds dim = {dim}")]
    TooManyTasks { tasks: usize, dim: usize },
    #[error("need {expected} deltas, got {got}")]
    DeltaCount { got: usize, expected: usize },
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Covariance specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovSpec {
    /// σ² I
    Isotropic(f64),
    /// diag(variances)
    Diagonal(Vec<f64>),
    /// Row-major full matrix.
    Full(Vec<Vec<f64>>),
}

impl CovSpec {
    pub fn to_matrix(&self, dim: usize) -> Result<DMatrix<f64>, SyntheticError> {
        match self {
            CovSpec::Isotropic(s) => {
                if *s < 0.0 {
                    return Err(SyntheticError::NotPsd(*s));
                }
                Ok(DMatrix::identity(dim, dim) * *s)
            }
            CovSpec::Diagonal(v) => {
                if v.len() != dim {
                    return Err(SyntheticError::Dimension { got: v.len(), expected: dim });
                }
                if let Some(&neg) = v.iter().find(|&&x| x < 0.0) {
                    return Err(SyntheticError::NotPsd(neg));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(v)))
            }
            CovSpec::Full(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(SyntheticError::Dimension { got: rows.len(), expected: dim });
                }
                let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
                let scale = m.amax().max(1.0);
                if (&m - m.transpose()).amax() > 1e-12 * scale {
                    return Err(SyntheticError::NotSymmetric);
                }
                Ok(m)
            }
        }
    }
}

/// How a covariance is applied to a standard normal vector.
#[derive(Debug, Clone)]
enum NoiseFactor {
    Scalar(f64),
    Diagonal(Vec<f64>),
    /// Row-major square root `L` with `L Lᵀ = Σ`.
    Dense(Vec<f64>),
}

/// A Gaussian with precomputed square-root factor and moment summaries.
#[derive(Debug, Clone)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    factor: NoiseFactor,
}

/// Symmetric PSD square root `V diag(√λ) Vᵀ`.
fn psd_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, SyntheticError> {
    let eig = cov.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let scale = eig.eigenvalues.amax().max(1e-300);
    if min < -1e-10 * scale {
        return Err(SyntheticError::NotPsd(min));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: &CovSpec) -> Result<Self, SyntheticError> {
        let dim = mean.len();
        let matrix = cov.to_matrix(dim)?;
        let factor = match cov {
            CovSpec::Isotropic(s) => NoiseFactor::Scalar(s.sqrt()),
            CovSpec::Diagonal(v) => NoiseFactor::Diagonal(v.iter().map(|x| x.sqrt()).collect()),
            CovSpec::Full(_) => {
                let l = psd_sqrt(&matrix)?;
                NoiseFactor::Dense(l.transpose().as_slice().to_vec())
            }
        };
        Ok(Gaussian { mean, cov: matrix, factor })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn draw(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let d = self.dim();
        match &self.factor {
            NoiseFactor::Scalar(s) => {
                for (o, m) in out.iter_mut().zip(&self.mean) {
                    let g: f64 = rng.sample(StandardNormal);
                    *o = m + s * g;
                }
            }
            NoiseFactor::Diagonal(sd) => {
                for ((o, m), s) in out.iter_mut().zip(&self.mean).zip(sd) {
                    let g: f64 = rng.sample(StandardNormal);
                    *o = m + s * g;
                }
            }
            NoiseFactor::Dense(l) => {
                let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                for (r, o) in out.iter_mut().enumerate() {
                    let row = &l[r * d..(r + 1) * d];
                    *o = self.mean[r] + row.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }

    /// tr Σ, the mean of ‖z − μ‖².
    pub fn total_variance(&self) -> f64 {
        self.cov.trace()
    }

    /// E‖z − μ‖⁴ = (tr Σ)² + 2 tr(Σ²).
    pub fn fourth_moment(&self) -> f64 {
        let t = self.cov.trace();
        t * t + 2.0 * (&self.cov * &self.cov).trace()
    }

    pub fn axis_variance(&self, axis: &[f64]) -> f64 {
        let u = DVector::from_column_slice(axis);
        u.dot(&(&self.cov * &u))
    }
}

/// Population pair moments of two distributions with known summaries.
pub fn analytic_pair(
    mean_i: &[f64],
    mean_j: &[f64],
    v_i: f64,
    v_j: f64,
    m4_i: f64,
    m4_j: f64,
    axis_var_i: impl Fn(&[f64]) -> f64,
) -> PairInputs {
    let diff: Vec<f64> = mean_j.iter().zip(mean_i).map(|(a, b)| a - b).collect();
    let gap = crate::sum::norm(&diff);
    let axis: Vec<f64> = diff.iter().map(|x| x / gap).collect();
    let g2 = gap * gap;
    PairInputs {
        i: 0,
        j: 1,
        gap,
        v_i,
        v_j,
        dir_cdnv: axis_var_i(&axis) / g2,
        cdnv: (v_i + v_j) / g2,
        theta: (m4_i + m4_j) / (g2 * g2),
    }
}

/// Independent Gaussian classes.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    pub classes: Vec<Gaussian>,
}

impl ClassSampler for GaussianMixture {
    fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn dim(&self) -> usize {
        self.classes[0].dim()
    }

    fn true_mean(&self, class: usize) -> Vec<f64> {
        self.classes[class].mean.clone()
    }

    fn draw(&self, class: usize, rng: &mut StreamRng, out: &mut [f64]) {
        self.classes[class].draw(rng, out);
    }

    fn pair_inputs(&self, i: usize, j: usize) -> PairInputs {
        let (a, b) = (&self.classes[i], &self.classes[j]);
        analytic_pair(
            &a.mean,
            &b.mean,
            a.total_variance(),
            b.total_variance(),
            a.fourth_moment(),
            b.fourth_moment(),
            |u| a.axis_variance(u),
        )
        .with_classes(i as u32, j as u32)
    }
}

impl GaussianMixture {
    /// Draws `n_per_class` points from every class into a dataset with one
    /// labeling named `"class"`.
    pub fn sample(&self, n_per_class: usize, seed: u64, source: &str) -> EmbeddingDataset {
        sample_classes(self, n_per_class, seed, source)
    }
}

/// `n_per_class` draws from each class of `sampler`, rows grouped by class,
/// with one labeling named `"class"`.
pub fn sample_classes<S: ClassSampler + ?Sized>(
    sampler: &S,
    n_per_class: usize,
    seed: u64,
    source: &str,
) -> EmbeddingDataset {
    let d = sampler.dim();
    let k = sampler.num_classes();
    let n = n_per_class * k;
    let mut data = vec![0.0; n * d];
    par::fill_chunks(&mut data, GEN_CHUNK * d, |chunk, out| {
        let mut rng = rng::stream(seed, chunk as u64);
        for (r, row) in out.chunks_mut(d).enumerate() {
            let idx = chunk * GEN_CHUNK + r;
            sampler.draw(idx / n_per_class, &mut rng, row);
        }
    });
    let labels = (0..n).map(|i| (i / n_per_class) as u32).collect();
    EmbeddingDataset::new(d, data, vec![Labeling::new("class", k, labels)], source)
        .expect("shape is consistent by construction")
}

/// Analytic moments of every ordered pair of a sampler.
pub fn analytic_pairs<S: ClassSampler + ?Sized>(sampler: &S) -> Vec<PairInputs> {
    let k = sampler.num_classes();
    (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| sampler.pair_inputs(i, j))
        .collect()
}

/// Two Gaussian classes with means at ∓(gap/2)·e1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPairSpec {
    pub dim: usize,
    pub gap: f64,
    pub cov_i: CovSpec,
    pub cov_j: CovSpec,
}

impl GaussianPairSpec {
    pub fn isotropic(dim: usize, gap: f64, variance: f64) -> Self {
        GaussianPairSpec {
            dim,
            gap,
            cov_i: CovSpec::Isotropic(variance),
            cov_j: CovSpec::Isotropic(variance),
        }
    }

    pub fn build(&self) -> Result<GaussianMixture, SyntheticError> {
        if !(self.gap > 0.0) {
            return Err(SyntheticError::NonPositiveGap(self.gap));
        }
        if self.dim == 0 {
            return Err(SyntheticError::Invalid("dim must be >= 1".into()));
        }
        let mut mi = vec![0.0; self.dim];
        let mut mj = vec![0.0; self.dim];
        mi[0] = -self.gap / 2.0;
        mj[0] = self.gap / 2.0;
        Ok(GaussianMixture {
            classes: vec![Gaussian::new(mi, &self.cov_i)?, Gaussian::new(mj, &self.cov_j)?],
        })
    }

    pub fn sample_dataset(&self, n_per_class: usize, seed: u64) -> Result<EmbeddingDataset, SyntheticError> {
        Ok(self.build()?.sample(n_per_class, seed, "synthetic:gaussian_pair"))
    }
}

pub fn sample_gaussian_pair(
    spec: &GaussianPairSpec,
    n_per_class: usize,
    seed: u64,
) -> Result<EmbeddingDataset, SyntheticError> {
    spec.sample_dataset(n_per_class, seed)
}

/// Covariance of the on-axis noise ξ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiCov {
    Isotropic(f64),
    Full(Vec<Vec<f64>>),
}

/// Orthogonal factor model with `tasks` independent balanced binary tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelSpec {
    pub dim: usize,
    pub tasks: usize,
    pub deltas: Vec<f64>,
    /// Per-dimension variance of η on span{v_ℓ}^⊥.
    pub eta_variance: f64,
    pub xi: XiCov,
    pub frame_seed: u64,
}

/// A factor model with its orthonormal frame materialised.
#[derive(Debug, Clone)]
pub struct FactorModel {
    pub spec: FactorModelSpec,
    /// `dim × tasks`, orthonormal columns v_ℓ.
    pub frame: DMatrix<f64>,
    xi: Gaussian,
    /// Covariance of η + ξ.
    noise_cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskPrediction {
    pub labeling: String,
    pub delta: f64,
    /// v_ℓᵀ Cov(ξ) v_ℓ / Δ_ℓ².
    pub dir_cdnv: f64,
    /// Exact population CDNV of the task.
    pub cdnv: f64,
    /// 2 tr Cov(η) / Δ_ℓ².
    pub cdnv_lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorAnalytic {
    pub tasks: Vec<TaskPrediction>,
    pub eta_trace: f64,
    pub xi_trace: f64,
    /// max |VᵀV − I|.
    pub frame_gram_residual: f64,
}

pub fn task_name(task: usize) -> String {
    format!("task{}", task + 1)
}

impl FactorModelSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.tasks > self.dim {
            return Err(SyntheticError::TooManyTasks { tasks: self.tasks, dim: self.dim });
        }
        if self.tasks == 0 {
            return Err(SyntheticError::Invalid("tasks must be >= 1".into()));
        }
        if self.deltas.len() != self.tasks {
            return Err(SyntheticError::DeltaCount { got: self.deltas.len(), expected: self.tasks });
        }
        if let Some(&d) = self.deltas.iter().find(|&&d| !(d > 0.0)) {
            return Err(SyntheticError::NonPositiveGap(d));
        }
        if !(self.eta_variance >= 0.0) {
            return Err(SyntheticError::Invalid(format!("eta_variance = {}", self.eta_variance)));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<FactorModel, SyntheticError> {
        self.validate()?;
        let (d, m) = (self.dim, self.tasks);
        let mut rng = rng::stream(self.frame_seed, rng::AUX_STREAM);
        let g = DMatrix::from_fn(d, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let frame = q.columns(0, m).into_owned();
        let xi_spec = match &self.xi {
            XiCov::Isotropic(s) => CovSpec::Isotropic(*s),
            XiCov::Full(rows) => CovSpec::Full(rows.clone()),
        };
        let xi = Gaussian::new(vec![0.0; d], &xi_spec)?;
        let proj = DMatrix::identity(d, d) - &frame * frame.transpose();
        let noise_cov = &proj * self.eta_variance + &xi.cov;
        Ok(FactorModel { spec: self.clone(), frame, xi, noise_cov })
    }
}

impl FactorModel {
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn axis(&self, task: usize) -> Vec<f64> {
        self.frame.column(task).iter().copied().collect()
    }

    pub fn frame_gram_residual(&self) -> f64 {
        let m = self.spec.tasks;
        (self.frame.transpose() * &self.frame - DMatrix::identity(m, m)).amax()
    }

    pub fn eta_trace(&self) -> f64 {
        self.spec.eta_variance * (self.spec.dim - self.spec.tasks) as f64
    }

    /// Writes one draw with task signs `signs` (±1) into `out`.
    pub fn draw_with_signs(&self, signs: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let d = self.dim();
        // η = P⊥ g · √var
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let s = self.spec.eta_variance.sqrt();
        let coef: Vec<f64> = (0..self.spec.tasks)
            .map(|l| self.frame.column(l).iter().zip(&g).map(|(a, b)| a * b).sum())
            .collect();
        self.xi.draw(rng, out);
        for r in 0..d {
            let mut eta = g[r];
            let mut signal = 0.0;
            for (l, c) in coef.iter().enumerate() {
                let v = self.frame[(r, l)];
                eta -= c * v;
                signal += 0.5 * self.spec.deltas[l] * signs[l] * v;
            }
            out[r] += signal + s * eta;
        }
    }

    /// Samples `n` points; labeling `task{ℓ}` holds 1 for t_ℓ = +1, else 0.
    pub fn sample(&self, n: usize, seed: u64) -> EmbeddingDataset {
        let d = self.dim();
        let m = self.spec.tasks;
        let mut data = vec![0.0; n * d];
        let mut signs = vec![0u32; n * m];
        {
            let rows: Vec<(Vec<f64>, Vec<u32>)> = par::map_indexed(n.div_ceil(GEN_CHUNK), |chunk| {
                let mut rng = rng::stream(seed, chunk as u64);
                let len = GEN_CHUNK.min(n - chunk * GEN_CHUNK);
                let mut out = vec![0.0; len * d];
                let mut labs = vec![0u32; len * m];
                let mut t = vec![0.0; m];
                for r in 0..len {
                    for (l, tl) in t.iter_mut().enumerate() {
                        let up: bool = rng.random();
                        *tl = if up { 1.0 } else { -1.0 };
                        labs[r * m + l] = up as u32;
                    }
                    self.draw_with_signs(&t, &mut rng, &mut out[r * d..(r + 1) * d]);
                }
                (out, labs)
            });
            let mut off = 0;
            for (out, labs) in rows {
                let rows_here = out.len() / d.max(1);
                data[off * d..off * d + out.len()].copy_from_slice(&out);
                signs[off * m..off * m + labs.len()].copy_from_slice(&labs);
                off += rows_here;
            }
        }
        let labelings = (0..m)
            .map(|l| Labeling::new(task_name(l), 2, (0..n).map(|i| signs[i * m + l]).collect()))
            .collect();
        EmbeddingDataset::new(d, data, labelings, "synthetic:factor_model")
            .expect("shape is consistent by construction")
    }

    /// Per-class total variance of task ℓ: Σ_{k≠ℓ}(Δ_k/2)² + tr Cov(η) + tr Cov(ξ).
    fn task_class_variance(&self, task: usize) -> f64 {
        let other: f64 = self
            .spec
            .deltas
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != task)
            .map(|(_, dk)| 0.25 * dk * dk)
            .sum();
        other + self.noise_cov.trace()
    }

    /// Per-class E‖z − μ‖⁴ for task ℓ. With s = Σ_{k≠ℓ} c_k t_k v_k
    /// (‖s‖² = S fixed) and Gaussian g = η + ξ with covariance Σ_g:
    /// (S + tr Σ_g)² + 2 tr(Σ_g²) + 4 Σ_{k≠ℓ} c_k² v_kᵀ Σ_g v_k.
    fn task_class_fourth_moment(&self, task: usize) -> f64 {
        let sg = &self.noise_cov;
        let mut s = 0.0;
        let mut cross = 0.0;
        for (k, dk) in self.spec.deltas.iter().enumerate() {
            if k == task {
                continue;
            }
            let c2 = 0.25 * dk * dk;
            s += c2;
            let v = self.frame.column(k);
            cross += c2 * v.dot(&(sg * v));
        }
        let t = s + sg.trace();
        t * t + 2.0 * (sg * sg).trace() + 4.0 * cross
    }

    pub fn analytic(&self) -> FactorAnalytic {
        let eta_trace = self.eta_trace();
        let tasks = (0..self.spec.tasks)
            .map(|l| {
                let delta = self.spec.deltas[l];
                let d2 = delta * delta;
                let axis = self.axis(l);
                TaskPrediction {
                    labeling: task_name(l),
                    delta,
                    dir_cdnv: self.xi.axis_variance(&axis) / d2,
                    cdnv: 2.0 * self.task_class_variance(l) / d2,
                    cdnv_lower_bound: 2.0 * eta_trace / d2,
                }
            })
            .collect();
        FactorAnalytic {
            tasks,
            eta_trace,
            xi_trace: self.xi.total_variance(),
            frame_gram_residual: self.frame_gram_residual(),
        }
    }

    /// Class sampler for one task (class 0: t = −1, class 1: t = +1).
    pub fn task(&self, task: usize) -> FactorTask<'_> {
        FactorTask { model: self, task }
    }
}

pub fn sample_factor_model(spec: &FactorModelSpec, n: usize, seed: u64) -> Result<(EmbeddingDataset, FactorAnalytic), SyntheticError> {
    let model = spec.build()?;
    Ok((model.sample(n, seed), model.analytic()))
}

/// One task of a factor model viewed as a two-class distribution.
pub struct FactorTask<'a> {
    model: &'a FactorModel,
    task: usize,
}

impl ClassSampler for FactorTask<'_> {
    fn num_classes(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn true_mean(&self, class: usize) -> Vec<f64> {
        let sign = if class == 1 { 0.5 } else { -0.5 };
        let delta = self.model.spec.deltas[self.task];
        self.model.axis(self.task).iter().map(|v| sign * delta * v).collect()
    }

    fn draw(&self, class: usize, rng: &mut StreamRng, out: &mut [f64]) {
        let signs: Vec<f64> = (0..self.model.spec.tasks)
            .map(|l| {
                if l == self.task {
                    if class == 1 { 1.0 } else { -1.0 }
                } else if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        self.model.draw_with_signs(&signs, rng, out);
    }

    fn pair_inputs(&self, i: usize, j: usize) -> PairInputs {
        let v = self.model.task_class_variance(self.task);
        let m4 = self.model.task_class_fourth_moment(self.task);
        // class covariance = Σ_{k≠ℓ} c_k² v_k v_kᵀ + Σ_g; the first part is orthogonal to v_ℓ
        let sg = &self.model.noise_cov;
        let frame = &self.model.frame;
        let deltas = &self.model.spec.deltas;
        let task = self.task;
        analytic_pair(&self.true_mean(i), &self.true_mean(j), v, v, m4, m4, |u| {
            let uv = DVector::from_column_slice(u);
            let mut acc = uv.dot(&(sg * &uv));
            for (k, dk) in deltas.iter().enumerate() {
                if k != task {
                    let p = frame.column(k).dot(&uv);
                    acc += 0.25 * dk * dk * p * p;
                }
            }
            acc
        })
        .with_classes(i as u32, j as u32)
    }
}

/// Mean-zero two-point law on `{t, −a}` with variance σ².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPointSpec {
    pub sigma2: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoPointLaw {
    pub sigma2: f64,
    pub t: f64,
    /// Magnitude of the negative atom, σ²/t.
    pub a: f64,
    /// Pr(X = t) = σ²/(σ² + t²).
    pub p: f64,
}

impl TwoPointSpec {
    pub fn law(&self) -> Result<TwoPointLaw, SyntheticError> {
        if !(self.sigma2 > 0.0) {
            return Err(SyntheticError::Invalid(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.t > 0.0) {
            return Err(SyntheticError::Invalid(format!("t must be positive, got {}", self.t)));
        }
        Ok(TwoPointLaw {
            sigma2: self.sigma2,
            t: self.t,
            a: self.sigma2 / self.t,
            p: self.sigma2 / (self.sigma2 + self.t * self.t),
        })
    }
}

impl TwoPointLaw {
    pub fn mean(&self) -> f64 {
        self.p * self.t - (1.0 - self.p) * self.a
    }

    pub fn variance(&self) -> f64 {
        self.p * self.t * self.t + (1.0 - self.p) * self.a * self.a
    }

    pub fn fourth_moment(&self) -> f64 {
        self.p * self.t.powi(4) + (1.0 - self.p) * self.a.powi(4)
    }

    pub fn draw(&self, rng: &mut StreamRng) -> f64 {
        if rng.random::<f64>() < self.p {
            self.t
        } else {
            -self.a
        }
    }

    /// `n` draws, chunked by counter-based streams.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut out = vec![0.0; n];
        par::fill_chunks(&mut out, GEN_CHUNK * 16, |chunk, buf| {
            let mut rng = rng::stream(seed, chunk as u64);
            buf.iter_mut().for_each(|x| *x = self.draw(&mut rng));
        });
        out
    }
}

/// Draws plus the exact law.
pub fn two_point_extremizer(spec: &TwoPointSpec, n: usize, seed: u64) -> Result<(Vec<f64>, TwoPointLaw), SyntheticError> {
    let law = spec.law()?;
    Ok((law.sample(n, seed), law))
}

/// A gap-`gap` class pair in `dim` dimensions whose class-i fluctuation is
/// the two-point law along the decision axis with threshold gap/2. Class j
/// carries the mirrored law.
#[derive(Debug, Clone, Copy)]
pub struct TwoPointPair {
    pub dim: usize,
    pub gap: f64,
    pub law: TwoPointLaw,
}

impl TwoPointPair {
    pub fn new(dim: usize, gap: f64, sigma2: f64) -> Result<Self, SyntheticError> {
        if dim == 0 {
            return Err(SyntheticError::Invalid("dim must be >= 1".into()));
        }
        if !(gap > 0.0) {
            return Err(SyntheticError::NonPositiveGap(gap));
        }
        let law = TwoPointSpec { sigma2, t: gap / 2.0 }.law()?;
        Ok(TwoPointPair { dim, gap, law })
    }
}

impl ClassSampler for TwoPointPair {
    fn num_classes(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn true_mean(&self, class: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        if class == 1 {
            m[0] = self.gap;
        }
        m
    }

    fn draw(&self, class: usize, rng: &mut StreamRng, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let x = self.law.draw(rng);
        out[0] = if class == 1 { self.gap - x } else { x };
    }

    fn pair_inputs(&self, i: usize, j: usize) -> PairInputs {
        let v = self.law.variance();
        let m4 = self.law.fourth_moment();
        analytic_pair(&self.true_mean(i), &self.true_mean(j), v, v, m4, m4, |u| v * u[0] * u[0])
            .with_classes(i as u32, j as u32)
    }
}

/// Specs accepted by the command line, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    GaussianPair(GaussianPairSpec),
    FactorModel(FactorModelSpec),
    TwoPoint { dim: usize, gap: f64, sigma2: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_law_values() {
        let law = TwoPointSpec { sigma2: 1.0, t: 2.0 }.law().unwrap();
        assert_eq!(law.a, 0.5);
        assert!((law.p - 0.2).abs() < 1e-15);
        assert!(law.mean().abs() < 1e-15);
        assert!((law.variance() - 1.0).abs() < 1e-15);
        assert!(TwoPointSpec { sigma2: 0.0, t: 1.0 }.law().is_err());
        assert!(TwoPointSpec { sigma2: 1.0, t: -1.0 }.law().is_err());
    }

    #[test]
    fn gaussian_fourth_moment_standard() {
        let g = Gaussian::new(vec![0.0; 4], &CovSpec::Isotropic(1.0)).unwrap();
        assert_eq!(g.total_variance(), 4.0);
        assert_eq!(g.fourth_moment(), 24.0);
    }

    #[test]
    fn full_cov_checks() {
        let bad = CovSpec::Full(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(Gaussian::new(vec![0.0; 2], &bad), Err(SyntheticError::NotPsd(_))));
        let asym = CovSpec::Full(vec![vec![1.0, 0.5], vec![0.0, 1.0]]);
        assert_eq!(Gaussian::new(vec![0.0; 2], &asym).unwrap_err(), SyntheticError::NotSymmetric);
        let ok = CovSpec::Full(vec![vec![2.0, 0.5], vec![0.5, 1.0]]);
        assert!(Gaussian::new(vec![0.0; 2], &ok).is_ok());
    }

    #[test]
    fn factor_model_rejects_too_many_tasks() {
        let spec = FactorModelSpec {
            dim: 2,
            tasks: 3,
            deltas: vec![1.0; 3],
            eta_variance: 1.0,
            xi: XiCov::Isotropic(0.1),
            frame_seed: 0,
        };
        assert!(matches!(spec.build(), Err(SyntheticError::TooManyTasks { .. })));
    }

    #[test]
    fn factor_frame_orthonormal() {
        let spec = FactorModelSpec {
            dim: 32,
            tasks: 7,
            deltas: vec![2.0; 7],
            eta_variance: 3.0,
            xi: XiCov::Isotropic(0.01),
            frame_seed: 11,
        };
        let m = spec.build().unwrap();
        assert!(m.frame_gram_residual() < 1e-10);
    }

    #[test]
    fn spec_json_roundtrip() {
        let s = SyntheticSpec::FactorModel(FactorModelSpec {
            dim: 8,
            tasks: 2,
            deltas: vec![2.0, 2.0],
            eta_variance: 100.0,
            xi: XiCov::Isotropic(0.01),
            frame_seed: 1,
        });
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"kind\":\"factor_model\""));
        let back: SyntheticSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }
}
