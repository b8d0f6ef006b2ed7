//! Cross-task decision-axis alignment.
//!
//! For two balanced, independent labelings the cosine between a task-1 axis
//! `u¹_{aa′}` and a task-2 axis `u²_{bb′}` is bounded by
//!
//! ```text
//! min{ (d¹/d²) √(2 K₂ Ṽ¹),  (d²/d¹) √(2 K₁ Ṽ²) }
//! ```
//!
//! where `Ṽ` is the largest directional CDNV of the pair over all classes of
//! its own labeling. Empirical checks add the slack `ε_stat = c/√n_min`.

use serde::Serialize;
use statrs::distribution::{Beta, ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::dataset::{DatasetError, EmbeddingDataset};
use crate::geometry::{projected_variance, GeometryError, LabelingGeometry};
use crate::par;
use crate::sum::dot;

pub const DEFAULT_SLACK_CONSTANT: f64 = 5.0;
pub const DEFAULT_BALANCE_TOLERANCE: f64 = 0.05;
/// Independence is rejected when the chi-square p-value falls below this.
pub const DEFAULT_INDEPENDENCE_ALPHA: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum OrthoError {
    #[error("distinct labelings required")]
    SameLabeling,
    #[error("gaps must be positive, got ({0}, {1})")]
    NonPositiveGap(f64, f64),
    #[error("class counts must be >= 2, got ({0}, {1})")]
    TooFewClasses(usize, usize),
    #[error("directional CDNV must be nonnegative, got ({0}, {1})")]
    NegativeDirCdnv(f64, f64),
    #[error("axis dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// One unordered class pair `a < a′` of a labeling. The axis points from
/// `a` to `a′`; the reverse pair has the negated axis and the same scalars.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionAxis {
    pub a: u32,
    pub b: u32,
    pub axis: Vec<f64>,
    pub gap: f64,
    /// max over every class c of uᵀ Σ_c u / gap².
    pub max_dir_cdnv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionAxisSet {
    pub labeling: String,
    pub num_classes: usize,
    pub min_class_size: usize,
    pub axes: Vec<DecisionAxis>,
}

impl DecisionAxisSet {
    pub fn dim(&self) -> usize {
        self.axes.first().map_or(0, |a| a.axis.len())
    }

    /// Looks up pair `(a, b)` in either order; the axis is negated for `a > b`.
    pub fn ordered(&self, a: u32, b: u32) -> Option<DecisionAxis> {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let found = self.axes.iter().find(|x| x.a == lo && x.b == hi)?;
        let mut out = found.clone();
        if a > b {
            out.a = a;
            out.b = b;
            out.axis.iter_mut().for_each(|x| *x = -*x);
        }
        Some(out)
    }
}

pub fn decision_axes(ds: &EmbeddingDataset, labeling: &str) -> Result<DecisionAxisSet, OrthoError> {
    let geo = LabelingGeometry::new(ds, labeling)?;
    decision_axes_cached(&geo)
}

pub fn decision_axes_cached(geo: &LabelingGeometry<'_>) -> Result<DecisionAxisSet, OrthoError> {
    let k = geo.num_classes();
    if k < 2 {
        return Err(GeometryError::TooFewClasses(k).into());
    }
    for s in &geo.stats {
        if s.count < 2 {
            return Err(GeometryError::TooFewSamples {
                class: s.class_id,
                count: s.count,
                needed: 2,
            }
            .into());
        }
    }
    let pairs: Vec<(u32, u32)> = (0..k as u32)
        .flat_map(|a| (a + 1..k as u32).map(move |b| (a, b)))
        .collect();
    let axes = par::map_slice(&pairs, |&(a, b)| -> Result<DecisionAxis, OrthoError> {
        let pg = geo.pair(a, b)?;
        let g2 = pg.gap * pg.gap;
        let max_var = geo
            .stats
            .iter()
            .zip(&geo.rows)
            .map(|(s, rows)| projected_variance(geo.ds, rows, &s.mean, &pg.axis))
            .fold(0.0, f64::max);
        Ok(DecisionAxis {
            a,
            b,
            axis: pg.axis,
            gap: pg.gap,
            max_dir_cdnv: max_var / g2,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(DecisionAxisSet {
        labeling: geo.labeling.name.clone(),
        num_classes: k,
        min_class_size: geo.stats.iter().map(|s| s.count).min().unwrap_or(0),
        axes,
    })
}

/// `min{(d1/d2)√(2K₂Ṽ¹), (d2/d1)√(2K₁Ṽ²)}`.
pub fn orthogonality_bound(
    d1: f64,
    d2: f64,
    k1: usize,
    k2: usize,
    dir_v1: f64,
    dir_v2: f64,
) -> Result<f64, OrthoError> {
    if !(d1 > 0.0 && d2 > 0.0) {
        return Err(OrthoError::NonPositiveGap(d1, d2));
    }
    if k1 < 2 || k2 < 2 {
        return Err(OrthoError::TooFewClasses(k1, k2));
    }
    if !(dir_v1 >= 0.0 && dir_v2 >= 0.0) {
        return Err(OrthoError::NegativeDirCdnv(dir_v1, dir_v2));
    }
    let first = d1 / d2 * (2.0 * k2 as f64 * dir_v1).sqrt();
    let second = d2 / d1 * (2.0 * k1 as f64 * dir_v2).sqrt();
    Ok(first.min(second))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Exact median of |⟨u, v⟩| for independent uniform unit vectors in `dim`
/// dimensions, from `(1 + ⟨u, v⟩)/2 ~ Beta((dim−1)/2, (dim−1)/2)`.
pub fn null_median_abs_cos(dim: usize) -> f64 {
    if dim < 2 {
        return 1.0;
    }
    let s = (dim as f64 - 1.0) / 2.0;
    let beta = Beta::new(s, s).expect("shape parameters are positive");
    2.0 * beta.inverse_cdf(0.75) - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrthoEntry {
    pub task_a: String,
    pub pair_a: (u32, u32),
    pub task_b: String,
    pub pair_b: (u32, u32),
    pub abs_cos: f64,
    pub bound: f64,
    /// `abs_cos ≤ bound + ε_stat`; absent when the hypotheses fail.
    pub satisfied: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceCheck {
    pub labeling: String,
    pub frequencies: Vec<f64>,
    /// max_c |n_c/n − 1/K|
    pub max_deviation: f64,
    pub balanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependenceCheck {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub independent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preconditions {
    pub balance_tolerance: f64,
    pub balance: Vec<BalanceCheck>,
    pub independence: IndependenceCheck,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthoStatus {
    Checked,
    /// Entries carry bounds but no `satisfied` flags.
    HypothesesViolated,
    /// Produced without precondition checks.
    Unchecked,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrthoReport {
    pub labeling_a: String,
    pub labeling_b: String,
    pub status: OrthoStatus,
    pub violations: Vec<String>,
    pub preconditions: Option<Preconditions>,
    pub slack_constant: f64,
    pub eps_stat: f64,
    pub min_class_size: usize,
    pub abs_cos: Quartiles,
    pub num_entries: usize,
    pub num_satisfied: Option<usize>,
    pub all_satisfied: Option<bool>,
    pub entries: Vec<OrthoEntry>,
}

pub const ORTHO_CSV_HEADER: &str = "task_a,pair_a,task_b,pair_b,abs_cos,bound,satisfied";

impl OrthoReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.entries.len() + 1));
        out.push_str(ORTHO_CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            let sat = match e.satisfied {
                Some(true) => "true",
                Some(false) => "false",
                None => "",
            };
            out.push_str(&format!(
                "{},{}-{},{},{}-{},{:.17e},{:.17e},{}\n",
                e.task_a, e.pair_a.0, e.pair_a.1, e.task_b, e.pair_b.0, e.pair_b.1, e.abs_cos, e.bound, sat
            ));
        }
        out
    }
}

/// `c / √n_min`.
pub fn statistical_slack(slack_constant: f64, min_class_size: usize) -> f64 {
    slack_constant / (min_class_size.max(1) as f64).sqrt()
}

/// Every `|cos|` between an unordered pair of `a` and one of `b`, with its
/// bound. `satisfied` is filled using `ε_stat = c/√n_min`.
pub fn cross_task_cosines(
    a: &DecisionAxisSet,
    b: &DecisionAxisSet,
    slack_constant: f64,
) -> Result<OrthoReport, OrthoError> {
    if a.labeling == b.labeling {
        return Err(OrthoError::SameLabeling);
    }
    if a.dim() != b.dim() {
        return Err(OrthoError::DimensionMismatch(a.dim(), b.dim()));
    }
    let grid: Vec<(usize, usize)> = (0..a.axes.len())
        .flat_map(|i| (0..b.axes.len()).map(move |j| (i, j)))
        .collect();
    let min_class_size = a.min_class_size.min(b.min_class_size);
    let eps = statistical_slack(slack_constant, min_class_size);
    let entries = par::map_slice(&grid, |&(i, j)| -> Result<OrthoEntry, OrthoError> {
        let (x, y) = (&a.axes[i], &b.axes[j]);
        let abs_cos = dot(&x.axis, &y.axis).abs().min(1.0);
        let bound = orthogonality_bound(x.gap, y.gap, a.num_classes, b.num_classes, x.max_dir_cdnv, y.max_dir_cdnv)?;
        Ok(OrthoEntry {
            task_a: a.labeling.clone(),
            pair_a: (x.a, x.b),
            task_b: b.labeling.clone(),
            pair_b: (y.a, y.b),
            abs_cos,
            bound,
            satisfied: Some(abs_cos <= bound + eps),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let mut sorted: Vec<f64> = entries.iter().map(|e| e.abs_cos).collect();
    sorted.sort_by(f64::total_cmp);
    let num_satisfied = entries.iter().filter(|e| e.satisfied == Some(true)).count();
    Ok(OrthoReport {
        labeling_a: a.labeling.clone(),
        labeling_b: b.labeling.clone(),
        status: OrthoStatus::Unchecked,
        violations: Vec::new(),
        preconditions: None,
        slack_constant,
        eps_stat: eps,
        min_class_size,
        abs_cos: Quartiles {
            q25: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q75: quantile_sorted(&sorted, 0.75),
        },
        num_entries: entries.len(),
        num_satisfied: Some(num_satisfied),
        all_satisfied: Some(num_satisfied == entries.len()),
        entries,
    })
}

pub fn balance_check(ds: &EmbeddingDataset, labeling: &str, tolerance: f64) -> Result<BalanceCheck, OrthoError> {
    let l = ds.labeling(labeling)?;
    let n = l.labels.len().max(1) as f64;
    let uniform = 1.0 / l.num_classes.max(1) as f64;
    let frequencies: Vec<f64> = l.class_counts().iter().map(|&c| c as f64 / n).collect();
    let max_deviation = frequencies.iter().map(|f| (f - uniform).abs()).fold(0.0, f64::max);
    Ok(BalanceCheck {
        labeling: labeling.to_string(),
        frequencies,
        max_deviation,
        balanced: max_deviation <= tolerance,
    })
}

/// Pearson chi-square test of independence on the K₁×K₂ contingency table.
/// Rows or columns with no samples are dropped from the degrees of freedom.
pub fn independence_check(
    ds: &EmbeddingDataset,
    labeling_a: &str,
    labeling_b: &str,
    alpha: f64,
) -> Result<IndependenceCheck, OrthoError> {
    let la = ds.labeling(labeling_a)?;
    let lb = ds.labeling(labeling_b)?;
    let (ka, kb) = (la.num_classes, lb.num_classes);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in la.labels.iter().zip(&lb.labels) {
        table[x as usize * kb + y as usize] += 1;
    }
    let n = la.labels.len() as f64;
    let rows: Vec<f64> = (0..ka).map(|r| table[r * kb..(r + 1) * kb].iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..kb).map(|c| (0..ka).map(|r| table[r * kb + c]).sum::<u64>() as f64).collect();
    let mut stat = 0.0;
    for r in 0..ka {
        for c in 0..kb {
            let e = rows[r] * cols[c] / n;
            if e > 0.0 {
                let o = table[r * kb + c] as f64;
                stat += (o - e) * (o - e) / e;
            }
        }
    }
    let live_r = rows.iter().filter(|&&x| x > 0.0).count();
    let live_c = cols.iter().filter(|&&x| x > 0.0).count();
    let dof = live_r.saturating_sub(1) * live_c.saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).expect("dof is positive").sf(stat)
    };
    Ok(IndependenceCheck {
        statistic: stat,
        dof,
        p_value,
        alpha,
        independent: p_value >= alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub balance_tolerance: f64,
    pub independence_alpha: f64,
    pub slack_constant: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            balance_tolerance: DEFAULT_BALANCE_TOLERANCE,
            independence_alpha: DEFAULT_INDEPENDENCE_ALPHA,
            slack_constant: DEFAULT_SLACK_CONSTANT,
        }
    }
}

/// Checks balance and independence, then compares every cross-task cosine
/// with its bound. Failed hypotheses yield status `HypothesesViolated` and no
/// `satisfied` flags.
pub fn verify_proposition(
    ds: &EmbeddingDataset,
    labeling_a: &str,
    labeling_b: &str,
    cfg: &VerifyConfig,
) -> Result<OrthoReport, OrthoError> {
    if labeling_a == labeling_b {
        return Err(OrthoError::SameLabeling);
    }
    ds.labeling(labeling_a)?;
    ds.labeling(labeling_b)?;
    let balance = vec![
        balance_check(ds, labeling_a, cfg.balance_tolerance)?,
        balance_check(ds, labeling_b, cfg.balance_tolerance)?,
    ];
    let independence = independence_check(ds, labeling_a, labeling_b, cfg.independence_alpha)?;
    let mut violations = Vec::new();
    for b in &balance {
        if !b.balanced {
            violations.push(format!(
                "labeling '{}' is unbalanced: max |freq − 1/K| = {:.4} > {}",
                b.labeling, b.max_deviation, cfg.balance_tolerance
            ));
        }
    }
    if !independence.independent {
        violations.push(format!(
            "labelings are dependent: chi-square = {:.4} (dof {}), p = {:.3e} < {}",
            independence.statistic, independence.dof, independence.p_value, independence.alpha
        ));
    }
    let axes_a = decision_axes(ds, labeling_a)?;
    let axes_b = decision_axes(ds, labeling_b)?;
    let mut report = cross_task_cosines(&axes_a, &axes_b, cfg.slack_constant)?;
    report.preconditions = Some(Preconditions {
        balance_tolerance: cfg.balance_tolerance,
        balance,
        independence,
    });
    if violations.is_empty() {
        report.status = OrthoStatus::Checked;
    } else {
        report.status = OrthoStatus::HypothesesViolated;
        report.violations = violations;
        report.num_satisfied = None;
        report.all_satisfied = None;
        report.entries.iter_mut().for_each(|e| e.satisfied = None);
    }
    Ok(report)
}
