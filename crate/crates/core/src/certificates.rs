//! Finite-shot error certificates for nearest-class-centroid classification.
//!
//! Every pairwise bound shares the same denominator
//! `(1 + (v_j − v_i)/(m d²))²`, which is the squared normalised expected
//! margin `E[Δ]/d²`. A nonpositive expected margin invalidates the bound and
//! is reported as [`CertificateError::NonPositiveMargin`].
//!
//! Finite-shot components (dimensionless):
//!
//! ```text
//! E1 = (4/m) (V² + V/4)
//! E2 = V / m
//! E3 = (Θ + 2(m−1) V²) / m³
//! ```

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{CdnvAverages, PairGeometry};

/// Shot count below which the optimized bound carries a regime warning.
pub const OPTIMIZED_MIN_SHOTS: u64 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertificateError {
    #[error("m must be >= 1")]
    ZeroShots,
    #[error("lambda weights must be positive, got ({0}, {1}, {2})")]
    NonPositiveLambda(f64, f64, f64),
    #[error("pair ({i}, {j}): expected margin {margin} <= 0 at m = {m}; bound undefined")]
    NonPositiveMargin { i: u32, j: u32, m: u64, margin: f64 },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("pair list does not cover every ordered pair of the class subset")]
    IncompletePairs,
}

/// The scalar inputs every bound depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairInputs {
    pub i: u32,
    pub j: u32,
    pub gap: f64,
    pub v_i: f64,
    pub v_j: f64,
    pub dir_cdnv: f64,
    pub cdnv: f64,
    pub theta: f64,
}

impl PairInputs {
    /// CDNV is derived as `(v_i + v_j) / gap²`.
    pub fn new(gap: f64, v_i: f64, v_j: f64, dir_cdnv: f64, theta: f64) -> Self {
        PairInputs {
            i: 0,
            j: 1,
            gap,
            v_i,
            v_j,
            dir_cdnv,
            cdnv: (v_i + v_j) / (gap * gap),
            theta,
        }
    }

    pub fn with_classes(mut self, i: u32, j: u32) -> Self {
        self.i = i;
        self.j = j;
        self
    }

    /// `(v_j − v_i) / d²`, the scale-free variance imbalance.
    pub fn imbalance(&self) -> f64 {
        (self.v_j - self.v_i) / (self.gap * self.gap)
    }
}

impl From<&PairGeometry> for PairInputs {
    fn from(pg: &PairGeometry) -> Self {
        PairInputs {
            i: pg.i,
            j: pg.j,
            gap: pg.gap,
            v_i: pg.v_i,
            v_j: pg.v_j,
            dir_cdnv: pg.dir_cdnv,
            cdnv: pg.cdnv,
            theta: pg.theta,
        }
    }
}

/// Positive weights `(λ_T, λ_S, λ_Q)` of the tunable bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lambdas {
    pub t: f64,
    pub s: f64,
    pub q: f64,
}

impl Lambdas {
    pub const EQUAL: Lambdas = Lambdas { t: 1.0, s: 1.0, q: 1.0 };

    pub fn new(t: f64, s: f64, q: f64) -> Self {
        Lambdas { t, s, q }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BoundVariant {
    Generic { lambdas: Lambdas },
    Equal,
    Optimized,
}

impl BoundVariant {
    pub fn label(&self) -> &'static str {
        match self {
            BoundVariant::Generic { .. } => "generic",
            BoundVariant::Equal => "equal",
            BoundVariant::Optimized => "optimized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AsymptoticVariant {
    /// 4Ṽ
    Linear,
    /// 4Ṽ / (1 + 4Ṽ)
    Cantelli,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundValue {
    pub i: u32,
    pub j: u32,
    pub m: u64,
    pub variant: BoundVariant,
    pub leading: f64,
    pub correction: f64,
    pub total: f64,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub denom: f64,
    /// Total at or above 1/2: carries no information for a binary decision.
    pub vacuous: bool,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginCheck {
    pub value: f64,
    pub positive: bool,
}

/// `E[Δ] = d² + (v_j − v_i)/m`.
pub fn expected_margin(pg: &PairInputs, m: u64) -> MarginCheck {
    let value = pg.gap * pg.gap + (pg.v_j - pg.v_i) / m as f64;
    MarginCheck {
        value,
        positive: value > 0.0,
    }
}

/// Finite-shot components `(E1, E2, E3)`.
pub fn components(pg: &PairInputs, m: u64) -> (f64, f64, f64) {
    let mf = m as f64;
    let v = pg.cdnv;
    let e1 = 4.0 / mf * (v * v + 0.25 * v);
    let e2 = v / mf;
    let e3 = (pg.theta + 2.0 * (mf - 1.0) * v * v) / (mf * mf * mf);
    (e1, e2, e3)
}

fn denominator(pg: &PairInputs, m: u64) -> Result<f64, CertificateError> {
    if m == 0 {
        return Err(CertificateError::ZeroShots);
    }
    let margin = expected_margin(pg, m);
    if !margin.positive {
        return Err(CertificateError::NonPositiveMargin {
            i: pg.i,
            j: pg.j,
            m,
            margin: margin.value,
        });
    }
    let a = 1.0 + pg.imbalance() / m as f64;
    Ok(a * a)
}

fn assemble(
    pg: &PairInputs,
    m: u64,
    variant: BoundVariant,
    denom: f64,
    correction_numerator: f64,
    warning: Option<String>,
) -> BoundValue {
    let (e1, e2, e3) = components(pg, m);
    let leading = 4.0 * pg.dir_cdnv / denom;
    let correction = correction_numerator / denom;
    let total = (4.0 * pg.dir_cdnv + correction_numerator) / denom;
    BoundValue {
        i: pg.i,
        j: pg.j,
        m,
        variant,
        leading,
        correction,
        total,
        e1,
        e2,
        e3,
        denom,
        vacuous: total >= 0.5,
        warning,
    }
}

/// Tunable-weight pairwise bound.
///
/// Numerator `4Ṽ + a_T V² + (a_T/4 + a_S) V + a_Q (Θ + 2(m−1)V²)` with
/// `κ = λ_T + λ_S + λ_Q`, `a_T = 4κ/(mλ_T)`, `a_S = κ/(mλ_S)`,
/// `a_Q = κ/(m³λ_Q)`.
pub fn pairwise_bound_generic(
    pg: &PairInputs,
    m: u64,
    lambdas: Lambdas,
) -> Result<BoundValue, CertificateError> {
    let Lambdas { t, s, q } = lambdas;
    if !(t > 0.0 && s > 0.0 && q > 0.0) {
        return Err(CertificateError::NonPositiveLambda(t, s, q));
    }
    let denom = denominator(pg, m)?;
    let mf = m as f64;
    let kappa = t + s + q;
    let a_t = 4.0 * kappa / (mf * t);
    let a_s = kappa / (mf * s);
    let a_q = kappa / (mf * mf * mf * q);
    let v = pg.cdnv;
    let corr = a_t * v * v + (a_t / 4.0 + a_s) * v + a_q * (pg.theta + 2.0 * (mf - 1.0) * v * v);
    let variant = if lambdas == Lambdas::EQUAL {
        BoundVariant::Equal
    } else {
        BoundVariant::Generic { lambdas }
    };
    Ok(assemble(pg, m, variant, denom, corr, None))
}

/// Equal-weights bound: coefficients `12/m, 6/m, 3/m³`.
pub fn pairwise_bound_equal(pg: &PairInputs, m: u64) -> Result<BoundValue, CertificateError> {
    let mut b = pairwise_bound_generic(pg, m, Lambdas::EQUAL)?;
    b.variant = BoundVariant::Equal;
    Ok(b)
}

/// Optimal-weight bound `[4Ṽ + (√E1 + √E2 + √E3)²] / denom`.
pub fn pairwise_bound_optimized(pg: &PairInputs, m: u64) -> Result<BoundValue, CertificateError> {
    let denom = denominator(pg, m)?;
    let (e1, e2, e3) = components(pg, m);
    let root = e1.sqrt() + e2.sqrt() + e3.sqrt();
    let warning = (m < OPTIMIZED_MIN_SHOTS).then(|| {
        format!("m = {m} is below {OPTIMIZED_MIN_SHOTS}, outside the stated regime of the optimized bound")
    });
    Ok(assemble(pg, m, BoundVariant::Optimized, denom, root * root, warning))
}

/// Weights `λ ∝ (√E1, √E2, √E3)` at which the tunable bound is tight.
pub fn optimal_lambdas(pg: &PairInputs, m: u64) -> Lambdas {
    let (e1, e2, e3) = components(pg, m);
    Lambdas::new(e1.sqrt(), e2.sqrt(), e3.sqrt())
}

pub fn pairwise_bound(
    pg: &PairInputs,
    m: u64,
    variant: BoundVariant,
) -> Result<BoundValue, CertificateError> {
    match variant {
        BoundVariant::Generic { lambdas } => pairwise_bound_generic(pg, m, lambdas),
        BoundVariant::Equal => pairwise_bound_equal(pg, m),
        BoundVariant::Optimized => pairwise_bound_optimized(pg, m),
    }
}

/// Known-centroid limit: `4Ṽ` or the one-sided Chebyshev value `4Ṽ/(1+4Ṽ)`.
pub fn pairwise_bound_asymptotic(dir_cdnv: f64, variant: AsymptoticVariant) -> f64 {
    let lin = 4.0 * dir_cdnv;
    match variant {
        AsymptoticVariant::Linear => lin,
        AsymptoticVariant::Cantelli => {
            if lin.is_infinite() {
                1.0
            } else {
                lin / (1.0 + lin)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MulticlassBound {
    pub classes: Vec<u32>,
    pub m: u64,
    pub variant: BoundVariant,
    pub pairs: Vec<BoundValue>,
    pub total: f64,
    /// Total at or above the chance error `1 − 1/C′`.
    pub vacuous: bool,
}

fn distinct_classes(pairs: &[PairInputs]) -> Result<Vec<u32>, CertificateError> {
    let mut classes: Vec<u32> = pairs.iter().flat_map(|p| [p.i, p.j]).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(CertificateError::TooFewClasses(classes.len()));
    }
    let c = classes.len();
    let mut seen: Vec<(u32, u32)> = pairs.iter().map(|p| (p.i, p.j)).collect();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != c * (c - 1) || pairs.iter().any(|p| p.i == p.j) {
        return Err(CertificateError::IncompletePairs);
    }
    Ok(classes)
}

/// `(1/C′) Σ_i Σ_{j≠i}` of the per-pair totals.
pub fn multiclass_bound(
    pairs: &[PairInputs],
    m: u64,
    variant: BoundVariant,
) -> Result<MulticlassBound, CertificateError> {
    let classes = distinct_classes(pairs)?;
    let values = pairs
        .iter()
        .map(|p| pairwise_bound(p, m, variant))
        .collect::<Result<Vec<_>, _>>()?;
    let totals: Vec<f64> = values.iter().map(|b| b.total).collect();
    let c = classes.len() as f64;
    let total = crate::sum::pairwise_sum(&totals) / c;
    Ok(MulticlassBound {
        classes,
        m,
        variant,
        pairs: values,
        total,
        vacuous: total >= 1.0 - 1.0 / c,
    })
}

/// Multiclass version of the known-centroid limit.
pub fn multiclass_asymptotic(
    pairs: &[PairInputs],
    variant: AsymptoticVariant,
) -> Result<f64, CertificateError> {
    let classes = distinct_classes(pairs)?;
    let vals: Vec<f64> = pairs
        .iter()
        .map(|p| pairwise_bound_asymptotic(p.dir_cdnv, variant))
        .collect();
    Ok(crate::sum::pairwise_sum(&vals) / classes.len() as f64)
}

/// Earlier averaged-CDNV certificate with its tuning constant fixed at 16:
/// `(C′−1)(8Ṽ_f + (8/√m) V_f^s + (8/√m + 4/m) V_f)`.
pub fn baseline_bound_prior(
    avg_dir_cdnv: f64,
    avg_cdnv: f64,
    avg_sqrt_cdnv: f64,
    num_classes: usize,
    m: u64,
) -> f64 {
    let mf = m as f64;
    let r = 8.0 / mf.sqrt();
    (num_classes as f64 - 1.0) * (8.0 * avg_dir_cdnv + r * avg_sqrt_cdnv + (r + 4.0 / mf) * avg_cdnv)
}

pub fn baseline_from_averages(avg: &CdnvAverages, m: u64) -> f64 {
    baseline_bound_prior(avg.avg_dir_cdnv, avg.avg_cdnv, avg.avg_sqrt_cdnv, avg.num_classes, m)
}

/// Averages computed directly from bound inputs.
pub fn averages_from_inputs(pairs: &[PairInputs]) -> Result<CdnvAverages, CertificateError> {
    let classes = distinct_classes(pairs)?;
    let n = pairs.len() as f64;
    let f = |g: &dyn Fn(&PairInputs) -> f64| {
        let v: Vec<f64> = pairs.iter().map(g).collect();
        crate::sum::pairwise_sum(&v) / n
    };
    Ok(CdnvAverages {
        avg_dir_cdnv: f(&|p| p.dir_cdnv),
        avg_cdnv: f(&|p| p.cdnv),
        avg_sqrt_cdnv: f(&|p| p.cdnv.sqrt()),
        num_classes: classes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// d = 4, v_i = v_j = 4, Ṽ = 1/16, V = 1/2, Θ = 0.1875.
    fn canonical() -> PairInputs {
        PairInputs::new(4.0, 4.0, 4.0, 1.0 / 16.0, 0.1875)
    }

    #[test]
    fn margin_examples() {
        assert_eq!(expected_margin(&canonical(), 7).value, 16.0);
        let p = PairInputs::new(1.0, 10.0, 0.0, 0.0, 0.0);
        let mc = expected_margin(&p, 5);
        assert_eq!(mc.value, -1.0);
        assert!(!mc.positive);
        let p = PairInputs::new(4.0, 4.0, 6.0, 0.0, 0.0);
        assert!((expected_margin(&p, 10).value - 16.2).abs() < 1e-12);
    }

    #[test]
    fn generic_unit_lambdas_canonical() {
        let b = pairwise_bound_generic(&canonical(), 10, Lambdas::EQUAL).unwrap();
        // 0.25 + 1.2·0.25 + 0.6·0.5 + 0.003·4.6875
        let oracle = 0.25 + 1.2 * 0.25 + 0.6 * 0.5 + 0.003 * 4.6875;
        assert!((b.total - 0.8640625).abs() < 1e-12);
        assert!((b.total - oracle).abs() < 1e-12);
        assert_eq!(b.denom, 1.0);
    }

    #[test]
    fn zero_variance_gives_zero() {
        let p = PairInputs::new(4.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(pairwise_bound_generic(&p, 10, Lambdas::new(1.0, 2.0, 3.0)).unwrap().total, 0.0);
        assert_eq!(pairwise_bound_optimized(&p, 10).unwrap().total, 0.0);
    }

    #[test]
    fn generic_large_m_limit() {
        let b = pairwise_bound_generic(&canonical(), 1_000_000_000, Lambdas::EQUAL).unwrap();
        assert!((b.total - 0.25).abs() < 1e-6);
    }

    #[test]
    fn equal_matches_generic() {
        let p = canonical();
        let e = pairwise_bound_equal(&p, 10).unwrap();
        assert_eq!(e.total, 0.8640625);
        let g = pairwise_bound_generic(&p, 10, Lambdas::EQUAL).unwrap();
        assert_eq!(e.total.to_bits(), g.total.to_bits());
    }

    #[test]
    fn equal_only_leading_term() {
        let p = PairInputs::new(2.0, 0.0, 0.0, 0.01, 0.0);
        for m in [1, 3, 10, 1000] {
            assert!((pairwise_bound_equal(&p, m).unwrap().total - 0.04).abs() < 1e-15);
        }
    }

    #[test]
    fn optimized_canonical() {
        let b = pairwise_bound_optimized(&canonical(), 10).unwrap();
        assert!((b.e1 - 0.15).abs() < 1e-15);
        assert!((b.e2 - 0.05).abs() < 1e-15);
        assert!((b.e3 - 0.0046875).abs() < 1e-15);
        let oracle = 0.25 + (0.15f64.sqrt() + 0.05f64.sqrt() + 0.0046875f64.sqrt()).powi(2);
        assert!((b.total - oracle).abs() < 1e-12);
        assert!((b.total - 0.711544).abs() < 1e-5);
        assert!(b.warning.is_none());
        assert!(b.vacuous);
    }

    #[test]
    fn optimized_small_m_warns() {
        let b = pairwise_bound_optimized(&canonical(), 5).unwrap();
        assert!(b.warning.is_some());
    }

    #[test]
    fn optimized_zero_spread_is_leading_only() {
        let p = PairInputs::new(3.0, 0.0, 0.0, 0.02, 0.0);
        let b = pairwise_bound_optimized(&p, 17).unwrap();
        assert_eq!(b.total, 4.0 * 0.02 / b.denom);
    }

    #[test]
    fn nonpositive_margin_is_typed_error() {
        let p = PairInputs::new(1.0, 10.0, 0.0, 0.1, 0.1);
        assert!(matches!(
            pairwise_bound_optimized(&p, 5),
            Err(CertificateError::NonPositiveMargin { .. })
        ));
        assert!(matches!(
            pairwise_bound_generic(&canonical(), 10, Lambdas::new(0.0, 1.0, 1.0)),
            Err(CertificateError::NonPositiveLambda(..))
        ));
        assert_eq!(pairwise_bound_optimized(&canonical(), 0), Err(CertificateError::ZeroShots));
    }

    #[test]
    fn asymptotic_examples() {
        assert_eq!(pairwise_bound_asymptotic(1.0 / 16.0, AsymptoticVariant::Linear), 0.25);
        assert!((pairwise_bound_asymptotic(1.0 / 16.0, AsymptoticVariant::Cantelli) - 0.2).abs() < 1e-15);
        assert_eq!(pairwise_bound_asymptotic(0.0, AsymptoticVariant::Cantelli), 0.0);
        assert_eq!(pairwise_bound_asymptotic(f64::INFINITY, AsymptoticVariant::Cantelli), 1.0);
        assert!(pairwise_bound_asymptotic(1e12, AsymptoticVariant::Cantelli) > 0.999_999);
    }

    #[test]
    fn multiclass_prefactor() {
        let p = canonical();
        let b = pairwise_bound_optimized(&p, 10).unwrap().total;
        let two = [p.with_classes(0, 1), p.with_classes(1, 0)];
        let mc = multiclass_bound(&two, 10, BoundVariant::Optimized).unwrap();
        assert!((mc.total - b).abs() < 1e-15);
        let three: Vec<PairInputs> = (0..3u32)
            .flat_map(|i| (0..3u32).filter(move |&j| j != i).map(move |j| p.with_classes(i, j)))
            .collect();
        let mc = multiclass_bound(&three, 10, BoundVariant::Optimized).unwrap();
        assert!((mc.total - 2.0 * b).abs() < 1e-14);
    }

    #[test]
    fn multiclass_requires_all_pairs() {
        let p = canonical();
        assert_eq!(
            multiclass_bound(&[p.with_classes(0, 1)], 10, BoundVariant::Equal).unwrap_err(),
            CertificateError::IncompletePairs
        );
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(baseline_bound_prior(0.0, 0.0, 0.0, 5, 10), 0.0);
        assert!((baseline_bound_prior(0.05, 2.0, 1.4, 2, 100) - 3.2).abs() < 1e-12);
        // the 1/√m terms still contribute ≈ 1.3e-8 at m = 2^64
        let far = baseline_bound_prior(0.05, 2.0, 1.4, 3, u64::MAX);
        assert!((far - 2.0 * 8.0 * 0.05).abs() < 1e-7);
        assert!(far > 2.0 * 8.0 * 0.05);
    }
}
