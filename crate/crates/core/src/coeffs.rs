//! Polynomial weight coefficients and the monotonicity rule they must obey.
//!
//! A coefficient set holds two ascending-power polynomials over similarity
//! scores: `pos` (applied to the positive-pair score, `a_0..a_P`) and `neg`
//! (applied to negative-pair scores, `b_0..b_Q`). The constant terms play
//! the role of the hinge offsets. Positive weighting must not grow as the
//! positive score grows, negative weighting must not shrink as the negative
//! score grows; both are checked on a bounded score interval.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Default margin for informative-pair mining.
pub const DEFAULT_MINING_MARGIN: f64 = 0.2;

/// Score interval on which the monotonicity rule is enforced by default.
///
/// All four published coefficient sets have a negative polynomial whose slope
/// is negative near zero (e.g. `-0.3 + 2.4 s` for the MS-COCO set), so the
/// rule cannot hold on `[0, 1]` or `[-1, 1]`. The lower bound is the smallest
/// round value at which every published set passes (the tightest one turns
/// at `s = 0.222`).
pub const DEFAULT_SIM_DOMAIN: (f64, f64) = (0.25, 1.0);

/// Number of evenly spaced interior probes used by [`validate_coefficients`].
pub const VALIDATION_SAMPLES: usize = 1001;

/// Slope slack absorbing rounding when a derivative vanishes on the domain.
const SLOPE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyCoefficients {
    /// `a_0..a_P`, ascending powers.
    pub pos: Vec<f64>,
    /// `b_0..b_Q`, ascending powers.
    pub neg: Vec<f64>,
    pub mining_margin: f64,
    pub sim_domain: (f64, f64),
}

impl PolyCoefficients {
    pub fn new(pos: Vec<f64>, neg: Vec<f64>) -> Self {
        Self {
            pos,
            neg,
            mining_margin: DEFAULT_MINING_MARGIN,
            sim_domain: DEFAULT_SIM_DOMAIN,
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.mining_margin = margin;
        self
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.sim_domain = (lo, hi);
        self
    }

    /// MS-COCO set; the default everywhere.
    pub fn mscoco() -> Self {
        Self::new(vec![0.5, -0.7, 0.2], vec![0.03, -0.3, 1.2])
    }

    pub fn flickr30k() -> Self {
        Self::new(vec![0.6, -0.7, 0.2], vec![0.03, -0.4, 0.9])
    }

    pub fn activitynet() -> Self {
        Self::new(vec![0.5, -0.7, 0.2], vec![1.0, -0.2, 1.7])
    }

    pub fn msrvtt() -> Self {
        Self::new(vec![0.5, -0.7, 0.2], vec![0.03, -0.3, 1.8])
    }

    /// All published sets, with their dataset names.
    pub fn published() -> [(&'static str, Self); 4] {
        [
            ("mscoco", Self::mscoco()),
            ("flickr30k", Self::flickr30k()),
            ("activitynet", Self::activitynet()),
            ("msrvtt", Self::msrvtt()),
        ]
    }

    /// Linear coefficients under which the max-polynomial loss with mining
    /// disabled is exactly the hardest-negative triplet loss with margin
    /// `margin`.
    pub fn triplet_equivalent(margin: f64) -> Self {
        Self::new(vec![margin, -1.0], vec![0.0, 1.0])
    }

    /// Highest power of the positive polynomial.
    pub fn pos_degree(&self) -> usize {
        self.pos.len().saturating_sub(1)
    }

    pub fn neg_degree(&self) -> usize {
        self.neg.len().saturating_sub(1)
    }

    #[inline]
    pub fn pos_value(&self, s: f64) -> f64 {
        poly_eval(&self.pos, s)
    }

    #[inline]
    pub fn neg_value(&self, s: f64) -> f64 {
        poly_eval(&self.neg, s)
    }

    #[inline]
    pub fn pos_slope(&self, s: f64) -> f64 {
        poly_deriv_eval(&self.pos, s)
    }

    #[inline]
    pub fn neg_slope(&self, s: f64) -> f64 {
        poly_deriv_eval(&self.neg, s)
    }
}

impl Default for PolyCoefficients {
    fn default() -> Self {
        Self::mscoco()
    }
}

/// `Σ coeffs[i]·s^i` by Horner's scheme. Empty input evaluates to 0.
pub fn poly_eval(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
}

/// Derivative `Σ_{i≥1} i·coeffs[i]·s^(i-1)`, also by Horner.
pub fn poly_deriv_eval(coeffs: &[f64], s: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (i, &c)| acc * s + i as f64 * c)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptyPositive,
    EmptyNegative,
    NonFiniteCoefficient,
    NegativeMargin(f64),
    EmptyDomain { lo: f64, hi: f64 },
    /// The positive polynomial rises at `at`.
    PositiveIncreasing { at: f64, slope: f64 },
    /// The negative polynomial falls at `at`.
    NegativeDecreasing { at: f64, slope: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyPositive => write!(f, "positive coefficient list is empty"),
            Violation::EmptyNegative => write!(f, "negative coefficient list is empty"),
            Violation::NonFiniteCoefficient => write!(f, "coefficients must be finite"),
            Violation::NegativeMargin(m) => write!(f, "mining margin {m} is negative"),
            Violation::EmptyDomain { lo, hi } => {
                write!(f, "similarity domain [{lo}, {hi}] is empty")
            }
            Violation::PositiveIncreasing { at, slope } => write!(
                f,
                "positive polynomial increasing at s={at:.4} (slope {slope:.4})"
            ),
            Violation::NegativeDecreasing { at, slope } => write!(
                f,
                "negative polynomial decreasing at s={at:.4} (slope {slope:.4})"
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> crate::Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(crate::Error::InvalidCoefficients(self.violations))
        }
    }
}

/// Checks structure and the monotonicity rule. Never fails; every problem is
/// listed in the report. At most one slope violation is reported per
/// polynomial (the first probe that breaks it).
pub fn validate_coefficients(c: &PolyCoefficients) -> ValidationReport {
    let mut violations = Vec::new();
    if c.pos.is_empty() {
        violations.push(Violation::EmptyPositive);
    }
    if c.neg.is_empty() {
        violations.push(Violation::EmptyNegative);
    }
    if c.pos.iter().chain(&c.neg).any(|v| !v.is_finite()) {
        violations.push(Violation::NonFiniteCoefficient);
    }
    if !(c.mining_margin >= 0.0) {
        violations.push(Violation::NegativeMargin(c.mining_margin));
    }
    let (lo, hi) = c.sim_domain;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        violations.push(Violation::EmptyDomain { lo, hi });
    }
    if !violations.is_empty() {
        return ValidationReport { violations };
    }

    if let Some((at, slope)) = domain_probes(lo, hi)
        .map(|s| (s, c.pos_slope(s)))
        .find(|&(_, d)| d > SLOPE_SLACK)
    {
        violations.push(Violation::PositiveIncreasing { at, slope });
    }
    if let Some((at, slope)) = domain_probes(lo, hi)
        .map(|s| (s, c.neg_slope(s)))
        .find(|&(_, d)| d < -SLOPE_SLACK)
    {
        violations.push(Violation::NegativeDecreasing { at, slope });
    }
    ValidationReport { violations }
}

/// Both endpoints followed by `VALIDATION_SAMPLES` evenly spaced points.
fn domain_probes(lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (VALIDATION_SAMPLES - 1) as f64;
    [lo, hi]
        .into_iter()
        .chain((0..VALIDATION_SAMPLES).map(move |k| lo + step * k as f64))
}
