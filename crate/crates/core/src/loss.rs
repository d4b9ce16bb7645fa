//! Hinge losses over a batch similarity matrix, each returning its value
//! and the exact (sub)gradient with respect to every score.
//!
//! All three losses share one shape: for every anchor, in both retrieval
//! directions, a positive term computed from the anchor's own score `S_ii`
//! is added to an aggregate over its negatives, the sum is hinged at zero,
//! and the hinged terms are averaged over the batch per direction.
//!
//! | kind       | positive term      | negative aggregate                     | negatives      |
//! |------------|--------------------|----------------------------------------|----------------|
//! | `triplet`  | `λ0 - S_ii`        | `max S_ij`                             | all `j ≠ i`    |
//! | `avg_poly` | `Σ a_p S_ii^p`     | `mean of Σ b_q S_ij^q`                 | mined (or all) |
//! | `max_poly` | `Σ a_p S_ii^p`     | `Σ b_q (max S_ij)^q`                   | mined (or all) |
//!
//! An anchor without candidate negatives contributes nothing. A hinge whose
//! argument is exactly zero is inactive. Max ties go to the lowest index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coeffs::{validate_coefficients, PolyCoefficients};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mining::{mine, MiningMask};
use crate::similarity::SimilarityMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Triplet,
    AvgPoly,
    MaxPoly,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Triplet, LossKind::AvgPoly, LossKind::MaxPoly];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Triplet => "triplet",
            LossKind::AvgPoly => "avg_poly",
            LossKind::MaxPoly => "max_poly",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "triplet" => Ok(LossKind::Triplet),
            "avg_poly" | "avg" => Ok(LossKind::AvgPoly),
            "max_poly" | "max" => Ok(LossKind::MaxPoly),
            other => Err(Error::InvalidConfig(format!("unknown loss kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub coefficients: PolyCoefficients,
    /// Only used by the triplet kind.
    pub triplet_margin: f64,
    pub mining_enabled: bool,
}

impl LossSpec {
    pub fn triplet(margin: f64) -> Self {
        Self {
            kind: LossKind::Triplet,
            coefficients: PolyCoefficients::default(),
            triplet_margin: margin,
            mining_enabled: false,
        }
    }

    pub fn avg_poly(coefficients: PolyCoefficients) -> Self {
        Self {
            kind: LossKind::AvgPoly,
            coefficients,
            triplet_margin: crate::coeffs::DEFAULT_MINING_MARGIN,
            mining_enabled: true,
        }
    }

    pub fn max_poly(coefficients: PolyCoefficients) -> Self {
        Self {
            kind: LossKind::MaxPoly,
            ..Self::avg_poly(coefficients)
        }
    }

    pub fn with_mining(mut self, enabled: bool) -> Self {
        self.mining_enabled = enabled;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LossKind::Triplet => {
                if self.triplet_margin >= 0.0 && self.triplet_margin.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "triplet margin must be non-negative, got {}",
                        self.triplet_margin
                    )))
                }
            }
            LossKind::AvgPoly | LossKind::MaxPoly => {
                validate_coefficients(&self.coefficients).into_result()
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossDiagnostics {
    /// Candidate negatives per visual anchor (image→text direction).
    pub row_negatives: Vec<usize>,
    /// Candidate negatives per text anchor (text→image direction).
    pub col_negatives: Vec<usize>,
    pub row_active: usize,
    pub col_active: usize,
}

impl LossDiagnostics {
    /// Share of the `2·N·(N-1)` directed negative pairs that were candidates.
    pub fn mined_fraction(&self) -> f64 {
        let n = self.row_negatives.len();
        if n < 2 {
            return 0.0;
        }
        let total: usize = self.row_negatives.iter().chain(&self.col_negatives).sum();
        total as f64 / (2 * n * (n - 1)) as f64
    }
}

#[derive(Clone, Debug)]
pub struct LossResult {
    pub value: f64,
    /// `∂L/∂S_ij`
    pub grad_scores: Matrix,
    pub diagnostics: LossDiagnostics,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    /// Visual anchor `i`, negatives along row `i`.
    Row,
    /// Text anchor `j`, negatives along column `j`.
    Col,
}

impl Direction {
    /// Matrix entry for `(anchor, other)`.
    #[inline]
    fn entry(self, anchor: usize, other: usize) -> (usize, usize) {
        match self {
            Direction::Row => (anchor, other),
            Direction::Col => (other, anchor),
        }
    }

    #[inline]
    fn selected(self, mask: &MiningMask, anchor: usize, other: usize) -> bool {
        match self {
            Direction::Row => mask.row(anchor, other),
            Direction::Col => mask.col(other, anchor),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Aggregate {
    Mean,
    Max,
}

/// Maps a score to `(value, slope)`.
trait Term: Fn(f64) -> (f64, f64) {}
impl<F: Fn(f64) -> (f64, f64)> Term for F {}

struct DirectionOutcome {
    sum: f64,
    negatives: Vec<usize>,
    active: usize,
}

fn run_direction(
    sim: &SimilarityMatrix,
    dir: Direction,
    candidates: &MiningMask,
    pos: &impl Term,
    neg: &impl Term,
    agg: Aggregate,
    grad: &mut Matrix,
) -> DirectionOutcome {
    let n = sim.n();
    let inv_n = 1.0 / n as f64;
    let mut sum = 0.0;
    let mut active = 0;
    let mut negatives = Vec::with_capacity(n);
    let mut picked = Vec::with_capacity(n);

    for anchor in 0..n {
        picked.clear();
        picked.extend((0..n).filter(|&o| o != anchor && dir.selected(candidates, anchor, o)));
        negatives.push(picked.len());
        if picked.is_empty() {
            continue;
        }

        let (pos_value, pos_slope) = pos(sim.positive(anchor));
        let score = |o: usize| {
            let (i, j) = dir.entry(anchor, o);
            sim.get(i, j)
        };

        match agg {
            Aggregate::Mean => {
                let count = picked.len() as f64;
                let neg_sum: f64 = picked.iter().map(|&o| neg(score(o)).0).sum();
                if pos_value + neg_sum / count > 0.0 {
                    sum += pos_value + neg_sum / count;
                    active += 1;
                    grad.add_at(anchor, anchor, pos_slope * inv_n);
                    let w = 1.0 / (n as f64 * count);
                    for &o in &picked {
                        let (i, j) = dir.entry(anchor, o);
                        grad.add_at(i, j, neg(score(o)).1 * w);
                    }
                }
            }
            Aggregate::Max => {
                let mut best = picked[0];
                for &o in &picked[1..] {
                    if score(o) > score(best) {
                        best = o;
                    }
                }
                let (neg_value, neg_slope) = neg(score(best));
                let term = pos_value + neg_value;
                if term > 0.0 {
                    sum += term;
                    active += 1;
                    grad.add_at(anchor, anchor, pos_slope * inv_n);
                    let (i, j) = dir.entry(anchor, best);
                    grad.add_at(i, j, neg_slope * inv_n);
                }
            }
        }
    }

    DirectionOutcome {
        sum,
        negatives,
        active,
    }
}

fn both_directions(
    sim: &SimilarityMatrix,
    candidates: &MiningMask,
    pos: impl Term,
    neg: impl Term,
    agg: Aggregate,
) -> Result<LossResult> {
    let n = sim.n();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "a loss batch needs at least 2 pairs, got {n}"
        )));
    }
    let mut grad = Matrix::zeros(n, n);
    let row = run_direction(sim, Direction::Row, candidates, &pos, &neg, agg, &mut grad);
    let col = run_direction(sim, Direction::Col, candidates, &pos, &neg, agg, &mut grad);
    let value = (row.sum + col.sum) / n as f64;
    if !value.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(LossResult {
        value,
        grad_scores: grad,
        diagnostics: LossDiagnostics {
            row_negatives: row.negatives,
            col_negatives: col.negatives,
            row_active: row.active,
            col_active: col.active,
        },
    })
}

/// Hardest-negative triplet loss with margin `margin`, both directions.
pub fn triplet_forward_backward(sim: &SimilarityMatrix, margin: f64) -> Result<LossResult> {
    both_directions(
        sim,
        &MiningMask::all_negatives(sim.n()),
        |s| (margin - s, -1.0),
        |s| (s, 1.0),
        Aggregate::Max,
    )
}

fn poly_candidates(sim: &SimilarityMatrix, coeffs: &PolyCoefficients, mining: bool) -> MiningMask {
    if mining {
        mine(sim, coeffs.mining_margin)
    } else {
        MiningMask::all_negatives(sim.n())
    }
}

/// Average polynomial loss: the negative polynomial is averaged over each
/// anchor's candidate set.
pub fn avg_poly_forward_backward(
    sim: &SimilarityMatrix,
    coeffs: &PolyCoefficients,
    mining_enabled: bool,
) -> Result<LossResult> {
    both_directions(
        sim,
        &poly_candidates(sim, coeffs, mining_enabled),
        |s| (coeffs.pos_value(s), coeffs.pos_slope(s)),
        |s| (coeffs.neg_value(s), coeffs.neg_slope(s)),
        Aggregate::Mean,
    )
}

/// Max polynomial loss: the negative polynomial is applied to each anchor's
/// hardest candidate only.
pub fn max_poly_forward_backward(
    sim: &SimilarityMatrix,
    coeffs: &PolyCoefficients,
    mining_enabled: bool,
) -> Result<LossResult> {
    both_directions(
        sim,
        &poly_candidates(sim, coeffs, mining_enabled),
        |s| (coeffs.pos_value(s), coeffs.pos_slope(s)),
        |s| (coeffs.neg_value(s), coeffs.neg_slope(s)),
        Aggregate::Max,
    )
}

pub fn loss_dispatch(sim: &SimilarityMatrix, spec: &LossSpec) -> Result<LossResult> {
    match spec.kind {
        LossKind::Triplet => triplet_forward_backward(sim, spec.triplet_margin),
        LossKind::AvgPoly => {
            avg_poly_forward_backward(sim, &spec.coefficients, spec.mining_enabled)
        }
        LossKind::MaxPoly => {
            max_poly_forward_backward(sim, &spec.coefficients, spec.mining_enabled)
        }
    }
}
