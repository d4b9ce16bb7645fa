//! Cosine similarity between two embedding batches and its exact backward
//! pass to the raw (unnormalized) embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Rows with a norm below this are rejected instead of being patched.
pub const MIN_ROW_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Text,
}

impl Modality {
    fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Text => "text",
        }
    }
}

/// One embedding per row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    pub matrix: Matrix,
    pub modality: Modality,
}

impl EmbeddingBatch {
    pub fn new(matrix: Matrix, modality: Modality) -> Self {
        Self { matrix, modality }
    }

    pub fn visual(matrix: Matrix) -> Self {
        Self::new(matrix, Modality::Visual)
    }

    pub fn text(matrix: Matrix) -> Self {
        Self::new(matrix, Modality::Text)
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

#[derive(Clone, Debug)]
struct UnitCache {
    visual_unit: Matrix,
    visual_norms: Vec<f64>,
    text_unit: Matrix,
    text_norms: Vec<f64>,
}

/// Scores `S[i][j] = cos(v_i, t_j)`; the diagonal holds the positive pairs.
#[derive(Clone, Debug)]
pub struct SimilarityMatrix {
    scores: Matrix,
    cache: Option<UnitCache>,
}

impl SimilarityMatrix {
    /// Wraps precomputed scores. The result can feed mining, losses and
    /// recall, but not [`cosine_backward`].
    pub fn from_scores(scores: Matrix) -> Result<Self> {
        if scores.rows() != scores.cols() {
            return Err(Error::shape(
                "similarity scores",
                "a square matrix",
                format!("{}x{}", scores.rows(), scores.cols()),
            ));
        }
        Ok(Self {
            scores,
            cache: None,
        })
    }

    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    pub fn n(&self) -> usize {
        self.scores.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores.get(i, j)
    }

    pub fn positive(&self, i: usize) -> f64 {
        self.scores.get(i, i)
    }
}

fn normalize_rows(batch: &EmbeddingBatch) -> Result<(Matrix, Vec<f64>)> {
    let m = &batch.matrix;
    let mut unit = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let norm = dot(m.row(i), m.row(i)).sqrt();
        if !(norm >= MIN_ROW_NORM) {
            if !norm.is_finite() {
                return Err(Error::NonFinite("embedding row norm"));
            }
            return Err(Error::ZeroNorm {
                side: batch.modality.name(),
                row: i,
            });
        }
        for x in unit.row_mut(i) {
            *x /= norm;
        }
        norms.push(norm);
    }
    Ok((unit, norms))
}

pub fn cosine_forward(visual: &EmbeddingBatch, text: &EmbeddingBatch) -> Result<SimilarityMatrix> {
    if visual.len() != text.len() || visual.dim() != text.dim() {
        return Err(Error::shape(
            "cosine_forward",
            format!("{}x{}", visual.len(), visual.dim()),
            format!("{}x{}", text.len(), text.dim()),
        ));
    }
    let (visual_unit, visual_norms) = normalize_rows(visual)?;
    let (text_unit, text_norms) = normalize_rows(text)?;
    let scores = visual_unit.matmul_t(&text_unit)?;
    Ok(SimilarityMatrix {
        scores,
        cache: Some(UnitCache {
            visual_unit,
            visual_norms,
            text_unit,
            text_norms,
        }),
    })
}

/// Gradients of `Σ grad_scores[i][j]·S[i][j]` with respect to the raw
/// visual and text embeddings.
pub fn cosine_backward(sim: &SimilarityMatrix, grad_scores: &Matrix) -> Result<(Matrix, Matrix)> {
    let cache = sim.cache.as_ref().ok_or_else(|| {
        Error::InvalidConfig("similarity matrix was built from raw scores; no backward cache".into())
    })?;
    if grad_scores.shape() != sim.scores.shape() {
        return Err(Error::shape(
            "cosine_backward",
            format!("{:?}", sim.scores.shape()),
            format!("{:?}", grad_scores.shape()),
        ));
    }
    // d/dv̂ = G·T̂, d/dt̂ = Gᵀ·V̂
    let grad_vu = grad_scores.matmul(&cache.text_unit)?;
    let grad_tu = grad_scores.t_matmul(&cache.visual_unit)?;
    Ok((
        through_normalization(grad_vu, &cache.visual_unit, &cache.visual_norms),
        through_normalization(grad_tu, &cache.text_unit, &cache.text_norms),
    ))
}

/// Applies `(I - ûûᵀ)/‖u‖` row by row.
fn through_normalization(mut grad: Matrix, unit: &Matrix, norms: &[f64]) -> Matrix {
    for (i, &norm) in norms.iter().enumerate() {
        let u = unit.row(i);
        let along = dot(grad.row(i), u);
        for (g, &uk) in grad.row_mut(i).iter_mut().zip(u) {
            *g = (*g - along * uk) / norm;
        }
    }
    grad
}
