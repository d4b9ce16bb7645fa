#![allow(dead_code)]

use polyloss::rng::Rng;
use polyloss::{Matrix, SimilarityMatrix};

/// Uniform scores in (-1, 1); no cosine cache attached.
pub fn random_scores(rng: &mut Rng, n: usize) -> SimilarityMatrix {
    let m = Matrix::from_fn(n, n, |_, _| rng.uniform(-0.999, 0.999));
    SimilarityMatrix::from_scores(m).unwrap()
}

/// Scores on a coarse 0.05 grid so equal values and exact margin ties occur.
pub fn grid_scores(rng: &mut Rng, n: usize) -> SimilarityMatrix {
    let m = Matrix::from_fn(n, n, |_, _| (rng.below(41) as f64 - 20.0) * 0.05);
    SimilarityMatrix::from_scores(m).unwrap()
}

pub fn gaussian(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
