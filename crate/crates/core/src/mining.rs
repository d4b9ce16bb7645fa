//! Informative negative selection: a negative is kept when it scores
//! strictly higher than the anchor's positive score minus a margin.

use crate::similarity::SimilarityMatrix;

/// Row mask: `(i, j)` set iff text `j` is a mined negative for visual anchor
/// `i`. Column mask: `(i, j)` set iff visual `i` is a mined negative for text
/// anchor `j`. Both are `N×N`, row-major, with a false diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MiningMask {
    n: usize,
    row_mask: Vec<bool>,
    col_mask: Vec<bool>,
}

impl MiningMask {
    /// Every off-diagonal pair selected in both directions (mining disabled).
    pub fn all_negatives(n: usize) -> Self {
        let mask: Vec<bool> = (0..n * n).map(|k| k / n != k % n).collect();
        Self {
            n,
            row_mask: mask.clone(),
            col_mask: mask,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, i: usize, j: usize) -> bool {
        self.row_mask[i * self.n + j]
    }

    #[inline]
    pub fn col(&self, i: usize, j: usize) -> bool {
        self.col_mask[i * self.n + j]
    }

    /// Mined negatives of visual anchor `i`.
    pub fn row_count(&self, i: usize) -> usize {
        self.row_mask[i * self.n..(i + 1) * self.n]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// Mined negatives of text anchor `j`.
    pub fn col_count(&self, j: usize) -> usize {
        (0..self.n).filter(|&i| self.col(i, j)).count()
    }

    pub fn total(&self) -> usize {
        self.row_mask.iter().chain(&self.col_mask).filter(|&&b| b).count()
    }
}

pub fn mine(sim: &SimilarityMatrix, margin: f64) -> MiningMask {
    let n = sim.n();
    let mut row_mask = vec![false; n * n];
    let mut col_mask = vec![false; n * n];
    let thresholds: Vec<f64> = (0..n).map(|k| sim.positive(k) - margin).collect();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = sim.get(i, j);
            row_mask[i * n + j] = s > thresholds[i];
            col_mask[i * n + j] = s > thresholds[j];
        }
    }
    MiningMask {
        n,
        row_mask,
        col_mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::rng::Rng;

    fn sim(rows: &[Vec<f64>]) -> SimilarityMatrix {
        SimilarityMatrix::from_scores(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    /// Written out directly from the selection rule.
    fn reference(s: &SimilarityMatrix, margin: f64) -> (Vec<bool>, Vec<bool>) {
        let n = s.n();
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        for i in 0..n {
            for j in 0..n {
                rows.push(i != j && s.get(i, j) > s.get(i, i) - margin);
                cols.push(i != j && s.get(i, j) > s.get(j, j) - margin);
            }
        }
        (rows, cols)
    }

    #[test]
    fn nothing_mined_with_clear_margins() {
        let s = sim(&[
            vec![1.0, 0.8, 0.1],
            vec![0.5, 1.0, 0.8],
            vec![-0.2, 0.0, 1.0],
        ]);
        assert_eq!(mine(&s, 0.2).total(), 0);
    }

    #[test]
    fn two_by_two_example() {
        let m = mine(&sim(&[vec![0.8, 0.75], vec![0.3, 0.6]]), 0.2);
        assert!(m.row(0, 1) && !m.row(1, 0));
        assert!(m.col(0, 1) && !m.col(1, 0));
        assert_eq!((m.row_count(0), m.row_count(1)), (1, 0));
        assert_eq!((m.col_count(0), m.col_count(1)), (0, 1));
    }

    #[test]
    fn large_margin_selects_every_negative() {
        let s = sim(&[vec![0.99, -0.99, 0.3], vec![-0.99, 0.99, 0.0], vec![0.9, -0.5, 0.99]]);
        assert_eq!(mine(&s, 2.0), MiningMask::all_negatives(3));
    }

    #[test]
    fn ties_are_excluded() {
        // 0.5 == 0.7 - 0.2 is not exact in binary, so build the tie explicitly.
        let threshold = 0.7 - 0.2;
        let m = mine(&sim(&[vec![0.7, threshold], vec![-1.0, 1.0]]), 0.2);
        assert!(!m.row(0, 1));
    }

    #[test]
    fn matches_double_loop_reference() {
        let mut rng = Rng::new(11);
        for _ in 0..1000 {
            let n = 2 + rng.below(15);
            let scores = Matrix::from_fn(n, n, |_, _| rng.uniform(-1.0, 1.0));
            let s = SimilarityMatrix::from_scores(scores).unwrap();
            let margin = rng.uniform(0.0, 0.5);
            let m = mine(&s, margin);
            let (rows, cols) = reference(&s, margin);
            assert_eq!(m.row_mask, rows);
            assert_eq!(m.col_mask, cols);
            // widening the margin only adds negatives
            let wider = mine(&s, margin + rng.uniform(0.0, 0.3));
            for k in 0..n * n {
                assert!(!m.row_mask[k] || wider.row_mask[k]);
                assert!(!m.col_mask[k] || wider.col_mask[k]);
            }
            for i in 0..n {
                assert!(!m.row(i, i) && !m.col(i, i));
            }
        }
    }
}
