//! Recall@K in both retrieval directions. The true match of query `i` is
//! gallery item `i`; equal scores rank the lower gallery index first.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::similarity::SimilarityMatrix;

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

/// Recall percentages keyed by K, per direction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    /// Image queries against the text gallery (rows).
    pub i2t: BTreeMap<usize, f64>,
    /// Text queries against the image gallery (columns).
    pub t2i: BTreeMap<usize, f64>,
}

impl RecallReport {
    pub fn i2t_at(&self, k: usize) -> Option<f64> {
        self.i2t.get(&k).copied()
    }

    pub fn t2i_at(&self, k: usize) -> Option<f64> {
        self.t2i.get(&k).copied()
    }
}

/// Number of gallery items ranked ahead of the true match, for each query.
fn ranks(scores: &Matrix, transpose: bool) -> Vec<usize> {
    let n = scores.rows();
    let at = |q: usize, g: usize| {
        if transpose {
            scores.get(g, q)
        } else {
            scores.get(q, g)
        }
    };
    (0..n)
        .map(|q| {
            let own = at(q, q);
            (0..n)
                .filter(|&g| {
                    let s = at(q, g);
                    s > own || (s == own && g < q)
                })
                .count()
        })
        .collect()
}

pub fn recall_at_k(sim: &SimilarityMatrix, ks: &[usize]) -> Result<RecallReport> {
    let n = sim.n();
    if let Some(&k) = ks.iter().find(|&&k| k < 1 || k > n) {
        return Err(Error::InvalidCutoff { k, n });
    }
    let summarize = |ranks: Vec<usize>| -> BTreeMap<usize, f64> {
        ks.iter()
            .map(|&k| {
                let hits = ranks.iter().filter(|&&r| r < k).count();
                (k, 100.0 * hits as f64 / n as f64)
            })
            .collect()
    };
    Ok(RecallReport {
        i2t: summarize(ranks(sim.scores(), false)),
        t2i: summarize(ranks(sim.scores(), true)),
    })
}
