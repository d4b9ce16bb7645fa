mod common;

use polyloss::rng::Rng;
use polyloss::{cosine_backward, cosine_forward, EmbeddingBatch, Error, Matrix};
use proptest::prelude::*;

use common::{gaussian, max_abs_diff};

/// Plain per-pair cosine, no shared normalization.
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

fn objective(v: &Matrix, t: &Matrix, g: &Matrix) -> f64 {
    let mut total = 0.0;
    for i in 0..v.rows() {
        for j in 0..t.rows() {
            total += g.get(i, j) * cosine(v.row(i), t.row(j));
        }
    }
    total
}

fn embeddings() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..7, 1usize..6).prop_flat_map(|(n, d)| {
        let entries = prop::collection::vec(0.1f64..2.0, n * d)
            .prop_flat_map(|mags| {
                let n_signs = mags.len();
                (Just(mags), prop::collection::vec(any::<bool>(), n_signs))
            })
            .prop_map(move |(mags, signs)| {
                let data = mags.iter().zip(&signs).map(|(m, s)| if *s { *m } else { -m }).collect();
                Matrix::new(n, d, data).unwrap()
            });
        (entries.clone(), entries)
    })
}

proptest! {
    #[test]
    fn scores_match_pairwise_cosines((v, t) in embeddings()) {
        let s = cosine_forward(&EmbeddingBatch::visual(v.clone()), &EmbeddingBatch::text(t.clone())).unwrap();
        for i in 0..v.rows() {
            for j in 0..t.rows() {
                let c = cosine(v.row(i), t.row(j));
                prop_assert!((s.get(i, j) - c).abs() <= 1e-12);
                prop_assert!(s.get(i, j).abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn rescaling_rows_leaves_scores_unchanged(
        (v, t) in embeddings(),
        scale in prop::collection::vec(0.01f64..100.0, 12),
    ) {
        let base = cosine_forward(&EmbeddingBatch::visual(v.clone()), &EmbeddingBatch::text(t.clone())).unwrap();
        let sv = Matrix::from_fn(v.rows(), v.cols(), |i, k| v.get(i, k) * scale[i]);
        let st = Matrix::from_fn(t.rows(), t.cols(), |j, k| t.get(j, k) * scale[6 + j]);
        let scaled = cosine_forward(&EmbeddingBatch::visual(sv), &EmbeddingBatch::text(st)).unwrap();
        prop_assert!(max_abs_diff(base.scores(), scaled.scores()) <= 1e-12);
    }

    #[test]
    fn swapping_modalities_transposes_scores((v, t) in embeddings()) {
        let vt = cosine_forward(&EmbeddingBatch::visual(v.clone()), &EmbeddingBatch::text(t.clone())).unwrap();
        let tv = cosine_forward(&EmbeddingBatch::visual(t), &EmbeddingBatch::text(v)).unwrap();
        prop_assert!(max_abs_diff(&vt.scores().transpose(), tv.scores()) <= 1e-15);
    }
}

#[test]
fn backward_matches_finite_differences() {
    const H: f64 = 1e-5;
    let mut rng = Rng::new(17);
    for _ in 0..200 {
        let n = 2 + rng.below(6);
        let d = 2 + rng.below(6);
        let v = gaussian(&mut rng, n, d);
        let t = gaussian(&mut rng, n, d);
        let g = gaussian(&mut rng, n, n);
        let s = cosine_forward(&EmbeddingBatch::visual(v.clone()), &EmbeddingBatch::text(t.clone())).unwrap();
        let (gv, gt) = cosine_backward(&s, &g).unwrap();
        for (analytic, is_visual) in [(&gv, true), (&gt, false)] {
            let floor = 1e-3 * analytic.max_abs().max(1e-12);
            for i in 0..n {
                for k in 0..d {
                    let shifted = |delta: f64| {
                        let (mut v2, mut t2) = (v.clone(), t.clone());
                        let m = if is_visual { &mut v2 } else { &mut t2 };
                        m.set(i, k, m.get(i, k) + delta);
                        objective(&v2, &t2, &g)
                    };
                    let numeric = (shifted(H) - shifted(-H)) / (2.0 * H);
                    let a = analytic.get(i, k);
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                    assert!(rel <= 1e-5, "n={n} d={d} ({i},{k}) analytic {a} numeric {numeric}");
                }
            }
        }
    }
}

#[test]
fn zero_rows_are_rejected() {
    let v = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let t = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
    let err = cosine_forward(&EmbeddingBatch::visual(v), &EmbeddingBatch::text(t)).unwrap_err();
    assert!(matches!(err, Error::ZeroNorm { row: 1, .. }));
    assert!(err.is_numerical());
}

#[test]
fn mismatched_batches_are_rejected() {
    let v = Matrix::zeros(3, 2);
    let t = Matrix::zeros(2, 2);
    assert!(matches!(
        cosine_forward(&EmbeddingBatch::visual(v), &EmbeddingBatch::text(t)),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn backward_needs_cosine_cache() {
    let s = polyloss::SimilarityMatrix::from_scores(Matrix::identity(2)).unwrap();
    assert!(cosine_backward(&s, &Matrix::zeros(2, 2)).is_err());
}
