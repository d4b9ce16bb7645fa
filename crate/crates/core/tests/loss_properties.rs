mod common;

use polyloss::coeffs::PolyCoefficients;
use polyloss::gradcheck::boundary_clearance;
use polyloss::loss::{
    avg_poly_forward_backward, max_poly_forward_backward, triplet_forward_backward,
};
use polyloss::rng::Rng;
use polyloss::{loss_dispatch, poly_deriv_eval, poly_eval, LossKind, LossSpec, Matrix, SimilarityMatrix};
use proptest::prelude::*;

use common::{max_abs_diff, random_scores};

fn sim(rows: &[Vec<f64>]) -> SimilarityMatrix {
    SimilarityMatrix::from_scores(Matrix::from_rows(rows).unwrap()).unwrap()
}

fn spec(kind: LossKind) -> LossSpec {
    match kind {
        LossKind::Triplet => LossSpec::triplet(0.2),
        LossKind::AvgPoly => LossSpec::avg_poly(PolyCoefficients::mscoco()),
        LossKind::MaxPoly => LossSpec::max_poly(PolyCoefficients::mscoco()),
    }
}

fn perturbed(s: &SimilarityMatrix, i: usize, j: usize, delta: f64) -> SimilarityMatrix {
    let mut m = s.scores().clone();
    m.set(i, j, m.get(i, j) + delta);
    SimilarityMatrix::from_scores(m).unwrap()
}

#[test]
fn analytic_gradient_matches_central_differences() {
    const H: f64 = 1e-5;
    for kind in [LossKind::Triplet, LossKind::AvgPoly, LossKind::MaxPoly] {
        let spec = spec(kind);
        let mut rng = Rng::new(41);
        let mut checked = 0;
        while checked < 100 {
            let n = 3 + rng.below(6);
            // Scores near the diagonal-heavy regime so hinges are often active.
            let mut s = random_scores(&mut rng, n);
            let mut m = s.scores().clone();
            for i in 0..n {
                m.set(i, i, rng.uniform(0.3, 0.95));
            }
            s = SimilarityMatrix::from_scores(m).unwrap();
            if boundary_clearance(&s, &spec) < 1e-3 {
                continue;
            }
            let analytic = loss_dispatch(&s, &spec).unwrap().grad_scores;
            let floor = 1e-3 * analytic.max_abs().max(1e-12);
            for i in 0..n {
                for j in 0..n {
                    let up = loss_dispatch(&perturbed(&s, i, j, H), &spec).unwrap().value;
                    let down = loss_dispatch(&perturbed(&s, i, j, -H), &spec).unwrap().value;
                    let numeric = (up - down) / (2.0 * H);
                    let a = analytic.get(i, j);
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                    assert!(rel <= 1e-5, "{kind:?} n={n} ({i},{j}) analytic {a} numeric {numeric}");
                }
            }
            checked += 1;
        }
    }
}

#[test]
fn triplet_examples() {
    let identity = SimilarityMatrix::from_scores(Matrix::identity(4)).unwrap();
    let r = triplet_forward_backward(&identity, 0.2).unwrap();
    assert_eq!(r.value, 0.0);
    assert_eq!(r.grad_scores.max_abs(), 0.0);

    let flat = sim(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
    assert!((triplet_forward_backward(&flat, 0.2).unwrap().value - 0.4).abs() < 1e-15);
}

#[test]
fn dispatch_routes_to_each_kind() {
    let mut rng = Rng::new(5);
    let s = random_scores(&mut rng, 6);
    let c = PolyCoefficients::mscoco();
    let pairs = [
        (LossSpec::triplet(0.2), triplet_forward_backward(&s, 0.2).unwrap()),
        (LossSpec::avg_poly(c.clone()), avg_poly_forward_backward(&s, &c, true).unwrap()),
        (LossSpec::max_poly(c.clone()), max_poly_forward_backward(&s, &c, true).unwrap()),
    ];
    for (spec, direct) in pairs {
        let routed = loss_dispatch(&s, &spec).unwrap();
        assert_eq!(routed.value, direct.value);
        assert_eq!(routed.grad_scores, direct.grad_scores);
    }
}

#[test]
fn empty_mined_sets_give_zero_loss() {
    // Off-diagonal scores far below every positive: nothing is mined.
    let s = sim(&[vec![0.9, -0.5, -0.5], vec![-0.5, 0.9, -0.5], vec![-0.5, -0.5, 0.9]]);
    for kind in [LossKind::AvgPoly, LossKind::MaxPoly] {
        let r = loss_dispatch(&s, &spec(kind)).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.grad_scores.max_abs(), 0.0);
        assert_eq!(r.diagnostics.mined_fraction(), 0.0);
    }
}

#[test]
fn single_pair_batches_are_rejected() {
    let s = sim(&[vec![0.5]]);
    for kind in [LossKind::Triplet, LossKind::AvgPoly, LossKind::MaxPoly] {
        assert!(loss_dispatch(&s, &spec(kind)).is_err());
    }
}

#[derive(Clone, Copy)]
enum Reduce {
    Mean,
    Hardest,
}

/// Loss assembled as weighted sums over pairs: for each anchor the positive
/// entry carries weight a'(S_ii)/N and each contributing negative carries
/// b'(S_ij)/(N*Num) (mean) or b'(S_ij)/N (hardest only), all gated by the hinge.
fn weighted_sum_reference(
    s: &SimilarityMatrix,
    c: &PolyCoefficients,
    mining: bool,
    reduce: Reduce,
) -> (f64, Vec<f64>) {
    let n = s.n();
    let nf = n as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n * n];
    // direction 0: visual anchors walk rows; direction 1: text anchors walk columns
    for direction in 0..2 {
        for a in 0..n {
            let at = |o: usize| if direction == 0 { (a, o) } else { (o, a) };
            let pos_s = s.get(a, a);
            let mined: Vec<usize> = (0..n)
                .filter(|&o| o != a)
                .filter(|&o| {
                    let (i, j) = at(o);
                    !mining || s.get(i, j) > pos_s - c.mining_margin
                })
                .collect();
            if mined.is_empty() {
                continue;
            }
            let contributing: Vec<usize> = match reduce {
                Reduce::Mean => mined.clone(),
                Reduce::Hardest => {
                    let mut best = mined[0];
                    for &o in &mined {
                        let (i, j) = at(o);
                        let (bi, bj) = at(best);
                        if s.get(i, j) > s.get(bi, bj) {
                            best = o;
                        }
                    }
                    vec![best]
                }
            };
            let share = 1.0 / contributing.len() as f64;
            let neg_term: f64 = contributing
                .iter()
                .map(|&o| {
                    let (i, j) = at(o);
                    share * poly_eval(&c.neg, s.get(i, j))
                })
                .sum();
            let hinge = poly_eval(&c.pos, pos_s) + neg_term;
            if hinge <= 0.0 {
                continue;
            }
            value += hinge / nf;
            grad[a * n + a] += poly_deriv_eval(&c.pos, pos_s) / nf;
            for &o in &contributing {
                let (i, j) = at(o);
                grad[i * n + j] += share * poly_deriv_eval(&c.neg, s.get(i, j)) / nf;
            }
        }
    }
    (value, grad)
}

fn coefficient_set() -> impl Strategy<Value = PolyCoefficients> {
    prop::sample::select(
        PolyCoefficients::published()
            .into_iter()
            .map(|(_, c)| c)
            .collect::<Vec<_>>(),
    )
}

fn score_matrix(max_n: usize) -> impl Strategy<Value = SimilarityMatrix> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
            SimilarityMatrix::from_scores(Matrix::new(n, n, v).unwrap()).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn poly_losses_match_weighted_sum_reference(
        s in score_matrix(9),
        c in coefficient_set(),
        mining in any::<bool>(),
    ) {
        let n = s.n();
        let cases = [
            (avg_poly_forward_backward(&s, &c, mining).unwrap(), Reduce::Mean),
            (max_poly_forward_backward(&s, &c, mining).unwrap(), Reduce::Hardest),
        ];
        for (got, reduce) in cases {
            let (value, grad) = weighted_sum_reference(&s, &c, mining, reduce);
            prop_assert!((got.value - value).abs() <= 1e-12);
            let expected = Matrix::new(n, n, grad).unwrap();
            prop_assert!(max_abs_diff(&got.grad_scores, &expected) <= 1e-12);
        }
    }

    #[test]
    fn max_poly_with_triplet_coefficients_is_the_triplet_loss(
        s in score_matrix(16),
        margin in 0.0f64..0.6,
    ) {
        let t = triplet_forward_backward(&s, margin).unwrap();
        let p = max_poly_forward_backward(&s, &PolyCoefficients::triplet_equivalent(margin), false).unwrap();
        prop_assert!((t.value - p.value).abs() <= 1e-12);
        prop_assert!(max_abs_diff(&t.grad_scores, &p.grad_scores) <= 1e-12);
    }

    #[test]
    fn avg_and_max_agree_on_singleton_mined_sets(
        s in score_matrix(2),
        c in coefficient_set(),
        mining in any::<bool>(),
    ) {
        let a = avg_poly_forward_backward(&s, &c, mining).unwrap();
        let m = max_poly_forward_backward(&s, &c, mining).unwrap();
        prop_assert_eq!(a.value, m.value);
        prop_assert_eq!(a.grad_scores, m.grad_scores);
    }

    #[test]
    fn published_weights_follow_the_monotonicity_rule(
        c in coefficient_set(),
        x in 0.0f64..1.0,
        y in 0.0f64..1.0,
    ) {
        let (lo, hi) = c.sim_domain;
        let (s1, s2) = (lo + (hi - lo) * x.min(y), lo + (hi - lo) * x.max(y));
        prop_assert!(c.pos_value(s2).abs() <= c.pos_value(s1).abs() + 1e-12);
        prop_assert!(c.neg_value(s2) >= c.neg_value(s1) - 1e-12);
    }

    #[test]
    fn raising_the_hardest_negative_never_lowers_max_poly(
        s in score_matrix(8),
        c in coefficient_set(),
        bump in 1e-4f64..0.05,
    ) {
        let n = s.n();
        let base = max_poly_forward_backward(&s, &c, true).unwrap();
        // hardest mined negative of visual anchor 0, if any
        let mask = polyloss::mine(&s, c.mining_margin);
        let hardest = (1..n)
            .filter(|&j| mask.row(0, j))
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if s.get(0, b) >= s.get(0, j) => Some(b),
                _ => Some(j),
            });
        if let Some(j) = hardest {
            let bumped = perturbed(&s, 0, j, bump);
            if bumped.get(0, j) < 1.0 && bumped.get(0, j) >= c.sim_domain.0 {
                let after = max_poly_forward_backward(&bumped, &c, true).unwrap();
                prop_assert!(after.value >= base.value - 1e-12);
            }
        }
    }
}
