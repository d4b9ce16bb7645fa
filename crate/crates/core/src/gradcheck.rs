//! Central finite-difference verification of every analytic gradient in the
//! training path: similarity backward, the three losses, and the full
//! encoder → similarity → loss chain.
//!
//! Error for one entry is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
//! where `floor` is `REL_FLOOR_FRACTION` of the largest gradient entry of the
//! instance, so entries that are negligible next to the rest of the gradient
//! are judged on their absolute error.

use serde::Serialize;

use crate::coeffs::PolyCoefficients;
use crate::error::Result;
use crate::loss::{loss_dispatch, LossKind, LossSpec};
use crate::matrix::{dot, Matrix};
use crate::mining::{mine, MiningMask};
use crate::model::{encode, EncoderParams, Projection};
use crate::rng::Rng;
use crate::similarity::{cosine_backward, cosine_forward, EmbeddingBatch, SimilarityMatrix};
use crate::train::batch_gradients;

pub const FD_STEP: f64 = 1e-5;
pub const SIMILARITY_TOLERANCE: f64 = 1e-5;
pub const LOSS_TOLERANCE: f64 = 1e-5;
pub const ENCODER_TOLERANCE: f64 = 1e-4;
/// Instances closer than this to a hinge, mining threshold or argmax switch
/// are redrawn.
pub const BOUNDARY_CLEARANCE: f64 = 1e-3;
pub const REL_FLOOR_FRACTION: f64 = 1e-3;
/// Multiplier applied to analytic gradients by the self-test fault.
const INJECTED_FAULT: f64 = 1.0 + 1e-2;
const MAX_REDRAWS: usize = 10_000;

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (REL_FLOOR_FRACTION * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentReport {
    pub component: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl ComponentReport {
    fn new(component: &'static str, trials: usize, max_rel_err: f64, tolerance: f64) -> Self {
        Self {
            component,
            trials,
            max_rel_err,
            tolerance,
            passed: max_rel_err <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub loss: LossKind,
    pub seed: u64,
    pub components: Vec<ComponentReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub spec: LossSpec,
    pub trials: usize,
    pub seed: u64,
    /// Corrupt analytic gradients to prove the harness can fail.
    pub inject_bug: bool,
}

impl GradCheckOptions {
    pub fn for_kind(kind: LossKind, trials: usize, seed: u64) -> Self {
        let spec = match kind {
            LossKind::Triplet => LossSpec::triplet(0.2),
            LossKind::AvgPoly => LossSpec::avg_poly(PolyCoefficients::default()),
            LossKind::MaxPoly => LossSpec::max_poly(PolyCoefficients::default()),
        };
        Self {
            spec,
            trials,
            seed,
            inject_bug: false,
        }
    }
}

pub fn run(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let root = Rng::new(opts.seed);
    Ok(GradCheckReport {
        loss: opts.spec.kind,
        seed: opts.seed,
        components: vec![
            check_similarity(&mut root.fork(1), opts.trials, opts.inject_bug)?,
            check_loss(&mut root.fork(2), &opts.spec, opts.trials, opts.inject_bug)?,
            check_encoder_chain(&mut root.fork(3), &opts.spec, opts.trials, opts.inject_bug)?,
        ],
    })
}

/// Distance from the nearest point where the loss stops being smooth:
/// a hinge argument at zero, a negative on its mining threshold, or two
/// candidates tied for the max.
pub fn boundary_clearance(sim: &SimilarityMatrix, spec: &LossSpec) -> f64 {
    let n = sim.n();
    let c = &spec.coefficients;
    let candidates = match spec.kind {
        LossKind::Triplet => MiningMask::all_negatives(n),
        _ if spec.mining_enabled => mine(sim, c.mining_margin),
        _ => MiningMask::all_negatives(n),
    };
    let mut clearance = f64::INFINITY;

    if spec.kind != LossKind::Triplet && spec.mining_enabled {
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let s = sim.get(i, j);
                clearance = clearance.min((s - (sim.get(i, i) - c.mining_margin)).abs());
                clearance = clearance.min((s - (sim.get(j, j) - c.mining_margin)).abs());
            }
        }
    }

    for anchor in 0..n {
        for by_row in [true, false] {
            let mut negs: Vec<f64> = (0..n)
                .filter(|&o| o != anchor)
                .filter(|&o| {
                    if by_row {
                        candidates.row(anchor, o)
                    } else {
                        candidates.col(o, anchor)
                    }
                })
                .map(|o| if by_row { sim.get(anchor, o) } else { sim.get(o, anchor) })
                .collect();
            if negs.is_empty() {
                continue;
            }
            negs.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let own = sim.positive(anchor);
            let term = match spec.kind {
                LossKind::Triplet => negs[0] - own + spec.triplet_margin,
                LossKind::MaxPoly => c.pos_value(own) + c.neg_value(negs[0]),
                LossKind::AvgPoly => {
                    c.pos_value(own)
                        + negs.iter().map(|&s| c.neg_value(s)).sum::<f64>() / negs.len() as f64
                }
            };
            clearance = clearance.min(term.abs());
            if spec.kind != LossKind::AvgPoly && negs.len() > 1 {
                clearance = clearance.min(negs[0] - negs[1]);
            }
        }
    }
    clearance
}

fn uniform_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
}

/// Rows drawn uniformly from the cube, redrawn when too short.
fn well_normed(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = uniform_matrix(rng, rows, cols);
    for i in 0..rows {
        while dot(m.row(i), m.row(i)).sqrt() < 0.2 {
            for x in m.row_mut(i) {
                *x = rng.uniform(-1.0, 1.0);
            }
        }
    }
    m
}

fn central_difference(values: &mut [f64], idx: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = values[idx];
    values[idx] = orig + FD_STEP;
    let up = f(values);
    values[idx] = orig - FD_STEP;
    let down = f(values);
    values[idx] = orig;
    (up - down) / (2.0 * FD_STEP)
}

pub fn check_similarity(rng: &mut Rng, trials: usize, inject_bug: bool) -> Result<ComponentReport> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = 2 + rng.below(7);
        let d = 1 + rng.below(6);
        let v = well_normed(rng, n, d);
        let t = well_normed(rng, n, d);
        let upstream = uniform_matrix(rng, n, n);

        let sim = cosine_forward(&EmbeddingBatch::visual(v.clone()), &EmbeddingBatch::text(t.clone()))?;
        let (mut gv, mut gt) = cosine_backward(&sim, &upstream)?;
        if inject_bug {
            gv = gv.map(|x| x * INJECTED_FAULT);
            gt = gt.map(|x| x * INJECTED_FAULT);
        }

        let objective = |vd: &[f64], td: &[f64]| -> f64 {
            let vb = EmbeddingBatch::visual(Matrix::new(n, d, vd.to_vec()).unwrap());
            let tb = EmbeddingBatch::text(Matrix::new(n, d, td.to_vec()).unwrap());
            let s = cosine_forward(&vb, &tb).unwrap();
            dot(s.scores().data(), upstream.data())
        };
        let mut vd = v.into_data();
        let mut td = t.into_data();
        let mut numeric = Vec::with_capacity(2 * n * d);
        for k in 0..vd.len() {
            let tdc = td.clone();
            numeric.push(central_difference(&mut vd, k, |x| objective(x, &tdc)));
        }
        for k in 0..td.len() {
            let vdc = vd.clone();
            numeric.push(central_difference(&mut td, k, |x| objective(&vdc, x)));
        }
        let analytic: Vec<f64> = gv.data().iter().chain(gt.data()).copied().collect();
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(ComponentReport::new("similarity", trials, worst, SIMILARITY_TOLERANCE))
}

/// Random scores in `[-1, 1]`, redrawn until clear of every boundary.
pub fn sample_scores(rng: &mut Rng, n: usize, spec: &LossSpec) -> SimilarityMatrix {
    for _ in 0..MAX_REDRAWS {
        let sim = SimilarityMatrix::from_scores(uniform_matrix(rng, n, n)).unwrap();
        if boundary_clearance(&sim, spec) >= BOUNDARY_CLEARANCE {
            return sim;
        }
    }
    panic!("could not draw a {n}x{n} score matrix clear of loss boundaries");
}

pub fn check_loss(
    rng: &mut Rng,
    spec: &LossSpec,
    trials: usize,
    inject_bug: bool,
) -> Result<ComponentReport> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = 3 + rng.below(6);
        let sim = sample_scores(rng, n, spec);
        let mut analytic = loss_dispatch(&sim, spec)?.grad_scores;
        if inject_bug {
            analytic = analytic.map(|x| x * INJECTED_FAULT);
        }
        let mut values = sim.scores().data().to_vec();
        let numeric: Vec<f64> = (0..values.len())
            .map(|k| {
                central_difference(&mut values, k, |x| {
                    let s = SimilarityMatrix::from_scores(Matrix::new(n, n, x.to_vec()).unwrap())
                        .unwrap();
                    loss_dispatch(&s, spec).unwrap().value
                })
            })
            .collect();
        worst = worst.max(max_relative_error(analytic.data(), &numeric));
    }
    Ok(ComponentReport::new("loss", trials, worst, LOSS_TOLERANCE))
}

pub fn check_encoder_chain(
    rng: &mut Rng,
    spec: &LossSpec,
    trials: usize,
    inject_bug: bool,
) -> Result<ComponentReport> {
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut draws = 0;
    while done < trials {
        draws += 1;
        assert!(draws < MAX_REDRAWS * trials.max(1), "encoder instances never clear boundaries");
        let n = 2 + rng.below(5);
        let d1 = 2 + rng.below(4);
        let d2 = 2 + rng.below(4);
        let d = 2 + rng.below(3);
        let hidden = (rng.below(2) == 1).then(|| 2 + rng.below(3));
        let params = EncoderParams {
            visual: Projection::init(rng, d1, d, hidden),
            text: Projection::init(rng, d2, d, hidden),
        };
        let v = uniform_matrix(rng, n, d1);
        let t = uniform_matrix(rng, n, d2);

        let (ve, te) = encode(&params, &v, &t)?;
        let too_short = |m: &Matrix| (0..m.rows()).any(|i| dot(m.row(i), m.row(i)).sqrt() < 0.05);
        if too_short(&ve.matrix) || too_short(&te.matrix) {
            continue;
        }
        let sim = cosine_forward(&ve, &te)?;
        if boundary_clearance(&sim, spec) < BOUNDARY_CLEARANCE {
            continue;
        }

        let (_, grads, _) = batch_gradients(&params, spec, &v, &t)?;
        let mut analytic: Vec<f64> = grads.tensors.iter().flat_map(|g| g.data().to_vec()).collect();
        if inject_bug {
            analytic.iter_mut().for_each(|x| *x *= INJECTED_FAULT);
        }

        let mut numeric = Vec::with_capacity(analytic.len());
        let count = params.tensors().len();
        for k in 0..count {
            let len = params.tensors()[k].data().len();
            for idx in 0..len {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p.tensors_mut()[k].data_mut()[idx] += delta;
                    batch_gradients(&p, spec, &v, &t).map(|(l, _, _)| l)
                };
                numeric.push((eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP));
            }
        }
        worst = worst.max(max_relative_error(&analytic, &numeric));
        done += 1;
    }
    Ok(ComponentReport::new("encoder_chain", trials, worst, ENCODER_TOLERANCE))
}
