//! Grid search over the linear and quadratic negative coefficients with the
//! constant term held fixed. Each cell is an independent, identically seeded
//! training run, so cells may run in parallel without changing results.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::validate_coefficients;
use crate::data::FeaturePairSet;
use crate::error::{Error, Result};
use crate::loss::{LossKind, LossSpec};
use crate::train::{train, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub b1: f64,
    pub b2: f64,
    pub valid: bool,
    pub r1_i2t: Option<f64>,
    pub r1_t2i: Option<f64>,
}

impl SweepRow {
    fn score(&self) -> Option<f64> {
        Some(self.r1_i2t? + self.r1_t2i?)
    }
}

/// `base` with `b1`, `b2` substituted into its negative polynomial.
pub fn cell_spec(base: &LossSpec, b1: f64, b2: f64) -> LossSpec {
    let mut spec = base.clone();
    let neg = &mut spec.coefficients.neg;
    if neg.len() < 3 {
        neg.resize(3, 0.0);
    }
    neg[1] = b1;
    neg[2] = b2;
    spec
}

pub fn run_sweep(
    data: &FeaturePairSet,
    base: &LossSpec,
    cfg: &TrainConfig,
    b1_grid: &[f64],
    b2_grid: &[f64],
) -> Result<Vec<SweepRow>> {
    if base.kind == LossKind::Triplet {
        return Err(Error::InvalidConfig(
            "a coefficient sweep needs a polynomial loss".into(),
        ));
    }
    if b1_grid.is_empty() || b2_grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grids must be non-empty".into()));
    }
    let cells: Vec<(f64, f64)> = b1_grid
        .iter()
        .flat_map(|&b1| b2_grid.iter().map(move |&b2| (b1, b2)))
        .collect();
    cells
        .par_iter()
        .map(|&(b1, b2)| {
            let spec = cell_spec(base, b1, b2);
            if !validate_coefficients(&spec.coefficients).is_ok() {
                return Ok(SweepRow {
                    b1,
                    b2,
                    valid: false,
                    r1_i2t: None,
                    r1_t2i: None,
                });
            }
            let out = train(data, &spec, cfg)?;
            let last = out.log.last();
            Ok(SweepRow {
                b1,
                b2,
                valid: true,
                r1_i2t: last.map(|r| r.r1_i2t),
                r1_t2i: last.map(|r| r.r1_t2i),
            })
        })
        .collect()
}

/// Highest summed R@1; the earliest cell wins ties.
pub fn best_cell(rows: &[SweepRow]) -> Option<&SweepRow> {
    rows.iter()
        .filter(|r| r.score().is_some())
        .fold(None, |best: Option<&SweepRow>, r| match best {
            Some(b) if b.score() >= r.score() => Some(b),
            _ => Some(r),
        })
}

pub fn write_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let to_err = |e: csv::Error| Error::InvalidConfig(format!("writing sweep CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["b1", "b2", "r1_i2t", "r1_t2i", "status"])
        .map_err(to_err)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.b1.to_string(),
            r.b2.to_string(),
            fmt(r.r1_i2t),
            fmt(r.r1_t2i),
            if r.valid { "ok" } else { "invalid" }.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidConfig(format!("writing sweep CSV: {e}")))?;
    Ok(())
}
