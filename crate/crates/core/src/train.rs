//! Minibatch training of the dual encoder against any [`LossSpec`].

use serde::{Deserialize, Serialize};

use crate::data::{FeaturePairSet, Split};
use crate::error::{Error, Result};
use crate::eval::{recall_at_k, RecallReport, DEFAULT_KS};
use crate::loss::{loss_dispatch, LossSpec};
use crate::matrix::Matrix;
use crate::model::{adam_step, encode, encode_backward, AdamConfig, AdamState, EncoderParams};
use crate::rng::Rng;
use crate::similarity::{cosine_backward, cosine_forward};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub embed_dim: usize,
    /// Width of an optional tanh hidden layer in both encoders.
    pub hidden_dim: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Multiply the learning rate by `lr_decay_factor` once this many epochs
    /// have completed.
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: None,
            epochs: 30,
            batch_size: 128,
            adam: AdamConfig::default(),
            lr_decay_epoch: None,
            lr_decay_factor: 0.1,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.embed_dim < 1 {
            return bad("embedding dimension must be positive".into());
        }
        if self.hidden_dim == Some(0) {
            return bad("hidden width must be positive".into());
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad(format!("invalid Adam settings {a:?}"));
        }
        if !(self.lr_decay_factor > 0.0) {
            return bad(format!("lr decay factor must be positive, got {}", self.lr_decay_factor));
        }
        Ok(())
    }
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub r1_i2t: f64,
    pub r5_i2t: f64,
    pub r10_i2t: f64,
    pub r1_t2i: f64,
    pub r5_t2i: f64,
    pub r10_t2i: f64,
    pub mined_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub log: Vec<EpochRecord>,
}

/// Recall of `params` on one split. Cutoffs larger than the split are
/// clamped to its size.
pub fn evaluate_split(
    params: &EncoderParams,
    data: &FeaturePairSet,
    split: Split,
    ks: &[usize],
) -> Result<RecallReport> {
    let (v, t) = data.split_matrices(split);
    let n = v.rows();
    if n == 0 {
        return Err(Error::InvalidConfig(format!("the {split:?} split is empty")));
    }
    let (ve, te) = encode(params, &v, &t)?;
    let sim = cosine_forward(&ve, &te)?;
    let clamped: Vec<usize> = ks.iter().map(|&k| k.min(n)).collect();
    let mut report = recall_at_k(&sim, &clamped)?;
    // report under the requested keys
    for (&k, &c) in ks.iter().zip(&clamped) {
        if k != c {
            let i2t = report.i2t[&c];
            let t2i = report.t2i[&c];
            report.i2t.insert(k, i2t);
            report.t2i.insert(k, t2i);
        }
    }
    report.i2t.retain(|k, _| ks.contains(k));
    report.t2i.retain(|k, _| ks.contains(k));
    Ok(report)
}

/// Loss, parameter gradients and diagnostics for one batch.
pub fn batch_gradients(
    params: &EncoderParams,
    spec: &LossSpec,
    visual_raw: &Matrix,
    text_raw: &Matrix,
) -> Result<(f64, crate::model::ParamGrads, f64)> {
    let (ve, te) = encode(params, visual_raw, text_raw)?;
    let sim = cosine_forward(&ve, &te)?;
    let loss = loss_dispatch(&sim, spec)?;
    let (gv, gt) = cosine_backward(&sim, &loss.grad_scores)?;
    let grads = encode_backward(params, visual_raw, text_raw, &gv, &gt)?;
    Ok((loss.value, grads, loss.diagnostics.mined_fraction()))
}

pub fn train(data: &FeaturePairSet, spec: &LossSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(data, spec, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after each epoch's record is made.
pub fn train_with(
    data: &FeaturePairSet,
    spec: &LossSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("dataset is empty".into()));
    }
    let mut params = EncoderParams::init(
        cfg.seed,
        data.visual_dim(),
        data.text_dim(),
        cfg.embed_dim,
        cfg.hidden_dim,
    );
    let mut log = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { params, log });
    }

    let train_idx = data.indices(Split::Train);
    let batches_per_epoch = train_idx.len() / cfg.batch_size;
    if batches_per_epoch == 0 {
        return Err(Error::InvalidConfig(format!(
            "{} training pairs cannot fill one batch of {}",
            train_idx.len(),
            cfg.batch_size
        )));
    }
    if data.indices(Split::Val).is_empty() {
        return Err(Error::InvalidConfig("validation split is empty".into()));
    }

    let mut adam = AdamState::new(&params, cfg.adam);
    let mut shuffle_rng = Rng::new(cfg.seed).fork(0x5fu64);
    let mut order = train_idx;

    for epoch in 1..=cfg.epochs {
        if cfg.lr_decay_epoch == Some(epoch - 1) {
            adam.config.lr *= cfg.lr_decay_factor;
        }
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut mined_sum = 0.0;
        for batch in order.chunks_exact(cfg.batch_size) {
            let v = data.visual().select_rows(batch);
            let t = data.text().select_rows(batch);
            let (loss, grads, mined) = batch_gradients(&params, spec, &v, &t)?;
            adam_step(&mut adam, &mut params, &grads)?;
            loss_sum += loss;
            mined_sum += mined;
        }
        let report = evaluate_split(&params, data, Split::Val, &DEFAULT_KS)?;
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / batches_per_epoch as f64,
            r1_i2t: report.i2t[&1],
            r5_i2t: report.i2t[&5],
            r10_i2t: report.i2t[&10],
            r1_t2i: report.t2i[&1],
            r5_t2i: report.t2i[&5],
            r10_t2i: report.t2i[&10],
            mined_fraction: mined_sum / batches_per_epoch as f64,
        };
        on_epoch(&record);
        log.push(record);
    }
    Ok(TrainOutcome { params, log })
}

/// Each epoch's batches, as [`train`] would visit them. Exposed so callers
/// can audit shuffling.
pub fn epoch_batches(data: &FeaturePairSet, cfg: &TrainConfig) -> Vec<Vec<Vec<usize>>> {
    let mut rng = Rng::new(cfg.seed).fork(0x5fu64);
    let mut order = data.indices(Split::Train);
    (0..cfg.epochs)
        .map(|_| {
            rng.shuffle(&mut order);
            order
                .chunks_exact(cfg.batch_size)
                .map(<[usize]>::to_vec)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::PolyCoefficients;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn tiny() -> FeaturePairSet {
        generate_synthetic(&SyntheticSpec {
            num_classes: 4,
            pairs_per_class: 25,
            latent_dim: 4,
            d1: 6,
            d2: 5,
            noise_sigma: 0.1,
            seed: 2,
        })
        .unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            embed_dim: 4,
            epochs,
            batch_size: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let data = tiny();
        let out = train(&data, &LossSpec::max_poly(PolyCoefficients::mscoco()), &cfg(0)).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.params, EncoderParams::init(1, 6, 5, 4, None));
    }

    #[test]
    fn same_seed_same_log() {
        let data = tiny();
        let spec = LossSpec::avg_poly(PolyCoefficients::mscoco());
        let a = train(&data, &spec, &cfg(3)).unwrap();
        let b = train(&data, &spec, &cfg(3)).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.len(), 3);
    }

    #[test]
    fn every_pair_visited_once_per_epoch() {
        let data = tiny();
        let c = TrainConfig {
            batch_size: 20,
            ..cfg(4)
        };
        for epoch in epoch_batches(&data, &c) {
            let mut seen: Vec<usize> = epoch.concat();
            // 80 training pairs fill exactly 4 batches of 20
            assert_eq!(seen.len(), 80);
            seen.sort_unstable();
            assert_eq!(seen, data.indices(Split::Train));
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let data = tiny();
        let spec = LossSpec::triplet(0.2);
        let bad = TrainConfig {
            batch_size: 1,
            ..cfg(1)
        };
        assert!(matches!(train(&data, &spec, &bad), Err(Error::InvalidConfig(_))));
        let bad_coeffs = LossSpec::max_poly(PolyCoefficients::new(vec![0.0, 1.0], vec![0.0, 1.0]));
        assert!(matches!(
            train(&data, &bad_coeffs, &cfg(1)),
            Err(Error::InvalidCoefficients(_))
        ));
    }

    #[test]
    fn lr_decay_changes_trajectory() {
        let data = tiny();
        let spec = LossSpec::max_poly(PolyCoefficients::mscoco());
        let plain = train(&data, &spec, &cfg(3)).unwrap();
        let decayed = train(
            &data,
            &spec,
            &TrainConfig {
                lr_decay_epoch: Some(1),
                ..cfg(3)
            },
        )
        .unwrap();
        assert_eq!(plain.log[0], decayed.log[0]);
        assert_ne!(plain.params, decayed.params);
    }
}
