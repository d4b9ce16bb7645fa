//! Run configuration shared by the CLI commands, and the model file format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coeffs::{PolyCoefficients, DEFAULT_MINING_MARGIN, DEFAULT_SIM_DOMAIN};
use crate::data::{generate_synthetic, load_any, FeaturePairSet, SyntheticSpec};
use crate::error::{Error, Result};
use crate::loss::{LossKind, LossSpec};
use crate::model::{AdamConfig, EncoderParams};
use crate::train::TrainConfig;

/// Everything needed to reproduce a training run. Field names double as the
/// JSON config file keys; missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub loss: LossKind,
    /// Positive polynomial, ascending powers.
    pub a: Vec<f64>,
    /// Negative polynomial, ascending powers.
    pub b: Vec<f64>,
    pub mining_margin: f64,
    pub mining: bool,
    pub triplet_margin: f64,
    pub sim_domain: (f64, f64),
    pub embed_dim: usize,
    pub hidden_dim: Option<usize>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Feature file (XMF1 or CSV). When absent, `synthetic` is generated.
    pub data: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = PolyCoefficients::default();
        let t = TrainConfig::default();
        Self {
            loss: LossKind::MaxPoly,
            a: c.pos,
            b: c.neg,
            mining_margin: DEFAULT_MINING_MARGIN,
            mining: true,
            triplet_margin: DEFAULT_MINING_MARGIN,
            sim_domain: DEFAULT_SIM_DOMAIN,
            embed_dim: t.embed_dim,
            hidden_dim: t.hidden_dim,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            lr_decay_epoch: t.lr_decay_epoch,
            lr_decay_factor: t.lr_decay_factor,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            data: None,
            synthetic: SyntheticSpec::default(),
            out_dir: PathBuf::from("runs/latest"),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn coefficients(&self) -> PolyCoefficients {
        PolyCoefficients {
            pos: self.a.clone(),
            neg: self.b.clone(),
            mining_margin: self.mining_margin,
            sim_domain: self.sim_domain,
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            kind: self.loss,
            coefficients: self.coefficients(),
            triplet_margin: self.triplet_margin,
            mining_enabled: self.mining,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            lr_decay_epoch: self.lr_decay_epoch,
            lr_decay_factor: self.lr_decay_factor,
            seed: self.seed,
        }
    }

    /// The monotonicity check applies to the polynomial losses only; the
    /// triplet loss ignores `a` and `b`.
    pub fn validate(&self) -> Result<()> {
        self.loss_spec().validate()?;
        if self.loss != LossKind::Triplet {
            crate::coeffs::validate_coefficients(&self.coefficients()).into_result()?;
        }
        self.train_config().validate()?;
        if let Some(path) = &self.data {
            if !path.is_file() {
                return Err(Error::InvalidConfig(format!(
                    "data file {} does not exist",
                    path.display()
                )));
            }
        } else {
            self.synthetic.validate()?;
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<FeaturePairSet> {
        match &self.data {
            Some(path) => load_any(path),
            None => generate_synthetic(&self.synthetic),
        }
    }
}

/// Saved trained model: the encoders plus what produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub loss: LossSpec,
    pub train: TrainConfig,
    pub params: EncoderParams,
}

impl ModelFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("serializing model: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ModelFile = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("not a model file: {e}")))?;
        if !model.params.is_finite() {
            return Err(Error::format(path, "model parameters are not finite"));
        }
        Ok(model)
    }
}
