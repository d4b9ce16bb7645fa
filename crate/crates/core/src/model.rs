//! Dual encoder (one projection per modality) and the Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::similarity::EmbeddingBatch;

/// `x·W`, or `tanh(x·W_hidden)·W` when a hidden layer is present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub hidden: Option<Matrix>,
    pub out: Matrix,
}

impl Projection {
    pub fn linear(weight: Matrix) -> Self {
        Self {
            hidden: None,
            out: weight,
        }
    }

    /// Fan-in uniform initialization, `U(-1/√d_in, 1/√d_in)` per entry.
    pub fn init(rng: &mut Rng, d_in: usize, d_out: usize, hidden: Option<usize>) -> Self {
        let layer = |rng: &mut Rng, rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.uniform(-bound, bound))
        };
        match hidden {
            None => Self::linear(layer(rng, d_in, d_out)),
            Some(h) => Self {
                hidden: Some(layer(rng, d_in, h)),
                out: layer(rng, h, d_out),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.out).rows()
    }

    pub fn output_dim(&self) -> usize {
        self.out.cols()
    }

    fn hidden_activations(&self, raw: &Matrix) -> Result<Option<Matrix>> {
        self.hidden
            .as_ref()
            .map(|w| Ok(raw.matmul(w)?.map(f64::tanh)))
            .transpose()
    }

    pub fn forward(&self, raw: &Matrix) -> Result<Matrix> {
        if raw.cols() != self.input_dim() {
            return Err(Error::shape("encode", self.input_dim(), raw.cols()));
        }
        match self.hidden_activations(raw)? {
            Some(h) => h.matmul(&self.out),
            None => raw.matmul(&self.out),
        }
    }

    /// Parameter gradients given `∂L/∂output`, in the order of
    /// [`Projection::tensors`].
    pub fn backward(&self, raw: &Matrix, grad_out: &Matrix) -> Result<Vec<Matrix>> {
        if grad_out.rows() != raw.rows() || grad_out.cols() != self.output_dim() {
            return Err(Error::shape(
                "encode_backward",
                format!("{}x{}", raw.rows(), self.output_dim()),
                format!("{}x{}", grad_out.rows(), grad_out.cols()),
            ));
        }
        if raw.cols() != self.input_dim() {
            return Err(Error::shape("encode_backward", self.input_dim(), raw.cols()));
        }
        match (&self.hidden, self.hidden_activations(raw)?) {
            (Some(_), Some(h)) => {
                let d_out = h.t_matmul(grad_out)?;
                let mut grad_h = grad_out.matmul_t(&self.out)?;
                for (g, &a) in grad_h.data_mut().iter_mut().zip(h.data()) {
                    *g *= 1.0 - a * a;
                }
                let d_hidden = raw.t_matmul(&grad_h)?;
                Ok(vec![d_hidden, d_out])
            }
            _ => Ok(vec![raw.t_matmul(grad_out)?]),
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.hidden.iter().chain(std::iter::once(&self.out)).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.out))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub visual: Projection,
    pub text: Projection,
}

/// Gradients laid out like [`EncoderParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub tensors: Vec<Matrix>,
}

impl EncoderParams {
    pub fn init(
        seed: u64,
        d1: usize,
        d2: usize,
        embed_dim: usize,
        hidden: Option<usize>,
    ) -> Self {
        let mut rng = Rng::new(seed).fork(0x1417);
        let visual = Projection::init(&mut rng, d1, embed_dim, hidden);
        let text = Projection::init(&mut rng, d2, embed_dim, hidden);
        Self { visual, text }
    }

    pub fn embed_dim(&self) -> usize {
        self.visual.output_dim()
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut all = self.visual.tensors();
        all.extend(self.text.tensors());
        all
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut all = self.visual.tensors_mut();
        all.extend(self.text.tensors_mut());
        all
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }
}

pub fn encode(
    params: &EncoderParams,
    visual_raw: &Matrix,
    text_raw: &Matrix,
) -> Result<(EmbeddingBatch, EmbeddingBatch)> {
    if visual_raw.rows() != text_raw.rows() {
        return Err(Error::shape("encode", visual_raw.rows(), text_raw.rows()));
    }
    if params.visual.output_dim() != params.text.output_dim() {
        return Err(Error::shape(
            "encode",
            params.visual.output_dim(),
            params.text.output_dim(),
        ));
    }
    Ok((
        EmbeddingBatch::visual(params.visual.forward(visual_raw)?),
        EmbeddingBatch::text(params.text.forward(text_raw)?),
    ))
}

pub fn encode_backward(
    params: &EncoderParams,
    visual_raw: &Matrix,
    text_raw: &Matrix,
    grad_visual_embed: &Matrix,
    grad_text_embed: &Matrix,
) -> Result<ParamGrads> {
    let mut tensors = params.visual.backward(visual_raw, grad_visual_embed)?;
    tensors.extend(params.text.backward(text_raw, grad_text_embed)?);
    Ok(ParamGrads { tensors })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &EncoderParams, config: AdamConfig) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.second
    }
}

/// One bias-corrected Adam update, in place. Parameters are untouched when
/// an error is returned.
pub fn adam_step(state: &mut AdamState, params: &mut EncoderParams, grads: &ParamGrads) -> Result<()> {
    let cfg = state.config;
    if !(cfg.lr > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be positive, got {}",
            cfg.lr
        )));
    }
    let mut tensors = params.tensors_mut();
    if tensors.len() != grads.tensors.len() || tensors.len() != state.first.len() {
        return Err(Error::shape("adam_step", tensors.len(), grads.tensors.len()));
    }
    for ((p, g), m) in tensors.iter().zip(&grads.tensors).zip(&state.first) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{:?}", p.shape()),
                format!("{:?}", g.shape()),
            ));
        }
    }
    if grads.tensors.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("parameter gradient"));
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for (k, p) in tensors.iter_mut().enumerate() {
        let g = grads.tensors[k].data();
        let m = state.first[k].data_mut();
        let v = state.second[k].data_mut();
        for (idx, w) in p.data_mut().iter_mut().enumerate() {
            m[idx] = cfg.beta1 * m[idx] + (1.0 - cfg.beta1) * g[idx];
            v[idx] = cfg.beta2 * v[idx] + (1.0 - cfg.beta2) * g[idx] * g[idx];
            let m_hat = m[idx] / bias1;
            let v_hat = v[idx] / bias2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    if tensors.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("parameters after update"));
    }
    Ok(())
}
