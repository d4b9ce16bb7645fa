//! Paired feature sets: synthetic generation, the XMF1 binary format, and a
//! CSV import for hand-written fixtures.
//!
//! XMF1 layout, all integers little-endian:
//!
//! ```text
//! "XMF1"                  4 bytes
//! N, d1, d2               u32 each
//! visual                  N·d1 f32, row-major
//! text                    N·d2 f32, row-major
//! split tags              N bytes (0 train, 1 val, 2 test)
//! class ids               N u32 (0xFFFFFFFF = none)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

pub const MAGIC: &[u8; 4] = b"XMF1";
pub const HEADER_LEN: usize = 16;
const NO_CLASS: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train = 0,
    Val = 1,
    Test = 2,
}

impl Split {
    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

/// Split tags for `n` rows in order: the first 80% train, then 10% val,
/// then 10% test, with rounding leftovers going to train and then val.
pub fn partition_tags(n: usize) -> Vec<Split> {
    let (train, val, test) = partition_counts(n);
    std::iter::repeat_n(Split::Train, train)
        .chain(std::iter::repeat_n(Split::Val, val))
        .chain(std::iter::repeat_n(Split::Test, test))
        .collect()
}

pub fn partition_counts(n: usize) -> (usize, usize, usize) {
    let mut train = 8 * n / 10;
    let mut val = n / 10;
    let test = n / 10;
    let leftover = n - train - val - test;
    // at most two rows are left over
    if leftover >= 1 {
        train += 1;
    }
    if leftover >= 2 {
        val += 1;
    }
    (train, val, test)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePairSet {
    visual: Matrix,
    text: Matrix,
    labels: Vec<Option<u32>>,
    splits: Vec<Split>,
}

impl FeaturePairSet {
    pub fn new(
        visual: Matrix,
        text: Matrix,
        labels: Vec<Option<u32>>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let n = visual.rows();
        if text.rows() != n {
            return Err(Error::shape("FeaturePairSet text rows", n, text.rows()));
        }
        if labels.len() != n {
            return Err(Error::shape("FeaturePairSet labels", n, labels.len()));
        }
        if splits.len() != n {
            return Err(Error::shape("FeaturePairSet splits", n, splits.len()));
        }
        if !visual.is_finite() || !text.is_finite() {
            return Err(Error::NonFinite("feature values"));
        }
        Ok(Self {
            visual,
            text,
            labels,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.visual.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn visual_dim(&self) -> usize {
        self.visual.cols()
    }

    pub fn text_dim(&self) -> usize {
        self.text.cols()
    }

    pub fn visual(&self) -> &Matrix {
        &self.visual
    }

    pub fn text(&self) -> &Matrix {
        &self.text
    }

    pub fn labels(&self) -> &[Option<u32>] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let count = |s| self.splits.iter().filter(|&&t| t == s).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }

    /// Visual and text rows of one split, in dataset order.
    pub fn split_matrices(&self, split: Split) -> (Matrix, Matrix) {
        let idx = self.indices(split);
        (self.visual.select_rows(&idx), self.text.select_rows(&idx))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub pairs_per_class: usize,
    pub latent_dim: usize,
    pub d1: usize,
    pub d2: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 32,
            pairs_per_class: 64,
            latent_dim: 16,
            d1: 64,
            d2: 48,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.pairs_per_class < 1 {
            return bad("pairs per class must be at least 1".into());
        }
        if self.latent_dim < 1 || self.d1 < 1 || self.d2 < 1 {
            return bad("latent and feature dimensions must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise sigma must be >= 0, got {}", self.noise_sigma));
        }
        Ok(())
    }
}

/// Rounds through `f32` so that generated sets survive an XMF1 round trip
/// unchanged.
fn storable(x: f64) -> f64 {
    x as f32 as f64
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Class prototypes on the unit sphere; each pair draws a latent from
/// `N(prototype, noise_sigma·I)` and is seen through two fixed random linear
/// maps, the text side with extra additive `N(0, noise_sigma·I)` noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FeaturePairSet> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let mut proto_rng = root.fork(0);
    let mut map_rng = root.fork(1);
    let mut sample_rng = root.fork(2);
    let mut order_rng = root.fork(3);

    let prototypes: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| loop {
            let p: Vec<f64> = (0..spec.latent_dim).map(|_| proto_rng.normal()).collect();
            let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break p.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect();
    // visual = A·z, text = B·z (+ noise); stored as zᵀ·Aᵀ row vectors
    let visual_map = gaussian_matrix(&mut map_rng, spec.latent_dim, spec.d1);
    let text_map = gaussian_matrix(&mut map_rng, spec.latent_dim, spec.d2);

    // noise covariance is noise_sigma·I
    let noise_std = spec.noise_sigma.sqrt();
    let n = spec.num_classes * spec.pairs_per_class;
    let mut latents = Matrix::zeros(n, spec.latent_dim);
    let mut labels = Vec::with_capacity(n);
    for (class, proto) in prototypes.iter().enumerate() {
        for k in 0..spec.pairs_per_class {
            let row = class * spec.pairs_per_class + k;
            for (d, z) in latents.row_mut(row).iter_mut().enumerate() {
                *z = proto[d] + noise_std * sample_rng.normal();
            }
            labels.push(class as u32);
        }
    }
    let visual = latents.matmul(&visual_map)?.map(storable);
    let mut text = latents.matmul(&text_map)?;
    for x in text.data_mut() {
        *x = storable(*x + noise_std * sample_rng.normal());
    }

    let mut order: Vec<usize> = (0..n).collect();
    order_rng.shuffle(&mut order);
    FeaturePairSet::new(
        visual.select_rows(&order),
        text.select_rows(&order),
        order.iter().map(|&i| Some(labels[i])).collect(),
        partition_tags(n),
    )
}

/// Serialized XMF1 bytes. Fails when a value does not fit in `f32`.
pub fn encode_features(set: &FeaturePairSet) -> Result<Vec<u8>> {
    let n = set.len();
    let (d1, d2) = (set.visual_dim(), set.text_dim());
    let dim = |x: usize| {
        u32::try_from(x).map_err(|_| Error::InvalidConfig(format!("dimension {x} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * (d1 + d2) + 5 * n);
    out.extend_from_slice(MAGIC);
    for x in [n, d1, d2] {
        out.extend_from_slice(&dim(x)?.to_le_bytes());
    }
    for &v in set.visual.data().iter().chain(set.text.data()) {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite("feature value outside f32 range"));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    out.extend(set.splits.iter().map(|&s| s as u8));
    for label in &set.labels {
        out.extend_from_slice(&label.unwrap_or(NO_CLASS).to_le_bytes());
    }
    Ok(out)
}

pub fn save_features(set: &FeaturePairSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(set)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeaturePairSet> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(path, "bad magic, expected XMF1"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (n, d1, d2) = (word(4), word(8), word(12));
    let expected = n
        .checked_mul(d1 + d2)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN + 5 * n))
        .ok_or_else(|| Error::format(path, "header dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "shape inconsistency: header N={n}, d1={d1}, d2={d2} needs {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }

    let mut at = HEADER_LEN;
    let mut floats = |count: usize| -> Result<Vec<f64>> {
        let vals: Vec<f64> = bytes[at..at + 4 * count]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        at += 4 * count;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, "non-finite feature value"));
        }
        Ok(vals)
    };
    let visual = Matrix::new(n, d1, floats(n * d1)?)?;
    let text = Matrix::new(n, d2, floats(n * d2)?)?;
    let at = HEADER_LEN + 4 * n * (d1 + d2);

    let splits = bytes[at..at + n]
        .iter()
        .map(|&t| Split::from_tag(t).ok_or_else(|| Error::format(path, format!("bad split tag {t}"))))
        .collect::<Result<Vec<_>>>()?;
    let labels = bytes[at + n..]
        .chunks_exact(4)
        .map(|c| match u32::from_le_bytes(c.try_into().unwrap()) {
            NO_CLASS => None,
            id => Some(id),
        })
        .collect();
    FeaturePairSet::new(visual, text, labels, splits)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeaturePairSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

/// Reads a CSV whose header is `v_0..v_{d1-1},t_0..t_{d2-1}`. Rows keep file
/// order and are split 80/10/10 in that order; no class ids.
pub fn load_csv(path: impl AsRef<Path>) -> Result<FeaturePairSet> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();

    let d1 = header.iter().take_while(|h| h.starts_with("v_")).count();
    let d2 = header.len() - d1;
    for (k, h) in header.iter().enumerate() {
        let want = if k < d1 {
            format!("v_{k}")
        } else {
            format!("t_{}", k - d1)
        };
        if h != want {
            return Err(Error::format(path, format!("header column {k} is `{h}`, expected `{want}`")));
        }
    }
    if d1 == 0 || d2 == 0 {
        return Err(Error::format(path, "header needs both v_ and t_ columns"));
    }

    let mut visual = Vec::new();
    let mut text = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if record.len() != d1 + d2 {
            return Err(Error::format(
                path,
                format!("row {} has {} fields, expected {}", line + 1, record.len(), d1 + d2),
            ));
        }
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::format(path, format!("row {}: `{field}` is not a number", line + 1)))?;
            if !v.is_finite() {
                return Err(Error::format(path, format!("row {}: non-finite value", line + 1)));
            }
            if k < d1 {
                visual.push(v);
            } else {
                text.push(v);
            }
        }
    }
    let n = visual.len() / d1;
    FeaturePairSet::new(
        Matrix::new(n, d1, visual)?,
        Matrix::new(n, d2, text)?,
        vec![None; n],
        partition_tags(n),
    )
}

/// Dispatches on extension: `.csv` goes through [`load_csv`], anything else
/// is read as XMF1.
pub fn load_any(path: impl AsRef<Path>) -> Result<FeaturePairSet> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => load_csv(path),
        _ => load_features(path),
    }
}
