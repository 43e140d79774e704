//! Tactile object classifier: CNN, baselines, gradient check, t-SNE.

pub mod baselines;
pub mod cnn;
pub mod gradcheck;
pub mod tsne;

use std::io::{Read, Write};

use num_traits::Float;
use thiserror::Error;

use crate::par;
use crate::sensing::{TactileWindow, NUM_CLASSES};

pub use cnn::{train, CnnModel, TrainConfig, TrainHistory};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("empty data set")]
    EmptySet,
    #[error("label {0} outside 0..12")]
    LabelOutOfRange(u8),
    #[error("window has no label")]
    Unlabeled,
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Float type the network can run in (f32 for training, f64 for checks).
pub trait Scalar: Float + Send + Sync + std::fmt::Debug + std::iter::Sum + 'static {
    fn from_f64(v: f64) -> Self;
    fn from_f32(v: f32) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[u32; NUM_CLASSES]; NUM_CLASSES],
}

impl Evaluation {
    pub fn from_predictions(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, ClassifierError> {
        let mut confusion = [[0u32; NUM_CLASSES]; NUM_CLASSES];
        let mut total = 0u32;
        for (t, p) in pairs {
            confusion[t][p] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(ClassifierError::EmptySet);
        }
        let trace: u32 = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();
        Ok(Self { accuracy: trace as f64 / total as f64, confusion })
    }
}

/// Any model that maps a window to a class id.
pub trait Predictor: Sync {
    fn predict_class(&self, window: &[f32]) -> usize;
}

impl<F: Scalar> Predictor for CnnModel<F> {
    fn predict_class(&self, window: &[f32]) -> usize {
        cnn::argmax(&self.forward_cached(window).probs)
    }
}

pub fn evaluate<P: Predictor + ?Sized>(model: &P, test_set: &[TactileWindow]) -> Result<Evaluation, ClassifierError> {
    if test_set.is_empty() {
        return Err(ClassifierError::EmptySet);
    }
    for w in test_set {
        cnn::check_window(w)?;
    }
    let preds = par::map_slice(test_set, |w| model.predict_class(&w.data));
    Evaluation::from_predictions(test_set.iter().zip(preds).map(|(w, p)| (w.label.unwrap() as usize, p)))
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ESKM";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Writes `magic | version u16 | layer count u16 | per layer: name len u8,
/// name, rank u8, dims u32… | input_scale f32 | weights f32`, all LE.
pub fn save_checkpoint<W: Write>(mut w: W, model: &CnnModel<f32>) -> Result<(), ClassifierError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(cnn::LAYERS.len() as u16).to_le_bytes())?;
    for (name, dims) in cnn::LAYERS {
        w.write_all(&[name.len() as u8])?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[dims.len() as u8])?;
        for d in dims {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
    }
    w.write_all(&model.input_scale.to_le_bytes())?;
    let mut buf = Vec::with_capacity(model.params.len() * 4);
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<CnnModel<f32>, ClassifierError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { buf: &bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(ClassifierError::Format("bad magic".into()));
    }
    let version = cur.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(ClassifierError::Format(format!("unsupported version {version}")));
    }
    let count = cur.u16()? as usize;
    if count != cnn::LAYERS.len() {
        return Err(ClassifierError::Format(format!("expected {} layers, found {count}", cnn::LAYERS.len())));
    }
    for (name, dims) in cnn::LAYERS {
        let n = cur.take(1)?[0] as usize;
        let got = cur.take(n)?;
        let rank = cur.take(1)?[0] as usize;
        let got_dims: Vec<usize> = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<_, _>>()?;
        if got != name.as_bytes() || got_dims != dims {
            return Err(ClassifierError::Format(format!(
                "layer table mismatch at {name}: found {} {:?}",
                String::from_utf8_lossy(got),
                got_dims
            )));
        }
    }
    let input_scale = f32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    let rest = &bytes[cur.pos..];
    if rest.len() != cnn::PARAM_COUNT * 4 {
        return Err(ClassifierError::Format(format!(
            "expected {} weight bytes, found {}",
            cnn::PARAM_COUNT * 4,
            rest.len()
        )));
    }
    let params = rest.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(CnnModel { params, input_scale })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(ClassifierError::Format("truncated header".into()));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, ClassifierError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Embedding CSV `id,label,x,y`; unlabeled rows get an empty label.
pub fn write_embedding_csv<W: Write>(mut w: W, labels: &[Option<u8>], points: &[[f64; 2]]) -> std::io::Result<()> {
    writeln!(w, "id,label,x,y")?;
    for (i, (l, p)) in labels.iter().zip(points).enumerate() {
        let label = l.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{i},{label},{},{}", p[0], p[1])?;
    }
    Ok(())
}
