//! Versioned little-endian binary model file.
//!
//! Layout: magic `KWSM`, u32 version, feature spec (six u32 then two f32),
//! u32 layer count, u32 dims (count + 1), per layer row-major f32 weights
//! (`out × in`) then f32 biases, u32 class count, then each class name as a
//! u32 byte length followed by UTF-8.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::features::FeatureSpec;
use super::mlp::{Layer, Mlp};
use super::model::KwModel;
use super::{Classifier, ClassifierError};

pub const MODEL_MAGIC: [u8; 4] = *b"KWSM";
pub const MODEL_VERSION: u32 = 1;

/// Guards against absurd allocations from corrupt headers.
const MAX_DIM: u32 = 1 << 24;

pub fn encode_model(model: &KwModel) -> Vec<u8> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(&MODEL_MAGIC);
    u32le(&mut out, MODEL_VERSION);
    let s = model.feature_spec();
    for v in [s.sample_rate, s.frame_len, s.hop, s.n_fft, s.n_mels, s.target_frames] {
        u32le(&mut out, v);
    }
    out.extend_from_slice(&s.fmin.to_le_bytes());
    out.extend_from_slice(&s.fmax.to_le_bytes());
    let dims = model.layer_dims();
    u32le(&mut out, (dims.len() - 1) as u32);
    for d in &dims {
        u32le(&mut out, *d as u32);
    }
    for layer in &model.network().layers {
        for w in layer.weights.iter().chain(layer.bias.iter()) {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    u32le(&mut out, model.class_names().len() as u32);
    for name in model.class_names() {
        u32le(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ClassifierError::CorruptPayload(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, ClassifierError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn bounded(&mut self, what: &str) -> Result<usize, ClassifierError> {
        let v = self.u32()?;
        if v == 0 || v > MAX_DIM {
            return Err(ClassifierError::CorruptPayload(format!("{what} = {v}")));
        }
        Ok(v as usize)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<KwModel, ClassifierError> {
    if bytes.len() < 4 || bytes[..4] != MODEL_MAGIC {
        return Err(ClassifierError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(ClassifierError::VersionMismatch(version));
    }
    let spec = FeatureSpec {
        sample_rate: r.bounded("sample rate")? as u32,
        frame_len: r.bounded("frame length")? as u32,
        hop: r.bounded("hop")? as u32,
        n_fft: r.bounded("fft size")? as u32,
        n_mels: r.bounded("mel count")? as u32,
        target_frames: r.bounded("frame count")? as u32,
        fmin: r.f32()?,
        fmax: r.f32()?,
    };
    if spec.n_fft < spec.frame_len || !(spec.fmin >= 0.0 && spec.fmax > spec.fmin) {
        return Err(ClassifierError::CorruptPayload("inconsistent feature spec".into()));
    }
    let n_layers = r.bounded("layer count")?;
    if n_layers > 64 {
        return Err(ClassifierError::CorruptPayload(format!("{n_layers} layers")));
    }
    let dims: Vec<usize> = (0..=n_layers).map(|_| r.bounded("dimension")).collect::<Result<_, _>>()?;
    let mut layers = Vec::with_capacity(n_layers);
    for w in dims.windows(2) {
        let (inp, out) = (w[0], w[1]);
        let n = inp.checked_mul(out).filter(|&n| n <= bytes.len() / 4).ok_or_else(|| {
            ClassifierError::CorruptPayload(format!("layer {inp}x{out} exceeds file size"))
        })?;
        let weights: Vec<f32> = (0..n).map(|_| r.f32()).collect::<Result<_, _>>()?;
        let bias: Vec<f32> = (0..out).map(|_| r.f32()).collect::<Result<_, _>>()?;
        layers.push(Layer {
            weights: Array2::from_shape_vec((out, inp), weights).expect("sized above"),
            bias: Array1::from_vec(bias),
        });
    }
    let n_classes = r.bounded("class count")?;
    let mut names = Vec::with_capacity(n_classes.min(4096));
    for _ in 0..n_classes {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        names.push(String::from_utf8(raw.to_vec()).map_err(|_| ClassifierError::CorruptPayload("class name not UTF-8".into()))?);
    }
    if r.pos != bytes.len() {
        return Err(ClassifierError::CorruptPayload(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    KwModel::new(spec, Mlp { layers }, names)
}

pub fn save_model(model: &KwModel, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<KwModel, ClassifierError> {
    decode_model(&std::fs::read(path)?)
}
