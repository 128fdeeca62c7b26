//! Stateless preprocessing transforms and the serializable [`TransformSpec`]
//! that names one member of a detection ensemble.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{resample_to_len, AudioClip, PCM_SCALE};
use crate::codec::{self, CodecConfig, CodecError, ExternalCodecSpec};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("invalid band {low_hz}-{high_hz} Hz at {sample_rate} Hz")]
    InvalidBand { low_hz: f64, high_hz: f64, sample_rate: u32 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("transform expects a mono clip")]
    NotMono,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Default telephony band and filter order.
pub const DEFAULT_LOW_HZ: f64 = 300.0;
pub const DEFAULT_HIGH_HZ: f64 = 4000.0;
pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_PAN: f64 = 0.5;
pub const DEFAULT_STRETCH: f64 = 1.01;

/// One second-order section, `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (1.0 + self.a[0] * z_inv + self.a[1] * z2)
    }
}

/// Digital Butterworth band-pass of total order `order` (prototype order
/// `order / 2`) via the bilinear transform with pre-warped edges. Gain is
/// normalized to one at the geometric centre frequency.
pub fn butterworth_bandpass(low_hz: f64, high_hz: f64, sample_rate: u32, order: usize) -> Result<Vec<Biquad>, TransformError> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(TransformError::InvalidBand { low_hz, high_hz, sample_rate });
    }
    if !matches!(order, 2 | 4 | 8) {
        return Err(TransformError::InvalidParams(format!("band-pass order {order} not in {{2, 4, 8}}")));
    }
    let fs2 = 2.0 * sample_rate as f64;
    let w1 = fs2 * (PI * low_hz / sample_rate as f64).tan();
    let w2 = fs2 * (PI * high_hz / sample_rate as f64).tan();
    let bw = w2 - w1;
    let w0sq = w1 * w2;
    let proto = order / 2;

    let mut poles = Vec::with_capacity(order);
    for k in 0..proto {
        let p = Complex64::from_polar(1.0, PI * (2 * k + proto + 1) as f64 / (2 * proto) as f64);
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0sq).sqrt();
        for s in [(pb + disc) / 2.0, (pb - disc) / 2.0] {
            poles.push((fs2 + s) / (fs2 - s));
        }
    }
    // Pair conjugates; real poles pair with each other.
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|z| z.im > 1e-9).collect();
    let mut real: Vec<f64> = poles.iter().filter(|z| z.im.abs() <= 1e-9).map(|z| z.re).collect();
    complex.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    real.sort_by(f64::total_cmp);
    let mut sections: Vec<Biquad> = complex
        .iter()
        .map(|z| Biquad { b: [1.0, 0.0, -1.0], a: [-2.0 * z.re, z.norm_sqr()] })
        .collect();
    for pair in real.chunks(2) {
        let (r1, r2) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
        sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [-(r1 + r2), r1 * r2] });
    }

    let center = 2.0 * (w0sq.sqrt() / fs2).atan();
    let z_inv = Complex64::from_polar(1.0, -center);
    let gain = sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv)).norm();
    if let Some(first) = sections.first_mut() {
        for b in &mut first.b {
            *b /= gain;
        }
    }
    Ok(sections)
}

/// Magnitude response of a cascade at `freq_hz`.
pub fn cascade_magnitude(sections: &[Biquad], freq_hz: f64, sample_rate: u32) -> f64 {
    let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / sample_rate as f64);
    sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv)).norm()
}

/// Runs a cascade forward over `x` (transposed direct form II, zero state).
pub fn filter_cascade(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in sections {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in y.iter_mut() {
            let input = *v;
            let out = s.b[0] * input + z1;
            z1 = s.b[1] * input - s.a[0] * out + z2;
            z2 = s.b[2] * input - s.a[1] * out;
            *v = out;
        }
    }
    y
}

/// Causal Butterworth band-pass.
pub fn band_pass(clip: &AudioClip, low_hz: f64, high_hz: f64, order: usize) -> Result<AudioClip, TransformError> {
    if !clip.is_mono() {
        return Err(TransformError::NotMono);
    }
    let sections = butterworth_bandpass(low_hz, high_hz, clip.sample_rate(), order)?;
    Ok(AudioClip::mono(filter_cascade(&sections, clip.samples()), clip.sample_rate()))
}

/// Constant-power pan gains `(cos θ, sin θ)` with `θ = π (pan + 1) / 4`.
pub fn pan_gains(pan: f64) -> (f64, f64) {
    let theta = PI * (pan + 1.0) / 4.0;
    (theta.cos(), theta.sin())
}

/// Time-stretches to `round(stretch · N)` samples, pans to stereo, and folds
/// back to mono. The fold is scaled by √2 so that a centred pan is neutral;
/// any other pan keeps its net gain of `(gL + gR) / √2`.
pub fn pan_lengthen(clip: &AudioClip, pan: f64, stretch: f64) -> Result<AudioClip, TransformError> {
    if !clip.is_mono() {
        return Err(TransformError::NotMono);
    }
    if !(-1.0..=1.0).contains(&pan) || !(stretch > 0.0) || !stretch.is_finite() {
        return Err(TransformError::InvalidParams(format!("pan {pan}, stretch {stretch}")));
    }
    let out_len = (stretch * clip.frames() as f64).round() as usize;
    let stretched = resample_to_len(clip.samples(), out_len);
    let (gl, gr) = pan_gains(pan);
    let gain = (gl + gr) / 2.0 / FRAC_1_SQRT_2;
    Ok(AudioClip::mono(stretched.into_iter().map(|s| s * gain).collect(), clip.sample_rate()))
}

/// Rounds samples to the lattice `k · q / 32768`.
pub fn quantize(clip: &AudioClip, q: u32) -> Result<AudioClip, TransformError> {
    if !clip.is_mono() {
        return Err(TransformError::NotMono);
    }
    if q == 0 {
        return Err(TransformError::InvalidParams("q must be at least 1".into()));
    }
    let q = q as f64;
    let out = clip
        .samples()
        .iter()
        .map(|s| (s * PCM_SCALE / q).round_ties_even() * q / PCM_SCALE)
        .collect();
    Ok(AudioClip::mono(out, clip.sample_rate()))
}

/// What a transform does, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum TransformKind {
    BandPass {
        #[serde(default = "d_low")]
        low_hz: f64,
        #[serde(default = "d_high")]
        high_hz: f64,
        #[serde(default = "d_order")]
        order: usize,
    },
    PanLengthen {
        #[serde(default = "d_pan")]
        pan: f64,
        #[serde(default = "d_stretch")]
        stretch: f64,
    },
    Quantize {
        q: u32,
    },
    CelpLike(CodecConfig),
    MdctLike(CodecConfig),
    ExternalCodec(ExternalCodecSpec),
    /// Returns the clip unchanged; useful as a control member.
    Identity,
}

fn d_low() -> f64 {
    DEFAULT_LOW_HZ
}
fn d_high() -> f64 {
    DEFAULT_HIGH_HZ
}
fn d_order() -> usize {
    DEFAULT_ORDER
}
fn d_pan() -> f64 {
    DEFAULT_PAN
}
fn d_stretch() -> f64 {
    DEFAULT_STRETCH
}

/// A named ensemble member: `{"id": "...", "kind": "...", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: TransformKind,
}

impl TransformSpec {
    pub fn new(id: impl Into<String>, kind: TransformKind) -> Self {
        Self { id: id.into(), kind }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        match &self.kind {
            TransformKind::BandPass { low_hz, high_hz, order } => {
                if !(*low_hz > 0.0 && low_hz < high_hz) {
                    return Err(TransformError::InvalidBand { low_hz: *low_hz, high_hz: *high_hz, sample_rate: 0 });
                }
                if !matches!(order, 2 | 4 | 8) {
                    return Err(TransformError::InvalidParams(format!("order {order}")));
                }
            }
            TransformKind::PanLengthen { pan, stretch } => {
                if !(-1.0..=1.0).contains(pan) || !(*stretch > 0.0) {
                    return Err(TransformError::InvalidParams(format!("pan {pan}, stretch {stretch}")));
                }
            }
            TransformKind::Quantize { q } => {
                if *q == 0 {
                    return Err(TransformError::InvalidParams("q must be at least 1".into()));
                }
            }
            TransformKind::CelpLike(c) | TransformKind::MdctLike(c) => c.validate()?,
            TransformKind::ExternalCodec(_) | TransformKind::Identity => {}
        }
        Ok(())
    }

    /// Applies the transform; the result is clamped to `[-1, 1]`.
    pub fn apply(&self, clip: &AudioClip) -> Result<AudioClip, TransformError> {
        match &self.kind {
            TransformKind::BandPass { low_hz, high_hz, order } => band_pass(clip, *low_hz, *high_hz, *order),
            TransformKind::PanLengthen { pan, stretch } => pan_lengthen(clip, *pan, *stretch),
            TransformKind::Quantize { q } => quantize(clip, *q),
            TransformKind::CelpLike(c) => Ok(codec::celp_roundtrip(clip, c)?),
            TransformKind::MdctLike(c) => Ok(codec::mdct_roundtrip(clip, c)?),
            TransformKind::ExternalCodec(spec) => Ok(codec::external_codec(clip, spec)?),
            TransformKind::Identity => Ok(clip.clone()),
        }
    }
}

/// The six-member ensemble: two transform codecs, a band-pass filter,
/// pan-and-lengthen, and two LPC codecs.
pub fn default_ensemble() -> Vec<TransformSpec> {
    vec![
        TransformSpec::new("mp3_like", TransformKind::MdctLike(CodecConfig::mp3_like())),
        TransformSpec::new("aac_like", TransformKind::MdctLike(CodecConfig::aac_like())),
        TransformSpec::new(
            "band_pass",
            TransformKind::BandPass { low_hz: DEFAULT_LOW_HZ, high_hz: DEFAULT_HIGH_HZ, order: DEFAULT_ORDER },
        ),
        TransformSpec::new("pan_lengthen", TransformKind::PanLengthen { pan: DEFAULT_PAN, stretch: DEFAULT_STRETCH }),
        TransformSpec::new("opus_like", TransformKind::CelpLike(CodecConfig::opus_like())),
        TransformSpec::new("speex_like", TransformKind::CelpLike(CodecConfig::speex_like())),
    ]
}

/// Checks ids are unique and every member's parameters are valid.
pub fn validate_ensemble(ensemble: &[TransformSpec]) -> Result<(), TransformError> {
    let mut seen = std::collections::HashSet::new();
    for t in ensemble {
        if !seen.insert(t.id.as_str()) {
            return Err(TransformError::InvalidParams(format!("duplicate ensemble id {:?}", t.id)));
        }
        t.validate()?;
    }
    Ok(())
}
