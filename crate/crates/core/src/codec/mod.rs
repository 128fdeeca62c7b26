//! Lossy codec round-trips used as preprocessing probes.
//!
//! * [`celp_roundtrip`]: an LPC analysis/synthesis codec whose residual
//!   quantizer is wrapped in noise feedback through the perceptual weighting
//!   filter, so the coding error is shaped by `1/W(z)` as in CELP coders.
//! * [`mdct_roundtrip`]: a sine-windowed MDCT transform codec with uniform
//!   coefficient quantization.
//! * [`external_codec`]: shells out to real encoders/decoders.

mod celp;
mod external;
mod lpc;
mod mdct;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use celp::celp_roundtrip;
pub use external::{external_codec, ExternalCodecSpec};
pub use lpc::{lpc_analyze, weighting_filter, LpcModel, PoleZeroFilter, DEFAULT_GAMMA1, DEFAULT_GAMMA2};
pub use mdct::{imdct_block, mdct_block, mdct_roundtrip, sine_window};

use crate::audio::AudioError;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("frame of {len} samples too short for order {order}")]
    InvalidFrame { len: usize, order: usize },
    #[error("silent frame")]
    SilentFrame,
    #[error("invalid codec config: {0}")]
    InvalidConfig(String),
    #[error("codec expects a mono clip")]
    NotMono,
    #[error("codec command unavailable: {0}")]
    CodecUnavailable(String),
    #[error("codec command failed: {0}")]
    CodecFailed(String),
    #[error("codec produced unreadable output: {0}")]
    BadOutput(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Parameters shared by the in-repo codecs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub frame_ms: f64,
    pub lpc_order: usize,
    pub residual_bits: u32,
    pub gamma1: f64,
    pub gamma2: f64,
    /// MDCT half-window (hop) length in samples.
    pub mdct_window: usize,
    /// Uniform quantizer step for MDCT coefficients; 0 disables quantization.
    pub mdct_step_size: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            frame_ms: 20.0,
            lpc_order: 10,
            residual_bits: 6,
            gamma1: DEFAULT_GAMMA1,
            gamma2: DEFAULT_GAMMA2,
            mdct_window: 512,
            mdct_step_size: 0.0,
        }
    }
}

impl CodecConfig {
    /// Speex stand-in: coarse 4-bit residual.
    pub fn speex_like() -> Self {
        Self { residual_bits: 4, ..Self::default() }
    }

    /// Opus stand-in: 6-bit residual.
    pub fn opus_like() -> Self {
        Self { residual_bits: 6, ..Self::default() }
    }

    /// MP3 stand-in: short window, coarse step.
    pub fn mp3_like() -> Self {
        Self { mdct_window: 512, mdct_step_size: MP3_LIKE_STEP, ..Self::default() }
    }

    /// AAC stand-in: long window, finer step.
    pub fn aac_like() -> Self {
        Self { mdct_window: 1024, mdct_step_size: AAC_LIKE_STEP, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |m: &str| Err(CodecError::InvalidConfig(m.to_string()));
        if !(self.frame_ms > 0.0) {
            return bad("frame_ms must be positive");
        }
        if !(2..=16).contains(&self.residual_bits) {
            return bad("residual_bits must be in [2, 16]");
        }
        if !self.mdct_window.is_power_of_two() || self.mdct_window < 2 {
            return bad("mdct_window must be a power of two");
        }
        if !(self.mdct_step_size >= 0.0) || !self.mdct_step_size.is_finite() {
            return bad("mdct_step_size must be finite and non-negative");
        }
        if !(self.gamma1 > 0.0 && self.gamma1 <= 1.0 && self.gamma2 > 0.0 && self.gamma2 <= 1.0) {
            return bad("gamma1 and gamma2 must lie in (0, 1]");
        }
        Ok(())
    }
}

/// MDCT step sizes for the two transform-codec members. Chosen so benign
/// keyword clips rarely change label while attack noise usually does.
pub const MP3_LIKE_STEP: f64 = 0.01;
pub const AAC_LIKE_STEP: f64 = 0.005;
