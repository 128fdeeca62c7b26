//! Waveform container, WAV I/O and sample-rate conversion.
//!
//! Everything downstream works on [`AudioClip`]: real samples in `[-1, 1]`,
//! interleaved when stereo. Integer PCM is mapped through a scale of 32768.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Scale between 16-bit PCM integers and the `[-1, 1]` domain.
pub const PCM_SCALE: f64 = 32768.0;

/// Half-width of the windowed-sinc resampling kernel (16 taps total).
const RESAMPLE_HALF_TAPS: i64 = 8;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated data chunk: declared {declared} bytes, found {found}")]
    TruncatedData { declared: usize, found: usize },
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A sampled waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
    channels: u16,
}

impl AudioClip {
    /// Builds a clip, rejecting out-of-range samples or inconsistent metadata.
    pub fn new(samples: Vec<f64>, sample_rate: u32, channels: u16) -> Result<Self, AudioError> {
        check_meta(samples.len(), sample_rate, channels)?;
        if let Some(s) = samples.iter().find(|s| !(s.abs() <= 1.0)) {
            return Err(AudioError::InvalidClip(format!("sample {s} outside [-1, 1]")));
        }
        Ok(Self { samples, sample_rate, channels })
    }

    /// Builds a clip, clamping every sample into `[-1, 1]` (NaN becomes 0).
    pub fn clamped(mut samples: Vec<f64>, sample_rate: u32, channels: u16) -> Result<Self, AudioError> {
        check_meta(samples.len(), sample_rate, channels)?;
        for s in &mut samples {
            *s = if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) };
        }
        Ok(Self { samples, sample_rate, channels })
    }

    /// Mono clip from samples, clamped into range.
    ///
    /// Panics if `sample_rate` is zero.
    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self::clamped(samples, sample_rate, 1).expect("sample rate must be positive")
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> u16 {
        self.channels
    }

    /// Number of frames (samples per channel).
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels as usize
    }

    pub fn is_mono(&self) -> bool {
        self.channels == 1
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

fn check_meta(len: usize, sample_rate: u32, channels: u16) -> Result<(), AudioError> {
    if sample_rate == 0 {
        return Err(AudioError::InvalidClip("sample rate must be positive".into()));
    }
    if !(1..=2).contains(&channels) {
        return Err(AudioError::InvalidClip(format!("{channels} channels (expected 1 or 2)")));
    }
    if len % channels as usize != 0 {
        return Err(AudioError::InvalidClip(format!(
            "{len} samples is not a multiple of {channels} channels"
        )));
    }
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AudioError + '_ {
    move |source| AudioError::IoFailure { path: path.to_path_buf(), source }
}

/// Reads a RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float samples.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_wav(&bytes)
}

/// Decodes an in-memory RIFF/WAVE image.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::MalformedHeader("missing RIFF/WAVE signature".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(AudioError::MalformedHeader("fmt chunk too short".into()));
                }
                let f = &bytes[body..];
                let mut code = u16::from_le_bytes([f[0], f[1]]);
                let channels = u16::from_le_bytes([f[2], f[3]]);
                let rate = u32::from_le_bytes([f[4], f[5], f[6], f[7]]);
                let bits = u16::from_le_bytes([f[14], f[15]]);
                // WAVE_FORMAT_EXTENSIBLE: the real code is the first two bytes of the sub-format GUID.
                if code == 0xFFFE && size >= 40 && body + 26 <= bytes.len() {
                    code = u16::from_le_bytes([f[24], f[25]]);
                }
                fmt = Some((code, channels, rate, bits));
            }
            b"data" => {
                let (code, channels, rate, bits) =
                    fmt.ok_or_else(|| AudioError::MalformedHeader("data chunk before fmt chunk".into()))?;
                let available = bytes.len() - body;
                if available < size {
                    return Err(AudioError::TruncatedData { declared: size, found: available });
                }
                return decode_samples(&bytes[body..body + size], code, channels, rate, bits);
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(AudioError::MalformedHeader("no data chunk".into()))
}

fn decode_samples(data: &[u8], code: u16, channels: u16, rate: u32, bits: u16) -> Result<AudioClip, AudioError> {
    if !(1..=2).contains(&channels) {
        return Err(AudioError::UnsupportedFormat(format!("{channels} channels")));
    }
    if rate == 0 {
        return Err(AudioError::MalformedHeader("zero sample rate".into()));
    }
    let samples: Vec<f64> = match (code, bits) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / PCM_SCALE)
            .collect(),
        (3, 32) => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        _ => {
            return Err(AudioError::UnsupportedFormat(format!(
                "format code {code} with {bits} bits per sample"
            )))
        }
    };
    let whole = samples.len() - samples.len() % channels as usize;
    let mut samples = samples;
    samples.truncate(whole);
    AudioClip::clamped(samples, rate, channels)
}

/// Converts a `[-1, 1]` sample to 16-bit PCM with saturation.
pub fn to_pcm16(s: f64) -> i16 {
    (s * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Encodes a clip as a 16-bit PCM little-endian RIFF/WAVE image.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let block_align = clip.channels as u32 * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.channels.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * block_align).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&to_pcm16(s).to_le_bytes());
    }
    out
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&encode_wav(clip)).map_err(io_err(path))
}

/// Averages channels into a mono clip.
pub fn to_mono(clip: &AudioClip) -> AudioClip {
    if clip.channels == 1 {
        return clip.clone();
    }
    let samples = clip
        .samples
        .chunks_exact(clip.channels as usize)
        .map(|f| f.iter().sum::<f64>() / f.len() as f64)
        .collect();
    AudioClip { samples, sample_rate: clip.sample_rate, channels: 1 }
}

/// Resamples a mono clip to `target_rate` with 16-tap Hann-windowed sinc
/// interpolation. Output length is `round(len * target / source)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    if !clip.is_mono() {
        return Err(AudioError::InvalidClip("resample expects a mono clip".into()));
    }
    if target_rate == 0 {
        return Err(AudioError::InvalidClip("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let out_len =
        (clip.samples.len() as f64 * target_rate as f64 / clip.sample_rate as f64).round() as usize;
    let samples = resample_to_len(&clip.samples, out_len);
    Ok(AudioClip::mono(samples, target_rate))
}

/// Stretches or shrinks `input` onto `out_len` samples by band-limited
/// interpolation. The anti-aliasing cutoff follows the length ratio.
pub fn resample_to_len(input: &[f64], out_len: usize) -> Vec<f64> {
    if input.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    if out_len == input.len() {
        return input.to_vec();
    }
    let ratio = out_len as f64 / input.len() as f64;
    let step = 1.0 / ratio;
    let cutoff = ratio.min(1.0);
    let n = input.len() as i64;
    (0..out_len)
        .map(|j| {
            let t = j as f64 * step;
            let base = t.floor() as i64;
            let mut acc = 0.0;
            let mut norm = 0.0;
            for k in (base - RESAMPLE_HALF_TAPS + 1)..=(base + RESAMPLE_HALF_TAPS) {
                let u = t - k as f64;
                let w = sinc_kernel(u, cutoff);
                norm += w;
                if (0..n).contains(&k) {
                    acc += w * input[k as usize];
                }
            }
            if norm.abs() > 1e-12 {
                acc / norm
            } else {
                acc
            }
        })
        .collect()
}

fn sinc_kernel(u: f64, cutoff: f64) -> f64 {
    let half = RESAMPLE_HALF_TAPS as f64;
    if u.abs() >= half {
        return 0.0;
    }
    let x = std::f64::consts::PI * cutoff * u;
    let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
    let hann = 0.5 * (1.0 + (std::f64::consts::PI * u / half).cos());
    cutoff * sinc * hann
}

/// A clip with its class label and origin, as found on disk.
#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub path: PathBuf,
    pub label: String,
    pub clip: AudioClip,
}

/// Loads `<root>/<label>/<clip>.wav`. Labels and files are visited in sorted
/// order; `classes`, when given, restricts and orders the labels.
pub fn load_dataset(root: impl AsRef<Path>, classes: Option<&[String]>) -> Result<Vec<LabeledClip>, AudioError> {
    let root = root.as_ref();
    let labels: Vec<String> = match classes {
        Some(c) => c.to_vec(),
        None => {
            let mut l: Vec<String> = fs::read_dir(root)
                .map_err(io_err(root))?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect();
            l.sort();
            l
        }
    };
    let mut out = Vec::new();
    for label in labels {
        let dir = root.join(&label);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        for path in files {
            let clip = to_mono(&read_wav(&path)?);
            out.push(LabeledClip { path, label: label.clone(), clip });
        }
    }
    Ok(out)
}
