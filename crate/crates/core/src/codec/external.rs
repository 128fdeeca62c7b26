use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::CodecError;
use crate::audio::{read_wav, resample, to_mono, write_wav, AudioClip};

/// Encoder/decoder command templates. `{in}` and `{out}` are replaced by
/// temporary file paths; arguments are split on whitespace and run without a
/// shell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalCodecSpec {
    pub encode: String,
    pub decode: String,
    /// Extension of the intermediate encoded file, for tools that infer the
    /// container from it.
    #[serde(default = "default_ext")]
    pub encoded_ext: String,
}

fn default_ext() -> String {
    "bin".to_string()
}

impl ExternalCodecSpec {
    pub fn new(encode: impl Into<String>, decode: impl Into<String>) -> Self {
        Self { encode: encode.into(), decode: decode.into(), encoded_ext: default_ext() }
    }
}

fn run(template: &str, input: &Path, output: &Path) -> Result<(), CodecError> {
    let args: Vec<String> = template
        .split_whitespace()
        .map(|a| a.replace("{in}", &input.to_string_lossy()).replace("{out}", &output.to_string_lossy()))
        .collect();
    let (prog, rest) = args
        .split_first()
        .ok_or_else(|| CodecError::CodecUnavailable(format!("empty command template {template:?}")))?;
    let result = Command::new(prog)
        .args(rest)
        .output()
        .map_err(|e| CodecError::CodecUnavailable(format!("{prog}: {e}")))?;
    if !result.status.success() {
        return Err(CodecError::CodecFailed(format!(
            "{prog} exited with {}: {}",
            result.status,
            String::from_utf8_lossy(&result.stderr).trim()
        )));
    }
    Ok(())
}

/// Round-trips `clip` through an external encoder and decoder.
///
/// Each call works in its own temporary directory, so concurrent calls never
/// share files. The decoded audio is downmixed, resampled to the original rate
/// and trimmed or zero-padded to the original length.
pub fn external_codec(clip: &AudioClip, spec: &ExternalCodecSpec) -> Result<AudioClip, CodecError> {
    let dir = tempfile::tempdir().map_err(|e| CodecError::CodecFailed(format!("tempdir: {e}")))?;
    let input = dir.path().join("input.wav");
    let encoded = dir.path().join(format!("encoded.{}", spec.encoded_ext));
    let decoded = dir.path().join("decoded.wav");
    write_wav(clip, &input)?;
    run(&spec.encode, &input, &encoded)?;
    run(&spec.decode, &encoded, &decoded)?;
    let out = read_wav(&decoded).map_err(|e| CodecError::BadOutput(e.to_string()))?;
    let out = resample(&to_mono(&out), clip.sample_rate())?;
    let mut samples = out.into_samples();
    samples.resize(clip.frames(), 0.0);
    Ok(AudioClip::mono(samples, clip.sample_rate()))
}
