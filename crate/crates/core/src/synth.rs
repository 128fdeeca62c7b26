//! Synthetic keyword clips for offline end-to-end runs.
//!
//! Each word is a short sequence of voiced segments (harmonics of a falling
//! pitch shaped by interpolated formants), fricatives (resonant noise) and
//! stop bursts. Speakers vary pitch, formant scale, tempo, onset and level,
//! so a classifier must learn the spectral pattern rather than one waveform.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioClip, AudioError, LabeledClip};
use crate::rng::{self, domain};

/// Words with built-in segment recipes, in default order.
pub const WORDS: [&str; 10] = ["yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"];

#[derive(Debug, Clone, Copy)]
enum Segment {
    /// Formants (F1, F2, F3) in Hz at the start and end of the segment.
    Voiced { from: [f64; 3], to: [f64; 3], gain: f64 },
    Fricative { center: f64, q: f64, gain: f64 },
    Burst { center: f64 },
    Gap,
}

/// `(segment, duration in seconds)` recipe for a built-in word.
fn recipe(word: &str) -> Option<Vec<(Segment, f64)>> {
    use Segment::*;
    let v = |a: [f64; 3], b: [f64; 3]| Voiced { from: a, to: b, gain: 1.0 };
    let nasal = |f: [f64; 3]| Voiced { from: f, to: f, gain: 0.35 };
    Some(match word {
        "yes" => vec![
            (v([300.0, 2200.0, 3000.0], [550.0, 1850.0, 2600.0]), 0.12),
            (v([550.0, 1850.0, 2600.0], [550.0, 1800.0, 2550.0]), 0.14),
            (Fricative { center: 3300.0, q: 3.0, gain: 0.35 }, 0.16),
        ],
        "no" => vec![
            (nasal([250.0, 1100.0, 2400.0]), 0.07),
            (v([500.0, 1000.0, 2400.0], [450.0, 800.0, 2350.0]), 0.28),
        ],
        "up" => vec![
            (v([650.0, 1250.0, 2500.0], [620.0, 1200.0, 2450.0]), 0.18),
            (Gap, 0.05),
            (Burst { center: 900.0 }, 0.03),
        ],
        "down" => vec![
            (Burst { center: 3000.0 }, 0.02),
            (v([700.0, 1250.0, 2600.0], [450.0, 900.0, 2400.0]), 0.26),
            (nasal([250.0, 1500.0, 2500.0]), 0.08),
        ],
        "left" => vec![
            (v([350.0, 1000.0, 2600.0], [550.0, 1850.0, 2550.0]), 0.12),
            (v([550.0, 1850.0, 2550.0], [550.0, 1800.0, 2500.0]), 0.1),
            (Fricative { center: 1800.0, q: 0.7, gain: 0.15 }, 0.1),
            (Gap, 0.03),
            (Burst { center: 3200.0 }, 0.02),
        ],
        "right" => vec![
            (v([400.0, 1250.0, 1700.0], [750.0, 1300.0, 2400.0]), 0.1),
            (v([750.0, 1300.0, 2400.0], [350.0, 2200.0, 2900.0]), 0.2),
            (Gap, 0.04),
            (Burst { center: 3200.0 }, 0.02),
        ],
        "on" => vec![
            (v([600.0, 900.0, 2500.0], [580.0, 880.0, 2450.0]), 0.22),
            (nasal([250.0, 1100.0, 2400.0]), 0.12),
        ],
        "off" => vec![
            (v([600.0, 900.0, 2500.0], [580.0, 900.0, 2450.0]), 0.22),
            (Fricative { center: 1600.0, q: 0.6, gain: 0.18 }, 0.15),
        ],
        "stop" => vec![
            (Fricative { center: 3300.0, q: 3.0, gain: 0.35 }, 0.12),
            (Gap, 0.03),
            (Burst { center: 3200.0 }, 0.02),
            (v([600.0, 950.0, 2500.0], [580.0, 900.0, 2450.0]), 0.17),
            (Gap, 0.04),
            (Burst { center: 900.0 }, 0.02),
        ],
        "go" => vec![
            (Burst { center: 1800.0 }, 0.02),
            (v([450.0, 1000.0, 2300.0], [420.0, 750.0, 2300.0]), 0.3),
        ],
        _ => return None,
    })
}

/// Words outside [`WORDS`] get a recipe derived deterministically from the
/// name: two or three vowel targets with an optional fricative tail.
fn derived_recipe(word: &str) -> Vec<(Segment, f64)> {
    let h = word.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    let mut r = rng::stream(h, domain::SYNTH, 0, 0);
    let vowel = |r: &mut ChaCha8Rng| [r.random_range(280.0..800.0), r.random_range(800.0..2300.0), r.random_range(2300.0..3000.0)];
    let n = r.random_range(2..=3);
    let targets: Vec<[f64; 3]> = (0..=n).map(|_| vowel(&mut r)).collect();
    let mut out: Vec<(Segment, f64)> =
        targets.windows(2).map(|w| (Segment::Voiced { from: w[0], to: w[1], gain: 1.0 }, 0.1 + 0.05 * r.random::<f64>())).collect();
    if r.random::<bool>() {
        out.push((Segment::Fricative { center: r.random_range(1500.0..3500.0), q: 2.0, gain: 0.3 }, 0.12));
    }
    out
}

/// Per-clip speaker and recording variation.
#[derive(Debug, Clone, Copy)]
struct Speaker {
    f0: f64,
    formant_scale: f64,
    tempo: f64,
    onset: f64,
    peak: f64,
    /// Background noise standard deviation.
    noise: f64,
}

fn resonator(center: f64, q: f64, rate: f64) -> ([f64; 3], [f64; 2]) {
    let w0 = 2.0 * PI * center / rate;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    ([alpha / a0, 0.0, -alpha / a0], [-2.0 * w0.cos() / a0, (1.0 - alpha) / a0])
}

fn formant_gain(f: f64, formants: &[f64; 3]) -> f64 {
    const BANDWIDTH: [f64; 3] = [90.0, 110.0, 170.0];
    const LEVEL: [f64; 3] = [1.0, 0.6, 0.25];
    formants.iter().zip(BANDWIDTH).zip(LEVEL).map(|((&fc, bw), l)| l / (1.0 + ((f - fc) / (bw / 2.0)).powi(2))).sum()
}

fn render(segments: &[(Segment, f64)], sp: Speaker, len: usize, rate: f64, r: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let white = Normal::new(0.0, 1.0).unwrap();
    let total_dur: f64 = segments.iter().map(|(_, d)| d * sp.tempo).sum();
    let mut t0 = sp.onset;
    let mut phase = 0.0;
    let ramp = (0.01 * rate) as usize;
    for &(seg, dur) in segments {
        let dur = dur * sp.tempo;
        let start = (t0 * rate) as usize;
        let n = (dur * rate) as usize;
        let env = |i: usize| {
            let up = (i as f64 / ramp as f64).min(1.0);
            let down = ((n - i) as f64 / ramp as f64).min(1.0);
            up.min(down)
        };
        match seg {
            Segment::Voiced { from, to, gain } => {
                let mut amps: Vec<f64> = Vec::new();
                for i in 0..n {
                    let t = t0 + i as f64 / rate;
                    // Pitch declines by 15% over the word.
                    let f0 = sp.f0 * (1.0 - 0.15 * ((t - sp.onset) / total_dur).clamp(0.0, 1.0));
                    let harmonics = ((3800.0 / f0) as usize).max(1);
                    if i % 80 == 0 {
                        let a = i as f64 / n as f64;
                        let formants: [f64; 3] =
                            std::array::from_fn(|k| sp.formant_scale * (from[k] + (to[k] - from[k]) * a));
                        amps = (1..=harmonics).map(|k| formant_gain(k as f64 * f0, &formants) / (k as f64).powf(0.7)).collect();
                    }
                    phase += 2.0 * PI * f0 / rate;
                    let s: f64 = amps.iter().enumerate().take(harmonics).map(|(k, a)| a * ((k + 1) as f64 * phase).sin()).sum();
                    if start + i < len {
                        out[start + i] += gain * env(i) * s;
                    }
                }
            }
            Segment::Fricative { center, q, gain } => {
                let (b, a) = resonator(center * sp.formant_scale.sqrt(), q, rate);
                let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    let x: f64 = white.sample(r);
                    let y = b[0] * x + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
                    (x2, x1, y2, y1) = (x1, x, y1, y);
                    if start + i < len {
                        out[start + i] += gain * 2.0 * env(i) * y;
                    }
                }
            }
            Segment::Burst { center } => {
                let (b, a) = resonator(center, 1.5, rate);
                let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    let x: f64 = white.sample(r) * (-(i as f64) / (0.004 * rate)).exp();
                    let y = b[0] * x + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
                    (x2, x1, y2, y1) = (x1, x, y1, y);
                    if start + i < len {
                        out[start + i] += 0.5 * y;
                    }
                }
            }
            Segment::Gap => {}
        }
        t0 += dur;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= sp.peak / peak);
    }
    let floor = Normal::new(0.0, sp.noise).unwrap();
    out.iter_mut().for_each(|v| *v = (*v + floor.sample(r)).clamp(-1.0, 1.0));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: Vec<String>,
    pub clips_per_class: usize,
    pub sample_rate: u32,
    pub duration_secs: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: WORDS.iter().map(|w| w.to_string()).collect(),
            clips_per_class: 100,
            sample_rate: 16000,
            duration_secs: 1.0,
            seed: 0,
        }
    }
}

/// One utterance of `word` by speaker `index` under `seed`.
pub fn synth_word(word: &str, index: usize, seed: u64, sample_rate: u32, duration_secs: f64) -> AudioClip {
    let class_key = word.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    let mut r = rng::stream(seed, domain::SYNTH, class_key, index as u64);
    let segments = recipe(word).unwrap_or_else(|| derived_recipe(word));
    let rate = sample_rate as f64;
    let tempo = r.random_range(0.85..1.15);
    let speech: f64 = segments.iter().map(|(_, d)| d * tempo).sum();
    let latest = (duration_secs - speech - 0.05).max(0.05);
    let sp = Speaker {
        f0: r.random_range(100.0..220.0),
        formant_scale: r.random_range(0.92..1.08),
        tempo,
        onset: r.random_range(0.05..latest.min(0.3).max(0.051)),
        peak: r.random_range(0.25..0.6),
        // Log-uniform between 1e-4 and 1e-2.
        noise: 10f64.powf(r.random_range(-4.0..-2.0)),
    };
    let len = (duration_secs * rate).round() as usize;
    AudioClip::mono(render(&segments, sp, len, rate, &mut r), sample_rate)
}

/// `clips_per_class` utterances of each class, in class then index order.
/// Paths are `<label>/<label>_<index>.wav`.
pub fn generate(config: &SynthConfig) -> Vec<LabeledClip> {
    let mut out = Vec::with_capacity(config.classes.len() * config.clips_per_class);
    for label in &config.classes {
        for i in 0..config.clips_per_class {
            out.push(LabeledClip {
                path: Path::new(label).join(format!("{label}_{i:04}.wav")),
                label: label.clone(),
                clip: synth_word(label, i, config.seed, config.sample_rate, config.duration_secs),
            });
        }
    }
    out
}

/// Writes [`generate`]'s clips under `root` in the `<label>/<file>.wav`
/// layout read by [`crate::audio::load_dataset`].
pub fn write_dataset(config: &SynthConfig, root: &Path) -> Result<Vec<LabeledClip>, AudioError> {
    let mut clips = generate(config);
    for c in &mut clips {
        let path = root.join(&c.path);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| AudioError::IoFailure { path: dir.to_path_buf(), source })?;
        }
        write_wav(&c.clip, &path)?;
        c.path = path;
    }
    Ok(clips)
}
