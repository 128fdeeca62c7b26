use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{CodecConfig, CodecError};
use crate::audio::AudioClip;

/// Princen–Bradley sine window of length `2n`.
pub fn sine_window(n: usize) -> Vec<f64> {
    (0..2 * n).map(|i| (PI * (i as f64 + 0.5) / (2 * n) as f64).sin()).collect()
}

struct MdctPlan {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl MdctPlan {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, forward: planner.plan_fft_forward(2 * n), inverse: planner.plan_fft_inverse(2 * n) }
    }

    fn n0(&self) -> f64 {
        0.5 + self.n as f64 / 2.0
    }

    /// `X[k] = sqrt(2/N) Σ y[n] cos(π/N (n + n0)(k + ½))`, via a 2N-point FFT.
    fn forward(&self, block: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut buf: Vec<Complex64> = block
            .iter()
            .enumerate()
            .map(|(i, &v)| Complex64::from_polar(v, -PI * i as f64 / (2 * n) as f64))
            .collect();
        self.forward.process(&mut buf);
        let scale = (2.0 / n as f64).sqrt();
        let n0 = self.n0();
        (0..n)
            .map(|k| {
                let tw = Complex64::from_polar(1.0, -PI * n0 * (k as f64 + 0.5) / n as f64);
                scale * (tw * buf[k]).re
            })
            .collect()
    }

    /// Inverse with the same `sqrt(2/N)` scale, so windowed overlap-add
    /// reconstructs the input.
    fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let n0 = self.n0();
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * n];
        for (k, &c) in coeffs.iter().enumerate() {
            buf[k] = Complex64::from_polar(c, PI * n0 * k as f64 / n as f64);
        }
        self.inverse.process(&mut buf);
        let scale = (2.0 / n as f64).sqrt();
        (0..2 * n)
            .map(|i| {
                let tw = Complex64::from_polar(1.0, PI * (i as f64 + n0) / (2 * n) as f64);
                scale * (tw * buf[i]).re
            })
            .collect()
    }
}

/// Forward MDCT of one `2N` block (no window applied).
pub fn mdct_block(block: &[f64]) -> Vec<f64> {
    assert!(block.len() % 2 == 0 && !block.is_empty());
    MdctPlan::new(block.len() / 2).forward(block)
}

/// Inverse MDCT of `N` coefficients into a `2N` aliased block (no window applied).
pub fn imdct_block(coeffs: &[f64]) -> Vec<f64> {
    assert!(!coeffs.is_empty());
    MdctPlan::new(coeffs.len()).inverse(coeffs)
}

/// Sine-windowed MDCT analysis, uniform coefficient quantization, and
/// overlap-add synthesis. Output is trimmed to the input length.
pub fn mdct_roundtrip(clip: &AudioClip, config: &CodecConfig) -> Result<AudioClip, CodecError> {
    if !clip.is_mono() {
        return Err(CodecError::NotMono);
    }
    config.validate()?;
    let out = mdct_process(clip.samples(), config.mdct_window, |c| {
        if config.mdct_step_size > 0.0 {
            let step = config.mdct_step_size;
            for v in c.iter_mut() {
                *v = (*v / step).round_ties_even() * step;
            }
        }
    });
    Ok(AudioClip::mono(out, clip.sample_rate()))
}

/// Runs analysis → `edit` → synthesis over every block.
pub(crate) fn mdct_process(x: &[f64], n: usize, mut edit: impl FnMut(&mut Vec<f64>)) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let plan = MdctPlan::new(n);
    let window = sine_window(n);
    let blocks = x.len().div_ceil(n) + 1;
    let mut padded = vec![0.0; (blocks + 1) * n];
    padded[n..n + x.len()].copy_from_slice(x);
    let mut out = vec![0.0; padded.len()];
    for b in 0..blocks {
        let start = b * n;
        let block: Vec<f64> = padded[start..start + 2 * n].iter().zip(&window).map(|(s, w)| s * w).collect();
        let mut coeffs = plan.forward(&block);
        edit(&mut coeffs);
        let y = plan.inverse(&coeffs);
        for (i, (v, w)) in y.iter().zip(&window).enumerate() {
            out[start + i] += v * w;
        }
    }
    out[n..n + x.len()].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_mdct(block: &[f64]) -> Vec<f64> {
        let n = block.len() / 2;
        let n0 = 0.5 + n as f64 / 2.0;
        (0..n)
            .map(|k| {
                (2.0 / n as f64).sqrt()
                    * block
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v * (PI / n as f64 * (i as f64 + n0) * (k as f64 + 0.5)).cos())
                        .sum::<f64>()
            })
            .collect()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    fn sine(f: f64, len: usize) -> Vec<f64> {
        (0..len).map(|n| 0.5 * (2.0 * PI * f * n as f64 / 16000.0).sin()).collect()
    }

    fn snr_db(r: &[f64], t: &[f64]) -> f64 {
        let s: f64 = r.iter().map(|v| v * v).sum();
        let e: f64 = r.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum();
        10.0 * (s / e).log10()
    }

    #[test]
    fn fft_mdct_matches_direct_sum() {
        let block = noise(64, 1);
        let fast = mdct_block(&block);
        let slow = naive_mdct(&block);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn unquantized_roundtrip_is_perfect() {
        let x = noise(5000, 2);
        for n in [64, 512, 1024] {
            let y = mdct_process(&x, n, |_| {});
            assert_eq!(y.len(), x.len());
            let err = x.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-6, "window {n}: {err}");
        }
    }

    #[test]
    fn step_of_twice_peak_zeroes_everything() {
        let x = sine(1000.0, 4096);
        let mut peak = 0.0f64;
        mdct_process(&x, 512, |c| peak = c.iter().fold(peak, |m, v| m.max(v.abs())));
        let cfg = CodecConfig { mdct_window: 512, mdct_step_size: 2.0 * peak, ..CodecConfig::default() };
        let out = mdct_roundtrip(&AudioClip::mono(x, 16000), &cfg).unwrap();
        assert!(out.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coarse_step_keeps_tone() {
        let x = sine(1000.0, 4096);
        let cfg = CodecConfig { mdct_window: 512, mdct_step_size: 0.5, ..CodecConfig::default() };
        let out = mdct_roundtrip(&AudioClip::mono(x.clone(), 16000), &cfg).unwrap();
        let snr = snr_db(&x, out.samples());
        assert!(snr.is_finite() && snr > 0.0, "snr {snr}");
        // Goertzel-style check that 1 kHz still dominates.
        let mag = |f: f64| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in out.samples().iter().enumerate() {
                let ph = 2.0 * PI * f * i as f64 / 16000.0;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            re.hypot(im)
        };
        let peak = mag(1000.0);
        for f in [500.0, 1500.0, 2000.0, 4000.0] {
            assert!(mag(f) < peak);
        }
    }

    #[test]
    fn snr_non_increasing_in_step() {
        let x = noise(8000, 3);
        let clip = AudioClip::mono(x.clone(), 16000);
        let snrs: Vec<f64> = [0.01, 0.05, 0.2]
            .iter()
            .map(|&s| {
                let cfg = CodecConfig { mdct_step_size: s, ..CodecConfig::default() };
                snr_db(&x, mdct_roundtrip(&clip, &cfg).unwrap().samples())
            })
            .collect();
        assert!(snrs[0] >= snrs[1] && snrs[1] >= snrs[2], "{snrs:?}");
    }
}
