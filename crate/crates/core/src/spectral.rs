//! Short-time Fourier analysis shared by feature extraction and the
//! spectral-centroid analysis.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Symmetric Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Framed, Hann-windowed FFT magnitudes.
#[derive(Clone)]
pub struct Stft {
    pub frame_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("frame_len", &self.frame_len)
            .field("hop", &self.hop)
            .field("n_fft", &self.n_fft)
            .finish()
    }
}

impl Stft {
    pub fn new(frame_len: usize, hop: usize, n_fft: usize) -> Self {
        assert!(frame_len > 0 && hop > 0 && n_fft >= frame_len);
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Self { frame_len, hop, n_fft, window: hann(frame_len), fft }
    }

    /// Frame and FFT size for a duration in milliseconds at `rate`.
    pub fn from_ms(rate: u32, frame_ms: f64, hop_ms: f64) -> Self {
        let frame_len = (rate as f64 * frame_ms / 1000.0).round().max(1.0) as usize;
        let hop = (rate as f64 * hop_ms / 1000.0).round().max(1.0) as usize;
        Self::new(frame_len, hop, frame_len.next_power_of_two())
    }

    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.hop
        }
    }

    pub fn num_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Calls `visit(frame_index, windowed_energy, magnitudes)` for every full frame.
    pub fn for_each_frame(&self, x: &[f64], mut visit: impl FnMut(usize, f64, &[f64])) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut mags = vec![0.0; self.num_bins()];
        for f in 0..self.num_frames(x.len()) {
            let start = f * self.hop;
            let mut energy = 0.0;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < self.frame_len {
                    let v = x[start + i] * self.window[i];
                    energy += v * v;
                    Complex64::new(v, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (m, c) in mags.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            visit(f, energy, &mags);
        }
    }
}
