use crate::audio::{resample, AudioClip};
use crate::spectral::Stft;

/// Value added before the logarithm; silent cells equal `ln(LOG_FLOOR)`.
pub const LOG_FLOOR: f64 = 1e-6;

/// Log-mel front end parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSpec {
    pub sample_rate: u32,
    pub frame_len: u32,
    pub hop: u32,
    pub n_fft: u32,
    pub n_mels: u32,
    pub fmin: f32,
    pub fmax: f32,
    pub target_frames: u32,
}

impl Default for FeatureSpec {
    /// 25 ms / 10 ms Hann frames at 16 kHz, 40 mel bands over 20–7600 Hz, 98 frames.
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            frame_len: 400,
            hop: 160,
            n_fft: 512,
            n_mels: 40,
            fmin: 20.0,
            fmax: 7600.0,
            target_frames: 98,
        }
    }
}

impl FeatureSpec {
    pub fn feature_len(&self) -> usize {
        (self.n_mels * self.target_frames) as usize
    }
}

/// `target_frames × n_mels` log-energies, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub mels: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn get(&self, frame: usize, mel: usize) -> f64 {
        self.data[frame * self.mels + mel]
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular filter: first FFT bin and its weights.
#[derive(Debug, Clone)]
struct MelBand {
    start: usize,
    weights: Vec<f64>,
}

/// Cached STFT plan and filterbank for one [`FeatureSpec`].
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    spec: FeatureSpec,
    stft: Stft,
    bands: Vec<MelBand>,
}

impl FeatureExtractor {
    pub fn new(spec: FeatureSpec) -> Self {
        let stft = Stft::new(spec.frame_len as usize, spec.hop as usize, spec.n_fft as usize);
        let rate = spec.sample_rate as f64;
        let fmax = (spec.fmax as f64).min(rate / 2.0);
        let (lo, hi) = (hz_to_mel(spec.fmin as f64), hz_to_mel(fmax));
        let n = spec.n_mels as usize;
        let edges: Vec<f64> = (0..n + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n + 1) as f64)).collect();
        let bin_hz = rate / spec.n_fft as f64;
        let bands = (0..n)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                let start = (l / bin_hz).ceil() as usize;
                let end = ((r / bin_hz).floor() as usize).min(stft.num_bins() - 1);
                let weights = (start..=end)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= c {
                            (f - l) / (c - l)
                        } else {
                            (r - f) / (r - c)
                        }
                        .max(0.0)
                    })
                    .collect();
                MelBand { start, weights }
            })
            .collect();
        Self { spec, stft, bands }
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    /// Log-mel power features, padded with the log floor or truncated to
    /// `target_frames`. Clips at another rate are resampled first.
    pub fn extract(&self, clip: &AudioClip) -> FeatureMatrix {
        let resampled;
        let clip = if clip.sample_rate() != self.spec.sample_rate {
            resampled = resample(&crate::audio::to_mono(clip), self.spec.sample_rate).expect("valid target rate");
            &resampled
        } else {
            clip
        };
        let frames = self.spec.target_frames as usize;
        let mels = self.spec.n_mels as usize;
        let mut data = vec![LOG_FLOOR.ln(); frames * mels];
        let x = &clip.samples()[..clip.samples().len().min(self.stft.frame_len + (frames.max(1) - 1) * self.stft.hop)];
        self.stft.for_each_frame(x, |f, _, mags| {
            if f >= frames {
                return;
            }
            for (m, band) in self.bands.iter().enumerate() {
                let e: f64 = band.weights.iter().enumerate().map(|(i, w)| w * mags[band.start + i].powi(2)).sum();
                data[f * mels + m] = (e + LOG_FLOOR).ln();
            }
        });
        FeatureMatrix { frames, mels, data }
    }
}

/// Convenience wrapper building a one-off extractor.
pub fn extract_features(clip: &AudioClip, spec: &FeatureSpec) -> FeatureMatrix {
    FeatureExtractor::new(*spec).extract(clip)
}
