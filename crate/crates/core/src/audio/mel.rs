use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use super::{AudioClip, AudioError, SAMPLE_RATE_HZ};

/// Frames per second produced by the default configuration.
pub const FRAME_RATE_HZ: u32 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    /// Analysis window length in samples (25 ms).
    pub window: usize,
    /// Hop in samples (10 ms).
    pub hop: usize,
    /// FFT length; the window is zero-padded up to this size.
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    /// Added to every filter energy before the natural log.
    pub floor_epsilon: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: SAMPLE_RATE_HZ,
            window: 400,
            hop: 160,
            n_fft: 512,
            n_mels: 64,
            f_min_hz: 60.0,
            f_max_hz: 7800.0,
            floor_epsilon: 1e-6,
        }
    }
}

impl MelConfig {
    /// Number of frames produced for `num_samples` input samples.
    pub fn num_frames(&self, num_samples: usize) -> Option<usize> {
        (num_samples >= self.window).then(|| (num_samples - self.window) / self.hop + 1)
    }
}

/// A t x n_mels matrix of natural-log filter energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    frames: Array2<f32>,
}

impl MelSpectrogram {
    pub fn from_frames(frames: Array2<f32>) -> Self {
        Self { frames }
    }

    pub fn frames(&self) -> &Array2<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f32> {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular filter stored sparsely over its support.
#[derive(Debug, Clone)]
struct Filter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Precomputed window, filterbank and FFT plan. Cheap to share across threads.
#[derive(Clone)]
pub struct LogMelExtractor {
    config: MelConfig,
    window: Vec<f64>,
    filters: Vec<Filter>,
    centers_hz: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Default for LogMelExtractor {
    fn default() -> Self {
        Self::new(MelConfig::default())
    }
}

impl LogMelExtractor {
    pub fn new(config: MelConfig) -> Self {
        assert!(config.window > 0 && config.window <= config.n_fft);
        assert!(config.hop > 0 && config.n_mels > 0);
        assert!(config.f_min_hz < config.f_max_hz);

        // Periodic Hann, the usual STFT convention.
        let window = (0..config.window)
            .map(|n| {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / config.window as f64).cos()
            })
            .collect();

        let n_bins = config.n_fft / 2 + 1;
        let bin_hz = config.sample_rate_hz as f64 / config.n_fft as f64;
        let mel_lo = hz_to_mel(config.f_min_hz);
        let mel_hi = hz_to_mel(config.f_max_hz);
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();

        let mut filters = Vec::with_capacity(config.n_mels);
        for m in 0..config.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut first_bin = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > left && f <= center {
                    (f - left) / (center - left)
                } else if f > center && f < right {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    let first = *first_bin.get_or_insert(k);
                    weights.resize(k - first, 0.0);
                    weights.push(w);
                }
            }
            filters.push(Filter {
                first_bin: first_bin.unwrap_or(0),
                weights,
            });
        }

        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        Self {
            centers_hz: edges[1..=config.n_mels].to_vec(),
            config,
            window,
            filters,
            fft,
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    /// Center frequency of each mel filter in Hz.
    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<MelSpectrogram, AudioError> {
        clip.require_rate(self.config.sample_rate_hz)?;
        let samples = clip.samples();
        let num_frames = self
            .config
            .num_frames(samples.len())
            .ok_or(AudioError::TooShort {
                samples: samples.len(),
                window: self.config.window,
            })?;

        let n_fft = self.config.n_fft;
        let mut out = Array2::<f32>::zeros((num_frames, self.config.n_mels));
        let mut buf = vec![Complex::new(0.0f64, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0f64, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; n_fft / 2 + 1];

        for (t, mut row) in out.rows_mut().into_iter().enumerate() {
            let start = t * self.config.hop;
            let frame = &samples[start..start + self.config.window];
            for (slot, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(x as f64 * w, 0.0);
            }
            for slot in buf[self.config.window..].iter_mut() {
                *slot = Complex::new(0.0, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (cell, filter) in row.iter_mut().zip(&self.filters) {
                let energy: f64 = filter
                    .weights
                    .iter()
                    .zip(&power[filter.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum();
                *cell = (energy + self.config.floor_epsilon).ln() as f32;
            }
        }
        Ok(MelSpectrogram::from_frames(out))
    }
}

/// 64-band log-mel at 100 Hz with the default configuration.
pub fn compute_log_mel(clip: &AudioClip) -> Result<MelSpectrogram, AudioError> {
    thread_local! {
        static EXTRACTOR: LogMelExtractor = LogMelExtractor::default();
    }
    EXTRACTOR.with(|e| e.compute(clip))
}
