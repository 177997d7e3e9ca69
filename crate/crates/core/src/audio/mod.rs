//! Audio ingestion and the log-mel frontend.
//!
//! Everything downstream works on 16 kHz mono clips. [`load_audio`] handles
//! channel folding and resampling so callers never see other rates.

mod mel;
mod mix;
mod resample;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use mel::{compute_log_mel, LogMelExtractor, MelConfig, MelSpectrogram, FRAME_RATE_HZ};
pub use mix::{active_frame_mask, mix_noise_at_snr, MixOutcome, ACTIVITY_GATE_DBFS, GATE_FRAME_LEN};
pub use resample::resample;

/// Canonical sample rate of every clip after ingestion.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("invalid sample rate {0} Hz")]
    InvalidSampleRate(u32),
    #[error("expected {expected} Hz audio, got {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },
    #[error("clip has {samples} samples, shorter than one {window}-sample analysis window")]
    TooShort { samples: usize, window: usize },
    #[error("noise clip is silent")]
    SilentNoise,
    #[error("speech clip has no frame above the {0} dBFS activity gate")]
    SilentSpeech(f64),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write wav {path}: {reason}")]
    Write { path: PathBuf, reason: String },
}

/// Mono PCM samples in [-1, 1] with their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::EmptyAudio);
        }
        if sample_rate_hz == 0 {
            return Err(AudioError::InvalidSampleRate(sample_rate_hz));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    /// Multiplies every sample by `gain` without clipping.
    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Returns the clip at the canonical rate, resampling if needed.
    pub fn to_canonical_rate(self) -> Self {
        if self.sample_rate_hz == SAMPLE_RATE_HZ {
            return self;
        }
        let samples = resample(&self.samples, self.sample_rate_hz, SAMPLE_RATE_HZ);
        Self {
            samples,
            sample_rate_hz: SAMPLE_RATE_HZ,
        }
    }

    pub(crate) fn require_rate(&self, expected: u32) -> Result<(), AudioError> {
        if self.sample_rate_hz != expected {
            return Err(AudioError::SampleRateMismatch {
                expected,
                found: self.sample_rate_hz,
            });
        }
        Ok(())
    }
}

/// Reads a PCM WAV file, folds channels to mono and resamples to 16 kHz.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioError::FileNotFound(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(AudioError::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "zero channels".into(),
        });
    }

    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(AudioError::UnsupportedFormat {
                    path: path.to_path_buf(),
                    reason: format!("{}-bit float", spec.bits_per_sample),
                });
            }
            reader
                .into_samples::<f32>()
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !matches!(bits, 8 | 16 | 24 | 32) {
                return Err(AudioError::UnsupportedFormat {
                    path: path.to_path_buf(),
                    reason: format!("{bits}-bit integer PCM"),
                });
            }
            let full_scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 / full_scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
    };

    if interleaved.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| (frame.iter().map(|&s| s as f64).sum::<f64>() / channels as f64) as f32)
            .collect()
    };
    if mono.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let clip = AudioClip::new(mono, spec.sample_rate)?.to_canonical_rate();
    Ok(clip)
}

/// Writes a clip as 16-bit mono PCM.
pub fn write_wav_i16(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let write_err = |e: hound::Error| AudioError::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(write_err)?;
    for &s in clip.samples() {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        writer.write_sample(v).map_err(write_err)?;
    }
    writer.finalize().map_err(write_err)
}

fn map_hound(path: &Path, err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(source) if source.kind() == std::io::ErrorKind::NotFound => {
            AudioError::FileNotFound(path.to_path_buf())
        }
        hound::Error::IoError(source) => AudioError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => AudioError::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_wav<T: hound::Sample + Copy>(
        path: &Path,
        channels: u16,
        rate: u32,
        bits: u16,
        format: hound::SampleFormat,
        samples: &[T],
    ) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: format,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn one_second_of_16k_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_wav(&p, 1, 16_000, 16, hound::SampleFormat::Int, &vec![0i16; 16_000]);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.len(), 16_000);
        assert_eq!(clip.sample_rate_hz(), SAMPLE_RATE_HZ);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn eight_khz_is_upsampled_to_twice_the_length() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let samples: Vec<i16> = (0..8000)
            .map(|i| ((i as f32 * 0.05).sin() * 8000.0) as i16)
            .collect();
        write_wav(&p, 1, 8_000, 16, hound::SampleFormat::Int, &samples);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.len(), 16_000);
    }

    #[test]
    fn antiphase_stereo_folds_to_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let mut samples = Vec::new();
        for i in 0..4000 {
            let x = ((i as f32 * 0.01).sin() * 12000.0) as i16;
            samples.push(x);
            samples.push(-x);
        }
        write_wav(&p, 2, 16_000, 16, hound::SampleFormat::Int, &samples);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.len(), 4000);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn integer_widths_and_float_scale_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("8.wav");
        write_wav(&p8, 1, 16_000, 8, hound::SampleFormat::Int, &[-128i8, 64, 0]);
        let c = load_audio(&p8).unwrap();
        assert_eq!(c.samples(), &[-1.0, 0.5, 0.0]);

        let p24 = dir.path().join("24.wav");
        write_wav(&p24, 1, 16_000, 24, hound::SampleFormat::Int, &[-(1i32 << 23), 1 << 22]);
        let c = load_audio(&p24).unwrap();
        assert_eq!(c.samples(), &[-1.0, 0.5]);

        let p32 = dir.path().join("32.wav");
        write_wav(&p32, 1, 16_000, 32, hound::SampleFormat::Int, &[i32::MIN, 1 << 30]);
        let c = load_audio(&p32).unwrap();
        assert_eq!(c.samples(), &[-1.0, 0.5]);

        let pf = dir.path().join("f.wav");
        write_wav(&pf, 1, 16_000, 32, hound::SampleFormat::Float, &[0.25f32, -0.75]);
        let c = load_audio(&pf).unwrap();
        assert_eq!(c.samples(), &[0.25, -0.75]);
    }

    #[test]
    fn missing_file_and_empty_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.wav");
        assert!(matches!(load_audio(&missing), Err(AudioError::FileNotFound(_))));

        let empty = dir.path().join("empty.wav");
        write_wav::<i16>(&empty, 1, 16_000, 16, hound::SampleFormat::Int, &[]);
        assert!(matches!(load_audio(&empty), Err(AudioError::EmptyAudio)));
    }

    #[test]
    fn non_wav_payload_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fake.wav");
        std::fs::write(&p, b"ID3\x03\x00\x00\x00not a riff file at all").unwrap();
        assert!(matches!(
            load_audio(&p),
            Err(AudioError::UnsupportedFormat { .. })
        ));
    }

    #[test]
    fn write_then_load_roundtrips_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let samples: Vec<f32> = (0..1600).map(|i| (i as f32 * 0.02).sin() * 0.5).collect();
        let clip = AudioClip::new(samples.clone(), 16_000).unwrap();
        write_wav_i16(&p, &clip).unwrap();
        let back = load_audio(&p).unwrap();
        for (a, b) in samples.iter().zip(back.samples()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
