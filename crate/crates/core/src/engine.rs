//! Feature backends and the clip-to-template pipeline.
//!
//! A backend turns a log-mel spectrogram into an [`EmbeddingSequence`]. The
//! keyword backend runs the TCN; the spectral backend passes mel frames
//! through, derives speech activity from an energy gate and, after trimming,
//! subtracts the per-utterance mean of each mel band.

use std::path::Path;
use std::sync::Arc;

use ndarray::Axis;

use crate::audio::{load_audio, AudioClip, LogMelExtractor, MelConfig, MelSpectrogram};
use crate::embedding::{
    infer, trim_silence_with, EmbeddingSequence, ModelWeights, TrimMode, DEFAULT_SAD_THRESHOLD,
};
use crate::Error;

/// Identifies the feature space a phrase set was enrolled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendId {
    Spectral,
    /// Keyword model, identified by the SHA-256 of its weight file.
    Kws([u8; 32]),
}

impl BackendId {
    /// 32-byte on-disk form; all zeros denotes the spectral backend.
    pub fn to_bytes(&self) -> [u8; 32] {
        match self {
            Self::Spectral => [0; 32],
            Self::Kws(h) => *h,
        }
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        if bytes == [0; 32] {
            Self::Spectral
        } else {
            Self::Kws(bytes)
        }
    }
}

impl std::fmt::Display for BackendId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Spectral => f.write_str("spectral"),
            Self::Kws(h) => {
                f.write_str("kws:")?;
                for b in &h[..8] {
                    write!(f, "{b:02x}")?;
                }
                Ok(())
            }
        }
    }
}

/// Energy gate used as the spectral backend's speech-activity signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGate {
    /// Frames more than this many dB below the loudest frame are inactive.
    pub relative_db: f64,
    /// Frames below this level (dB re a full-scale sine) are inactive.
    pub absolute_db: f64,
    /// Subtract each band's mean over the trimmed utterance.
    pub mean_normalize: bool,
}

impl Default for SpectralGate {
    fn default() -> Self {
        Self {
            relative_db: 40.0,
            absolute_db: -60.0,
            mean_normalize: true,
        }
    }
}

/// Binary activity per frame from total mel energy.
pub fn spectral_activity(mel: &MelSpectrogram, gate: &SpectralGate, mel_cfg: &MelConfig) -> Vec<f32> {
    let energies: Vec<f64> = mel
        .frames()
        .rows()
        .into_iter()
        .map(|row| {
            let peak = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            peak + row.iter().map(|&v| (v as f64 - peak).exp()).sum::<f64>().ln()
        })
        .collect();
    let loudest = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let full_scale = 2.0 * (mel_cfg.window as f64 / 4.0).ln();
    let db_to_ln = std::f64::consts::LN_10 / 10.0;
    let threshold = (loudest - gate.relative_db * db_to_ln).max(full_scale + gate.absolute_db * db_to_ln);
    energies
        .iter()
        .map(|&e| if e >= threshold { 1.0 } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone)]
pub enum Backend {
    Spectral(SpectralGate),
    Kws(Arc<ModelWeights>),
}

impl Backend {
    pub fn spectral() -> Self {
        Self::Spectral(SpectralGate::default())
    }

    pub fn kws(weights: ModelWeights) -> Self {
        Self::Kws(Arc::new(weights))
    }

    pub fn id(&self) -> BackendId {
        match self {
            Self::Spectral(_) => BackendId::Spectral,
            Self::Kws(w) => BackendId::Kws(w.hash()),
        }
    }

    pub fn feature_dim(&self, mel_cfg: &MelConfig) -> usize {
        match self {
            Self::Spectral(_) => mel_cfg.n_mels,
            Self::Kws(w) => w.metadata().embed_dim,
        }
    }

    /// Untrimmed embeddings for a spectrogram.
    pub fn embed_mel(&self, mel: &MelSpectrogram, mel_cfg: &MelConfig) -> Result<EmbeddingSequence, Error> {
        match self {
            Self::Spectral(gate) => {
                let sad = spectral_activity(mel, gate, mel_cfg);
                Ok(EmbeddingSequence::new(mel.frames().clone(), sad)?)
            }
            Self::Kws(weights) => Ok(infer(weights, mel)?),
        }
    }

    /// Applied to the trimmed sequence.
    pub fn finalize(&self, seq: EmbeddingSequence) -> EmbeddingSequence {
        match self {
            Self::Spectral(gate) if gate.mean_normalize && !seq.is_empty() => {
                let sad = seq.sad().to_vec();
                let mut frames = seq.into_frames();
                let mean = frames.mean_axis(Axis(0)).expect("non-empty");
                frames -= &mean;
                EmbeddingSequence::new(frames, sad).expect("length unchanged")
            }
            _ => seq,
        }
    }
}

/// Audio clip to trimmed phrase embedding.
#[derive(Debug, Clone)]
pub struct Engine {
    extractor: LogMelExtractor,
    backend: Backend,
    sad_threshold: f32,
    trim_mode: TrimMode,
}

impl Engine {
    pub fn new(backend: Backend) -> Self {
        Self {
            extractor: LogMelExtractor::default(),
            backend,
            sad_threshold: DEFAULT_SAD_THRESHOLD,
            trim_mode: TrimMode::Boundary,
        }
    }

    pub fn with_sad_threshold(mut self, threshold: f32) -> Self {
        self.sad_threshold = threshold;
        self
    }

    pub fn with_trim_mode(mut self, mode: TrimMode) -> Self {
        self.trim_mode = mode;
        self
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn backend_id(&self) -> BackendId {
        self.backend.id()
    }

    pub fn feature_dim(&self) -> usize {
        self.backend.feature_dim(self.extractor.config())
    }

    pub fn mel(&self, clip: &AudioClip) -> Result<MelSpectrogram, Error> {
        Ok(self.extractor.compute(clip)?)
    }

    pub fn embed_clip(&self, clip: &AudioClip) -> Result<EmbeddingSequence, Error> {
        let mel = self.mel(clip)?;
        let raw = self.backend.embed_mel(&mel, self.extractor.config())?;
        let trimmed = trim_silence_with(&raw, self.sad_threshold, self.trim_mode)?;
        Ok(self.backend.finalize(trimmed))
    }

    pub fn embed_file(&self, path: impl AsRef<Path>) -> Result<EmbeddingSequence, Error> {
        self.embed_clip(&load_audio(path)?)
    }
}
