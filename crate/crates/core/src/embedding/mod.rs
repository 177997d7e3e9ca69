//! Keyword-model runtime: weight loading, the embedding forward pass and
//! speech-activity trimming.

mod model;
mod weights;

use std::path::PathBuf;

use ndarray::{Array2, Axis};
use thiserror::Error;

pub use model::{infer, LEAKY_SLOPE};
pub use weights::{
    encode_lpmw, load_weights, random_tensors, random_weights, EmbeddingTap, ModelMetadata,
    ModelWeights, Tensor, KERNEL_SIZE, LPMW_MAGIC, LPMW_VERSION,
};

pub const DEFAULT_SAD_THRESHOLD: f32 = 0.5;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("not an LPMW file (bad magic)")]
    BadMagic,
    #[error("LPMW version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("tensor `{tensor}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("weight file is truncated")]
    TruncatedFile,
    #[error("weight file checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("required tensor `{0}` is missing")]
    MissingTensor(String),
    #[error("tensor `{0}` is not part of the architecture")]
    UnexpectedTensor(String),
    #[error("tensor `{0}` appears more than once")]
    DuplicateTensor(String),
    #[error("invalid weight file: {0}")]
    InvalidMetadata(String),
    #[error("model expects {expected} input features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no frame reached the speech-activity threshold {0}")]
    NoSpeechDetected(f32),
    #[error("speech-activity threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f32),
    #[error("embedding has {frames} frames but {sad} activity values")]
    LengthMismatch { frames: usize, sad: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Per-frame embeddings with a speech-activity posterior for each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    frames: Array2<f32>,
    sad: Vec<f32>,
}

impl EmbeddingSequence {
    pub fn new(frames: Array2<f32>, sad: Vec<f32>) -> Result<Self, EmbeddingError> {
        if frames.nrows() != sad.len() {
            return Err(EmbeddingError::LengthMismatch {
                frames: frames.nrows(),
                sad: sad.len(),
            });
        }
        Ok(Self { frames, sad })
    }

    /// Treats every frame as speech.
    pub fn all_speech(frames: Array2<f32>) -> Self {
        let sad = vec![1.0; frames.nrows()];
        Self { frames, sad }
    }

    pub fn frames(&self) -> &Array2<f32> {
        &self.frames
    }

    pub fn sad(&self) -> &[f32] {
        &self.sad
    }

    pub fn len(&self) -> usize {
        self.sad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sad.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn into_frames(self) -> Array2<f32> {
        self.frames
    }

    fn select(&self, indices: &[usize]) -> Self {
        Self {
            frames: self.frames.select(Axis(0), indices),
            sad: indices.iter().map(|&i| self.sad[i]).collect(),
        }
    }
}

/// How frames below the activity threshold are removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrimMode {
    /// Drop leading and trailing inactive frames only.
    #[default]
    Boundary,
    /// Drop every inactive frame, including pauses inside the phrase.
    AllInactive,
}

pub fn trim_silence(
    seq: &EmbeddingSequence,
    sad_threshold: f32,
) -> Result<EmbeddingSequence, EmbeddingError> {
    trim_silence_with(seq, sad_threshold, TrimMode::Boundary)
}

pub fn trim_silence_with(
    seq: &EmbeddingSequence,
    sad_threshold: f32,
    mode: TrimMode,
) -> Result<EmbeddingSequence, EmbeddingError> {
    if !(sad_threshold > 0.0 && sad_threshold < 1.0) {
        return Err(EmbeddingError::InvalidThreshold(sad_threshold));
    }
    let active = |s: &f32| *s >= sad_threshold;
    let first = seq
        .sad
        .iter()
        .position(active)
        .ok_or(EmbeddingError::NoSpeechDetected(sad_threshold))?;
    let last = seq.sad.iter().rposition(active).expect("first exists");
    let keep: Vec<usize> = match mode {
        TrimMode::Boundary => (first..=last).collect(),
        TrimMode::AllInactive => (first..=last).filter(|&i| active(&seq.sad[i])).collect(),
    };
    Ok(seq.select(&keep))
}
