//! Personalized phrase recognition from a handful of enrollment recordings.
//!
//! Audio is turned into log-mel frames, optionally mapped through a keyword
//! model into embeddings, trimmed to the spoken region and compared against
//! enrolled templates with dynamic time warping.

pub mod audio;
pub mod dtw;
pub mod embedding;
pub mod engine;
pub mod eval;
pub mod matcher;
pub mod synthetic;

use thiserror::Error;

pub use audio::{load_audio, AudioClip, AudioError, LogMelExtractor, MelConfig, MelSpectrogram};
pub use dtw::{dtw_distance, dtw_one_to_many, DtwConfig, DtwError, LocalMetric};
pub use embedding::{load_weights, EmbeddingError, EmbeddingSequence, ModelWeights};
pub use engine::{Backend, BackendId, Engine};
pub use eval::EvalError;
pub use matcher::{
    detect, enroll, Alpha, Decision, DecisionRule, DetectionResult, MatchError, PhraseSet,
};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Dtw(#[from] DtwError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
