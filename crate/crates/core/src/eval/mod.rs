//! Benchmark harness: manifests, seeded trials, metrics and sweeps.
//!
//! Templates come from near-mic (or unspecified) utterances of one session per
//! speaker. Every other utterance of the enrolled phrases is evaluated, along
//! with all of the speaker's aggressor utterances. Precision and recall are
//! macro-averaged over enrolled phrases; results are averaged over trials,
//! then phrases, then speakers.

mod chart;
mod manifest;
mod metrics;
mod sweep;
mod trial;

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub use chart::render_sweep_chart;
pub use manifest::{load_manifest, parse_manifest, ManifestEntry, MicCondition, PhraseRef, AGGRESSOR};
pub use metrics::{compute_metrics, trial_metrics, Counts, EvalReport, MeanStd, SpeakerReport, TrialMetrics};
pub use sweep::{
    evaluate, format_value, parse_sweep, sweep, write_report_csv, write_sweep_csv, SweepAxis, SweepPoint,
};
pub use trial::{
    run_trial, sample_phrases, trial_seed, Condition, Harness, NoiseSource, Prediction, TrainSession,
    TrialOutcome, TrialSpec,
};

use crate::matcher::MatchError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("manifest line {line}, field `{field}`: {reason}")]
    Parse { line: usize, field: String, reason: String },
    #[error("manifest line {line}: duplicate entry (speaker {speaker}, phrase {phrase}, session {session}, rep {rep:?})")]
    DuplicateEntry {
        line: usize,
        speaker: String,
        phrase: String,
        session: String,
        rep: Option<u32>,
    },
    #[error("{} audio file(s) listed in the manifest are missing: {}", .0.len(), display_paths(.0))]
    MissingAudio(Vec<PathBuf>),
    #[error("invalid trial spec: {0}")]
    InvalidSpec(String),
    #[error("insufficient data for speaker {speaker}{}: {reason}", .phrase.as_ref().map(|p| format!(" (phrase `{p}`)")).unwrap_or_default())]
    InsufficientData {
        speaker: String,
        phrase: Option<String>,
        reason: String,
    },
    #[error("{path}: {source}")]
    Utterance {
        path: PathBuf,
        #[source]
        source: Box<crate::Error>,
    },
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("no in-domain predictions to score")]
    NoInDomainPredictions,
    #[error("sweep has no values")]
    EmptySweep,
    #[error("at {axis}={value}: {source}")]
    AtSweepValue {
        axis: &'static str,
        value: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("chart rendering failed: {0}")]
    Chart(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

/// Protocol choices recorded alongside every report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportHeader {
    pub format: &'static str,
    pub enrollment: &'static str,
    pub averaging: &'static str,
    pub aggregation: &'static str,
    pub rule: String,
    pub alpha: String,
    pub metric: String,
    pub backend: String,
    pub templates_per_phrase: usize,
    pub n_phrases: Option<usize>,
    pub snr_db: Option<String>,
    pub seed: u64,
    pub trials: usize,
}

impl ReportHeader {
    pub fn new(spec: &TrialSpec, backend: &crate::engine::BackendId, trials: usize) -> Self {
        Self {
            format: "lpm-report/1",
            enrollment: "near-mic, single session",
            averaging: "macro over enrolled phrases",
            aggregation: "trials, then phrases, then speakers",
            rule: spec.rule.to_string(),
            alpha: spec.alpha.to_string(),
            metric: spec.dtw.metric.to_string(),
            backend: backend.to_string(),
            templates_per_phrase: spec.n_templates_per_phrase,
            n_phrases: spec.n_phrases,
            snr_db: spec.snr_db.map(format_value),
            seed: spec.seed,
            trials,
        }
    }
}
