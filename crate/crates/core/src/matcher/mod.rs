//! Enrollment and run-time detection against per-template thresholds.
//!
//! Each enrolled rendition becomes a template with threshold
//! `tau_i = alpha * max_{j != i, y_j = y_i} DTW(Z_i, Z_j)`. A query is scored
//! against every template and assigned the label of the closest one, or
//! rejected when no threshold admits it.

mod store;

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dtw::{dtw_prepared, dtw_prepared_one_to_many, DtwConfig, DtwError, PreparedSequence};
use crate::embedding::EmbeddingSequence;
use crate::engine::BackendId;

pub use store::{load_phrase_set, save_phrase_set, LPMS_MAGIC, LPMS_VERSION};

pub const DEFAULT_ALPHA: f64 = 1.25;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("phrase `{label}` has {count} template(s); at least 2 are required")]
    InsufficientTemplates { label: String, count: usize },
    #[error("utterance {index} has an empty embedding")]
    EmptyEmbedding { index: usize },
    #[error("no utterances to enroll")]
    NothingToEnroll,
    #[error("phrase set is empty")]
    EmptyPhraseSet,
    #[error("feature dimension {found} does not match the phrase set ({expected})")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Dtw(#[from] DtwError),
    #[error("phrase set was enrolled with backend {found}, but {expected} is loaded")]
    BackendMismatch { expected: BackendId, found: BackendId },
    #[error("not a phrase-set file (bad magic)")]
    BadMagic,
    #[error("phrase-set version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt phrase-set file: {0}")]
    CorruptFile(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Threshold multiplier. `+inf` turns the detector into a closed-set classifier.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct Alpha(f64);

impl Alpha {
    pub const INFINITE: Alpha = Alpha(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self, MatchError> {
        if value > 0.0 {
            Ok(Self(value))
        } else {
            Err(MatchError::InvalidAlpha(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    fn threshold(self, max_peer_distance: f64) -> f64 {
        if self.is_infinite() {
            f64::INFINITY
        } else {
            self.0 * max_peer_distance
        }
    }
}

impl Default for Alpha {
    fn default() -> Self {
        Self(DEFAULT_ALPHA)
    }
}

impl std::str::FromStr for Alpha {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v = match s.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => f64::INFINITY,
            other => other.parse::<f64>().map_err(|e| format!("invalid alpha `{s}`: {e}"))?,
        };
        Alpha::new(v).map_err(|e| e.to_string())
    }
}

impl std::fmt::Display for Alpha {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseTemplate {
    pub embedding: Array2<f32>,
    pub label: String,
    pub threshold: f64,
}

/// How a query's scores turn into a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Detect the nearest template's label if any template admits the query.
    #[default]
    Literal,
    /// Detect only when the nearest template itself admits the query.
    Strict,
}

impl std::str::FromStr for DecisionRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(Self::Literal),
            "strict" => Ok(Self::Strict),
            other => Err(format!("unknown rule `{other}` (expected literal|strict)")),
        }
    }
}

impl std::fmt::Display for DecisionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Literal => "literal",
            Self::Strict => "strict",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "label", rename_all = "snake_case")]
pub enum Decision {
    Detected(String),
    Rejected,
}

impl Decision {
    pub fn label(&self) -> Option<&str> {
        match self {
            Self::Detected(l) => Some(l),
            Self::Rejected => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub decision: Decision,
    pub best_score: f64,
    pub best_template_index: usize,
    pub per_template_scores: Vec<f64>,
}

/// Enrolled templates with their thresholds. Immutable after enrollment.
#[derive(Debug, Clone)]
pub struct PhraseSet {
    templates: Vec<PhraseTemplate>,
    alpha: Alpha,
    dtw: DtwConfig,
    backend: BackendId,
    prepared: Vec<PreparedSequence>,
}

impl PartialEq for PhraseSet {
    fn eq(&self, other: &Self) -> bool {
        self.templates == other.templates
            && self.alpha == other.alpha
            && self.dtw == other.dtw
            && self.backend == other.backend
    }
}

impl PhraseSet {
    pub(crate) fn from_parts(
        templates: Vec<PhraseTemplate>,
        alpha: Alpha,
        dtw: DtwConfig,
        backend: BackendId,
    ) -> Self {
        let prepared = templates
            .iter()
            .map(|t| PreparedSequence::new(t.embedding.view()))
            .collect();
        Self {
            templates,
            alpha,
            dtw,
            backend,
            prepared,
        }
    }

    pub fn templates(&self) -> &[PhraseTemplate] {
        &self.templates
    }

    pub fn alpha(&self) -> Alpha {
        self.alpha
    }

    pub fn dtw_config(&self) -> &DtwConfig {
        &self.dtw
    }

    pub fn backend(&self) -> BackendId {
        self.backend
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.templates.first().map(|t| t.embedding.ncols())
    }

    /// Distinct labels in sorted order.
    pub fn labels(&self) -> Vec<&str> {
        let mut labels: Vec<&str> = self.templates.iter().map(|t| t.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    /// Scores a query against every template and applies `rule`.
    pub fn detect(&self, query: &Array2<f32>, rule: DecisionRule) -> Result<DetectionResult, MatchError> {
        let dim = self.feature_dim().ok_or(MatchError::EmptyPhraseSet)?;
        if query.ncols() != dim {
            return Err(MatchError::DimensionMismatch {
                expected: dim,
                found: query.ncols(),
            });
        }
        let q = PreparedSequence::new(query.view());
        let scores = dtw_prepared_one_to_many(&q, &self.prepared, &self.dtw)?;
        Ok(self.decide(scores, rule))
    }

    /// Applies the decision rule to precomputed per-template scores.
    pub fn decide(&self, scores: Vec<f64>, rule: DecisionRule) -> DetectionResult {
        let mut best = 0;
        for (j, &d) in scores.iter().enumerate() {
            if d < scores[best] {
                best = j;
            }
        }
        let admitted = match rule {
            DecisionRule::Literal => scores
                .iter()
                .zip(&self.templates)
                .any(|(&d, t)| d < t.threshold),
            DecisionRule::Strict => scores[best] < self.templates[best].threshold,
        };
        let decision = if admitted {
            Decision::Detected(self.templates[best].label.clone())
        } else {
            Decision::Rejected
        };
        DetectionResult {
            decision,
            best_score: scores[best],
            best_template_index: best,
            per_template_scores: scores,
        }
    }

    /// Same templates and scores, thresholds recomputed for a new alpha.
    pub fn with_alpha(&self, alpha: Alpha, peer_max: &[f64]) -> Self {
        let mut out = self.clone();
        out.alpha = alpha;
        for (t, &m) in out.templates.iter_mut().zip(peer_max) {
            t.threshold = alpha.threshold(m);
        }
        out
    }
}

/// Builds a phrase set from labelled, already-trimmed embeddings.
pub fn enroll(
    utterances: &[(String, EmbeddingSequence)],
    alpha: Alpha,
    cfg: &DtwConfig,
    backend: BackendId,
) -> Result<PhraseSet, MatchError> {
    let frames: Vec<(String, Array2<f32>)> = utterances
        .iter()
        .map(|(l, e)| (l.clone(), e.frames().clone()))
        .collect();
    Ok(enroll_frames(frames, alpha, cfg, backend)?.0)
}

/// Enrollment over raw frame matrices. Also returns each template's largest
/// peer distance so callers can re-threshold without recomputing DTW.
pub fn enroll_frames(
    utterances: Vec<(String, Array2<f32>)>,
    alpha: Alpha,
    cfg: &DtwConfig,
    backend: BackendId,
) -> Result<(PhraseSet, Vec<f64>), MatchError> {
    if utterances.is_empty() {
        return Err(MatchError::NothingToEnroll);
    }
    let dim = utterances[0].1.ncols();
    for (index, (_, z)) in utterances.iter().enumerate() {
        if z.nrows() == 0 {
            return Err(MatchError::EmptyEmbedding { index });
        }
        if z.ncols() != dim {
            return Err(MatchError::DimensionMismatch {
                expected: dim,
                found: z.ncols(),
            });
        }
    }

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (label, _)) in utterances.iter().enumerate() {
        groups.entry(label.as_str()).or_default().push(i);
    }
    if let Some((label, members)) = groups.iter().find(|(_, m)| m.len() < 2) {
        return Err(MatchError::InsufficientTemplates {
            label: label.to_string(),
            count: members.len(),
        });
    }

    let prepared: Vec<PreparedSequence> = utterances
        .par_iter()
        .map(|(_, z)| PreparedSequence::new(z.view()))
        .collect();
    let pairs: Vec<(usize, usize)> = groups
        .values()
        .flat_map(|m| {
            m.iter()
                .enumerate()
                .flat_map(move |(a, &i)| m[a + 1..].iter().map(move |&j| (i, j)))
        })
        .collect();
    let distances: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| dtw_prepared(&prepared[i], &prepared[j], cfg))
        .collect::<Result<_, _>>()?;

    let mut peer_max = vec![0.0f64; utterances.len()];
    for (&(i, j), &d) in pairs.iter().zip(&distances) {
        peer_max[i] = peer_max[i].max(d);
        peer_max[j] = peer_max[j].max(d);
    }

    let templates = utterances
        .into_iter()
        .zip(&peer_max)
        .map(|((label, embedding), &m)| PhraseTemplate {
            embedding,
            label,
            threshold: alpha.threshold(m),
        })
        .collect();
    let set = PhraseSet {
        templates,
        alpha,
        dtw: *cfg,
        backend,
        prepared,
    };
    Ok((set, peer_max))
}

pub fn detect(
    set: &PhraseSet,
    query: &EmbeddingSequence,
    rule: DecisionRule,
) -> Result<DetectionResult, MatchError> {
    set.detect(query.frames(), rule)
}
