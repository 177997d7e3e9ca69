use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::manifest::{ManifestEntry, MicCondition, PhraseRef, AGGRESSOR};
use super::EvalError;
use crate::audio::{load_audio, mix_noise_at_snr, AudioClip};
use crate::dtw::DtwConfig;
use crate::embedding::EmbeddingError;
use crate::engine::Engine;
use crate::matcher::{enroll_frames, Alpha, DecisionRule};

/// Which session each speaker's templates come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainSession {
    Named(String),
    /// The lexicographically smallest session id of each speaker.
    Earliest,
}

/// Background noise for the evaluation-side SNR condition.
#[derive(Debug, Clone)]
pub enum NoiseSource {
    /// Uniform white noise, regenerated per utterance.
    White,
    /// Recorded noise clips at the canonical rate.
    Clips(Arc<Vec<AudioClip>>),
}

impl NoiseSource {
    pub fn load(paths: &[PathBuf]) -> Result<Self, EvalError> {
        let clips = paths
            .iter()
            .map(|p| {
                load_audio(p).map_err(|e| EvalError::Utterance {
                    path: p.clone(),
                    source: Box::new(e.into()),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if clips.is_empty() {
            return Ok(Self::White);
        }
        Ok(Self::Clips(Arc::new(clips)))
    }
}

#[derive(Debug, Clone)]
pub struct TrialSpec {
    pub train_session: TrainSession,
    /// `None` enrolls every eligible phrase.
    pub n_phrases: Option<usize>,
    pub n_templates_per_phrase: usize,
    pub alpha: Alpha,
    pub rule: DecisionRule,
    pub dtw: DtwConfig,
    /// Noise added to evaluated utterances; `None` or `+inf` leaves them clean.
    pub snr_db: Option<f64>,
    pub noise: NoiseSource,
    pub seed: u64,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self {
            train_session: TrainSession::Earliest,
            n_phrases: None,
            n_templates_per_phrase: 2,
            alpha: Alpha::default(),
            rule: DecisionRule::default(),
            dtw: DtwConfig::default(),
            snr_db: None,
            noise: NoiseSource::White,
            seed: 0,
        }
    }
}

impl TrialSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_templates_per_phrase < 2 {
            return Err(EvalError::InvalidSpec(format!(
                "n_templates_per_phrase must be at least 2, got {}",
                self.n_templates_per_phrase
            )));
        }
        if self.n_phrases == Some(0) {
            return Err(EvalError::InvalidSpec("n_phrases must be at least 1".into()));
        }
        if self.snr_db.is_some_and(|s| s.is_nan() || s == f64::NEG_INFINITY) {
            return Err(EvalError::InvalidSpec("snr_db must be a number or +inf".into()));
        }
        Ok(())
    }

    fn effective_snr(&self) -> Option<f64> {
        self.snr_db.filter(|s| s.is_finite())
    }
}

/// Recording condition of an evaluated utterance relative to enrollment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    SameNear,
    SameFar,
    Other,
    Aggressor,
}

impl Condition {
    pub const IN_DOMAIN: [Condition; 3] = [Self::SameNear, Self::SameFar, Self::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SameNear => "same_near",
            Self::SameFar => "same_far",
            Self::Other => "other",
            Self::Aggressor => "aggressor",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub audio_path: PathBuf,
    pub truth: PhraseRef,
    /// Detected label, or `None` when rejected.
    pub predicted: Option<String>,
    pub condition: Condition,
    /// `None` when the utterance held no detectable speech.
    pub best_score: Option<f64>,
}

/// All predictions for one speaker in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub speaker: String,
    pub trial: usize,
    /// Enrolled phrase ids, sorted.
    pub enrolled: Vec<String>,
    pub predictions: Vec<Prediction>,
}

fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Seed of the phrase sampler for one speaker and trial.
pub fn trial_seed(seed: u64, trial: usize, speaker: &str) -> u64 {
    derive_seed(&[
        b"phrases",
        &seed.to_le_bytes(),
        &(trial as u64).to_le_bytes(),
        speaker.as_bytes(),
    ])
}

/// Keyed on the entry's identity rather than its absolute path, so a corpus
/// gets the same noise wherever it is stored.
fn noise_seed(seed: u64, entry: &ManifestEntry) -> u64 {
    let phrase = entry.phrase.phrase().unwrap_or(AGGRESSOR);
    let rep = entry.rep.map_or(u64::MAX, u64::from);
    let file = entry.audio_path.file_name().unwrap_or_default();
    derive_seed(&[
        b"noise",
        &seed.to_le_bytes(),
        entry.speaker_id.as_bytes(),
        entry.session_id.as_bytes(),
        phrase.as_bytes(),
        &rep.to_le_bytes(),
        file.as_encoded_bytes(),
    ])
}

/// Uniform sample of `n` phrases without replacement, returned sorted.
///
/// Partial Fisher-Yates over the sorted pool driven by `ChaCha8Rng`.
pub fn sample_phrases(pool: &[String], n: usize, seed: u64) -> Vec<String> {
    let mut items: Vec<String> = pool.to_vec();
    items.sort();
    let n = n.min(items.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let j = rng.gen_range(i..items.len());
        items.swap(i, j);
    }
    items.truncate(n);
    items.sort();
    items
}

/// Path plus, for noisy variants, `(snr bits, seed, noise source id)`.
type CacheKey = (PathBuf, Option<(u64, u64, usize)>);
type Memo = Mutex<HashMap<(String, Vec<String>), Vec<Prediction>>>;

/// Runs trials against one engine, caching embeddings across trials and sweep values.
pub struct Harness<'a> {
    engine: &'a Engine,
    cache: Mutex<HashMap<CacheKey, Arc<Array2<f32>>>>,
}

impl<'a> Harness<'a> {
    pub fn new(engine: &'a Engine) -> Self {
        Self {
            engine,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn engine(&self) -> &Engine {
        self.engine
    }

    fn noisy_clip(
        &self,
        entry: &ManifestEntry,
        clip: AudioClip,
        snr: f64,
        spec: &TrialSpec,
    ) -> Result<AudioClip, crate::Error> {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(spec.seed, entry));
        let noise = match &spec.noise {
            NoiseSource::White => {
                let samples = (0..clip.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                AudioClip::new(samples, clip.sample_rate_hz())?
            }
            NoiseSource::Clips(clips) => {
                let source = &clips[rng.gen_range(0..clips.len())];
                let offset = rng.gen_range(0..source.len());
                let mut s = source.samples().to_vec();
                s.rotate_left(offset);
                AudioClip::new(s, source.sample_rate_hz())?
            }
        };
        Ok(mix_noise_at_snr(&clip, &noise, snr)?.clip)
    }

    /// Trimmed embedding, or `None` when no speech is detected.
    fn embedding(
        &self,
        entry: &ManifestEntry,
        snr: Option<f64>,
        spec: &TrialSpec,
    ) -> Result<Option<Arc<Array2<f32>>>, EvalError> {
        let path = entry.audio_path.as_path();
        let noise_id = match &spec.noise {
            NoiseSource::White => 0,
            NoiseSource::Clips(c) => Arc::as_ptr(c) as usize,
        };
        let key = (path.to_path_buf(), snr.map(|s| (s.to_bits(), spec.seed, noise_id)));
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(Some(hit.clone()));
        }
        let wrap = |e: crate::Error| EvalError::Utterance {
            path: path.to_path_buf(),
            source: Box::new(e),
        };
        let mut clip = load_audio(path).map_err(|e| wrap(e.into()))?;
        if let Some(snr) = snr {
            clip = self.noisy_clip(entry, clip, snr, spec).map_err(wrap)?;
        }
        match self.engine.embed_clip(&clip) {
            Ok(seq) => {
                let frames = Arc::new(seq.into_frames());
                self.cache.lock().unwrap().insert(key, frames.clone());
                Ok(Some(frames))
            }
            Err(crate::Error::Embedding(EmbeddingError::NoSpeechDetected(_))) => Ok(None),
            Err(e) => Err(wrap(e)),
        }
    }

    /// One trial over every speaker in the manifest.
    pub fn run_trial(
        &self,
        manifest: &[ManifestEntry],
        spec: &TrialSpec,
        trial: usize,
    ) -> Result<Vec<TrialOutcome>, EvalError> {
        self.run_trial_memo(manifest, spec, trial, &Mutex::new(HashMap::new()))
    }

    fn run_trial_memo(
        &self,
        manifest: &[ManifestEntry],
        spec: &TrialSpec,
        trial: usize,
        memo: &Memo,
    ) -> Result<Vec<TrialOutcome>, EvalError> {
        spec.validate()?;
        let mut by_speaker: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
        for e in manifest {
            by_speaker.entry(&e.speaker_id).or_default().push(e);
        }
        let speakers: Vec<(&str, Vec<&ManifestEntry>)> = by_speaker
            .into_iter()
            .map(|(s, mut entries)| {
                entries.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
                (s, entries)
            })
            .collect();
        speakers
            .par_iter()
            .map(|(speaker, entries)| self.run_speaker(speaker, entries, spec, trial, memo))
            .collect()
    }

    pub fn run_trials(
        &self,
        manifest: &[ManifestEntry],
        spec: &TrialSpec,
        n_trials: usize,
    ) -> Result<Vec<TrialOutcome>, EvalError> {
        // Trials that draw the same phrase subset for a speaker produce the
        // same predictions, so they are computed once.
        let memo = Mutex::new(HashMap::new());
        let mut out = Vec::new();
        for t in 0..n_trials {
            out.extend(self.run_trial_memo(manifest, spec, t, &memo)?);
        }
        Ok(out)
    }

    fn run_speaker(
        &self,
        speaker: &str,
        entries: &[&ManifestEntry],
        spec: &TrialSpec,
        trial: usize,
        memo: &Memo,
    ) -> Result<TrialOutcome, EvalError> {
        let k = spec.n_templates_per_phrase;
        let sessions: BTreeSet<&str> = entries.iter().map(|e| e.session_id.as_str()).collect();
        let train = match &spec.train_session {
            TrainSession::Named(s) if sessions.contains(s.as_str()) => s.as_str(),
            TrainSession::Named(s) => {
                return Err(EvalError::InsufficientData {
                    speaker: speaker.to_string(),
                    phrase: None,
                    reason: format!("no recordings in session `{s}`"),
                })
            }
            TrainSession::Earliest => sessions.first().copied().unwrap_or_default(),
        };

        let mut enrollable: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
        for e in entries {
            if let PhraseRef::Phrase(p) = &e.phrase {
                let slot = enrollable.entry(p).or_default();
                if e.session_id == train && e.mic != MicCondition::Far {
                    slot.push(e);
                }
            }
        }
        for (phrase, list) in enrollable.iter_mut() {
            list.sort_by_key(|e| (e.mic != MicCondition::Near, e.rep, &e.audio_path));
            if list.len() < k {
                log::debug!(
                    "speaker {speaker}: phrase `{phrase}` has {} enrollable utterance(s) in `{train}`, skipped",
                    list.len()
                );
            }
        }
        let pool: Vec<String> = enrollable
            .iter()
            .filter(|(_, l)| l.len() >= k)
            .map(|(p, _)| p.to_string())
            .collect();
        let n = spec.n_phrases.unwrap_or(pool.len());
        if pool.is_empty() || n > pool.len() {
            let short = enrollable.iter().find(|(_, l)| l.len() < k).map(|(p, _)| p.to_string());
            return Err(EvalError::InsufficientData {
                speaker: speaker.to_string(),
                phrase: short,
                reason: format!(
                    "{n} phrase(s) requested but {} have at least {k} near-mic utterances in session `{train}`",
                    pool.len()
                ),
            });
        }
        let selected = sample_phrases(&pool, n, trial_seed(spec.seed, trial, speaker));
        let memo_key = (speaker.to_string(), selected.clone());
        if let Some(predictions) = memo.lock().unwrap().get(&memo_key) {
            return Ok(TrialOutcome {
                speaker: speaker.to_string(),
                trial,
                enrolled: selected,
                predictions: predictions.clone(),
            });
        }

        let mut template_entries: Vec<&ManifestEntry> = Vec::new();
        for p in &selected {
            template_entries.extend(&enrollable[p.as_str()][..k]);
        }
        let is_template: BTreeSet<&Path> = template_entries.iter().map(|e| e.audio_path.as_path()).collect();
        let selected_set: BTreeSet<&str> = selected.iter().map(String::as_str).collect();
        let evaluated: Vec<&ManifestEntry> = entries
            .iter()
            .copied()
            .filter(|e| match &e.phrase {
                PhraseRef::Aggressor => true,
                PhraseRef::Phrase(p) => selected_set.contains(p.as_str()) && !is_template.contains(e.audio_path.as_path()),
            })
            .collect();

        let templates: Vec<(String, Array2<f32>)> = template_entries
            .par_iter()
            .map(|e| {
                let label = e.phrase.phrase().expect("templates are phrases").to_string();
                match self.embedding(e, None, spec)? {
                    Some(z) => Ok((label, z.as_ref().clone())),
                    None => Err(EvalError::Utterance {
                        path: e.audio_path.clone(),
                        source: Box::new(EmbeddingError::NoSpeechDetected(0.0).into()),
                    }),
                }
            })
            .collect::<Result<_, EvalError>>()?;
        let (set, _) = enroll_frames(templates, spec.alpha, &spec.dtw, self.engine.backend_id())?;

        let snr = spec.effective_snr();
        let predictions = evaluated
            .par_iter()
            .map(|e| {
                let condition = match (&e.phrase, e.session_id == train, e.mic) {
                    (PhraseRef::Aggressor, _, _) => Condition::Aggressor,
                    (_, true, MicCondition::Far) => Condition::SameFar,
                    (_, true, _) => Condition::SameNear,
                    (_, false, _) => Condition::Other,
                };
                let (predicted, best_score) = match self.embedding(e, snr, spec)? {
                    Some(z) => {
                        let r = set.detect(&z, spec.rule)?;
                        (r.decision.label().map(str::to_string), Some(r.best_score))
                    }
                    None => (None, None),
                };
                Ok(Prediction {
                    audio_path: e.audio_path.clone(),
                    truth: e.phrase.clone(),
                    predicted,
                    condition,
                    best_score,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        memo.lock().unwrap().insert(memo_key, predictions.clone());

        Ok(TrialOutcome {
            speaker: speaker.to_string(),
            trial,
            enrolled: selected,
            predictions,
        })
    }
}

/// Convenience wrapper for a single trial without cache reuse.
pub fn run_trial(
    manifest: &[ManifestEntry],
    spec: &TrialSpec,
    trial: usize,
    engine: &Engine,
) -> Result<Vec<TrialOutcome>, EvalError> {
    Harness::new(engine).run_trial(manifest, spec, trial)
}
