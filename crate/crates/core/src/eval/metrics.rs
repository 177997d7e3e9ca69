use std::collections::BTreeMap;

use serde::Serialize;

use super::manifest::PhraseRef;
use super::trial::{Condition, TrialOutcome};
use super::EvalError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub correct: usize,
    pub wrong: usize,
    pub rejected: usize,
    pub in_domain: usize,
    pub aggressor_detected: usize,
    pub aggressor_total: usize,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.correct += o.correct;
        self.wrong += o.wrong;
        self.rejected += o.rejected;
        self.in_domain += o.in_domain;
        self.aggressor_detected += o.aggressor_detected;
        self.aggressor_total += o.aggressor_total;
    }

    /// Pooled accuracy, `correct / in_domain`.
    pub fn accuracy(&self) -> Option<f64> {
        (self.in_domain > 0).then(|| self.correct as f64 / self.in_domain as f64)
    }

    pub fn fdr(&self) -> Option<f64> {
        (self.aggressor_total > 0).then(|| self.aggressor_detected as f64 / self.aggressor_total as f64)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics of one speaker in one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialMetrics {
    pub speaker: String,
    pub trial: usize,
    pub counts: Counts,
    pub accuracy: Option<f64>,
    /// Per enrolled phrase; zero when nothing was predicted as that phrase.
    pub precision: BTreeMap<String, f64>,
    /// Per enrolled phrase; zero when the phrase had no evaluated utterances.
    pub recall: BTreeMap<String, f64>,
    pub fdr: Option<f64>,
    /// `(correct, total)` per in-domain condition.
    pub conditions: BTreeMap<Condition, (usize, usize)>,
}

impl TrialMetrics {
    pub fn macro_precision(&self) -> f64 {
        mean(self.precision.values().copied()).unwrap_or(0.0)
    }

    pub fn macro_recall(&self) -> f64 {
        mean(self.recall.values().copied()).unwrap_or(0.0)
    }
}

pub fn trial_metrics(outcome: &TrialOutcome) -> TrialMetrics {
    let mut counts = Counts::default();
    let mut true_pos: BTreeMap<&str, usize> = BTreeMap::new();
    let mut predicted: BTreeMap<&str, usize> = BTreeMap::new();
    let mut actual: BTreeMap<&str, usize> = BTreeMap::new();
    let mut conditions: BTreeMap<Condition, (usize, usize)> = BTreeMap::new();

    for p in &outcome.predictions {
        match &p.truth {
            PhraseRef::Aggressor => {
                counts.aggressor_total += 1;
                if p.predicted.is_some() {
                    counts.aggressor_detected += 1;
                }
            }
            PhraseRef::Phrase(truth) => {
                counts.in_domain += 1;
                *actual.entry(truth).or_default() += 1;
                let slot = conditions.entry(p.condition).or_default();
                slot.1 += 1;
                match &p.predicted {
                    None => counts.rejected += 1,
                    Some(label) => {
                        *predicted.entry(label).or_default() += 1;
                        if label == truth {
                            counts.correct += 1;
                            slot.0 += 1;
                            *true_pos.entry(truth).or_default() += 1;
                        } else {
                            counts.wrong += 1;
                        }
                    }
                }
            }
        }
    }

    let get = |m: &BTreeMap<&str, usize>, k: &str| m.get(k).copied().unwrap_or(0);
    let precision = outcome
        .enrolled
        .iter()
        .map(|p| (p.clone(), ratio(get(&true_pos, p), get(&predicted, p))))
        .collect();
    let recall = outcome
        .enrolled
        .iter()
        .map(|p| (p.clone(), ratio(get(&true_pos, p), get(&actual, p))))
        .collect();

    TrialMetrics {
        speaker: outcome.speaker.clone(),
        trial: outcome.trial,
        counts,
        accuracy: counts.accuracy(),
        precision,
        recall,
        fdr: counts.fdr(),
        conditions,
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean with the sample standard deviation (`n - 1`; zero for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        let m = mean(values.iter().copied())?;
        let std = if n > 1 {
            (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean: m, std, n })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeakerReport {
    pub speaker: String,
    pub trials: usize,
    pub accuracy: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub fdr: Option<f64>,
    pub condition_accuracy: BTreeMap<Condition, f64>,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub speakers: Vec<SpeakerReport>,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub fdr: Option<MeanStd>,
    pub condition_accuracy: BTreeMap<Condition, MeanStd>,
    pub counts: Counts,
}

/// Per-phrase values averaged over the trials that enrolled the phrase, then
/// over phrases.
fn phrase_average<'a>(per_trial: impl Iterator<Item = &'a BTreeMap<String, f64>>) -> f64 {
    let mut acc: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for m in per_trial {
        for (p, &v) in m {
            acc.entry(p).or_default().push(v);
        }
    }
    mean(acc.values().filter_map(|v| mean(v.iter().copied()))).unwrap_or(0.0)
}

fn speaker_report(speaker: &str, trials: &[TrialMetrics]) -> SpeakerReport {
    let mut counts = Counts::default();
    for t in trials {
        counts.add(&t.counts);
    }
    let mut condition_accuracy = BTreeMap::new();
    for c in Condition::IN_DOMAIN {
        let vals: Vec<f64> = trials
            .iter()
            .filter_map(|t| t.conditions.get(&c))
            .filter(|(_, total)| *total > 0)
            .map(|&(ok, total)| ok as f64 / total as f64)
            .collect();
        if let Some(m) = mean(vals) {
            condition_accuracy.insert(c, m);
        }
    }
    SpeakerReport {
        speaker: speaker.to_string(),
        trials: trials.len(),
        accuracy: mean(trials.iter().filter_map(|t| t.accuracy)),
        precision: phrase_average(trials.iter().map(|t| &t.precision)),
        recall: phrase_average(trials.iter().map(|t| &t.recall)),
        fdr: mean(trials.iter().filter_map(|t| t.fdr)),
        condition_accuracy,
        counts,
    }
}

/// Aggregates outcomes: trials, then phrases, then speakers.
pub fn compute_metrics(outcomes: &[TrialOutcome]) -> Result<EvalReport, EvalError> {
    let mut per_speaker: BTreeMap<&str, Vec<TrialMetrics>> = BTreeMap::new();
    for o in outcomes {
        per_speaker.entry(&o.speaker).or_default().push(trial_metrics(o));
    }
    let speakers: Vec<SpeakerReport> = per_speaker
        .iter_mut()
        .map(|(s, trials)| {
            trials.sort_by_key(|t| t.trial);
            speaker_report(s, trials)
        })
        .collect();

    let mut counts = Counts::default();
    for s in &speakers {
        counts.add(&s.counts);
    }
    if counts.in_domain == 0 {
        return Err(EvalError::NoInDomainPredictions);
    }
    let with_accuracy: Vec<&SpeakerReport> = speakers.iter().filter(|s| s.accuracy.is_some()).collect();
    let collect = |f: &dyn Fn(&SpeakerReport) -> f64| -> MeanStd {
        MeanStd::of(&with_accuracy.iter().map(|s| f(s)).collect::<Vec<_>>()).expect("at least one speaker")
    };
    let accuracy = collect(&|s| s.accuracy.unwrap());
    let precision = collect(&|s| s.precision);
    let recall = collect(&|s| s.recall);
    let fdr = MeanStd::of(&speakers.iter().filter_map(|s| s.fdr).collect::<Vec<_>>());
    let condition_accuracy = Condition::IN_DOMAIN
        .iter()
        .filter_map(|c| {
            let vals: Vec<f64> = speakers.iter().filter_map(|s| s.condition_accuracy.get(c).copied()).collect();
            MeanStd::of(&vals).map(|m| (*c, m))
        })
        .collect();

    Ok(EvalReport {
        speakers,
        accuracy,
        precision,
        recall,
        fdr,
        condition_accuracy,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::trial::Prediction;

    fn pred(truth: &str, predicted: Option<&str>) -> Prediction {
        Prediction {
            audio_path: "x.wav".into(),
            truth: if truth == "AGG" {
                PhraseRef::Aggressor
            } else {
                PhraseRef::Phrase(truth.into())
            },
            predicted: predicted.map(str::to_string),
            condition: if truth == "AGG" { Condition::Aggressor } else { Condition::SameNear },
            best_score: Some(0.1),
        }
    }

    fn outcome(speaker: &str, trial: usize, preds: Vec<Prediction>) -> TrialOutcome {
        TrialOutcome {
            speaker: speaker.into(),
            trial,
            enrolled: vec!["A".into(), "B".into()],
            predictions: preds,
        }
    }

    #[test]
    fn confusion_fixture() {
        let preds = vec![
            pred("A", Some("A")),
            pred("A", Some("A")),
            pred("A", Some("A")),
            pred("A", Some("B")),
            pred("B", Some("B")),
            pred("B", Some("B")),
            pred("B", None),
        ];
        let m = trial_metrics(&outcome("s", 0, preds));
        assert_eq!(m.accuracy, Some(5.0 / 7.0));
        assert_eq!(m.precision["A"], 1.0);
        assert_eq!(m.precision["B"], 2.0 / 3.0);
        assert_eq!(m.recall["A"], 0.75);
        assert_eq!(m.recall["B"], 2.0 / 3.0);
        assert!((m.macro_precision() - 5.0 / 6.0).abs() < 1e-15);
        assert!((m.macro_recall() - 17.0 / 24.0).abs() < 1e-15);
        assert_eq!(
            (m.counts.correct, m.counts.wrong, m.counts.rejected, m.counts.in_domain),
            (5, 1, 1, 7)
        );
        assert_eq!(m.fdr, None);
    }

    #[test]
    fn all_correct_and_all_rejected() {
        let good = outcome("s", 0, vec![pred("A", Some("A")), pred("B", Some("B")), pred("AGG", None)]);
        let r = compute_metrics(&[good]).unwrap();
        assert_eq!(r.accuracy.mean, 1.0);
        assert_eq!(r.precision.mean, 1.0);
        assert_eq!(r.recall.mean, 1.0);
        assert_eq!(r.fdr.unwrap().mean, 0.0);

        let bad = outcome("s", 0, vec![pred("A", None), pred("B", None)]);
        let r = compute_metrics(&[bad]).unwrap();
        assert_eq!(r.accuracy.mean, 0.0);
        assert_eq!(r.recall.mean, 0.0);
        assert_eq!(r.precision.mean, 0.0);
    }

    #[test]
    fn no_in_domain_is_an_error() {
        let o = outcome("s", 0, vec![pred("AGG", Some("A"))]);
        assert!(matches!(compute_metrics(&[o]), Err(EvalError::NoInDomainPredictions)));
        assert!(matches!(compute_metrics(&[]), Err(EvalError::NoInDomainPredictions)));
    }

    #[test]
    fn aggregation_is_trials_then_speakers() {
        // Speaker s1: trial accuracies 1.0 and 0.5; speaker s2: 0.0.
        let outcomes = vec![
            outcome("s1", 0, vec![pred("A", Some("A")), pred("B", Some("B"))]),
            outcome("s1", 1, vec![pred("A", Some("A")), pred("B", None)]),
            outcome("s2", 0, vec![pred("A", Some("B")), pred("AGG", Some("A"))]),
        ];
        let r = compute_metrics(&outcomes).unwrap();
        assert_eq!(r.speakers[0].accuracy, Some(0.75));
        assert_eq!(r.speakers[1].accuracy, Some(0.0));
        assert!((r.accuracy.mean - 0.375).abs() < 1e-15);
        assert!((r.accuracy.std - (2.0f64 * 0.375 * 0.375).sqrt()).abs() < 1e-15);
        assert_eq!(r.fdr.unwrap().mean, 1.0);
        assert_eq!(r.fdr.unwrap().n, 1);
        let c = r.counts;
        assert_eq!(c.correct + c.wrong + c.rejected, c.in_domain);
        assert_eq!((c.correct, c.in_domain), (3, 5));
    }

    #[test]
    fn mean_std_edge_cases() {
        assert_eq!(MeanStd::of(&[]), None);
        assert_eq!(MeanStd::of(&[0.4]).unwrap().std, 0.0);
        let m = MeanStd::of(&[1.0, 3.0]).unwrap();
        assert_eq!((m.mean, m.std), (2.0, 2f64.sqrt()));
    }
}
