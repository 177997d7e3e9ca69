use std::io::Write;

use serde::Serialize;

use super::manifest::ManifestEntry;
use super::metrics::{compute_metrics, EvalReport, MeanStd};
use super::trial::{Condition, Harness, TrialSpec};
use super::EvalError;
use crate::matcher::Alpha;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NPhrases,
    SnrDb,
    Alpha,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NPhrases => "n_phrases",
            Self::SnrDb => "snr_db",
            Self::Alpha => "alpha",
        }
    }

    /// Applies one axis value to a copy of `base`.
    pub fn apply(self, base: &TrialSpec, value: f64) -> Result<TrialSpec, EvalError> {
        let mut spec = base.clone();
        let bad = || EvalError::InvalidSpec(format!("invalid {} value {value}", self.as_str()));
        match self {
            Self::NPhrases => {
                if !(value >= 1.0 && value.fract() == 0.0 && value.is_finite()) {
                    return Err(bad());
                }
                spec.n_phrases = Some(value as usize);
            }
            Self::SnrDb => {
                if value.is_nan() || value == f64::NEG_INFINITY {
                    return Err(bad());
                }
                spec.snr_db = Some(value);
            }
            Self::Alpha => spec.alpha = Alpha::new(value).map_err(|_| bad())?,
        }
        Ok(spec)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n" | "n_phrases" => Ok(Self::NPhrases),
            "snr" | "snr_db" => Ok(Self::SnrDb),
            "alpha" => Ok(Self::Alpha),
            other => Err(format!("unknown sweep axis `{other}` (expected n|snr|alpha)")),
        }
    }
}

/// Parses `axis=v1,v2,...`; `inf` is accepted for any value.
pub fn parse_sweep(arg: &str) -> Result<(SweepAxis, Vec<f64>), String> {
    let (axis, values) = arg
        .split_once('=')
        .ok_or_else(|| format!("expected axis=values, got `{arg}`"))?;
    let axis: SweepAxis = axis.trim().parse()?;
    let values = values
        .split(',')
        .map(|v| match v.trim() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            t => t.parse::<f64>().map_err(|e| format!("bad sweep value `{t}`: {e}")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("sweep needs at least one value".into());
    }
    Ok((axis, values))
}

pub fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub report: EvalReport,
}

/// Multi-trial evaluation of one spec.
pub fn evaluate(
    harness: &Harness<'_>,
    manifest: &[ManifestEntry],
    spec: &TrialSpec,
    n_trials: usize,
) -> Result<EvalReport, EvalError> {
    if n_trials == 0 {
        return Err(EvalError::InvalidSpec("at least one trial is required".into()));
    }
    compute_metrics(&harness.run_trials(manifest, spec, n_trials)?)
}

/// One report per axis value. Trial `t` uses the same seed at every value, so
/// axis values are compared on paired phrase subsets.
pub fn sweep(
    harness: &Harness<'_>,
    manifest: &[ManifestEntry],
    base: &TrialSpec,
    n_trials: usize,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepPoint>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptySweep);
    }
    values
        .iter()
        .map(|&value| {
            let tag = |source: EvalError| EvalError::AtSweepValue {
                axis: axis.as_str(),
                value: format_value(value),
                source: Box::new(source),
            };
            let spec = axis.apply(base, value).map_err(tag)?;
            log::info!("sweep {}={}", axis.as_str(), format_value(value));
            let report = evaluate(harness, manifest, &spec, n_trials).map_err(tag)?;
            Ok(SweepPoint { axis, value, report })
        })
        .collect()
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn mean_std(m: Option<&MeanStd>) -> [String; 2] {
    [fmt(m.map(|m| m.mean)), fmt(m.map(|m| m.std))]
}

const SUMMARY_COLUMNS: [&str; 21] = [
    "speakers",
    "accuracy_mean",
    "accuracy_std",
    "precision_mean",
    "precision_std",
    "recall_mean",
    "recall_std",
    "fdr_mean",
    "fdr_std",
    "same_near_accuracy_mean",
    "same_near_accuracy_std",
    "same_far_accuracy_mean",
    "same_far_accuracy_std",
    "other_accuracy_mean",
    "other_accuracy_std",
    "correct",
    "wrong",
    "rejected",
    "in_domain",
    "aggressor_detected",
    "aggressor_total",
];

fn summary_fields(r: &EvalReport) -> Vec<String> {
    let mut row = vec![r.speakers.len().to_string()];
    row.extend(mean_std(Some(&r.accuracy)));
    row.extend(mean_std(Some(&r.precision)));
    row.extend(mean_std(Some(&r.recall)));
    row.extend(mean_std(r.fdr.as_ref()));
    for c in Condition::IN_DOMAIN {
        row.extend(mean_std(r.condition_accuracy.get(&c)));
    }
    let c = &r.counts;
    row.extend(
        [c.correct, c.wrong, c.rejected, c.in_domain, c.aggressor_detected, c.aggressor_total]
            .map(|v| v.to_string()),
    );
    row
}

/// One summary row per axis value.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["axis", "value"];
    header.extend(SUMMARY_COLUMNS);
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![p.axis.as_str().to_string(), format_value(p.value)];
        row.extend(summary_fields(&p.report));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per speaker followed by an `ALL` row of across-speaker statistics.
pub fn write_report_csv<W: Write>(report: &EvalReport, out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "speaker",
        "trials",
        "accuracy",
        "precision",
        "recall",
        "fdr",
        "same_near_accuracy",
        "same_far_accuracy",
        "other_accuracy",
        "correct",
        "wrong",
        "rejected",
        "in_domain",
        "aggressor_detected",
        "aggressor_total",
    ])?;
    for s in &report.speakers {
        let mut row = vec![
            s.speaker.clone(),
            s.trials.to_string(),
            fmt(s.accuracy),
            fmt(Some(s.precision)),
            fmt(Some(s.recall)),
            fmt(s.fdr),
        ];
        for c in Condition::IN_DOMAIN {
            row.push(fmt(s.condition_accuracy.get(&c).copied()));
        }
        let c = &s.counts;
        row.extend(
            [c.correct, c.wrong, c.rejected, c.in_domain, c.aggressor_detected, c.aggressor_total]
                .map(|v| v.to_string()),
        );
        w.write_record(&row)?;
    }
    let ms = |m: Option<&MeanStd>| m.map(|m| format!("{:.6}±{:.6}", m.mean, m.std)).unwrap_or_default();
    let mut all = vec![
        "ALL".to_string(),
        String::new(),
        ms(Some(&report.accuracy)),
        ms(Some(&report.precision)),
        ms(Some(&report.recall)),
        ms(report.fdr.as_ref()),
    ];
    for c in Condition::IN_DOMAIN {
        all.push(ms(report.condition_accuracy.get(&c)));
    }
    let c = &report.counts;
    all.extend(
        [c.correct, c.wrong, c.rejected, c.in_domain, c.aggressor_detected, c.aggressor_total]
            .map(|v| v.to_string()),
    );
    w.write_record(&all)?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
