//! `lpm`: enroll phrases, detect them in recordings, and run benchmarks.
//!
//! Results go to stdout as JSON lines tagged `"format": "lpm/1"`; logs go to
//! stderr.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lpm_core::embedding::{encode_lpmw, random_tensors, EmbeddingTap, ModelMetadata, DEFAULT_SAD_THRESHOLD};
use lpm_core::eval::{
    evaluate, format_value, load_manifest, parse_sweep, render_sweep_chart, sweep, write_report_csv,
    write_sweep_csv, EvalReport, Harness, MeanStd, NoiseSource, ReportHeader, TrainSession, TrialSpec,
};
use lpm_core::matcher::{enroll, load_phrase_set, save_phrase_set, Alpha, DecisionRule};
use lpm_core::synthetic::{generate_corpus, SyntheticConfig};
use lpm_core::{load_weights, Backend, DtwConfig, Engine, LocalMetric};
use serde_json::{json, Value};

const FORMAT: &str = "lpm/1";

#[derive(Parser)]
#[command(name = "lpm", version, about = "Personalized spoken-phrase detection")]
struct Cli {
    #[command(flatten)]
    config: Config,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Spectral,
    Kws,
}

#[derive(Args)]
struct Config {
    /// Embedding backend.
    #[arg(long, global = true, value_enum, default_value = "spectral")]
    backend: BackendKind,
    /// LPMW weights file; required with `--backend kws`.
    #[arg(long, global = true, env = "LPM_WEIGHTS")]
    weights: Option<PathBuf>,
    /// Threshold multiplier (`inf` for classification mode).
    #[arg(long, global = true, default_value = "1.25")]
    alpha: Alpha,
    #[arg(long, global = true, default_value = "literal")]
    rule: DecisionRule,
    #[arg(long, global = true, default_value = "cosine")]
    metric: LocalMetric,
    /// Sakoe-Chiba band radius in frames.
    #[arg(long, global = true)]
    band: Option<usize>,
    /// Speech-activity threshold used for trimming.
    #[arg(long, global = true, default_value_t = DEFAULT_SAD_THRESHOLD)]
    sad_threshold: f32,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

impl Config {
    fn engine(&self) -> Result<Engine> {
        let backend = match (self.backend, &self.weights) {
            (BackendKind::Spectral, _) => Backend::spectral(),
            (BackendKind::Kws, Some(path)) => Backend::kws(
                load_weights(path).with_context(|| format!("loading weights {}", path.display()))?,
            ),
            (BackendKind::Kws, None) => bail!("--backend kws requires --weights or LPM_WEIGHTS"),
        };
        Ok(Engine::new(backend).with_sad_threshold(self.sad_threshold))
    }

    fn dtw(&self) -> DtwConfig {
        DtwConfig {
            metric: self.metric,
            band_radius: self.band,
            ..DtwConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Enroll phrases from labelled recordings (at least two per label).
    Enroll {
        /// Recordings as LABEL=PATH.
        #[arg(required = true, value_parser = parse_labelled)]
        recordings: Vec<(String, PathBuf)>,
        /// Phrase-set file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect enrolled phrases in recordings.
    Detect {
        /// Phrase-set file written by `enroll`.
        #[arg(long)]
        set: PathBuf,
        #[arg(required = true)]
        queries: Vec<PathBuf>,
    },
    /// Run the benchmark protocol over a manifest.
    Eval(EvalArgs),
    /// Write randomly initialised LPMW weights.
    RandomWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        vocab: usize,
        #[arg(long, default_value_t = 128)]
        embed_dim: usize,
        /// Export the activated projection instead of the raw one.
        #[arg(long)]
        activated: bool,
    },
    /// Generate a synthetic phrase corpus with a manifest.
    Synth(SynthArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Phrases enrolled per trial; all eligible phrases when omitted.
    #[arg(long)]
    n_phrases: Option<usize>,
    #[arg(long, default_value_t = 2)]
    templates: usize,
    /// Enrollment session; each speaker's earliest session when omitted.
    #[arg(long)]
    train_session: Option<String>,
    /// Add noise to evaluated utterances at this SNR (dB).
    #[arg(long)]
    snr: Option<f64>,
    /// Noise recordings for `--snr`; white noise when omitted.
    #[arg(long)]
    noise: Vec<PathBuf>,
    /// Sweep one axis, e.g. `n=5,10`, `snr=20,10,5`, `alpha=1,1.25,inf`.
    #[arg(long)]
    sweep: Option<String>,
    /// CSV report path.
    #[arg(long)]
    out: PathBuf,
    /// SVG chart of a sweep.
    #[arg(long, requires = "sweep")]
    chart: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    speakers: usize,
    #[arg(long, default_value_t = 10)]
    phrases: usize,
    #[arg(long, default_value_t = 5)]
    renditions: usize,
    #[arg(long, default_value_t = 0)]
    far_renditions: usize,
    #[arg(long, default_value_t = 0)]
    other_sessions: usize,
    #[arg(long, default_value_t = 10)]
    aggressors: usize,
    #[arg(long, default_value_t = 20.0)]
    snr: f64,
}

fn parse_labelled(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => Ok((label.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected LABEL=PATH, got `{s}`")),
    }
}

/// JSON number, or a string for non-finite values.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(format_value(v))
    }
}

fn emit(mut v: Value) {
    v.as_object_mut()
        .expect("records are objects")
        .insert("format".into(), json!(FORMAT));
    println!("{v}");
}

fn cmd_enroll(config: &Config, recordings: &[(String, PathBuf)], out: &Path) -> Result<()> {
    let engine = config.engine()?;
    let utterances = recordings
        .iter()
        .map(|(label, path)| {
            let seq = engine.embed_file(path).with_context(|| format!("embedding {}", path.display()))?;
            log::info!("{}: {} frames", path.display(), seq.len());
            Ok((label.clone(), seq))
        })
        .collect::<Result<Vec<_>>>()?;
    let set = enroll(&utterances, config.alpha, &config.dtw(), engine.backend_id())?;
    save_phrase_set(&set, out)?;
    for (i, (t, (_, path))) in set.templates().iter().zip(recordings).enumerate() {
        emit(json!({
            "command": "enroll",
            "template": i,
            "label": t.label,
            "path": path,
            "frames": t.embedding.nrows(),
            "tau": num(t.threshold),
        }));
    }
    emit(json!({
        "command": "enroll",
        "out": out,
        "templates": set.len(),
        "labels": set.labels(),
        "alpha": config.alpha.to_string(),
        "metric": set.dtw_config().metric.to_string(),
        "backend": set.backend().to_string(),
    }));
    Ok(())
}

fn cmd_detect(config: &Config, set_path: &Path, queries: &[PathBuf]) -> Result<()> {
    let engine = config.engine()?;
    let set = load_phrase_set(set_path, Some(engine.backend_id()))
        .with_context(|| format!("loading phrase set {}", set_path.display()))?;
    log::debug!("detect uses the thresholds and metric stored in {}", set_path.display());
    for q in queries {
        let seq = engine.embed_file(q).with_context(|| format!("embedding {}", q.display()))?;
        let r = set.detect(seq.frames(), config.rule)?;
        emit(json!({
            "command": "detect",
            "query": q,
            "decision": if r.decision.label().is_some() { "detected" } else { "rejected" },
            "label": r.decision.label(),
            "best_score": r.best_score,
            "best_template": r.best_template_index,
            "best_label": set.templates()[r.best_template_index].label,
            "scores": r.per_template_scores,
        }));
    }
    Ok(())
}

fn mean_std(m: &MeanStd) -> Value {
    json!({"mean": m.mean, "std": m.std, "n": m.n})
}

fn headline(report: &EvalReport, extra: &Value) {
    let mut metrics: Vec<(&str, Option<&MeanStd>)> = vec![
        ("accuracy", Some(&report.accuracy)),
        ("precision", Some(&report.precision)),
        ("recall", Some(&report.recall)),
        ("fdr", report.fdr.as_ref()),
    ];
    let conditions: BTreeMap<String, &MeanStd> = report
        .condition_accuracy
        .iter()
        .map(|(c, m)| (format!("accuracy_{}", c.as_str()), m))
        .collect();
    metrics.extend(conditions.iter().map(|(k, m)| (k.as_str(), Some(*m))));
    for (name, m) in metrics {
        let mut v = json!({"command": "eval", "metric": name});
        let obj = v.as_object_mut().unwrap();
        if let Some(extra) = extra.as_object() {
            obj.extend(extra.clone());
        }
        match m {
            Some(m) => obj.extend(mean_std(m).as_object().unwrap().clone()),
            None => {
                obj.insert("mean".into(), Value::Null);
            }
        }
        emit(v);
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn cmd_eval(config: &Config, args: &EvalArgs) -> Result<()> {
    let engine = config.engine()?;
    let manifest = load_manifest(&args.manifest)?;
    let spec = TrialSpec {
        train_session: args
            .train_session
            .clone()
            .map_or(TrainSession::Earliest, TrainSession::Named),
        n_phrases: args.n_phrases,
        n_templates_per_phrase: args.templates,
        alpha: config.alpha,
        rule: config.rule,
        dtw: config.dtw(),
        snr_db: args.snr,
        noise: NoiseSource::load(&args.noise)?,
        seed: config.seed,
    };
    spec.validate()?;
    let harness = Harness::new(&engine);
    let mut header = serde_json::to_value(ReportHeader::new(&spec, &engine.backend_id(), args.trials))?;
    header["command"] = json!("eval");
    header["manifest"] = json!(args.manifest);
    header["out"] = json!(args.out);

    match &args.sweep {
        None => {
            let report = evaluate(&harness, &manifest, &spec, args.trials)?;
            write_report_csv(&report, create(&args.out)?)?;
            emit(header);
            headline(&report, &json!({}));
        }
        Some(arg) => {
            let (axis, values) = parse_sweep(arg).map_err(anyhow::Error::msg)?;
            let points = sweep(&harness, &manifest, &spec, args.trials, axis, &values)?;
            write_sweep_csv(&points, create(&args.out)?)?;
            if let Some(chart) = &args.chart {
                render_sweep_chart(&points, chart)?;
            }
            header["sweep"] = json!(axis.as_str());
            emit(header);
            for p in &points {
                headline(&p.report, &json!({"axis": axis.as_str(), "value": format_value(p.value)}));
            }
        }
    }
    Ok(())
}

fn cmd_random_weights(config: &Config, out: &Path, vocab: usize, embed_dim: usize, activated: bool) -> Result<()> {
    let meta = ModelMetadata {
        vocab_size: vocab,
        embed_dim,
        tap: if activated {
            EmbeddingTap::ProjectionActivated
        } else {
            EmbeddingTap::Projection
        },
        ..ModelMetadata::default()
    };
    let bytes = encode_lpmw(&meta, &random_tensors(&meta, config.seed));
    std::fs::write(out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    let weights = load_weights(out)?;
    emit(json!({
        "command": "random-weights",
        "out": out,
        "backend": Backend::kws(weights).id().to_string(),
        "bytes": bytes.len(),
    }));
    Ok(())
}

fn cmd_synth(config: &Config, args: &SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        speakers: args.speakers,
        phrases: args.phrases,
        renditions: args.renditions,
        far_renditions: args.far_renditions,
        other_sessions: args.other_sessions,
        aggressors: args.aggressors,
        snr_db: args.snr,
        seed: config.seed,
        ..SyntheticConfig::default()
    };
    let manifest = generate_corpus(&cfg, &args.out)?;
    emit(json!({"command": "synth", "manifest": manifest}));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = &cli.config;
    if config.backend == BackendKind::Spectral && config.weights.is_some() {
        log::debug!("--weights is ignored by the spectral backend");
    }
    match &cli.command {
        Command::Enroll { recordings, out } => cmd_enroll(config, recordings, out),
        Command::Detect { set, queries } => cmd_detect(config, set, queries),
        Command::Eval(args) => cmd_eval(config, args),
        Command::RandomWeights {
            out,
            vocab,
            embed_dim,
            activated,
        } => cmd_random_weights(config, out, *vocab, *embed_dim, *activated),
        Command::Synth(args) => cmd_synth(config, args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
