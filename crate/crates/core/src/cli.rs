//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 internal
//! invariant violation.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cascade::{CascadeConfig, DecidedBy, PipelineConfig, PredictionRecord};
use crate::corpus::{self, Corpus, ModelSelection};
use crate::dataio;
use crate::error::Error;
use crate::exec::{self, Execution};
use crate::metrics::{self, ConfusionMatrix};
use crate::smoothing::{SmoothCache, SmoothingConfig};
use crate::synthgen::{self, SynthParams};
use crate::taxonomy::{self, LabelScheme};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fer-cascade", version, about = "Cascade + temporal smoothing post-processing for per-frame expression logits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a deterministic synthetic corpus (logits, annotations, config).
    GenSynth(GenSynthArgs),
    /// Predict one label per frame for every video in a logit directory.
    Predict(PredictArgs),
    /// Score prediction files against annotations.
    Eval(EvalArgs),
    /// Macro-F1 and flip rate for a list of smoothing windows.
    SweepWindow(SweepWindowArgs),
    /// Macro-F1 for combinations of coarse and negative model subsets.
    SweepEnsemble(SweepEnsembleArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// Output directory; receives logits/, annotations/ and pipeline.cfg.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    videos: usize,
    #[arg(long, default_value_t = 3000)]
    frames: usize,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    gain: Option<f64>,
    #[arg(long)]
    decorrelation: Option<f64>,
    /// Models emitting coarse-stage logits.
    #[arg(long, default_value = "m0,m1,m2")]
    coarse_models: String,
    /// Models emitting negative-stage logits.
    #[arg(long, default_value = "m0,m1,m2")]
    negative_models: String,
    /// Window written into the generated pipeline.cfg.
    #[arg(long, default_value_t = 0)]
    window: usize,
    /// Also write resample.csv with repeat-factor oversampled (video, frame) pairs.
    #[arg(long)]
    threshold_t: Option<f64>,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    logits: PathBuf,
    /// Overrides `coarse_models` from the config.
    #[arg(long)]
    coarse_models: Option<String>,
    /// Overrides `negative_models` from the config.
    #[arg(long)]
    negative_models: Option<String>,
    /// Worker threads across videos; 0 = all cores, 1 = sequential.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: PathBuf,
    /// Overrides both stage windows.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// Pipeline config, read only for its label scheme.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-class CSV report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepWindowArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,32,64,128,256,512")]
    windows: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Recompute every smoothed stream instead of reusing cached ones.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Debug, Args)]
struct SweepEnsembleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    logits: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// Subsets separated by `;`, models within a subset by `,` (e.g. `a,b,c;a;b`).
    #[arg(long)]
    coarse_models: Option<String>,
    #[arg(long)]
    negative_models: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    no_cache: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
    Internal(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = Result<T, CliError>;

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::GenSynth(a) => gen_synth(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Eval(a) => eval(a, out),
        Command::SweepWindow(a) => sweep_window(a, out, err),
        Command::SweepEnsemble(a) => sweep_ensemble(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
        Err(CliError::Internal(m)) => {
            let _ = writeln!(err, "internal error: {m}");
            EXIT_INTERNAL
        }
    }
}

fn split_models(list: &str) -> Vec<String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn split_subsets(list: &str) -> Vec<Vec<String>> {
    list.split(';').map(split_models).collect()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))
}

fn load_config(path: Option<&Path>) -> CliResult<(PipelineConfig, LabelScheme)> {
    let cfg = match path {
        Some(p) => dataio::read_pipeline_config(p)?,
        None => PipelineConfig::default(),
    };
    let scheme = dataio::read_scheme(cfg.scheme.as_deref())?;
    Ok((cfg, scheme))
}

/// Empty lists fall back to every model the corpus has for that stage.
fn resolve_selection(
    corpus: &Corpus,
    cfg: &PipelineConfig,
    coarse_override: Option<&str>,
    negative_override: Option<&str>,
) -> ModelSelection {
    let pick = |over: Option<&str>, configured: &[String], available: BTreeSet<String>| {
        let chosen = over.map(split_models).unwrap_or_else(|| configured.to_vec());
        if chosen.is_empty() {
            available.into_iter().collect()
        } else {
            chosen
        }
    };
    ModelSelection {
        coarse: pick(coarse_override, &cfg.coarse_models, corpus.coarse_models()),
        negative: pick(negative_override, &cfg.negative_models, corpus.negative_models()),
    }
}

fn gen_synth(a: GenSynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let defaults = SynthParams::default();
    let params = SynthParams {
        seed: a.seed,
        n_frames: a.frames,
        noise_sigma: a.noise_sigma.unwrap_or(defaults.noise_sigma),
        logit_gain: a.gain.unwrap_or(defaults.logit_gain),
        model_decorrelation: a.decorrelation.unwrap_or(defaults.model_decorrelation),
        ..defaults
    };
    params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let coarse_models = split_models(&a.coarse_models);
    let negative_models = split_models(&a.negative_models);
    if coarse_models.is_empty() {
        return Err(CliError::Usage("--coarse-models must name at least one model".into()));
    }
    let mut all_models: Vec<String> = coarse_models.clone();
    for m in &negative_models {
        if !all_models.contains(m) {
            all_models.push(m.clone());
        }
    }
    if let Some(t) = a.threshold_t {
        if !(t > 0.0 && t <= 1.0) {
            return Err(CliError::Usage(format!("--threshold-t {t} outside (0, 1]")));
        }
    }

    let ordinals: Vec<usize> = (0..a.videos).collect();
    let videos = exec::try_map(Execution::from_jobs(a.jobs), &ordinals, |&i| {
        synthgen::gen_video(&synthgen::video_params(&params, i), &all_models)
    })?;
    let mut corpus = Corpus::from_synth(videos);
    for v in &mut corpus.videos {
        v.coarse.retain(|m, _| coarse_models.contains(m));
        v.negative.retain(|m, _| negative_models.contains(m));
    }

    let scheme = LabelScheme::default();
    create_dir(&a.out)?;
    corpus.write(&a.out.join("logits"), &a.out.join("annotations"), &scheme)?;
    let cfg = PipelineConfig {
        coarse_models: coarse_models.clone(),
        negative_models: negative_models.iter().take(1).cloned().collect(),
        coarse_window: a.window,
        negative_window: a.window,
        ..PipelineConfig::default()
    };
    dataio::write_atomic(&a.out.join("pipeline.cfg"), dataio::format_pipeline_config(&cfg).as_bytes())?;

    if let Some(t) = a.threshold_t {
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for v in &corpus.videos {
            for (f, &l) in v.truth.as_deref().unwrap_or(&[]).iter().enumerate() {
                if l >= 0 {
                    pairs.push((v.video_id.as_str(), f));
                    labels.push(l as usize);
                }
            }
        }
        let picks = synthgen::resample_indices(&labels, t, a.seed)?;
        let mut csv = String::from("video_id,frame_index\n");
        for i in picks {
            let _ = writeln!(csv, "{},{}", pairs[i].0, pairs[i].1);
        }
        dataio::write_atomic(&a.out.join("resample.csv"), csv.as_bytes())?;
    }

    let _ = writeln!(
        out,
        "videos={} frames={} coarse_models={} negative_models={}",
        corpus.videos.len(),
        corpus.frames(),
        coarse_models.join("+"),
        negative_models.join("+")
    );
    Ok(())
}

fn check_records(video_id: &str, n: usize, records: &[PredictionRecord], scheme: &LabelScheme) -> CliResult<()> {
    if records.len() != n {
        return Err(CliError::Internal(format!(
            "video {video_id}: {} records for {n} frames",
            records.len()
        )));
    }
    for r in records {
        let negative_decision = metrics_argmax(&r.coarse_scores) == scheme.negative_coarse().index();
        let consistent = match r.decided_by {
            DecidedBy::NegativeNet => negative_decision && r.negative_scores.is_some(),
            DecidedBy::CoarseDirect => !negative_decision && r.negative_scores.is_none() && !scheme.is_negative(r.label),
        };
        if !consistent {
            return Err(CliError::Internal(format!(
                "video {video_id} frame {}: routing provenance inconsistent",
                r.frame_index
            )));
        }
    }
    Ok(())
}

fn metrics_argmax(scores: &[f64]) -> usize {
    crate::fusion::argmax(scores)
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> CliResult<()> {
    let (mut cfg, scheme) = load_config(a.corpus.config.as_deref())?;
    if let Some(w) = a.window {
        cfg.coarse_window = w;
        cfg.negative_window = w;
    }
    let corpus = Corpus::load(&a.corpus.logits, None, &scheme)?;
    let sel = resolve_selection(
        &corpus,
        &cfg,
        a.corpus.coarse_models.as_deref(),
        a.corpus.negative_models.as_deref(),
    );
    if sel.coarse.is_empty() {
        return Err(CliError::Data(Error::NoModels(format!(
            "coarse (no coarse logits under {})",
            a.corpus.logits.display()
        ))));
    }
    let exec = Execution::from_jobs(a.corpus.jobs);
    let predictions = corpus::predict_corpus(&corpus, &sel, &cfg.cascade(), &scheme, exec, None)?;

    create_dir(&a.out)?;
    let mut frames = 0usize;
    let mut negative = 0usize;
    for (video, pred) in corpus.videos.iter().zip(&predictions) {
        let n = video.coarse.values().next().map_or(0, |s| s.len());
        check_records(&pred.video_id, n, &pred.records, &scheme)?;
        frames += n;
        negative += pred
            .records
            .iter()
            .filter(|r| r.decided_by == DecidedBy::NegativeNet)
            .count();
    }
    let written = exec::try_map(exec, &predictions, |p| {
        dataio::write_predictions(a.out.join(format!("{}.txt", p.video_id)), &p.records, &scheme)
    })?;
    let frac = |x: usize| if frames == 0 { 0.0 } else { x as f64 / frames as f64 };
    let _ = writeln!(
        out,
        "videos={} frames={} coarse_direct={:.4} negative_net={:.4}",
        written.len(),
        frames,
        frac(frames - negative),
        frac(negative)
    );
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let (_, scheme) = load_config(a.config.as_deref())?;
    let mut cm = ConfusionMatrix::new(taxonomy::FINE_COUNT);
    let mut flips = 0usize;
    let mut transitions = 0usize;
    let mut frames = 0usize;
    let annotation_files = corpus::sorted_files(&a.annotations, "txt")?;
    for ann in &annotation_files {
        let name = ann.file_name().expect("listed files have names");
        let truth = dataio::read_annotations(ann, &scheme)?;
        let pred_path = a.predictions.join(name);
        if !pred_path.exists() {
            return Err(CliError::Data(Error::Io {
                path: pred_path,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "prediction file missing"),
            }));
        }
        let preds = dataio::read_predictions(&pred_path, &scheme)?;
        if preds.len() != truth.len() {
            return Err(CliError::Data(Error::Alignment {
                expected: truth.len(),
                offenders: vec![(pred_path.display().to_string(), preds.len())],
            }));
        }
        cm.merge(&metrics::confusion(&preds, &truth, taxonomy::FINE_COUNT)?)?;
        flips += metrics::count_flips(&preds);
        transitions += preds.len().saturating_sub(1);
        frames += preds.len();
    }
    let report = metrics::f1_report(&cm);
    if let Some(path) = &a.out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        dataio::write_atomic(path, report.to_csv(scheme.fine_names()).as_bytes())?;
    }
    let flip_rate = if transitions == 0 { 0.0 } else { flips as f64 / transitions as f64 };
    let _ = writeln!(
        out,
        "videos={} frames={} evaluated={} macro_f1={:.4} flip_rate={:.4}",
        annotation_files.len(),
        frames,
        cm.total(),
        report.macro_f1,
        flip_rate
    );
    Ok(())
}

fn write_csv(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    dataio::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn check_known(stage: &str, requested: &[String], known: &BTreeSet<String>) -> CliResult<()> {
    for m in requested {
        if !known.contains(m) {
            return Err(CliError::Usage(format!(
                "unknown {stage} model `{m}`; known models: {}",
                known.iter().cloned().collect::<Vec<_>>().join(", ")
            )));
        }
    }
    Ok(())
}

fn sweep_window(a: SweepWindowArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let (cfg, scheme) = load_config(a.corpus.config.as_deref())?;
    let (windows, dups) = corpus::dedup_windows(&a.windows);
    if !dups.is_empty() {
        let _ = writeln!(err, "warning: duplicate windows ignored: {dups:?}");
    }
    let corpus = Corpus::load(&a.corpus.logits, Some(&a.annotations), &scheme)?;
    let sel = resolve_selection(
        &corpus,
        &cfg,
        a.corpus.coarse_models.as_deref(),
        a.corpus.negative_models.as_deref(),
    );
    if sel.coarse.is_empty() {
        return Err(CliError::Usage("no coarse models selected".into()));
    }
    check_known("coarse", &sel.coarse, &corpus.coarse_models())?;
    check_known("negative", &sel.negative, &corpus.negative_models())?;
    let cache = SmoothCache::new();
    let rows = corpus::sweep_windows(
        &corpus,
        &sel,
        &windows,
        cfg.smoothing_stage,
        &scheme,
        Execution::from_jobs(a.corpus.jobs),
        (!a.no_cache).then_some(&cache),
    )?;
    write_csv(&a.out, &corpus::windows_csv(&rows))?;
    let best = rows
        .iter()
        .fold(&rows[0], |b, r| if r.macro_f1 > b.macro_f1 { r } else { b });
    let _ = writeln!(out, "rows={} best_w={} best_macro_f1={:.4}", rows.len(), best.window, best.macro_f1);
    Ok(())
}

fn sweep_ensemble(a: SweepEnsembleArgs, out: &mut dyn Write) -> CliResult<()> {
    let (cfg, scheme) = load_config(a.config.as_deref())?;
    let corpus = Corpus::load(&a.logits, Some(&a.annotations), &scheme)?;
    let known_coarse = corpus.coarse_models();
    let known_negative = corpus.negative_models();
    let base = resolve_selection(&corpus, &cfg, None, None);

    let coarse_sets = match &a.coarse_models {
        Some(list) => split_subsets(list),
        None => {
            let mut sets: Vec<Vec<String>> = base.coarse.iter().map(|m| vec![m.clone()]).collect();
            if base.coarse.len() > 1 {
                sets.push(base.coarse.clone());
            }
            sets
        }
    };
    let negative_sets = match &a.negative_models {
        Some(list) => split_subsets(list),
        None => vec![base.negative.clone()],
    };
    if coarse_sets.is_empty() || coarse_sets.iter().any(Vec::is_empty) {
        return Err(CliError::Usage("every coarse subset must name at least one model".into()));
    }
    for set in &coarse_sets {
        check_known("coarse", set, &known_coarse)?;
    }
    for set in &negative_sets {
        check_known("negative", set, &known_negative)?;
    }

    let mut cascade = cfg.cascade();
    if let Some(w) = a.window {
        cascade = CascadeConfig {
            coarse: SmoothingConfig::new(w),
            negative: SmoothingConfig::new(w),
            ..cascade
        };
    }
    let cache = SmoothCache::new();
    let rows = corpus::sweep_ensembles(
        &corpus,
        &coarse_sets,
        &negative_sets,
        &cascade,
        &scheme,
        Execution::from_jobs(a.jobs),
        (!a.no_cache).then_some(&cache),
    )?;
    write_csv(&a.out, &corpus::ensembles_csv(&rows))?;
    let _ = writeln!(out, "rows={}", rows.len());
    Ok(())
}
