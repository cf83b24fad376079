//! Whole-corpus prediction, evaluation and sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::cascade::{predict_video_traced, CascadeConfig, DecidedBy, PredictionRecord, SmoothingStage};
use crate::dataio::{self, Stage};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::metrics::{self, ConfusionMatrix};
use crate::smoothing::{SmoothCache, SmoothingConfig, VideoLogitStream};
use crate::synthgen::SynthVideo;
use crate::taxonomy::{self, LabelScheme};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VideoData {
    pub video_id: String,
    pub coarse: BTreeMap<String, VideoLogitStream>,
    pub negative: BTreeMap<String, VideoLogitStream>,
    /// Ground truth with `-1` for unannotated frames, when known.
    pub truth: Option<Vec<i32>>,
}

/// Videos sorted by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub videos: Vec<VideoData>,
}

/// Which models each stage ensembles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSelection {
    pub coarse: Vec<String>,
    pub negative: Vec<String>,
}

impl Corpus {
    pub fn from_synth(videos: Vec<SynthVideo>) -> Self {
        let mut out: Vec<VideoData> = videos
            .into_iter()
            .map(|v| VideoData {
                truth: Some(v.truth_indices()),
                coarse: v
                    .coarse_streams
                    .into_iter()
                    .map(|s| (s.model_id.clone(), s))
                    .collect(),
                negative: v
                    .negative_streams
                    .into_iter()
                    .map(|s| (s.model_id.clone(), s))
                    .collect(),
                video_id: v.video_id,
            })
            .collect();
        out.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        Self { videos: out }
    }

    /// Loads every `*.cspl` file under `logit_dir`, grouped by header, and
    /// when given, `<video>.txt` annotations from `annotation_dir`.
    pub fn load(logit_dir: &Path, annotation_dir: Option<&Path>, scheme: &LabelScheme) -> Result<Self> {
        let mut videos: BTreeMap<String, VideoData> = BTreeMap::new();
        for path in sorted_files(logit_dir, dataio::LOGIT_EXTENSION)? {
            let (header, stream) = dataio::read_logit_file(&path)?;
            let video = videos.entry(header.video_id.clone()).or_insert_with(|| VideoData {
                video_id: header.video_id.clone(),
                ..VideoData::default()
            });
            let slot = match header.stage {
                Stage::Coarse => &mut video.coarse,
                Stage::Negative => &mut video.negative,
                Stage::Fine => continue,
            };
            if slot.insert(header.model_id.clone(), stream).is_some() {
                return Err(Error::parse(
                    &path,
                    1,
                    format!(
                        "duplicate {} logits for video {} model {}",
                        header.stage, header.video_id, header.model_id
                    ),
                ));
            }
        }
        if let Some(dir) = annotation_dir {
            for video in videos.values_mut() {
                let path = dir.join(format!("{}.txt", video.video_id));
                if !path.exists() {
                    return Err(Error::io(
                        &path,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "annotation file missing"),
                    ));
                }
                video.truth = Some(dataio::read_annotations(&path, scheme)?);
            }
        }
        Ok(Self {
            videos: videos.into_values().collect(),
        })
    }

    /// Writes logits as `<logit_dir>/<video>__<model>__<stage>.cspl` and
    /// annotations as `<annotation_dir>/<video>.txt`.
    pub fn write(&self, logit_dir: &Path, annotation_dir: &Path, scheme: &LabelScheme) -> Result<()> {
        for dir in [logit_dir, annotation_dir] {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        for v in &self.videos {
            for (stage, streams) in [(Stage::Coarse, &v.coarse), (Stage::Negative, &v.negative)] {
                for (model, s) in streams {
                    let path = logit_dir.join(dataio::logit_file_name(&v.video_id, model, stage));
                    dataio::write_logits(&path, s, stage)?;
                }
            }
            if let Some(truth) = &v.truth {
                dataio::write_annotations(annotation_dir.join(format!("{}.txt", v.video_id)), truth, scheme)?;
            }
        }
        Ok(())
    }

    pub fn coarse_models(&self) -> BTreeSet<String> {
        self.videos.iter().flat_map(|v| v.coarse.keys().cloned()).collect()
    }

    pub fn negative_models(&self) -> BTreeSet<String> {
        self.videos.iter().flat_map(|v| v.negative.keys().cloned()).collect()
    }

    pub fn frames(&self) -> usize {
        self.videos
            .iter()
            .map(|v| v.coarse.values().next().map_or(0, VideoLogitStream::len))
            .sum()
    }
}

pub(crate) fn sorted_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == extension) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoPrediction {
    pub video_id: String,
    pub records: Vec<PredictionRecord>,
}

/// Runs the cascade on one video with the selected models.
///
/// Every selected coarse model must be present. If any selected negative
/// model is missing the negative stage is left empty, which is only an
/// error when some frame routes to `Negative`.
pub fn predict_one(
    video: &VideoData,
    sel: &ModelSelection,
    cfg: &CascadeConfig,
    scheme: &LabelScheme,
    cache: Option<&SmoothCache>,
) -> Result<Vec<PredictionRecord>> {
    let mut coarse = Vec::with_capacity(sel.coarse.len());
    for m in &sel.coarse {
        coarse.push(video.coarse.get(m).ok_or_else(|| {
            Error::InvalidInput(format!("video {}: missing coarse logits for model {m}", video.video_id))
        })?);
    }
    let missing: Vec<&str> = sel
        .negative
        .iter()
        .filter(|m| !video.negative.contains_key(*m))
        .map(String::as_str)
        .collect();
    let negative: Vec<&VideoLogitStream> = if missing.is_empty() {
        sel.negative.iter().map(|m| &video.negative[m]).collect()
    } else {
        Vec::new()
    };
    match predict_video_traced(&coarse, &negative, cfg, scheme, cache) {
        Ok((records, _)) => Ok(records),
        Err(Error::MissingNegativeScores(reason)) => Err(Error::MissingNegativeScores(if missing.is_empty() {
            format!("video {}: {reason}", video.video_id)
        } else {
            format!(
                "video {}: a frame routed to Negative but negative logits are missing for model(s) {}",
                video.video_id,
                missing.join(", ")
            )
        })),
        Err(e) => Err(e),
    }
}

pub fn predict_corpus(
    corpus: &Corpus,
    sel: &ModelSelection,
    cfg: &CascadeConfig,
    scheme: &LabelScheme,
    exec: Execution,
    cache: Option<&SmoothCache>,
) -> Result<Vec<VideoPrediction>> {
    if sel.coarse.is_empty() {
        return Err(Error::NoModels("coarse".to_string()));
    }
    exec::try_map(exec, &corpus.videos, |v| {
        Ok(VideoPrediction {
            video_id: v.video_id.clone(),
            records: predict_one(v, sel, cfg, scheme, cache)?,
        })
    })
}

/// Aggregated evaluation over a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub confusion: ConfusionMatrix,
    pub flips: usize,
    pub transitions: usize,
    pub frames: usize,
    pub negative_routed: usize,
}

impl EvalSummary {
    pub fn new() -> Self {
        Self {
            confusion: ConfusionMatrix::new(taxonomy::FINE_COUNT),
            flips: 0,
            transitions: 0,
            frames: 0,
            negative_routed: 0,
        }
    }

    pub fn add_video(&mut self, records: &[PredictionRecord], truth: &[i32]) -> Result<()> {
        let preds: Vec<i32> = records.iter().map(|r| r.label.index() as i32).collect();
        let cm = metrics::confusion(&preds, truth, taxonomy::FINE_COUNT)?;
        self.confusion.merge(&cm)?;
        self.flips += metrics::count_flips(&preds);
        self.transitions += preds.len().saturating_sub(1);
        self.frames += preds.len();
        self.negative_routed += records
            .iter()
            .filter(|r| r.decided_by == DecidedBy::NegativeNet)
            .count();
        Ok(())
    }

    pub fn macro_f1(&self) -> f64 {
        metrics::f1_report(&self.confusion).macro_f1
    }

    /// Pooled flip rate: total label changes over total adjacent pairs.
    pub fn flip_rate(&self) -> f64 {
        if self.transitions == 0 {
            0.0
        } else {
            self.flips as f64 / self.transitions as f64
        }
    }
}

impl Default for EvalSummary {
    fn default() -> Self {
        Self::new()
    }
}

pub fn evaluate(
    corpus: &Corpus,
    sel: &ModelSelection,
    cfg: &CascadeConfig,
    scheme: &LabelScheme,
    exec: Execution,
    cache: Option<&SmoothCache>,
) -> Result<EvalSummary> {
    let predictions = predict_corpus(corpus, sel, cfg, scheme, exec, cache)?;
    let mut summary = EvalSummary::new();
    for (video, pred) in corpus.videos.iter().zip(&predictions) {
        let truth = video.truth.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("video {} has no ground truth", video.video_id))
        })?;
        summary.add_video(&pred.records, truth)?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowRow {
    pub window: usize,
    pub macro_f1: f64,
    pub flip_rate: f64,
}

/// Sorted, de-duplicated windows plus the duplicates that were dropped.
pub fn dedup_windows(windows: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut seen = BTreeSet::new();
    let mut dups = Vec::new();
    for &w in windows {
        if !seen.insert(w) {
            dups.push(w);
        }
    }
    (seen.into_iter().collect(), dups)
}

/// Evaluates the corpus once per window (applied to both stages). The
/// `w = 0` baseline is always included; rows are sorted by window.
pub fn sweep_windows(
    corpus: &Corpus,
    sel: &ModelSelection,
    windows: &[usize],
    stage: SmoothingStage,
    scheme: &LabelScheme,
    exec: Execution,
    cache: Option<&SmoothCache>,
) -> Result<Vec<WindowRow>> {
    let mut all = windows.to_vec();
    all.push(0);
    let (windows, _) = dedup_windows(&all);
    windows
        .into_iter()
        .map(|w| {
            let cfg = CascadeConfig {
                coarse: SmoothingConfig::new(w),
                negative: SmoothingConfig::new(w),
                stage,
            };
            let s = evaluate(corpus, sel, &cfg, scheme, exec, cache)?;
            Ok(WindowRow {
                window: w,
                macro_f1: s.macro_f1(),
                flip_rate: s.flip_rate(),
            })
        })
        .collect()
}

pub fn windows_csv(rows: &[WindowRow]) -> String {
    let mut out = String::from("w,macro_f1,flip_rate\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.4},{:.4}", r.window, r.macro_f1, r.flip_rate);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleRow {
    pub coarse: Vec<String>,
    pub negative: Vec<String>,
    pub macro_f1: f64,
}

/// One row per `(coarse subset, negative subset)` pair, in request order.
pub fn sweep_ensembles(
    corpus: &Corpus,
    coarse_sets: &[Vec<String>],
    negative_sets: &[Vec<String>],
    cfg: &CascadeConfig,
    scheme: &LabelScheme,
    exec: Execution,
    cache: Option<&SmoothCache>,
) -> Result<Vec<EnsembleRow>> {
    let mut rows = Vec::with_capacity(coarse_sets.len() * negative_sets.len());
    for coarse in coarse_sets {
        for negative in negative_sets {
            let sel = ModelSelection {
                coarse: coarse.clone(),
                negative: negative.clone(),
            };
            let s = evaluate(corpus, &sel, cfg, scheme, exec, cache)?;
            rows.push(EnsembleRow {
                coarse: coarse.clone(),
                negative: negative.clone(),
                macro_f1: s.macro_f1(),
            });
        }
    }
    Ok(rows)
}

pub fn ensembles_csv(rows: &[EnsembleRow]) -> String {
    let mut out = String::from("coarse_models,negative_models,macro_f1\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.4}", r.coarse.join("+"), r.negative.join("+"), r.macro_f1);
    }
    out
}
