//! Two-stage coarse-to-fine routing and the per-video prediction pipeline.
//!
//! Each frame is first classified into one of the five coarse classes. Frames
//! whose coarse decision is `Negative` are handed to the negative stage, which
//! picks one of the four negative expressions; every other coarse class maps
//! to the fine label of the same name.

use std::borrow::{Borrow, Cow};
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fusion::{self, FusedScores};
use crate::smoothing::{smooth_batch, smooth_rows, SmoothCache, SmoothingConfig, VideoLogitStream};
use crate::taxonomy::{CoarseLabel, ExpressionLabel, LabelScheme, NegativeLabel};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum DecidedBy {
    CoarseDirect,
    NegativeNet,
}

/// Where smoothing is applied relative to fusion.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash)]
pub enum SmoothingStage {
    /// Smooth each model's logits, then softmax and fuse.
    #[default]
    PreFusion,
    /// Softmax and fuse raw logits, then smooth the fused score stream.
    PostFusion,
}

impl SmoothingStage {
    pub fn as_str(self) -> &'static str {
        match self {
            SmoothingStage::PreFusion => "pre_fusion",
            SmoothingStage::PostFusion => "post_fusion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre_fusion" => Some(SmoothingStage::PreFusion),
            "post_fusion" => Some(SmoothingStage::PostFusion),
            _ => None,
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct CascadeConfig {
    pub coarse: SmoothingConfig,
    pub negative: SmoothingConfig,
    pub stage: SmoothingStage,
}

impl CascadeConfig {
    pub fn with_window(window: usize) -> Self {
        Self {
            coarse: SmoothingConfig::new(window),
            negative: SmoothingConfig::new(window),
            stage: SmoothingStage::PreFusion,
        }
    }
}

/// Parsed pipeline config file. Empty model lists mean "every model available
/// for that stage".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineConfig {
    pub coarse_models: Vec<String>,
    pub negative_models: Vec<String>,
    pub coarse_window: usize,
    pub negative_window: usize,
    pub smoothing_stage: SmoothingStage,
    /// Optional label scheme config; absent means the canonical scheme.
    pub scheme: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn cascade(&self) -> CascadeConfig {
        CascadeConfig {
            coarse: SmoothingConfig::new(self.coarse_window),
            negative: SmoothingConfig::new(self.negative_window),
            stage: self.smoothing_stage,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub video_id: String,
    pub frame_index: usize,
    pub label: ExpressionLabel,
    pub decided_by: DecidedBy,
    pub coarse_scores: Vec<f64>,
    pub negative_scores: Option<Vec<f64>>,
}

/// Routes one frame given its coarse scores.
///
/// `negative_provider` is invoked only when the coarse decision is the
/// `Negative` class; its scores are returned alongside the decision.
pub fn route<F>(
    coarse: &FusedScores,
    negative_provider: F,
    scheme: &LabelScheme,
) -> Result<(ExpressionLabel, DecidedBy, Option<FusedScores>)>
where
    F: FnOnce() -> Result<FusedScores>,
{
    if coarse.len() != CoarseLabel::COUNT {
        return Err(Error::Shape(format!(
            "coarse scores have {} classes, expected {}",
            coarse.len(),
            CoarseLabel::COUNT
        )));
    }
    let coarse_label = CoarseLabel::new(fusion::decide(coarse))?;
    if coarse_label != scheme.negative_coarse() {
        let label = scheme
            .coarse_to_fine(coarse_label)
            .expect("non-negative coarse classes have a fine counterpart");
        return Ok((label, DecidedBy::CoarseDirect, None));
    }
    let negative = negative_provider().map_err(|e| match e {
        Error::MissingNegativeScores(_) => e,
        other => Error::MissingNegativeScores(other.to_string()),
    })?;
    if negative.len() != NegativeLabel::COUNT {
        return Err(Error::Shape(format!(
            "negative scores have {} classes, expected {}",
            negative.len(),
            NegativeLabel::COUNT
        )));
    }
    let label = scheme.from_negative(NegativeLabel::new(fusion::decide(&negative))?);
    Ok((label, DecidedBy::NegativeNet, Some(negative)))
}

/// Counters describing how much work a prediction run did.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct PipelineTrace {
    pub frames: usize,
    pub negative_evaluations: usize,
    /// Whether the negative streams were smoothed/prepared at all.
    pub negative_stage_prepared: bool,
}

/// Predicts every frame of one video.
///
/// All streams must share a video id and frame count; coarse streams have 5
/// classes and negative streams 4. Negative streams may be empty as long as
/// no frame routes to `Negative`.
pub fn predict_video<S: Borrow<VideoLogitStream>>(
    coarse_streams: &[S],
    negative_streams: &[S],
    cfg: &CascadeConfig,
    scheme: &LabelScheme,
) -> Result<Vec<PredictionRecord>> {
    predict_video_traced(coarse_streams, negative_streams, cfg, scheme, None).map(|(r, _)| r)
}

/// [`predict_video`] with an optional smoothing cache and a work trace.
pub fn predict_video_traced<S: Borrow<VideoLogitStream>>(
    coarse_streams: &[S],
    negative_streams: &[S],
    cfg: &CascadeConfig,
    scheme: &LabelScheme,
    cache: Option<&SmoothCache>,
) -> Result<(Vec<PredictionRecord>, PipelineTrace)> {
    let coarse: Vec<&VideoLogitStream> = coarse_streams.iter().map(Borrow::borrow).collect();
    let negative: Vec<&VideoLogitStream> = negative_streams.iter().map(Borrow::borrow).collect();
    let first = *coarse
        .first()
        .ok_or_else(|| Error::NoModels("coarse".to_string()))?;
    let n = first.len();

    let mut offenders = Vec::new();
    for s in coarse.iter().chain(&negative) {
        if s.video_id != first.video_id {
            return Err(Error::InvalidInput(format!(
                "stream {} belongs to video {}, expected {}",
                s.model_id, s.video_id, first.video_id
            )));
        }
        if s.len() != n {
            offenders.push((s.model_id.clone(), s.len()));
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Alignment {
            expected: n,
            offenders,
        });
    }

    let mut coarse_stage = Stage::new("coarse", coarse, CoarseLabel::COUNT, cfg.coarse, cfg.stage)?;
    let mut negative_stage =
        Stage::new("negative", negative, NegativeLabel::COUNT, cfg.negative, cfg.stage)?;

    let mut records = Vec::with_capacity(n);
    for frame in 0..n {
        let coarse_scores = coarse_stage.scores(frame, cache)?;
        let (label, decided_by, negative_scores) =
            route(&coarse_scores, || negative_stage.scores(frame, cache), scheme)?;
        records.push(PredictionRecord {
            video_id: first.video_id.clone(),
            frame_index: frame,
            label,
            decided_by,
            coarse_scores: coarse_scores.scores,
            negative_scores: negative_scores.map(|s| s.scores),
        });
    }
    let trace = PipelineTrace {
        frames: n,
        negative_evaluations: negative_stage.evaluations,
        negative_stage_prepared: negative_stage.prepared.is_some(),
    };
    Ok((records, trace))
}

/// One stage's model ensemble; smoothing happens on first use.
struct Stage<'a> {
    name: &'static str,
    streams: Vec<&'a VideoLogitStream>,
    models: Vec<String>,
    k: usize,
    window: SmoothingConfig,
    placement: SmoothingStage,
    prepared: Option<Prepared<'a>>,
    evaluations: usize,
}

enum Prepared<'a> {
    PerModel(Vec<ModelStream<'a>>),
    Fused(Vec<f64>),
}

enum ModelStream<'a> {
    Borrowed(Cow<'a, VideoLogitStream>),
    Shared(Arc<VideoLogitStream>),
}

impl ModelStream<'_> {
    fn get(&self) -> &VideoLogitStream {
        match self {
            ModelStream::Borrowed(s) => s,
            ModelStream::Shared(s) => s,
        }
    }
}

impl<'a> Stage<'a> {
    fn new(
        name: &'static str,
        mut streams: Vec<&'a VideoLogitStream>,
        k: usize,
        window: SmoothingConfig,
        placement: SmoothingStage,
    ) -> Result<Self> {
        streams.sort_by(|a, b| a.model_id.cmp(&b.model_id));
        let mut seen = BTreeSet::new();
        for s in &streams {
            if s.k() != k {
                return Err(Error::Shape(format!(
                    "{name} stream {} has {} classes, expected {k}",
                    s.model_id,
                    s.k()
                )));
            }
            if !seen.insert(s.model_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "model {} appears twice in the {name} stage",
                    s.model_id
                )));
            }
        }
        Ok(Self {
            name,
            models: streams.iter().map(|s| s.model_id.clone()).collect(),
            streams,
            k,
            window,
            placement,
            prepared: None,
            evaluations: 0,
        })
    }

    fn prepare(&self, cache: Option<&SmoothCache>) -> Prepared<'a> {
        match self.placement {
            SmoothingStage::PreFusion => Prepared::PerModel(
                self.streams
                    .iter()
                    .map(|&s| {
                        if self.window.is_identity() {
                            ModelStream::Borrowed(Cow::Borrowed(s))
                        } else if let Some(cache) = cache {
                            ModelStream::Shared(cache.get_or_smooth(self.name, s, self.window))
                        } else {
                            ModelStream::Borrowed(Cow::Owned(smooth_batch(s, self.window)))
                        }
                    })
                    .collect(),
            ),
            SmoothingStage::PostFusion => {
                let n = self.streams[0].len();
                let mut fused = vec![0.0; n * self.k];
                for (i, acc) in fused.chunks_exact_mut(self.k).enumerate() {
                    for s in &self.streams {
                        fusion::softmax_accumulate(s.frame(i), acc);
                    }
                }
                Prepared::Fused(smooth_rows(&fused, self.k, self.window))
            }
        }
    }

    fn scores(&mut self, frame: usize, cache: Option<&SmoothCache>) -> Result<FusedScores> {
        if self.streams.is_empty() {
            return Err(Error::NoModels(self.name.to_string()));
        }
        if self.prepared.is_none() {
            self.prepared = Some(self.prepare(cache));
        }
        self.evaluations += 1;
        let scores = match self.prepared.as_ref().expect("prepared above") {
            Prepared::PerModel(streams) => {
                let mut acc = vec![0.0; self.k];
                for s in streams {
                    fusion::softmax_accumulate(s.get().frame(frame), &mut acc);
                }
                acc
            }
            Prepared::Fused(rows) => rows[frame * self.k..(frame + 1) * self.k].to_vec(),
        };
        Ok(FusedScores {
            scores,
            contributing_models: self.models.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{fuse, LogitFrame};
    use std::cell::Cell;

    fn fused(scores: &[f64]) -> FusedScores {
        FusedScores {
            scores: scores.to_vec(),
            contributing_models: vec!["m".into()],
        }
    }

    fn constant_stream(model: &str, logits: &[f64], n: usize) -> VideoLogitStream {
        let data = logits.iter().copied().cycle().take(n * logits.len()).collect();
        VideoLogitStream::new("v", model, logits.len(), data).unwrap()
    }

    #[test]
    fn direct_coarse_label_skips_provider() {
        let s = LabelScheme::default();
        let calls = Cell::new(0);
        let (label, by, neg) = route(
            &fused(&[0.1, 0.1, 0.6, 0.1, 0.1]),
            || {
                calls.set(calls.get() + 1);
                Ok(fused(&[0.25; 4]))
            },
            &s,
        )
        .unwrap();
        assert_eq!(s.fine_name(label), "Happiness");
        assert_eq!(by, DecidedBy::CoarseDirect);
        assert!(neg.is_none());
        assert_eq!(calls.get(), 0);
    }

    #[test]
    fn negative_route_uses_negative_net() {
        let s = LabelScheme::default();
        let (label, by, neg) = route(
            &fused(&[0.1, 0.6, 0.1, 0.1, 0.1]),
            || Ok(fused(&[0.1, 0.2, 0.6, 0.1])),
            &s,
        )
        .unwrap();
        assert_eq!(s.fine_name(label), "Fear");
        assert_eq!(by, DecidedBy::NegativeNet);
        assert!(neg.is_some());
    }

    #[test]
    fn tie_goes_to_neutral() {
        let s = LabelScheme::default();
        let (label, by, _) = route(&fused(&[0.2; 5]), || unreachable!(), &s).unwrap();
        assert_eq!(s.fine_name(label), "Neutral");
        assert_eq!(by, DecidedBy::CoarseDirect);
    }

    #[test]
    fn provider_failure_is_missing_negative_scores() {
        let s = LabelScheme::default();
        let err = route(
            &fused(&[0.0, 1.0, 0.0, 0.0, 0.0]),
            || Err(Error::NoModels("negative".into())),
            &s,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingNegativeScores(_)));
    }

    #[test]
    fn single_frame_surprise() {
        let s = LabelScheme::default();
        let logits = [0.0, 0.5, -1.0, 3.0, 0.2];
        let coarse = [constant_stream("a", &logits, 1)];
        let negative: [VideoLogitStream; 0] = [];
        let recs = predict_video(&coarse, &negative, &CascadeConfig::default(), &s).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(s.fine_name(recs[0].label), "Surprise");
        assert_eq!(recs[0].decided_by, DecidedBy::CoarseDirect);
        let f = fuse(
            &[LogitFrame {
                video_id: "v".into(),
                frame_index: 0,
                model_id: "a".into(),
                logits: logits.to_vec(),
            }],
            5,
        )
        .unwrap();
        assert_eq!(recs[0].coarse_scores, f.scores);
    }

    #[test]
    fn constant_negative_streams_with_smoothing() {
        let s = LabelScheme::default();
        let coarse = [constant_stream("a", &[0.0, 2.0, 0.0, 0.0, 0.0], 100)];
        let negative = [constant_stream("r", &[0.0, 0.0, 0.0, 1.5], 100)];
        for stage in [SmoothingStage::PreFusion, SmoothingStage::PostFusion] {
            let cfg = CascadeConfig {
                stage,
                ..CascadeConfig::with_window(32)
            };
            let recs = predict_video(&coarse, &negative, &cfg, &s).unwrap();
            assert_eq!(recs.len(), 100);
            assert!(recs.iter().all(|r| s.fine_name(r.label) == "Sadness"));
            assert!(recs.iter().all(|r| r.decided_by == DecidedBy::NegativeNet));
        }
    }

    #[test]
    fn negative_stage_is_lazy() {
        let s = LabelScheme::default();
        let coarse = [constant_stream("a", &[3.0, 0.0, 0.0, 0.0, 0.0], 10)];
        let negative = [constant_stream("r", &[0.0, 0.0, 0.0, 1.5], 10)];
        let (recs, trace) =
            predict_video_traced(&coarse, &negative, &CascadeConfig::with_window(4), &s, None)
                .unwrap();
        assert!(recs.iter().all(|r| r.negative_scores.is_none()));
        assert_eq!(trace.negative_evaluations, 0);
        assert!(!trace.negative_stage_prepared);
    }

    #[test]
    fn missing_negative_streams_only_fail_when_needed() {
        let s = LabelScheme::default();
        let coarse = [constant_stream("a", &[0.0, 3.0, 0.0, 0.0, 0.0], 3)];
        let none: [VideoLogitStream; 0] = [];
        let err = predict_video(&coarse, &none, &CascadeConfig::default(), &s).unwrap_err();
        assert!(matches!(err, Error::MissingNegativeScores(_)));
    }

    #[test]
    fn input_validation() {
        let s = LabelScheme::default();
        let none: [VideoLogitStream; 0] = [];
        assert!(matches!(
            predict_video(&none, &none, &CascadeConfig::default(), &s),
            Err(Error::NoModels(_))
        ));
        let coarse = [
            constant_stream("a", &[0.0; 5], 4),
            constant_stream("b", &[0.0; 5], 3),
        ];
        match predict_video(&coarse, &none, &CascadeConfig::default(), &s) {
            Err(Error::Alignment { expected, offenders }) => {
                assert_eq!(expected, 4);
                assert_eq!(offenders, vec![("b".to_string(), 3)]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad_k = [constant_stream("a", &[0.0; 4], 2)];
        assert!(matches!(
            predict_video(&bad_k, &none, &CascadeConfig::default(), &s),
            Err(Error::Shape(_))
        ));
        let dup = [
            constant_stream("a", &[0.0; 5], 2),
            constant_stream("a", &[1.0; 5], 2),
        ];
        assert!(predict_video(&dup, &none, &CascadeConfig::default(), &s).is_err());
    }

    #[test]
    fn stream_order_does_not_matter() {
        let s = LabelScheme::default();
        let a = VideoLogitStream::new("v", "a", 5, (0..50).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        let b = VideoLogitStream::new("v", "b", 5, (0..50).map(|i| (i as f64 * 0.11).cos()).collect())
            .unwrap();
        let none: [VideoLogitStream; 0] = [];
        let cfg = CascadeConfig::with_window(3);
        let one = predict_video(&[a.clone(), b.clone()], &none, &cfg, &s);
        let two = predict_video(&[b, a], &none, &cfg, &s);
        match (one, two) {
            (Ok(x), Ok(y)) => assert_eq!(x, y),
            (Err(_), Err(_)) => {}
            _ => panic!("order changed the outcome"),
        }
    }
}
