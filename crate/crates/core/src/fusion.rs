//! Softmax-sum ensemble fusion.
//!
//! Each model's logits go through a softmax; the per-class probabilities are
//! summed over models (no renormalization) and the decision is the argmax of
//! the sum, with ties going to the lowest class index.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// One frame's raw scores from one model.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitFrame {
    pub video_id: String,
    pub frame_index: usize,
    pub model_id: String,
    pub logits: Vec<f64>,
}

/// Per-class sums of model softmax outputs.
///
/// For `m` contributing models every score lies in `[0, m]` and the scores
/// sum to `m`. `contributing_models` is sorted lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedScores {
    pub scores: Vec<f64>,
    pub contributing_models: Vec<String>,
}

impl FusedScores {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_finite(logits)?;
    let mut out = vec![0.0; logits.len()];
    softmax_accumulate(logits, &mut out);
    Ok(out)
}

/// Adds `softmax(logits)` into `acc`. Inputs must be finite and non-empty.
pub(crate) fn softmax_accumulate(logits: &[f64], acc: &mut [f64]) {
    debug_assert_eq!(logits.len(), acc.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&x| (x - max).exp()).sum();
    for (a, &x) in acc.iter_mut().zip(logits) {
        *a += (x - max).exp() / total;
    }
}

pub(crate) fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("empty logit vector".into()));
    }
    if let Some(pos) = logits.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite logit {} at class {pos}",
            logits[pos]
        )));
    }
    Ok(())
}

/// Fuses the frames of several models for one `(video, frame)` pair.
///
/// Models are summed in lexicographic `model_id` order (ties broken by the
/// logits themselves) so the result is bitwise independent of input order.
pub fn fuse(frames: &[LogitFrame], k: usize) -> Result<FusedScores> {
    let first = frames
        .first()
        .ok_or_else(|| Error::NoModels("fusion".to_string()))?;
    for f in frames {
        if f.video_id != first.video_id || f.frame_index != first.frame_index {
            return Err(Error::InvalidInput(format!(
                "cannot fuse frame {}:{} with {}:{}",
                f.video_id, f.frame_index, first.video_id, first.frame_index
            )));
        }
        if f.logits.len() != k {
            return Err(Error::Shape(format!(
                "model {} has {} logits, expected {k}",
                f.model_id,
                f.logits.len()
            )));
        }
        check_finite(&f.logits)?;
    }

    let mut ordered: Vec<&LogitFrame> = frames.iter().collect();
    ordered.sort_by(|a, b| {
        a.model_id.cmp(&b.model_id).then_with(|| {
            a.logits
                .iter()
                .zip(&b.logits)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });

    let mut scores = vec![0.0; k];
    for f in &ordered {
        softmax_accumulate(&f.logits, &mut scores);
    }
    Ok(FusedScores {
        scores,
        contributing_models: ordered.iter().map(|f| f.model_id.clone()).collect(),
    })
}

pub fn decide(scores: &FusedScores) -> usize {
    argmax(&scores.scores)
}

/// Smallest index attaining the maximum.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
