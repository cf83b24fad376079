//! Deterministic synthetic corpora and repeat-factor oversampling.
//!
//! Ground truth is piecewise constant: segment lengths are uniform in
//! `segment_len_range` and segment classes are drawn from `class_prior`.
//! Each toy model emits `logit_gain` at the true class plus Gaussian noise
//! `sigma * (sqrt(1 - d) * z_shared + sqrt(d) * z_model)` where `d` is
//! `model_decorrelation`, so ensembles average away the per-model part.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`. Draw order for one video: all segment draws first, then
//! for every frame the coarse noise (shared k, then each model's k in the
//! given model order) followed by the negative noise in the same layout.
//! Video `i` of a corpus uses seed `seed ^ i`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::smoothing::VideoLogitStream;
use crate::taxonomy::{self, ExpressionLabel, LabelScheme};

/// Mildly imbalanced prior over the canonical fine classes.
pub const DEFAULT_PRIOR: [f64; taxonomy::FINE_COUNT] = [0.25, 0.08, 0.06, 0.06, 0.20, 0.10, 0.10, 0.15];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub video_id: String,
    pub n_frames: usize,
    pub frame_rate: f64,
    pub segment_len_range: (usize, usize),
    pub class_prior: Vec<f64>,
    pub logit_gain: f64,
    pub noise_sigma: f64,
    pub model_decorrelation: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 7,
            video_id: "synth_000".to_string(),
            n_frames: 3000,
            frame_rate: 30.0,
            segment_len_range: (60, 300),
            class_prior: DEFAULT_PRIOR.to_vec(),
            logit_gain: 2.0,
            noise_sigma: 1.5,
            model_decorrelation: 0.5,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.class_prior.len() != taxonomy::FINE_COUNT {
            return bad(format!(
                "class_prior has {} entries, expected {}",
                self.class_prior.len(),
                taxonomy::FINE_COUNT
            ));
        }
        if self.class_prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("class_prior entries must be finite and non-negative".into());
        }
        let total: f64 = self.class_prior.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("class_prior sums to {total}, expected 1"));
        }
        let (lo, hi) = self.segment_len_range;
        if lo == 0 || lo > hi {
            return bad(format!("segment_len_range ({lo}, {hi}) needs 1 <= min <= max"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        if !self.logit_gain.is_finite() {
            return bad("logit_gain must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.model_decorrelation) {
            return bad(format!(
                "model_decorrelation {} outside [0, 1]",
                self.model_decorrelation
            ));
        }
        if !self.frame_rate.is_finite() || self.frame_rate <= 0.0 {
            return bad("frame_rate must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub video_id: String,
    pub truth: Vec<ExpressionLabel>,
    pub coarse_streams: Vec<VideoLogitStream>,
    pub negative_streams: Vec<VideoLogitStream>,
}

impl SynthVideo {
    pub fn truth_indices(&self) -> Vec<i32> {
        self.truth.iter().map(|l| l.index() as i32).collect()
    }
}

/// Generates one video under the canonical label scheme.
pub fn gen_video<S: AsRef<str>>(params: &SynthParams, model_ids: &[S]) -> Result<SynthVideo> {
    gen_video_with_scheme(params, model_ids, &LabelScheme::default())
}

pub fn gen_video_with_scheme<S: AsRef<str>>(
    params: &SynthParams,
    model_ids: &[S],
    scheme: &LabelScheme,
) -> Result<SynthVideo> {
    params.validate()?;
    if model_ids.is_empty() {
        return Err(Error::InvalidParams("at least one model id is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.n_frames;

    let (lo, hi) = params.segment_len_range;
    let seg_len = Uniform::new_inclusive(lo, hi).expect("validated range");
    let class_dist = WeightedIndex::new(&params.class_prior)
        .map_err(|e| Error::InvalidParams(format!("class_prior: {e}")))?;
    let mut truth = Vec::with_capacity(n);
    while truth.len() < n {
        let len = seg_len.sample(&mut rng);
        let class = ExpressionLabel::new(class_dist.sample(&mut rng))?;
        let take = len.min(n - truth.len());
        truth.extend(std::iter::repeat_n(class, take));
    }

    let m = model_ids.len();
    let kc = taxonomy::COARSE_COUNT;
    let kn = taxonomy::NEGATIVE_COUNT;
    let shared_w = params.noise_sigma * (1.0 - params.model_decorrelation).sqrt();
    let own_w = params.noise_sigma * params.model_decorrelation.sqrt();
    let mut coarse: Vec<Vec<f64>> = vec![Vec::with_capacity(n * kc); m];
    let mut negative: Vec<Vec<f64>> = vec![Vec::with_capacity(n * kn); m];
    let mut shared = [0.0f64; taxonomy::FINE_COUNT];

    for &label in &truth {
        let coarse_target = scheme.to_coarse(label).index();
        emit_noisy(&mut rng, &mut coarse, &mut shared[..kc], Some(coarse_target), params.logit_gain, shared_w, own_w);
        let negative_target = scheme.to_negative(label).map(|l| l.index());
        emit_noisy(&mut rng, &mut negative, &mut shared[..kn], negative_target, params.logit_gain, shared_w, own_w);
    }

    let to_streams = |bufs: Vec<Vec<f64>>, k: usize| -> Result<Vec<VideoLogitStream>> {
        bufs.into_iter()
            .zip(model_ids)
            .map(|(data, id)| {
                let mut s = VideoLogitStream::new(&params.video_id, id.as_ref(), k, data)?;
                s.frame_rate_hint = params.frame_rate;
                Ok(s)
            })
            .collect()
    };
    Ok(SynthVideo {
        video_id: params.video_id.clone(),
        truth,
        coarse_streams: to_streams(coarse, kc)?,
        negative_streams: to_streams(negative, kn)?,
    })
}

fn emit_noisy(
    rng: &mut ChaCha8Rng,
    out: &mut [Vec<f64>],
    shared: &mut [f64],
    target: Option<usize>,
    gain: f64,
    shared_w: f64,
    own_w: f64,
) {
    for s in shared.iter_mut() {
        *s = rng.sample(StandardNormal);
    }
    for buf in out.iter_mut() {
        for (c, s) in shared.iter().enumerate() {
            let own: f64 = rng.sample(StandardNormal);
            let signal = if target == Some(c) { gain } else { 0.0 };
            buf.push(signal + shared_w * s + own_w * own);
        }
    }
}

/// Generates `n_videos` videos; video `i` uses seed `params.seed ^ i` and id
/// `synth_{i:03}`.
pub fn gen_corpus<S: AsRef<str>>(
    params: &SynthParams,
    n_videos: usize,
    model_ids: &[S],
) -> Result<Vec<SynthVideo>> {
    (0..n_videos)
        .map(|i| gen_video(&video_params(params, i), model_ids))
        .collect()
}

pub fn video_params(params: &SynthParams, ordinal: usize) -> SynthParams {
    SynthParams {
        seed: params.seed ^ ordinal as u64,
        video_id: format!("synth_{ordinal:03}"),
        ..params.clone()
    }
}

/// `r(c) = max(1, sqrt(t / freq(c)))` for every class.
pub fn repeat_factors(class_freqs: &[f64], threshold_t: f64) -> Result<Vec<f64>> {
    if !(threshold_t > 0.0 && threshold_t <= 1.0) {
        return Err(Error::InvalidInput(format!("threshold t = {threshold_t} outside (0, 1]")));
    }
    if let Some(class) = class_freqs.iter().position(|&f| f == 0.0) {
        return Err(Error::UndefinedFactor { class });
    }
    if class_freqs.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidInput("class frequencies must be positive".into()));
    }
    let total: f64 = class_freqs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("class frequencies sum to {total}, expected 1")));
    }
    Ok(class_freqs
        .iter()
        .map(|&f| (threshold_t / f).sqrt().max(1.0))
        .collect())
}

/// Repeat-factor resampling of example indices.
///
/// Frequencies are measured over the classes present in `labels`. Index `i`
/// appears `floor(r)` times plus once more with probability `frac(r)`; the
/// result is shuffled. Deterministic given `seed`.
pub fn resample_indices(labels: &[usize], threshold_t: f64, seed: u64) -> Result<Vec<usize>> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("no labels to resample".into()));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let classes: Vec<usize> = counts.keys().copied().collect();
    let freqs: Vec<f64> = counts
        .values()
        .map(|&c| c as f64 / labels.len() as f64)
        .collect();
    // re-normalise away rounding so the sum check in repeat_factors holds
    let total: f64 = freqs.iter().sum();
    let freqs: Vec<f64> = freqs.iter().map(|f| f / total).collect();
    let factors = repeat_factors(&freqs, threshold_t)?;
    let factor_of: BTreeMap<usize, f64> = classes.into_iter().zip(factors).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        let r = factor_of[l];
        let whole = r.floor();
        let mut reps = whole as usize;
        if rng.random::<f64>() < r - whole {
            reps += 1;
        }
        out.extend(std::iter::repeat_n(i, reps));
    }
    out.shuffle(&mut rng);
    Ok(out)
}
