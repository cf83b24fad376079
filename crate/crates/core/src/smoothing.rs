//! Temporal smoothing of per-frame logit vectors.
//!
//! Every frame is updated as `f'_i = f_i + mean(f_j : j in W(i))` where
//! `W(i) = { j : |j - i| <= w/2, 0 <= j < n }`. Windows are truncated at the
//! sequence edges and the mean divides by the number of frames actually
//! included. `w = 0` disables smoothing entirely (output equals input).
//!
//! Window sums are carried in double-double precision so that a constant
//! input `c` maps to exactly `2c`, and the streaming and batch forms agree to
//! well below `1e-12`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::fusion::check_finite;

/// Pushes between exact recomputations of the streaming running sum.
pub const RECOMPUTE_INTERVAL: usize = 4096;

/// Boundary handling at the start and end of a stream.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash)]
pub enum BoundaryPolicy {
    /// Drop out-of-range neighbours and divide by the remaining count.
    #[default]
    TruncateRenormalize,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct SmoothingConfig {
    pub window: usize,
    pub boundary: BoundaryPolicy,
}

impl SmoothingConfig {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            boundary: BoundaryPolicy::TruncateRenormalize,
        }
    }

    pub fn disabled() -> Self {
        Self::new(0)
    }

    pub fn half(&self) -> usize {
        self.window / 2
    }

    pub fn is_identity(&self) -> bool {
        self.window == 0
    }

    /// Number of frames in an interior window, `2 * floor(w/2) + 1`.
    pub fn span(&self) -> usize {
        2 * self.half() + 1
    }
}

/// Ordered per-frame logits of one video from one model, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoLogitStream {
    pub video_id: String,
    pub model_id: String,
    pub frame_rate_hint: f64,
    k: usize,
    data: Vec<f64>,
}

impl VideoLogitStream {
    pub const DEFAULT_FRAME_RATE: f64 = 30.0;

    /// Builds a stream from a flat row-major buffer of `n * k` values.
    pub fn new(
        video_id: impl Into<String>,
        model_id: impl Into<String>,
        k: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Shape("class count k must be positive".into()));
        }
        if !data.len().is_multiple_of(k) {
            return Err(Error::Shape(format!(
                "buffer of {} values is not a whole number of {k}-wide frames",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at frame {}, class {}",
                pos / k,
                pos % k
            )));
        }
        Ok(Self {
            video_id: video_id.into(),
            model_id: model_id.into(),
            frame_rate_hint: Self::DEFAULT_FRAME_RATE,
            k,
            data,
        })
    }

    pub fn from_rows(
        video_id: impl Into<String>,
        model_id: impl Into<String>,
        k: usize,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Shape(format!(
                    "frame {i} has {} values, expected {k}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(video_id, model_id, k, data)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn frames(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.k)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    fn with_data(&self, data: Vec<f64>) -> Self {
        Self {
            video_id: self.video_id.clone(),
            model_id: self.model_id.clone(),
            frame_rate_hint: self.frame_rate_hint,
            k: self.k,
            data,
        }
    }
}

pub fn smooth_batch(stream: &VideoLogitStream, cfg: SmoothingConfig) -> VideoLogitStream {
    stream.with_data(smooth_rows(&stream.data, stream.k, cfg))
}

/// Batch smoothing over a flat row-major buffer of `k`-wide frames.
pub fn smooth_rows(data: &[f64], k: usize, cfg: SmoothingConfig) -> Vec<f64> {
    assert!(k > 0 && data.len().is_multiple_of(k), "buffer is not a whole number of frames");
    if cfg.is_identity() || data.is_empty() {
        return data.to_vec();
    }
    let n = data.len() / k;
    let half = cfg.half();

    // prefix[j * k + c] = sum of data[0..j] for class c
    let mut prefix = vec![Dd::ZERO; (n + 1) * k];
    for j in 0..n {
        for c in 0..k {
            prefix[(j + 1) * k + c] = prefix[j * k + c].add(data[j * k + c]);
        }
    }

    let mut out = vec![0.0; data.len()];
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let count = hi - lo + 1;
        for c in 0..k {
            let sum = prefix[(hi + 1) * k + c].sub_dd(prefix[lo * k + c]);
            out[i * k + c] = data[i * k + c] + sum.div_count(count);
        }
    }
    out
}

/// Online form of [`smooth_batch`].
///
/// Frame `i` is emitted once frame `i + w/2` has been pushed; [`flush`]
/// emits the tail with truncated windows. Concatenated outputs equal the
/// batch result. A smoother is single-owner state and is reset by `flush`.
///
/// [`flush`]: StreamingSmoother::flush
#[derive(Clone, Debug)]
pub struct StreamingSmoother {
    cfg: SmoothingConfig,
    k: Option<usize>,
    // ring of up to `span` frames; holds exactly the frames in the running sum
    ring: Vec<f64>,
    ring_start: usize,
    ring_len: usize,
    oldest_index: usize,
    sum: Vec<Dd>,
    pushed: usize,
    next_out: usize,
    since_recompute: usize,
}

impl StreamingSmoother {
    pub fn new(cfg: SmoothingConfig) -> Self {
        Self {
            cfg,
            k: None,
            ring: Vec::new(),
            ring_start: 0,
            ring_len: 0,
            oldest_index: 0,
            sum: Vec::new(),
            pushed: 0,
            next_out: 0,
            since_recompute: 0,
        }
    }

    pub fn config(&self) -> SmoothingConfig {
        self.cfg
    }

    /// Ring buffer capacity in frames.
    pub fn capacity(&self) -> usize {
        if self.cfg.is_identity() {
            0
        } else {
            self.cfg.span()
        }
    }

    /// Frames pushed but not yet emitted.
    pub fn pending(&self) -> usize {
        self.pushed - self.next_out
    }

    pub fn push(&mut self, frame: &[f64]) -> Result<Option<Vec<f64>>> {
        match self.k {
            Some(k) if k != frame.len() => {
                return Err(Error::Shape(format!(
                    "frame has {} values, smoother expects {k}",
                    frame.len()
                )));
            }
            _ => check_finite(frame)?,
        }
        let k = *self.k.get_or_insert(frame.len());

        if self.cfg.is_identity() {
            self.pushed += 1;
            self.next_out += 1;
            return Ok(Some(frame.to_vec()));
        }

        if self.ring.is_empty() {
            self.ring = vec![0.0; self.cfg.span() * k];
            self.sum = vec![Dd::ZERO; k];
        }
        let cap = self.cfg.span();
        debug_assert!(self.ring_len < cap);
        let slot = (self.ring_start + self.ring_len) % cap;
        self.ring[slot * k..(slot + 1) * k].copy_from_slice(frame);
        self.ring_len += 1;
        for (s, &x) in self.sum.iter_mut().zip(frame) {
            *s = s.add(x);
        }
        self.pushed += 1;
        self.since_recompute += 1;
        if self.since_recompute >= RECOMPUTE_INTERVAL {
            self.recompute_sum();
        }

        if self.pushed - 1 == self.next_out + self.cfg.half() {
            let out = self.emit_next();
            Ok(Some(out))
        } else {
            Ok(None)
        }
    }

    /// Emits every pending frame and resets the smoother for a new stream.
    pub fn flush(&mut self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.pending());
        while self.next_out < self.pushed {
            out.push(self.emit_next());
        }
        *self = Self::new(self.cfg);
        out
    }

    fn slot_of(&self, frame_index: usize) -> usize {
        (self.ring_start + (frame_index - self.oldest_index)) % self.cfg.span()
    }

    fn emit_next(&mut self) -> Vec<f64> {
        let k = self.k.expect("emit after push");
        let slot = self.slot_of(self.next_out);
        let center = &self.ring[slot * k..(slot + 1) * k];
        let out: Vec<f64> = center
            .iter()
            .zip(&self.sum)
            .map(|(&x, s)| x + s.div_count(self.ring_len))
            .collect();
        self.next_out += 1;
        let window_start = self.next_out.saturating_sub(self.cfg.half());
        while self.ring_len > 0 && self.oldest_index < window_start {
            self.pop_oldest(k);
        }
        out
    }

    fn pop_oldest(&mut self, k: usize) {
        let slot = self.ring_start;
        for (c, s) in self.sum.iter_mut().enumerate() {
            *s = s.add(-self.ring[slot * k + c]);
        }
        self.ring_start = (self.ring_start + 1) % self.cfg.span();
        self.ring_len -= 1;
        self.oldest_index += 1;
    }

    fn recompute_sum(&mut self) {
        let k = self.k.expect("recompute after push");
        let cap = self.cfg.span();
        for (c, s) in self.sum.iter_mut().enumerate() {
            let mut acc = Dd::ZERO;
            for r in 0..self.ring_len {
                let slot = (self.ring_start + r) % cap;
                acc = acc.add(self.ring[slot * k + c]);
            }
            *s = acc;
        }
        self.since_recompute = 0;
    }
}

/// Smoothed streams keyed by `(video, model, stage tag, window)`.
///
/// Smoothing depends only on the input stream and the window, so sweeps that
/// revisit the same pair can share results.
#[derive(Debug, Default)]
pub struct SmoothCache {
    entries: Mutex<HashMap<CacheKey, Arc<VideoLogitStream>>>,
}

type CacheKey = (String, String, &'static str, usize);

impl SmoothCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_smooth(
        &self,
        stage: &'static str,
        stream: &VideoLogitStream,
        cfg: SmoothingConfig,
    ) -> Arc<VideoLogitStream> {
        let key = (stream.video_id.clone(), stream.model_id.clone(), stage, cfg.window);
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return Arc::clone(hit);
        }
        let smoothed = Arc::new(smooth_batch(stream, cfg));
        self.entries
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert(smoothed)
            .clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn add(self, x: f64) -> Dd {
        let (s, e) = two_sum(self.hi, x);
        let (hi, lo) = fast_two_sum(s, e + self.lo);
        Dd { hi, lo }
    }

    fn sub_dd(self, other: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, -other.hi);
        let e = e + (self.lo - other.lo);
        let (hi, lo) = fast_two_sum(s, e);
        Dd { hi, lo }
    }

    /// `(hi + lo) / count` rounded to the nearest double.
    fn div_count(self, count: usize) -> f64 {
        let m = count as f64;
        let q1 = self.hi / m;
        let p = q1 * m;
        let p_err = q1.mul_add(m, -p);
        let r = ((self.hi - p) - p_err) + self.lo;
        q1 + r / m
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}
