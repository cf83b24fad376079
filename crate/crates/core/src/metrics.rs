//! Confusion matrices, per-class and macro F1, and label flip rate.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Ground-truth marker for unannotated frames.
pub const INVALID_LABEL: i32 = -1;

/// `counts[t * k + p]`: frames with truth `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
    total: u64,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
            total: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.k + pred] += 1;
        self.total += 1;
    }

    /// Entrywise sum; associative and commutative.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Shape(format!(
                "cannot merge {}-class and {}-class confusion matrices",
                self.k, other.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }
}

/// Tallies `(truth, pred)` pairs. Truths equal to `-1` are skipped.
pub fn confusion(preds: &[i32], truths: &[i32], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::Alignment {
            expected: truths.len(),
            offenders: vec![("predictions".to_string(), preds.len())],
        });
    }
    let mut cm = ConfusionMatrix::new(k);
    for (position, (&p, &t)) in preds.iter().zip(truths).enumerate() {
        if p < 0 || p as usize >= k {
            return Err(Error::InvalidPrediction { value: p, position });
        }
        if t == INVALID_LABEL {
            continue;
        }
        if t < 0 || t as usize >= k {
            return Err(Error::InvalidInput(format!(
                "ground truth {t} at position {position} outside [0, {k})"
            )));
        }
        cm.add(t as usize, p as usize);
    }
    Ok(cm)
}

/// How classes with no support and no predictions enter the macro mean.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum EmptyClassPolicy {
    /// Score F1 = 0 and keep the class in the mean (fixed-k averaging).
    #[default]
    CountAsZero,
    /// Leave the class out of the macro mean.
    Exclude,
}

#[derive(Clone, Debug, PartialEq)]
pub struct F1Report {
    pub per_class: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub support: Vec<u64>,
    pub macro_f1: f64,
}

pub fn f1_report(cm: &ConfusionMatrix) -> F1Report {
    f1_report_with(cm, EmptyClassPolicy::CountAsZero)
}

pub fn f1_report_with(cm: &ConfusionMatrix, policy: EmptyClassPolicy) -> F1Report {
    let k = cm.k;
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = Vec::with_capacity(k);
    let mut precision = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    let mut support = Vec::with_capacity(k);
    let mut counted = 0usize;
    let mut f1_sum = 0.0;
    for c in 0..k {
        let tp = cm.get(c, c);
        let row: u64 = cm.row(c).iter().sum();
        let col: u64 = (0..k).map(|t| cm.get(t, c)).sum();
        let fn_ = row - tp;
        let fp = col - tp;
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        per_class.push(f1);
        precision.push(ratio(tp, tp + fp));
        recall.push(ratio(tp, row));
        support.push(row);
        if policy == EmptyClassPolicy::CountAsZero || 2 * tp + fp + fn_ > 0 {
            counted += 1;
            f1_sum += f1;
        }
    }
    F1Report {
        macro_f1: if counted == 0 { 0.0 } else { f1_sum / counted as f64 },
        per_class,
        precision,
        recall,
        support,
    }
}

impl F1Report {
    /// CSV with one row per class and a trailing macro row, 4 decimals.
    pub fn to_csv<S: AsRef<str>>(&self, class_names: &[S]) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for (c, name) in class_names.iter().enumerate().take(self.per_class.len()) {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{:.4},{}",
                name.as_ref(),
                self.precision[c],
                self.recall[c],
                self.per_class[c],
                self.support[c]
            );
        }
        let k = self.per_class.len().max(1) as f64;
        let _ = writeln!(
            out,
            "macro,{:.4},{:.4},{:.4},{}",
            self.precision.iter().sum::<f64>() / k,
            self.recall.iter().sum::<f64>() / k,
            self.macro_f1,
            self.support.iter().sum::<u64>()
        );
        out
    }
}

/// Number of adjacent pairs with differing labels.
pub fn count_flips<T: PartialEq>(labels: &[T]) -> usize {
    labels.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Fraction of adjacent frame pairs whose labels differ; 0 for one frame.
pub fn flip_rate<T: PartialEq>(labels: &[T]) -> Result<f64> {
    match labels.len() {
        0 => Err(Error::EmptyInput("flip rate of an empty sequence".into())),
        1 => Ok(0.0),
        n => Ok(count_flips(labels) as f64 / (n - 1) as f64),
    }
}
