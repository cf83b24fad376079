//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one pass/fail line, even when another fails.

use std::fs;
use std::panic;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fer_cascade::cascade::{predict_video, CascadeConfig, DecidedBy, PredictionRecord, SmoothingStage};
use fer_cascade::corpus::{self, Corpus, ModelSelection};
use fer_cascade::dataio::{self, Stage};
use fer_cascade::fusion::{argmax, decide, fuse, softmax, LogitFrame};
use fer_cascade::metrics::{confusion, f1_report};
use fer_cascade::smoothing::{smooth_batch, SmoothCache, SmoothingConfig, StreamingSmoother, VideoLogitStream};
use fer_cascade::synthgen::{gen_corpus, repeat_factors, resample_indices, SynthParams, DEFAULT_PRIOR};
use fer_cascade::taxonomy::{ExpressionLabel, LabelScheme, NegativeLabel, FINE_COUNT};
use fer_cascade::Execution;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn stream(k: usize, data: Vec<f64>) -> VideoLogitStream {
    VideoLogitStream::new("v", "m", k, data).expect("finite test data")
}

fn random_data(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn streamed(s: &VideoLogitStream, cfg: SmoothingConfig) -> Result<Vec<f64>, String> {
    let mut sm = StreamingSmoother::new(cfg);
    let mut out = Vec::with_capacity(s.as_flat().len());
    for f in s.frames() {
        if let Some(row) = ok(sm.push(f))? {
            out.extend(row);
        }
    }
    for row in sm.flush() {
        out.extend(row);
    }
    Ok(out)
}

fn streaming_matches_batch() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xa11ce);
    let windows = [0usize, 1, 2, 5, 32, 256, 511];
    let mut worst = 0.0f64;
    let mut values = 0usize;
    for case in 0..200 {
        let w = windows[case % windows.len()];
        let k = [4usize, 5, 8][rng.random_range(0..3)];
        let n = match case % 10 {
            0 => 10_000,
            1 => rng.random_range(1..=w.max(1)),
            _ => rng.random_range(1..=10_000),
        };
        let scale = 10f64.powi(rng.random_range(-2..=3));
        let s = stream(k, random_data(&mut rng, n * k, scale));
        let cfg = SmoothingConfig::new(w);
        let batch = smooth_batch(&s, cfg);
        let out = streamed(&s, cfg)?;
        ensure!(
            out.len() == batch.as_flat().len(),
            "case {case}: streaming emitted {} values, batch {}",
            out.len(),
            batch.as_flat().len()
        );
        worst = worst.max(max_abs_diff(&out, batch.as_flat()));
        values += out.len();
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-12, "max deviation {worst:e} exceeds 1e-12");
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}, limit 30s");
    Ok(format!("200 streams, {values} values, max deviation {worst:e}, {elapsed:.2?}"))
}

fn smoothing_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb0b);
    let mut lin_worst = 0.0f64;
    let mut shift_worst = 0.0f64;
    for case in 0..100 {
        let k = rng.random_range(1..=8);
        let n = rng.random_range(1..=2000);
        let w = rng.random_range(0..=600);

        let c = match case % 4 {
            0 => rng.random_range(-1e6..1e6),
            1 => rng.random_range(-1.0..1.0),
            2 => 0.1 * rng.random_range(-100..100) as f64,
            _ => rng.random_range(-1e-3..1e-3),
        };
        let out = smooth_batch(&stream(k, vec![c; n * k]), SmoothingConfig::new(w));
        ensure!(
            out.as_flat().iter().all(|v| *v == 2.0 * c),
            "case {case}: constant {c} with w={w} did not double exactly"
        );

        let s = stream(k, random_data(&mut rng, n * k, 50.0));
        let id = smooth_batch(&s, SmoothingConfig::new(0));
        ensure!(
            id.as_flat().iter().zip(s.as_flat()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "case {case}: w=0 is not the bitwise identity"
        );

        let y = random_data(&mut rng, n * k, 50.0);
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let combo: Vec<f64> = s.as_flat().iter().zip(&y).map(|(x, y)| a * x + b * y).collect();
        let cfg = SmoothingConfig::new(w);
        let lhs = smooth_batch(&stream(k, combo), cfg);
        let sx = smooth_batch(&s, cfg);
        let sy = smooth_batch(&stream(k, y), cfg);
        let rhs: Vec<f64> = sx.as_flat().iter().zip(sy.as_flat()).map(|(x, y)| a * x + b * y).collect();
        lin_worst = lin_worst.max(max_abs_diff(lhs.as_flat(), &rhs));

        let h = w / 2;
        let shift = rng.random_range(1..=50);
        let n2 = 2 * h + shift + rng.random_range(1..=500);
        let x = stream(k, random_data(&mut rng, n2 * k, 50.0));
        let shifted = stream(k, x.as_flat()[shift * k..].to_vec());
        let sx = smooth_batch(&x, cfg);
        let ss = smooth_batch(&shifted, cfg);
        for i in h..(n2 - shift - h) {
            shift_worst = shift_worst.max(max_abs_diff(ss.frame(i), sx.frame(i + shift)));
        }
    }
    ensure!(lin_worst <= 1e-12, "linearity deviation {lin_worst:e}");
    ensure!(shift_worst <= 1e-12, "shift deviation {shift_worst:e}");
    Ok(format!(
        "100 cases each, linearity {lin_worst:e}, interior shift {shift_worst:e}"
    ))
}

fn fusion_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf00d);
    let mut shift_worst = 0.0f64;
    let mut total_worst = 0.0f64;
    for case in 0..1000 {
        let k = rng.random_range(2..=8);
        let m = rng.random_range(1..=6);
        let scale = 10f64.powi(rng.random_range(-1..=2));
        let mut frames: Vec<LogitFrame> = (0..m)
            .map(|i| LogitFrame {
                video_id: "v".into(),
                frame_index: case,
                model_id: format!("model{i}"),
                logits: random_data(&mut rng, k, scale),
            })
            .collect();

        let c = rng.random_range(-100.0..100.0);
        let x = &frames[0].logits;
        let moved: Vec<f64> = x.iter().map(|v| v + c).collect();
        shift_worst = shift_worst.max(max_abs_diff(&ok(softmax(x))?, &ok(softmax(&moved))?));

        let fused = ok(fuse(&frames, k))?;
        let total: f64 = fused.scores.iter().sum();
        total_worst = total_worst.max((total - m as f64).abs());

        frames.shuffle(&mut rng);
        ensure!(ok(fuse(&frames, k))? == fused, "case {case}: fusion depends on model order");

        let a = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled: Vec<f64> = fused.scores.iter().map(|s| s * a).collect();
        ensure!(
            argmax(&scaled) == decide(&fused),
            "case {case}: argmax changed under scaling by {a}"
        );
    }
    ensure!(shift_worst <= 1e-12, "softmax shift deviation {shift_worst:e}");
    ensure!(total_worst <= 1e-9, "fused total deviation {total_worst:e}");
    Ok(format!(
        "1000 sets, softmax shift {shift_worst:e}, total {total_worst:e}"
    ))
}

fn cascade_matches_flat() -> Outcome {
    let scheme = LabelScheme::default();
    let levels = [0.0, 1.0, 2.0, 3.0];
    let n = levels.len().pow(FINE_COUNT as u32);
    let coarse_of: Vec<usize> = (0..FINE_COUNT)
        .map(|i| scheme.to_coarse(ExpressionLabel::new(i).unwrap()).index())
        .collect();
    let negative_fine: Vec<usize> = (0..4)
        .map(|j| scheme.from_negative(NegativeLabel::new(j).unwrap()).index())
        .collect();

    let mut coarse = Vec::with_capacity(n * 5);
    let mut negative = Vec::with_capacity(n * 4);
    let mut flat = Vec::with_capacity(n);
    for code in 0..n {
        let s: Vec<f64> = (0..FINE_COUNT)
            .map(|i| levels[(code / levels.len().pow(i as u32)) % levels.len()])
            .collect();
        let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - top).exp()).collect();
        let z: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / z).collect();
        let mut best = 0;
        for i in 1..FINE_COUNT {
            if p[i] > p[best] {
                best = i;
            }
        }
        flat.push(best);
        let mut mass = [0.0f64; 5];
        for i in 0..FINE_COUNT {
            mass[coarse_of[i]] += p[i];
        }
        coarse.extend(mass.iter().map(|m| m.ln()));
        negative.extend(negative_fine.iter().map(|&i| s[i]));
    }
    let c = ok(VideoLogitStream::new("grid", "oracle", 5, coarse))?;
    let g = ok(VideoLogitStream::new("grid", "oracle", 4, negative))?;
    let records = ok(predict_video(&[c], &[g], &CascadeConfig::with_window(0), &scheme))?;
    ensure!(records.len() == n, "expected {n} records, got {}", records.len());

    let mut agree = 0usize;
    for (i, r) in records.iter().enumerate() {
        let routed = r.decided_by == DecidedBy::NegativeNet;
        ensure!(
            routed == scheme.is_negative(r.label) && routed == r.negative_scores.is_some(),
            "frame {i}: decided_by {:?} inconsistent with label {}",
            r.decided_by,
            scheme.fine_name(r.label)
        );
        let flat_neg = scheme.is_negative(ExpressionLabel::new(flat[i]).unwrap());
        if flat_neg == routed {
            agree += 1;
            ensure!(
                r.label.index() == flat[i],
                "vector {i}: cascade chose {}, flat argmax {}",
                r.label.index(),
                flat[i]
            );
        }
    }
    Ok(format!("{n} vectors, {agree} agree on negativity, all matched"))
}

fn brute_f1(preds: &[i32], truths: &[i32]) -> (Vec<Vec<u64>>, Vec<f64>, f64) {
    let mut cm = vec![vec![0u64; FINE_COUNT]; FINE_COUNT];
    for (&p, &t) in preds.iter().zip(truths) {
        if t >= 0 {
            cm[t as usize][p as usize] += 1;
        }
    }
    let mut f1 = Vec::new();
    for c in 0..FINE_COUNT as i32 {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fn_ = 0u64;
        for (&p, &t) in preds.iter().zip(truths) {
            if t < 0 {
                continue;
            }
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let den = 2 * tp + fp + fn_;
        f1.push(if den == 0 { 0.0 } else { (2 * tp) as f64 / den as f64 });
    }
    let mut sum = 0.0;
    for v in &f1 {
        sum += v;
    }
    (cm, f1, sum / FINE_COUNT as f64)
}

fn metrics_match_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
    let k = FINE_COUNT;
    for case in 0..1000 {
        let n = rng.random_range(1..=600);
        let accuracy = rng.random_range(0.0..1.0);
        let truths: Vec<i32> = (0..n)
            .map(|_| {
                if rng.random_bool(0.1) {
                    -1
                } else {
                    rng.random_range(0..k as i32)
                }
            })
            .collect();
        let preds: Vec<i32> = truths
            .iter()
            .map(|&t| {
                if t >= 0 && rng.random_bool(accuracy) {
                    t
                } else {
                    rng.random_range(0..k as i32)
                }
            })
            .collect();
        let cm = ok(confusion(&preds, &truths, k))?;
        let report = f1_report(&cm);
        let (bcm, bf1, bmacro) = brute_f1(&preds, &truths);
        for t in 0..k {
            for p in 0..k {
                ensure!(cm.get(t, p) == bcm[t][p], "case {case}: confusion[{t}][{p}] differs");
            }
        }
        ensure!(report.per_class == bf1, "case {case}: per-class F1 differs");
        ensure!(
            report.macro_f1 == bmacro,
            "case {case}: macro-F1 {} vs oracle {bmacro}",
            report.macro_f1
        );
    }

    let truths: Vec<i32> = (0..400).map(|i| if i % 13 == 0 { -1 } else { (i % 8) as i32 }).collect();
    let perfect: Vec<i32> = truths.iter().map(|&t| t.max(0)).collect();
    let wrong: Vec<i32> = truths.iter().map(|&t| (t + 1).rem_euclid(8)).collect();
    let p = f1_report(&ok(confusion(&perfect, &truths, k))?).macro_f1;
    let w = f1_report(&ok(confusion(&wrong, &truths, k))?).macro_f1;
    ensure!(p == 1.0, "perfect predictions scored {p}");
    ensure!(w == 0.0, "all-wrong predictions scored {w}");
    Ok("1000 pairs identical to brute force, perfect 1.0, all-wrong 0.0".into())
}

struct Pinned {
    corpus: Corpus,
    scheme: LabelScheme,
}

fn pinned() -> &'static Pinned {
    static CELL: OnceLock<Pinned> = OnceLock::new();
    CELL.get_or_init(|| Pinned {
        corpus: Corpus::from_synth(
            gen_corpus(&SynthParams::default(), 20, &["m0", "m1", "m2"]).expect("valid defaults"),
        ),
        scheme: LabelScheme::default(),
    })
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn smoothing_trend() -> Outcome {
    let start = Instant::now();
    let p = pinned();
    let sel = ModelSelection {
        coarse: names(&["m0", "m1", "m2"]),
        negative: names(&["m0"]),
    };
    let cache = SmoothCache::new();
    let rows = ok(corpus::sweep_windows(
        &p.corpus,
        &sel,
        &[0, 32, 64, 128, 256, 512],
        SmoothingStage::PreFusion,
        &p.scheme,
        Execution::Parallel,
        Some(&cache),
    ))?;
    let elapsed = start.elapsed();
    let curve: Vec<String> = rows
        .iter()
        .map(|r| format!("w{}={:.4}/{:.3}", r.window, r.macro_f1, r.flip_rate))
        .collect();
    let curve = curve.join(" ");
    let base = &rows[0];
    ensure!(base.window == 0, "sweep did not start at w=0");
    ensure!(
        (0.55..=0.75).contains(&base.macro_f1),
        "w=0 macro-F1 {:.4} outside [0.55, 0.75]; {curve}",
        base.macro_f1
    );
    ensure!(
        rows[1..].iter().all(|r| r.macro_f1 > base.macro_f1),
        "some w>0 does not beat w=0; {curve}"
    );
    let best = rows
        .iter()
        .max_by(|a, b| a.macro_f1.total_cmp(&b.macro_f1))
        .expect("non-empty sweep");
    ensure!(
        best.flip_rate <= 0.7 * base.flip_rate,
        "flip rate only fell from {:.4} to {:.4}; {curve}",
        base.flip_rate,
        best.flip_rate
    );
    let last = rows.last().unwrap().window;
    ensure!(
        best.window != 0 && best.window != last,
        "maximum at boundary w={}; {curve}",
        best.window
    );
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}, limit 2 min");
    Ok(format!("best w={} [{curve}] {elapsed:.2?}", best.window))
}

fn ensemble_trend() -> Outcome {
    let p = pinned();
    let coarse_sets = vec![names(&["m0"]), names(&["m1"]), names(&["m2"]), names(&["m0", "m1", "m2"])];
    let mut report = Vec::new();
    for w in [0usize, 64] {
        let rows = ok(corpus::sweep_ensembles(
            &p.corpus,
            &coarse_sets,
            &[names(&["m0"])],
            &CascadeConfig::with_window(w),
            &p.scheme,
            Execution::Parallel,
            None,
        ))?;
        let best_single = rows[..3].iter().map(|r| r.macro_f1).fold(f64::MIN, f64::max);
        let ensemble = rows[3].macro_f1;
        ensure!(
            ensemble >= best_single,
            "w={w}: ensemble {ensemble:.4} below best single {best_single:.4}"
        );
        report.push(format!("w={w}: ensemble {ensemble:.4} vs best single {best_single:.4}"));
    }
    Ok(report.join(", "))
}

fn class_ratio(labels: &[usize]) -> f64 {
    let mut counts = [0usize; FINE_COUNT];
    for &l in labels {
        counts[l] += 1;
    }
    let present: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    *present.iter().max().unwrap() as f64 / *present.iter().min().unwrap() as f64
}

fn oversampler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1ce);
    for case in 0..500 {
        let k = rng.random_range(1..=12);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let freqs: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let t = rng.random_range(0.001..=1.0);
        let got = ok(repeat_factors(&freqs, t))?;
        let want: Vec<f64> = freqs.iter().map(|f| f64::max(1.0, (t / f).sqrt())).collect();
        ensure!(got == want, "case {case}: factors {got:?} vs closed form {want:?}");
    }

    let steep = [0.40, 0.25, 0.12, 0.08, 0.06, 0.04, 0.03, 0.02];
    let mut ratios = Vec::new();
    for (prior, seed) in [(&DEFAULT_PRIOR, 1u64), (&steep, 2), (&steep, 3)] {
        let labels: Vec<usize> = (0..10_000)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                prior
                    .iter()
                    .position(|p| {
                        acc += p;
                        u < acc
                    })
                    .unwrap_or(FINE_COUNT - 1)
            })
            .collect();
        let idx = ok(resample_indices(&labels, 0.1, seed))?;
        let again = ok(resample_indices(&labels, 0.1, seed))?;
        ensure!(idx == again, "seed {seed}: resampling is not deterministic");
        let resampled: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (before, after) = (class_ratio(&labels), class_ratio(&resampled));
        ensure!(after < before, "seed {seed}: ratio {before:.2} -> {after:.2}");
        ratios.push(format!("{before:.2}->{after:.2}"));
    }
    Ok(format!("closed form on 500 vectors, max/min ratio {}", ratios.join(", ")))
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xe1e);
    let scheme = LabelScheme::default();
    let dir = ok(tempfile::tempdir())?;
    let specials = [0.0, -0.0, 1e-310, -5e-324, 1e300, -1.7976931348623157e308, 0.1, 1.0 / 3.0];
    for case in 0..100 {
        let n = rng.random_range(0..=300);
        let startf = rng.random_range(0..10_000);
        let records: Vec<PredictionRecord> = (0..n)
            .map(|i| PredictionRecord {
                video_id: "v".into(),
                frame_index: startf + i,
                label: ExpressionLabel::new(rng.random_range(0..FINE_COUNT)).unwrap(),
                decided_by: DecidedBy::CoarseDirect,
                coarse_scores: Vec::new(),
                negative_scores: None,
            })
            .collect();
        let first = dir.path().join(format!("p{case}_a.txt"));
        let second = dir.path().join(format!("p{case}_b.txt"));
        ok(dataio::write_predictions(&first, &records, &scheme))?;
        let labels = ok(dataio::read_predictions(&first, &scheme))?;
        let rebuilt: Vec<PredictionRecord> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| PredictionRecord {
                frame_index: startf + i,
                label: ExpressionLabel::new(l as usize).unwrap(),
                ..records[i].clone()
            })
            .collect();
        ok(dataio::write_predictions(&second, &rebuilt, &scheme))?;
        ensure!(
            ok(fs::read(&first))? == ok(fs::read(&second))?,
            "case {case}: prediction file changed on rewrite"
        );

        let stage = [Stage::Coarse, Stage::Negative, Stage::Fine][case % 3];
        let k = stage.class_count();
        let frames = rng.random_range(1..=200);
        let data: Vec<f64> = (0..frames * k)
            .map(|_| {
                if rng.random_bool(0.05) {
                    specials[rng.random_range(0..specials.len())]
                } else {
                    rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-8..=8))
                }
            })
            .collect();
        let s = ok(VideoLogitStream::new(format!("vid{case}"), "net", k, data))?;
        let first = dir.path().join(dataio::logit_file_name(&s.video_id, "net", stage));
        let second = dir.path().join(format!("l{case}_b.cspl"));
        ok(dataio::write_logits(&first, &s, stage))?;
        let back = ok(dataio::read_logits(&first))?;
        ensure!(
            back.as_flat().iter().zip(s.as_flat()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "case {case}: logit values changed on read"
        );
        ok(dataio::write_logits(&second, &back, stage))?;
        ensure!(
            ok(fs::read(&first))? == ok(fs::read(&second))?,
            "case {case}: logit file changed on rewrite"
        );
    }
    Ok("100 prediction and 100 logit files byte-identical".into())
}

fn fixture(name: &str) -> Result<String, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn anchor(key: &str) -> Result<String, String> {
    fixture("anchors.txt")?
        .lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim().to_string())
        .ok_or_else(|| format!("anchor {key} not found"))
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fer-cascade"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "`{}` exited {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn cli_end_to_end() -> Outcome {
    let want_f1 = anchor("cli_macro_f1")?;
    let want_csv = fixture("cli_eval.csv")?;
    let mut seen = Vec::new();
    for (run, jobs) in [(0, "1"), (1, "8"), (2, "1")] {
        let dir = ok(tempfile::tempdir())?;
        let root = dir.path();
        let p = |s: &str| root.join(s).to_string_lossy().into_owned();
        cli(&["gen-synth", "--out", &p("data"), "--seed", "7", "--jobs", jobs])?;
        cli(&[
            "predict",
            "--config",
            &p("data/pipeline.cfg"),
            "--logits",
            &p("data/logits"),
            "--out",
            &p("pred"),
            "--jobs",
            jobs,
        ])?;
        let stdout = cli(&[
            "eval",
            "--predictions",
            &p("pred"),
            "--annotations",
            &p("data/annotations"),
            "--out",
            &p("eval.csv"),
        ])?;
        let f1 = stdout
            .split_whitespace()
            .find_map(|t| t.strip_prefix("macro_f1="))
            .ok_or_else(|| format!("no macro_f1 in `{stdout}`"))?
            .to_string();
        ensure!(f1 == want_f1, "run {run} (--jobs {jobs}): macro_f1={f1}, fixture {want_f1}");
        let csv = ok(fs::read_to_string(p("eval.csv")))?;
        ensure!(csv == want_csv, "run {run} (--jobs {jobs}): eval CSV differs from fixture");
        let mut preds = Vec::new();
        let mut files: Vec<_> = ok(fs::read_dir(p("pred")))?.map(|e| e.unwrap().path()).collect();
        files.sort();
        for f in files {
            preds.push(ok(fs::read(f))?);
        }
        seen.push(preds);
    }
    ensure!(
        seen.windows(2).all(|w| w[0] == w[1]),
        "prediction files differ between runs"
    );
    Ok(format!("macro_f1={want_f1} on 3 runs, --jobs 1 and 8 identical"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("streaming smoother equals batch", streaming_matches_batch),
        ("smoothing update invariants", smoothing_invariants),
        ("fusion invariants", fusion_invariants),
        ("cascade agrees with flat argmax", cascade_matches_flat),
        ("metrics equal brute force", metrics_match_oracle),
        ("smoothing window trend", smoothing_trend),
        ("ensemble trend", ensemble_trend),
        ("repeat-factor oversampler", oversampler),
        ("file format round trips", round_trips),
        ("cli gen-synth/predict/eval fixture", cli_end_to_end),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail} ({secs:.2}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {why} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
