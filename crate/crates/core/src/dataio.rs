//! On-disk formats.
//!
//! Logit files (`CSPL1`):
//!
//! ```text
//! CSPL1,<video_id>,<model_id>,<stage>,<k>,<n>
//! <k comma-separated reals>        # n rows, one per frame
//! ```
//!
//! Reals are written with the shortest representation that parses back to
//! the same bits. Annotation and prediction files share one layout: a header
//! line of comma-separated fine class names, then one integer label per line
//! (`-1` marks an unannotated frame and is only valid in annotations).
//!
//! All files are UTF-8 with LF line endings.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use crate::cascade::{PipelineConfig, PredictionRecord, SmoothingStage};
use crate::error::{Error, Result};
use crate::kv;
use crate::smoothing::VideoLogitStream;
use crate::taxonomy::{self, LabelScheme};

pub const LOGIT_MAGIC: &str = "CSPL1";
pub const LOGIT_EXTENSION: &str = "cspl";

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Coarse,
    Negative,
    Fine,
}

impl Stage {
    pub fn class_count(self) -> usize {
        match self {
            Stage::Coarse => taxonomy::COARSE_COUNT,
            Stage::Negative => taxonomy::NEGATIVE_COUNT,
            Stage::Fine => taxonomy::FINE_COUNT,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Coarse => "coarse",
            Stage::Negative => "negative",
            Stage::Fine => "fine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "coarse" => Some(Stage::Coarse),
            "negative" => Some(Stage::Negative),
            "fine" => Some(Stage::Fine),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogitFileHeader {
    pub video_id: String,
    pub model_id: String,
    pub stage: Stage,
    pub k: usize,
    pub n: usize,
}

/// Conventional file name for a logit file: `<video>__<model>__<stage>.cspl`.
pub fn logit_file_name(video_id: &str, model_id: &str, stage: Stage) -> String {
    format!("{video_id}__{model_id}__{stage}.{LOGIT_EXTENSION}")
}

fn check_identifier(what: &str, id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', '\n', '\r']) || id.trim() != id {
        return Err(Error::InvalidInput(format!(
            "{what} `{id}` must be non-empty without commas, line breaks or surrounding spaces"
        )));
    }
    Ok(())
}

pub fn format_logits(stream: &VideoLogitStream, stage: Stage) -> Result<String> {
    check_identifier("video id", &stream.video_id)?;
    check_identifier("model id", &stream.model_id)?;
    if stream.k() != stage.class_count() {
        return Err(Error::Shape(format!(
            "{stage} stage expects {} classes, stream has {}",
            stage.class_count(),
            stream.k()
        )));
    }
    let mut out = String::with_capacity(32 + stream.as_flat().len() * 20);
    let _ = writeln!(
        out,
        "{LOGIT_MAGIC},{},{},{},{},{}",
        stream.video_id,
        stream.model_id,
        stage,
        stream.k(),
        stream.len()
    );
    for frame in stream.frames() {
        for (c, v) in frame.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_logits(path: impl AsRef<Path>, stream: &VideoLogitStream, stage: Stage) -> Result<()> {
    write_atomic(path.as_ref(), format_logits(stream, stage)?.as_bytes())
}

fn parse_logit_header(path: &Path, line: &str) -> Result<LogitFileHeader> {
    let err = |msg: String| Error::parse(path, 1, msg);
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.first() != Some(&LOGIT_MAGIC) {
        return Err(err(format!("bad magic, expected `{LOGIT_MAGIC}`")));
    }
    if fields.len() != 6 {
        return Err(err(format!("header has {} fields, expected 6", fields.len())));
    }
    let stage = Stage::parse(fields[3]).ok_or_else(|| err(format!("unknown stage `{}`", fields[3])))?;
    let k: usize = fields[4].parse().map_err(|_| err(format!("bad class count `{}`", fields[4])))?;
    let n: usize = fields[5].parse().map_err(|_| err(format!("bad frame count `{}`", fields[5])))?;
    if k != stage.class_count() {
        return Err(err(format!(
            "k = {k} does not match stage {stage} ({} classes)",
            stage.class_count()
        )));
    }
    if fields[1].is_empty() || fields[2].is_empty() {
        return Err(err("empty video or model id".to_string()));
    }
    Ok(LogitFileHeader {
        video_id: fields[1].to_string(),
        model_id: fields[2].to_string(),
        stage,
        k,
        n,
    })
}

/// Reads only the header line of a logit file.
pub fn read_logit_header(path: impl AsRef<Path>) -> Result<LogitFileHeader> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    BufReader::new(file)
        .read_line(&mut line)
        .map_err(|e| Error::io(path, e))?;
    parse_logit_header(path, strip_bom_check(path, &line)?.trim_end_matches('\n'))
}

pub fn parse_logits(path: &Path, text: &str) -> Result<(LogitFileHeader, VideoLogitStream)> {
    let text = strip_bom_check(path, text)?;
    let mut lines = text.lines();
    let header = parse_logit_header(path, lines.next().unwrap_or(""))?;
    let mut data = Vec::with_capacity(header.n * header.k);
    let mut rows = 0usize;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            return Err(Error::parse(path, lineno, "blank line"));
        }
        if rows == header.n {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {} rows, found more", header.n),
            ));
        }
        let before = data.len();
        for (c, field) in line.split(',').enumerate() {
            if c >= header.k {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("row has more than {} values", header.k),
                ));
            }
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad number `{field}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, lineno, format!("non-finite value `{field}`")));
            }
            data.push(v);
        }
        if data.len() - before != header.k {
            return Err(Error::parse(
                path,
                lineno,
                format!("row has {} values, expected {}", data.len() - before, header.k),
            ));
        }
        rows += 1;
    }
    if rows != header.n {
        return Err(Error::parse(
            path,
            rows + 2,
            format!("expected {} rows, found {rows}", header.n),
        ));
    }
    let stream = VideoLogitStream::new(&header.video_id, &header.model_id, header.k, data)
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    Ok((header, stream))
}

/// Reads a logit file along with its header.
pub fn read_logit_file(path: impl AsRef<Path>) -> Result<(LogitFileHeader, VideoLogitStream)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_logits(path, &text)
}

pub fn read_logits(path: impl AsRef<Path>) -> Result<VideoLogitStream> {
    read_logit_file(path).map(|(_, s)| s)
}

fn strip_bom_check<'a>(path: &Path, text: &'a str) -> Result<&'a str> {
    if text.starts_with('\u{feff}') {
        return Err(Error::parse(path, 1, "byte order mark not allowed"));
    }
    Ok(text)
}

fn header_line(scheme: &LabelScheme) -> String {
    scheme.fine_names().join(",")
}

fn parse_label_file(
    path: &Path,
    text: &str,
    scheme: &LabelScheme,
    allow_invalid: bool,
) -> Result<Vec<i32>> {
    let text = strip_bom_check(path, text)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
    let matches = header.len() == scheme.fine_names().len()
        && header
            .iter()
            .zip(scheme.fine_names())
            .all(|(h, n)| h.eq_ignore_ascii_case(n));
    if !matches {
        return Err(Error::parse(
            path,
            1,
            format!(
                "header mismatch: expected `{}`, found `{}`",
                header_line(scheme),
                header.join(",")
            ),
        ));
    }
    let max = scheme.fine_names().len() as i32 - 1;
    let min = if allow_invalid { -1 } else { 0 };
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let v: i32 = line
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad label `{line}`")))?;
        if v < min || v > max {
            return Err(Error::parse(
                path,
                lineno,
                format!("label {v} out of range [{min}, {max}]"),
            ));
        }
        labels.push(v);
    }
    Ok(labels)
}

/// Reads an annotation file; `-1` marks unannotated frames.
pub fn read_annotations(path: impl AsRef<Path>, scheme: &LabelScheme) -> Result<Vec<i32>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_label_file(path, &text, scheme, true)
}

/// Reads a prediction file written by [`write_predictions`].
pub fn read_predictions(path: impl AsRef<Path>, scheme: &LabelScheme) -> Result<Vec<i32>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_label_file(path, &text, scheme, false)
}

pub fn format_labels(labels: &[i32], scheme: &LabelScheme) -> String {
    let mut out = header_line(scheme);
    out.push('\n');
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    out
}

pub fn write_annotations(path: impl AsRef<Path>, labels: &[i32], scheme: &LabelScheme) -> Result<()> {
    write_atomic(path.as_ref(), format_labels(labels, scheme).as_bytes())
}

pub fn format_predictions(records: &[PredictionRecord], scheme: &LabelScheme) -> Result<String> {
    if let Some(first) = records.first() {
        for (offset, r) in records.iter().enumerate() {
            let expected = first.frame_index + offset;
            if r.frame_index != expected {
                return Err(Error::Contiguity {
                    expected,
                    found: r.frame_index,
                });
            }
        }
    }
    let labels: Vec<i32> = records.iter().map(|r| r.label.index() as i32).collect();
    Ok(format_labels(&labels, scheme))
}

pub fn write_predictions(
    path: impl AsRef<Path>,
    records: &[PredictionRecord],
    scheme: &LabelScheme,
) -> Result<()> {
    write_atomic(path.as_ref(), format_predictions(records, scheme)?.as_bytes())
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Parses a pipeline config document. Relative `scheme` paths resolve
/// against `origin`'s directory.
pub fn parse_pipeline_config(text: &str, origin: &Path) -> Result<PipelineConfig> {
    let entries = kv::parse(text).map_err(|(line, msg)| Error::parse(origin, line, msg))?;
    let mut cfg = PipelineConfig::default();
    for e in entries {
        let bad = |msg: String| Error::parse(origin, e.line, msg);
        let window = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| bad(format!("`{}` must be a non-negative integer, got `{v}`", e.key)))
        };
        match e.key.as_str() {
            "coarse_models" => cfg.coarse_models = kv::list(&e.value),
            "negative_models" => cfg.negative_models = kv::list(&e.value),
            "coarse_window" => cfg.coarse_window = window(&e.value)?,
            "negative_window" => cfg.negative_window = window(&e.value)?,
            "smoothing_stage" => {
                cfg.smoothing_stage = SmoothingStage::parse(kv::unquote(&e.value)).ok_or_else(|| {
                    bad(format!(
                        "smoothing_stage must be pre_fusion or post_fusion, got `{}`",
                        e.value
                    ))
                })?
            }
            "scheme" => {
                let p = PathBuf::from(kv::unquote(&e.value));
                cfg.scheme = Some(if p.is_relative() {
                    origin.parent().unwrap_or(Path::new(".")).join(p)
                } else {
                    p
                });
            }
            other => return Err(bad(format!("unknown key `{other}`"))),
        }
    }
    Ok(cfg)
}

pub fn read_pipeline_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pipeline_config(&text, path)
}

pub fn format_pipeline_config(cfg: &PipelineConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "coarse_models = [{}]", cfg.coarse_models.join(", "));
    let _ = writeln!(out, "negative_models = [{}]", cfg.negative_models.join(", "));
    let _ = writeln!(out, "coarse_window = {}", cfg.coarse_window);
    let _ = writeln!(out, "negative_window = {}", cfg.negative_window);
    let _ = writeln!(out, "smoothing_stage = {}", cfg.smoothing_stage.as_str());
    if let Some(s) = &cfg.scheme {
        let _ = writeln!(out, "scheme = {}", s.display());
    }
    out
}

/// Loads a label scheme file; `None` yields the canonical scheme.
pub fn read_scheme(path: Option<&Path>) -> Result<LabelScheme> {
    match path {
        None => Ok(LabelScheme::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            taxonomy::load_scheme(&text).map_err(|e| Error::parse(p, 1, e.to_string()))
        }
    }
}
