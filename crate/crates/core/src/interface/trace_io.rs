//! Line-delimited JSON trace files.
//!
//! A trace file holds the header on its first line and one step record per
//! following line. Belief marginals and unit activations live in optional
//! sidecar files next to it (`<id>.belief.jsonl`, `<id>.act.jsonl`), one
//! row per line keyed by episode and step.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::environment::runner::{ActivationRow, BeliefRow, EpisodeRun};
use crate::environment::{EpisodeTrace, StepRecord, TraceHeader, TraceSummary, TRACE_FORMAT_VERSION};

pub const TRACE_EXT: &str = "jsonl";
pub const BELIEF_SUFFIX: &str = ".belief.jsonl";
pub const ACTIVATION_SUFFIX: &str = ".act.jsonl";

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("trace file is empty")]
    Empty,
    #[error("unsupported trace format version {0}")]
    Version(u32),
    #[error("step {step} belongs to trial {trial}, beyond the episode's {trials} trials")]
    TrialOutOfRange { step: usize, trial: u32, trials: u32 },
    #[error("invalid trace id {0:?}")]
    BadId(String),
}

fn write_line<W: Write, T: Serialize>(w: &mut W, v: &T) -> Result<(), TraceIoError> {
    serde_json::to_writer(&mut *w, v).map_err(|e| TraceIoError::Json { line: 0, source: e })?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_lines<R: BufRead, T: DeserializeOwned>(r: R, skip: usize) -> Result<Vec<T>, TraceIoError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate().skip(skip) {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TraceIoError::Json { line: i + 1, source: e })?);
    }
    Ok(out)
}

pub fn write_trace<W: Write>(w: &mut W, trace: &EpisodeTrace) -> Result<(), TraceIoError> {
    write_line(w, &trace.header)?;
    for s in &trace.steps {
        write_line(w, s)?;
    }
    Ok(())
}

/// Parses a trace; the summary is rebuilt from the step rewards.
pub fn read_trace<R: BufRead>(r: R) -> Result<EpisodeTrace, TraceIoError> {
    let mut lines = r.lines();
    let first = lines.next().ok_or(TraceIoError::Empty)??;
    let header: TraceHeader =
        serde_json::from_str(&first).map_err(|e| TraceIoError::Json { line: 1, source: e })?;
    if header.format_version != TRACE_FORMAT_VERSION {
        return Err(TraceIoError::Version(header.format_version));
    }
    let mut steps: Vec<StepRecord> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        steps.push(serde_json::from_str(&line).map_err(|e| TraceIoError::Json { line: i + 2, source: e })?);
    }
    let trials = header.env.trials_per_episode;
    let mut trial_totals = vec![0; trials as usize];
    for (i, s) in steps.iter().enumerate() {
        let slot = trial_totals
            .get_mut(s.trial as usize)
            .ok_or(TraceIoError::TrialOutOfRange { step: i, trial: s.trial, trials })?;
        *slot += s.env_reward;
    }
    let score = trial_totals.iter().sum();
    Ok(EpisodeTrace { header, steps, summary: TraceSummary { trial_totals, score } })
}

pub fn trace_to_string(trace: &EpisodeTrace) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, trace).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn trace_from_str(s: &str) -> Result<EpisodeTrace, TraceIoError> {
    read_trace(s.as_bytes())
}

pub fn write_rows<W: Write, T: Serialize>(w: &mut W, rows: &[T]) -> Result<(), TraceIoError> {
    for r in rows {
        write_line(w, r)?;
    }
    Ok(())
}

pub fn read_rows<R: BufRead, T: DeserializeOwned>(r: R) -> Result<Vec<T>, TraceIoError> {
    read_lines(r, 0)
}

/// Ids are file stems: ASCII letters, digits, `-` and `_`.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn checked(id: &str) -> Result<&str, TraceIoError> {
    if valid_id(id) {
        Ok(id)
    } else {
        Err(TraceIoError::BadId(id.to_string()))
    }
}

pub fn trace_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{TRACE_EXT}"))
}

pub fn belief_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{BELIEF_SUFFIX}"))
}

pub fn activation_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{ACTIVATION_SUFFIX}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, TraceIoError> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes the trace and whichever sidecars have rows.
pub fn save_run(dir: &Path, id: &str, run: &EpisodeRun) -> Result<PathBuf, TraceIoError> {
    let id = checked(id)?;
    fs::create_dir_all(dir)?;
    let path = trace_path(dir, id);
    let mut w = create(&path)?;
    write_trace(&mut w, &run.trace)?;
    w.flush()?;
    if !run.belief.is_empty() {
        let mut w = create(&belief_path(dir, id))?;
        write_rows(&mut w, &run.belief)?;
        w.flush()?;
    }
    if !run.activations.is_empty() {
        let mut w = create(&activation_path(dir, id))?;
        write_rows(&mut w, &run.activations)?;
        w.flush()?;
    }
    Ok(path)
}

pub fn load_trace(path: &Path) -> Result<EpisodeTrace, TraceIoError> {
    read_trace(BufReader::new(File::open(path)?))
}

fn load_sidecar<T: DeserializeOwned>(path: &Path) -> Result<Option<Vec<T>>, TraceIoError> {
    match File::open(path) {
        Ok(f) => Ok(Some(read_rows(BufReader::new(f))?)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// A trace together with its sidecars, when present.
#[derive(Debug, Clone)]
pub struct TraceBundle {
    pub id: String,
    pub trace: EpisodeTrace,
    pub belief: Option<Vec<BeliefRow>>,
    pub activations: Option<Vec<ActivationRow>>,
}

pub fn load_bundle(dir: &Path, id: &str) -> Result<TraceBundle, TraceIoError> {
    let id = checked(id)?;
    Ok(TraceBundle {
        id: id.to_string(),
        trace: load_trace(&trace_path(dir, id))?,
        belief: load_sidecar(&belief_path(dir, id))?,
        activations: load_sidecar(&activation_path(dir, id))?,
    })
}

/// Ids of the trace files in `dir`, sorted; sidecars are skipped.
pub fn list_trace_ids(dir: &Path) -> Result<Vec<String>, TraceIoError> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let Some(name) = name.to_str() else { continue };
        if name.ends_with(BELIEF_SUFFIX) || name.ends_with(ACTIVATION_SUFFIX) {
            continue;
        }
        if let Some(stem) = name.strip_suffix(&format!(".{TRACE_EXT}")) {
            if valid_id(stem) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Every trace in `dir`, in id order.
pub fn load_dir(dir: &Path) -> Result<Vec<TraceBundle>, TraceIoError> {
    list_trace_ids(dir)?.iter().map(|id| load_bundle(dir, id)).collect()
}
