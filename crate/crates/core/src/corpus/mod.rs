//! Synthetic buffer-overrun programs with verified ground-truth labels.
//!
//! Every sample is a straight-line C-style function split into a *story*
//! (declarations and allocations) and a *query* (the buffer access whose
//! safety is the label). Four cumulative difficulty levels control which
//! constructs the generator may draw on:
//!
//! | construct                      | L1 | L2 | L3 | L4 |
//! |--------------------------------|----|----|----|----|
//! | direct index access            | x  | x  | x  | x  |
//! | access by strcpy / memcpy      |    | x  | x  | x  |
//! | allocation sized by an int var |    |    | x  | x  |
//! | reallocation of that int var   |    |    |    | x  |
//!
//! Labels come from the generator's bookkeeping and are independently
//! re-derived by [`oracle_label`], a tiny interpreter that actually walks
//! the lines. The two must agree on every sample; a mismatch means the
//! generator and the oracle have drifted apart.

mod generator;
mod oracle;
mod scan;

pub use generator::{generate_corpus, generate_sample, sample_rng};
pub use oracle::{oracle_label, OracleError};
pub use scan::{min_level, scan_constructs, ConstructScan};

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Difficulty tier of a generated program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
    L4,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::L1, Level::L2, Level::L3, Level::L4];

    pub fn as_u8(self) -> u8 {
        match self {
            Level::L1 => 1,
            Level::L2 => 2,
            Level::L3 => 3,
            Level::L4 => 4,
        }
    }
}

impl TryFrom<u8> for Level {
    type Error = CorpusError;

    fn try_from(v: u8) -> Result<Self, CorpusError> {
        match v {
            1 => Ok(Level::L1),
            2 => Ok(Level::L2),
            3 => Ok(Level::L3),
            4 => Ok(Level::L4),
            other => Err(CorpusError::InvalidLevel(other)),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "level {}", self.as_u8())
    }
}

/// Ground-truth classification of the query access.
///
/// Serialized as `0` (unsafe) / `1` (safe) in corpus files, matching the
/// model head, which scores towards 0 for unsafe and 1 for safe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Unsafe,
    Safe,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Unsafe => 0.0,
            Label::Safe => 1.0,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Unsafe => 0,
            Label::Safe => 1,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Label::Unsafe),
            1 => Ok(Label::Safe),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Unsafe => write!(f, "unsafe"),
            Label::Safe => write!(f, "safe"),
        }
    }
}

/// How the query line touches the destination buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessForm {
    Direct,
    Strcpy,
    Memcpy,
}

impl fmt::Display for AccessForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccessForm::Direct => write!(f, "direct"),
            AccessForm::Strcpy => write!(f, "strcpy"),
            AccessForm::Memcpy => write!(f, "memcpy"),
        }
    }
}

/// Generator settings for one corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub level: Level,
    pub num_samples: usize,
    pub seed: u64,
    /// Entity ids are drawn from `0..=max_entities`.
    pub max_entities: usize,
    /// Upper bound on dummy variables per sample.
    pub max_dummy_vars: usize,
    /// Inclusive range of integer literals used for sizes, indices and values.
    pub int_range: (i64, i64),
    /// Target fraction of safe samples.
    pub safe_ratio: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            level: Level::L4,
            num_samples: 1000,
            seed: 0,
            max_entities: 10,
            max_dummy_vars: 4,
            int_range: (1, 100),
            safe_ratio: 0.5,
        }
    }
}

impl GenConfig {
    pub fn with_level(level: Level) -> Self {
        GenConfig {
            level,
            ..GenConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let (lo, hi) = self.int_range;
        if lo < 1 {
            return Err(CorpusError::InvalidConfig(format!(
                "int_range lower bound must be >= 1, got {lo}"
            )));
        }
        if hi < lo + 1 {
            return Err(CorpusError::InvalidConfig(format!(
                "int_range must span at least two values, got [{lo},{hi}]"
            )));
        }
        if self.max_dummy_vars < 2 {
            return Err(CorpusError::InvalidConfig(
                "max_dummy_vars must be >= 2 to reach the minimum program length".to_string(),
            ));
        }
        if self.max_dummy_vars >= self.max_entities {
            return Err(CorpusError::InvalidConfig(format!(
                "max_dummy_vars ({}) must be < max_entities ({})",
                self.max_dummy_vars, self.max_entities
            )));
        }
        // Worst case a sample needs three protagonist variables plus all
        // dummies, each with a distinct entity id from 0..=max_entities.
        if self.max_dummy_vars + 3 > self.max_entities + 1 {
            return Err(CorpusError::InvalidConfig(format!(
                "max_entities ({}) leaves no room for {} dummies plus protagonist variables",
                self.max_entities, self.max_dummy_vars
            )));
        }
        if !(self.safe_ratio > 0.0 && self.safe_ratio < 1.0) {
            return Err(CorpusError::InvalidConfig(format!(
                "safe_ratio must lie in (0,1), got {}",
                self.safe_ratio
            )));
        }
        if self.num_samples == 0 {
            return Err(CorpusError::InvalidConfig(
                "num_samples must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Generation bookkeeping kept alongside each sample.
///
/// The oracle never reads this; tests use it to cross-check labels and
/// construct usage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMeta {
    pub level: Level,
    pub dest_size: i64,
    pub access_size: i64,
    pub dest_entity: usize,
    pub access_form: AccessForm,
    pub used_indirect_alloc: bool,
    pub used_realloc: bool,
}

/// One generated program: story lines, query line, label, metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProgramSample {
    pub story: Vec<String>,
    pub query: String,
    pub label: Label,
    pub meta: SampleMeta,
}

impl ProgramSample {
    /// Story plus query.
    pub fn total_lines(&self) -> usize {
        self.story.len() + 1
    }
}

/// Per-corpus summary printed by the CLI and recorded in run provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n: usize,
    pub safe: usize,
    pub unsafe_: usize,
    pub min_lines: usize,
    pub max_lines: usize,
    pub mean_lines: f64,
}

pub fn corpus_stats(samples: &[ProgramSample]) -> CorpusStats {
    let n = samples.len();
    let safe = samples.iter().filter(|s| s.label == Label::Safe).count();
    let lines: Vec<usize> = samples.iter().map(|s| s.total_lines()).collect();
    CorpusStats {
        n,
        safe,
        unsafe_: n - safe,
        min_lines: lines.iter().copied().min().unwrap_or(0),
        max_lines: lines.iter().copied().max().unwrap_or(0),
        mean_lines: if n == 0 {
            0.0
        } else {
            lines.iter().sum::<usize>() as f64 / n as f64
        },
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("invalid level {0}, expected 1-4")]
    InvalidLevel(u8),
    #[error("corpus I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus record {line} is not valid JSON: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
}

/// Writes one JSON record per line: `{"story": [...], "query": "...",
/// "label": 0|1, "meta": {...}}`.
pub fn write_corpus(path: &Path, samples: &[ProgramSample]) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    for sample in samples {
        serde_json::to_writer(&mut out, sample).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<ProgramSample>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(&line).map_err(|source| CorpusError::Malformed {
            line: idx + 1,
            source,
        })?;
        samples.push(sample);
    }
    Ok(samples)
}
