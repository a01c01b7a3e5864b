//! Example-pair corpora: JSONL persistence, validation and leave-one-out views.
//!
//! A corpus file holds one [`ScoredExample`] per line. Manifest-level metadata
//! (annotation model, creation time) lives in a sidecar `<file>.meta.json` so the
//! record file stays one-record-per-line.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of difficulty samples stored per scored example.
pub const SCORE_SAMPLES: usize = 5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("unknown example id {0:?}")]
    UnknownId(String),
    #[error("invalid example {id:?}: {message}")]
    Invalid { id: String, message: String },
}

/// One natural-language utterance paired with its equipment code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub id: String,
    pub nl: String,
    pub code: String,
}

impl ExamplePair {
    pub fn new(id: impl Into<String>, nl: impl Into<String>, code: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            nl: nl.into(),
            code: code.into(),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: &str| CorpusError::Invalid {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(invalid("id is empty"));
        }
        if self.nl.trim().is_empty() {
            return Err(invalid("nl is empty"));
        }
        if self.code.trim().is_empty() {
            return Err(invalid("code is empty"));
        }
        Ok(())
    }
}

/// The motivating utterance/answer pair used as seed data and in tests.
pub fn motivating_pair() -> ExamplePair {
    ExamplePair::new(
        "flash-cmd-85",
        "Write an ALPG pattern program code that performs the 85h Command - Address 5cycle - Data in.",
        "JSR G_LF001_CMDI               CE0  TP<#85       TS2\n\
         JSR G_LF001_ADD5_D1_D2          CE0               TS1\n\
         STPS  TS1",
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Easy,
    Medium,
    Hard,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Easy, Band::Medium, Band::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Easy => "easy",
            Band::Medium => "medium",
            Band::Hard => "hard",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Band {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Band::Easy),
            "medium" => Ok(Band::Medium),
            "hard" => Ok(Band::Hard),
            other => Err(format!("unknown band {other:?}")),
        }
    }
}

/// An example pair together with its (possibly absent) difficulty annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    #[serde(flatten)]
    pub pair: ExamplePair,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<Band>,
}

impl ScoredExample {
    pub fn unscored(pair: ExamplePair) -> Self {
        Self {
            pair,
            scores: Vec::new(),
            mean_score: None,
            band: None,
        }
    }

    /// Builds a scored example whose mean is the arithmetic mean of `scores`.
    pub fn with_scores(pair: ExamplePair, scores: Vec<f64>) -> Self {
        let mean = mean(&scores);
        Self {
            pair,
            scores,
            mean_score: mean,
            band: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.pair.id
    }

    pub fn is_scored(&self) -> bool {
        self.mean_score.is_some()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        self.pair.validate()?;
        let invalid = |message: String| CorpusError::Invalid {
            id: self.pair.id.clone(),
            message,
        };
        if !self.scores.is_empty() && self.scores.len() != SCORE_SAMPLES {
            return Err(invalid(format!(
                "expected {SCORE_SAMPLES} scores, found {}",
                self.scores.len()
            )));
        }
        if let Some(bad) = self.scores.iter().find(|s| !in_score_range(**s)) {
            return Err(invalid(format!("score {bad} outside [0, 100]")));
        }
        if let Some(m) = self.mean_score {
            if !in_score_range(m) {
                return Err(invalid(format!("mean_score {m} outside [0, 100]")));
            }
            if let Some(expected) = mean(&self.scores) {
                if (expected - m).abs() > 1e-9 {
                    return Err(invalid(format!(
                        "mean_score {m} does not match mean of scores {expected}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn in_score_range(v: f64) -> bool {
    v.is_finite() && (0.0..=100.0).contains(&v)
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ManifestMeta {
    #[serde(default)]
    annotation_model: String,
    #[serde(default)]
    created_at: Option<DateTime<Utc>>,
}

/// An ordered, id-unique collection of examples. The list order is canonical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub examples: Vec<ScoredExample>,
    pub annotation_model: String,
    pub created_at: Option<DateTime<Utc>>,
}

impl CorpusManifest {
    pub fn new(examples: Vec<ScoredExample>) -> Result<Self, CorpusError> {
        let manifest = Self {
            examples,
            annotation_model: String::new(),
            created_at: None,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = ExamplePair>) -> Result<Self, CorpusError> {
        Self::new(pairs.into_iter().map(ScoredExample::unscored).collect())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ScoredExample> {
        self.examples.iter().find(|e| e.pair.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.examples.iter().position(|e| e.pair.id == id)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for example in &self.examples {
            example.validate()?;
            if !seen.insert(example.pair.id.as_str()) {
                return Err(CorpusError::DuplicateId(example.pair.id.clone()));
            }
        }
        Ok(())
    }

    /// Returns the corpus without `held_out_id`, preserving order.
    pub fn leave_one_out(&self, held_out_id: &str) -> Result<CorpusManifest, CorpusError> {
        if self.position(held_out_id).is_none() {
            return Err(CorpusError::UnknownId(held_out_id.to_string()));
        }
        Ok(CorpusManifest {
            examples: self
                .examples
                .iter()
                .filter(|e| e.pair.id != held_out_id)
                .cloned()
                .collect(),
            annotation_model: self.annotation_model.clone(),
            created_at: self.created_at,
        })
    }

    pub fn all_scored(&self) -> bool {
        self.examples.iter().all(ScoredExample::is_scored)
    }

    pub fn all_banded(&self) -> bool {
        self.examples.iter().all(|e| e.band.is_some())
    }

    pub fn band_sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for e in &self.examples {
            if let Some(band) = e.band {
                sizes[band as usize] += 1;
            }
        }
        sizes
    }
}

/// Path of the metadata sidecar for a corpus file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_corpus(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut example: ScoredExample =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        if example.mean_score.is_none() {
            example.mean_score = mean(&example.scores);
        }
        example.validate().map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(example.pair.id.clone()) {
            return Err(CorpusError::DuplicateId(example.pair.id));
        }
        examples.push(example);
    }

    let meta_file = meta_path(path);
    let meta = if meta_file.exists() {
        let text = fs::read_to_string(&meta_file).map_err(io_err(&meta_file))?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Malformed {
            line: 1,
            message: format!("{}: {e}", meta_file.display()),
        })?
    } else {
        ManifestMeta::default()
    };

    Ok(CorpusManifest {
        examples,
        annotation_model: meta.annotation_model,
        created_at: meta.created_at,
    })
}

pub fn save_corpus(manifest: &CorpusManifest, path: &Path) -> Result<(), CorpusError> {
    manifest.validate()?;
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for example in &manifest.examples {
        let line = serde_json::to_string(example).expect("example serializes");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))?;

    let meta = ManifestMeta {
        annotation_model: manifest.annotation_model.clone(),
        created_at: manifest.created_at,
    };
    let meta_file = meta_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&meta_file, text + "\n").map_err(io_err(&meta_file))?;
    Ok(())
}
