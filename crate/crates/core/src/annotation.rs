//! The annotated style dictionary.
//!
//! Each entry pairs a small integer key with a free-form style label and the
//! identifier of the reference utterance it describes. Keys and reference ids
//! are both unique, so a key locates exactly one reference.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed dictionary at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dictionary has no entries")]
    Empty,
    #[error("entry #{position}: index must be >= 1")]
    ZeroIndex { position: usize },
    #[error("entry #{position}: duplicate index {index}")]
    DuplicateIndex { index: u32, position: usize },
    #[error("entry #{position} (index {index}): duplicate reference_id {reference_id:?}")]
    DuplicateReference {
        index: u32,
        reference_id: String,
        position: usize,
    },
    #[error("entry #{position} (index {index}): empty description")]
    EmptyDescription { index: u32, position: usize },
    #[error("entry #{position} (index {index}): empty reference_id")]
    EmptyReference { index: u32, position: usize },
    #[error("{field} must be a positive finite number, got {value}")]
    InvalidDuration { field: String, value: f64 },
    #[error("subset size {requested} out of range 1..={available}")]
    SubsetRange { requested: usize, available: usize },
}

/// One labelled reference utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub index: u32,
    pub description: String,
    pub reference_id: String,
    /// Seconds per phone in the reference recording, when known.
    #[serde(default)]
    pub mean_phone_duration: Option<f64>,
}

impl AnnotationEntry {
    pub fn new(index: u32, description: impl Into<String>, reference_id: impl Into<String>) -> Self {
        Self {
            index,
            description: description.into(),
            reference_id: reference_id.into(),
            mean_phone_duration: None,
        }
    }

    pub fn with_mean_phone_duration(mut self, seconds: f64) -> Self {
        self.mean_phone_duration = Some(seconds);
        self
    }
}

/// On-disk layout. Field order here is the serialized order.
#[derive(Serialize, Deserialize)]
struct DictionaryFile {
    #[serde(default)]
    corpus_mean_phone_duration: Option<f64>,
    entries: Vec<AnnotationEntry>,
}

/// Validated, immutable index -> entry mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationDictionary {
    entries: BTreeMap<u32, AnnotationEntry>,
    corpus_mean_phone_duration: Option<f64>,
}

fn check_duration(field: &str, value: Option<f64>) -> Result<(), AnnotationError> {
    match value {
        Some(v) if !(v.is_finite() && v > 0.0) => Err(AnnotationError::InvalidDuration {
            field: field.to_string(),
            value: v,
        }),
        _ => Ok(()),
    }
}

impl AnnotationDictionary {
    /// Builds a dictionary, checking every invariant. Positions in errors are
    /// 1-based offsets into `entries`.
    pub fn from_entries(
        entries: Vec<AnnotationEntry>,
        corpus_mean_phone_duration: Option<f64>,
    ) -> Result<Self, AnnotationError> {
        if entries.is_empty() {
            return Err(AnnotationError::Empty);
        }
        check_duration("corpus_mean_phone_duration", corpus_mean_phone_duration)?;

        let mut map = BTreeMap::new();
        let mut refs = HashSet::new();
        for (i, entry) in entries.into_iter().enumerate() {
            let position = i + 1;
            let index = entry.index;
            if index == 0 {
                return Err(AnnotationError::ZeroIndex { position });
            }
            if entry.description.trim().is_empty() {
                return Err(AnnotationError::EmptyDescription { index, position });
            }
            if entry.reference_id.trim().is_empty() {
                return Err(AnnotationError::EmptyReference { index, position });
            }
            check_duration(
                &format!("entry {index} mean_phone_duration"),
                entry.mean_phone_duration,
            )?;
            if map.contains_key(&index) {
                return Err(AnnotationError::DuplicateIndex { index, position });
            }
            if !refs.insert(entry.reference_id.clone()) {
                return Err(AnnotationError::DuplicateReference {
                    index,
                    reference_id: entry.reference_id,
                    position,
                });
            }
            map.insert(index, entry);
        }
        Ok(Self {
            entries: map,
            corpus_mean_phone_duration,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, AnnotationError> {
        let file: DictionaryFile = serde_json::from_str(text).map_err(|e| AnnotationError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_entries(file.entries, file.corpus_mean_phone_duration)
    }

    pub fn to_json(&self) -> String {
        let file = DictionaryFile {
            corpus_mean_phone_duration: self.corpus_mean_phone_duration,
            entries: self.entries.values().cloned().collect(),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("dictionary serializes");
        out.push('\n');
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: u32) -> Option<&AnnotationEntry> {
        self.entries.get(&index)
    }

    pub fn contains(&self, index: u32) -> bool {
        self.entries.contains_key(&index)
    }

    /// Entries in ascending index order.
    pub fn entries(&self) -> impl Iterator<Item = &AnnotationEntry> {
        self.entries.values()
    }

    pub fn indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn corpus_mean_phone_duration(&self) -> Option<f64> {
        self.corpus_mean_phone_duration
    }

    /// Picks `n` entries uniformly without replacement.
    ///
    /// The keys are shuffled once with a seeded generator and the first `n`
    /// are kept, so for a fixed seed the subsets are nested: a smaller `n`
    /// always yields a subset of a larger one.
    pub fn subset(&self, n: usize, seed: u64) -> Result<Self, AnnotationError> {
        if n == 0 || n > self.len() {
            return Err(AnnotationError::SubsetRange {
                requested: n,
                available: self.len(),
            });
        }
        let mut keys: Vec<u32> = self.entries.keys().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        keys.shuffle(&mut rng);
        let entries = keys[..n]
            .iter()
            .map(|k| (*k, self.entries[k].clone()))
            .collect();
        Ok(Self {
            entries,
            corpus_mean_phone_duration: self.corpus_mean_phone_duration,
        })
    }
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<AnnotationDictionary, AnnotationError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| AnnotationError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    AnnotationDictionary::from_json(&text)
}

pub fn save_dictionary(
    dict: &AnnotationDictionary,
    path: impl AsRef<Path>,
) -> Result<(), AnnotationError> {
    let path = path.as_ref();
    fs::write(path, dict.to_json()).map_err(|source| AnnotationError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn subset_dictionary(
    dict: &AnnotationDictionary,
    n: usize,
    seed: u64,
) -> Result<AnnotationDictionary, AnnotationError> {
    dict.subset(n, seed)
}
