//! Deterministic lookup selector for tests and fixtures.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{RawOutput, SelectorError, StylePrompt};
use crate::annotation::AnnotationDictionary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockRule {
    ExactMapping,
    ExactDescription,
    TokenOverlap,
}

/// Lowercased alphanumeric runs. CJK ideographs count as one token each,
/// since those scripts do not separate words with spaces.
pub fn tokenize(text: &str) -> HashSet<String> {
    let mut out = HashSet::new();
    let mut word = String::new();
    for ch in text.chars() {
        if is_cjk(ch) {
            if !word.is_empty() {
                out.insert(std::mem::take(&mut word));
            }
            out.insert(ch.to_string());
        } else if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else if !word.is_empty() {
            out.insert(std::mem::take(&mut word));
        }
    }
    if !word.is_empty() {
        out.insert(word);
    }
    out
}

fn is_cjk(ch: char) -> bool {
    matches!(ch as u32, 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2FA1F)
}

/// Caller-supplied `text -> index` mapping.
///
/// Resolution for a prompt against a dictionary, considering only mapping
/// rows whose target is in that dictionary:
/// 1. a mapping key equal to the prompt text;
/// 2. a dictionary description equal to the prompt text;
/// 3. the mapping key or description sharing the most tokens with the
///    prompt.
///
/// Ties at every step go to the smallest index. Step 3 always succeeds, so
/// the table never fails once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct MockTable {
    rows: Vec<(String, u32)>,
}

impl MockTable {
    pub fn new(rows: impl IntoIterator<Item = (String, u32)>) -> Result<Self, SelectorError> {
        let rows: Vec<(String, u32)> = rows.into_iter().collect();
        if rows.is_empty() {
            return Err(SelectorError::EmptyMockMapping);
        }
        Ok(Self { rows })
    }

    pub fn from_json(text: &str) -> Result<Self, SelectorError> {
        let map: BTreeMap<String, u32> = serde_json::from_str(text)
            .map_err(|e| SelectorError::InvalidConfig(format!("mock table: {e}")))?;
        Self::new(map)
    }

    /// One row per description, mapping each description to its own key.
    pub fn from_descriptions(dict: &AnnotationDictionary) -> Result<Self, SelectorError> {
        Self::new(dict.entries().map(|e| (e.description.clone(), e.index)))
    }

    pub fn rows(&self) -> &[(String, u32)] {
        &self.rows
    }

    pub(super) fn select(&self, prompt: &StylePrompt, dict: &AnnotationDictionary) -> (u32, RawOutput) {
        let text = prompt.text();
        let live: Vec<(&str, u32)> = self
            .rows
            .iter()
            .filter(|(_, k)| dict.contains(*k))
            .map(|(t, k)| (t.as_str(), *k))
            .collect();

        let found = |rule, index| (index, RawOutput::Mock { rule, overlap: 0 });

        if let Some(k) = live.iter().filter(|(t, _)| *t == text).map(|(_, k)| *k).min() {
            return found(MockRule::ExactMapping, k);
        }
        if let Some(e) = dict.entries().find(|e| e.description == text) {
            return found(MockRule::ExactDescription, e.index);
        }

        let query = tokenize(text);
        let candidates = live
            .into_iter()
            .chain(dict.entries().map(|e| (e.description.as_str(), e.index)));
        let (overlap, index) = candidates
            .map(|(t, k)| (tokenize(t).intersection(&query).count(), k))
            .min_by_key(|(overlap, k)| (std::cmp::Reverse(*overlap), *k))
            .expect("dictionary is non-empty");
        (
            index,
            RawOutput::Mock {
                rule: MockRule::TokenOverlap,
                overlap,
            },
        )
    }
}
