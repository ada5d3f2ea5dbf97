//! JSONL dataset records.
//!
//! One record per line:
//!
//! ```text
//! {"id": "a1", "context": [0.1, 0.0], "caption": ["a", "red", "dog"]}
//! {"id": "a2", "context": [0.0, 1.0], "labels": [["dog", "dogs"], ["red"], ["grass"]], "min_mentions": 2}
//! {"id": "a3", "fsa": { ...automaton JSON... }}
//! ```
//!
//! Evaluation files may add `"concepts": ["zebra"]`, the ground-truth set of
//! concepts present for the example.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ps3_core::ps3::{PartialSpec, TrainingExample};
use ps3_core::{ContextVector, DisjunctiveSet, Fsa, TokenId, Vocabulary};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default threshold for label records: at least two of the label groups.
pub const DEFAULT_MIN_MENTIONS: usize = 2;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Invalid { path: PathBuf, line: usize, msg: String },
    #[error("{path}:{line}: record {id:?} cannot be satisfied within {max_len} tokens")]
    Unsatisfiable {
        path: PathBuf,
        line: usize,
        id: String,
        max_len: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_mentions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fsa: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub enum RecordPayload {
    /// Content tokens, without eos.
    Caption(Vec<TokenId>),
    Labels {
        groups: Vec<DisjunctiveSet>,
        min_mentions: usize,
    },
    Fsa(Fsa),
}

#[derive(Debug, Clone)]
pub struct Record {
    pub id: String,
    pub line: usize,
    pub context: ContextVector,
    pub payload: RecordPayload,
    pub concepts: Option<BTreeSet<String>>,
}

impl Record {
    /// The record's constraint, if it has one. Label records use every
    /// group with their threshold.
    pub fn constraint(&self, vocab: &Vocabulary) -> ps3_core::Result<Option<Fsa>> {
        match &self.payload {
            RecordPayload::Caption(_) => Ok(None),
            RecordPayload::Labels { groups, min_mentions } => {
                Fsa::at_least_m_of_n(vocab, groups, (*min_mentions).min(groups.len())).map(Some)
            }
            RecordPayload::Fsa(f) => Ok(Some(f.clone())),
        }
    }

    pub fn to_training_example(&self, vocab: &Vocabulary, max_len: usize) -> ps3_core::Result<TrainingExample> {
        match &self.payload {
            RecordPayload::Caption(tokens) => {
                TrainingExample::complete(self.id.clone(), self.context.clone(), tokens, vocab)
            }
            RecordPayload::Labels { groups, min_mentions } => TrainingExample::partial(
                self.id.clone(),
                self.context.clone(),
                PartialSpec::Labels {
                    groups: groups.clone(),
                    m: *min_mentions,
                    sample: groups.len(),
                },
                vocab,
                max_len,
            ),
            RecordPayload::Fsa(f) => TrainingExample::partial(
                self.id.clone(),
                self.context.clone(),
                PartialSpec::Fixed(f.clone()),
                vocab,
                max_len,
            ),
        }
    }
}

fn parse_record(raw: RawRecord, line: usize, vocab: &Vocabulary) -> Result<Record, String> {
    let keys = [raw.caption.is_some(), raw.labels.is_some(), raw.fsa.is_some()];
    if keys.iter().filter(|&&k| k).count() != 1 {
        return Err(format!(
            "record {:?} must have exactly one of \"caption\", \"labels\", \"fsa\"",
            raw.id
        ));
    }
    if raw.min_mentions.is_some() && raw.labels.is_none() {
        return Err(format!("record {:?}: \"min_mentions\" without \"labels\"", raw.id));
    }
    let context = raw.context.unwrap_or_default();
    if context.iter().any(|x| !x.is_finite()) {
        return Err(format!("record {:?}: non-finite context value", raw.id));
    }
    let in_record = |e: ps3_core::Error| format!("record {:?}: {e}", raw.id);
    let payload = if let Some(words) = raw.caption {
        if words.is_empty() {
            return Err(format!("record {:?}: empty caption", raw.id));
        }
        RecordPayload::Caption(vocab.encode(&words).map_err(in_record)?)
    } else if let Some(labels) = raw.labels {
        if labels.is_empty() {
            return Err(format!("record {:?}: empty label list", raw.id));
        }
        let groups = labels
            .iter()
            .map(|g| DisjunctiveSet::from_words(vocab, g))
            .collect::<ps3_core::Result<Vec<_>>>()
            .map_err(in_record)?;
        let min_mentions = raw.min_mentions.unwrap_or(DEFAULT_MIN_MENTIONS).min(groups.len());
        if min_mentions == 0 {
            return Err(format!("record {:?}: min_mentions must be >= 1", raw.id));
        }
        RecordPayload::Labels { groups, min_mentions }
    } else {
        let value = raw.fsa.expect("checked above");
        RecordPayload::Fsa(Fsa::from_json_value(value, vocab).map_err(in_record)?)
    };
    Ok(Record {
        id: raw.id,
        line,
        context: ContextVector(context),
        payload,
        concepts: raw.concepts.map(|c| c.into_iter().collect()),
    })
}

/// Reads and validates a JSONL file. Ids must be unique and every record
/// must carry a context of the same dimension.
pub fn read_records(path: &Path, vocab: &Vocabulary) -> Result<Vec<Record>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let invalid = |line: usize, msg: String| DataError::Invalid {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut records: Vec<Record> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| invalid(line_no, e.to_string()))?;
        let record = parse_record(raw, line_no, vocab).map_err(|m| invalid(line_no, m))?;
        if !seen.insert(record.id.clone()) {
            return Err(invalid(line_no, format!("duplicate id {:?}", record.id)));
        }
        if let Some(first) = records.first() {
            if first.context.dim() != record.context.dim() {
                return Err(invalid(
                    line_no,
                    format!(
                        "context has {} values, earlier records have {}",
                        record.context.dim(),
                        first.context.dim()
                    ),
                ));
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Converts records to training examples, checking that every constraint
/// can be met within `max_len` content tokens.
pub fn training_examples(
    path: &Path,
    records: &[Record],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<TrainingExample>, DataError> {
    records
        .iter()
        .map(|r| {
            r.to_training_example(vocab, max_len).map_err(|e| match e {
                ps3_core::Error::Unsatisfiable(_) => DataError::Unsatisfiable {
                    path: path.to_path_buf(),
                    line: r.line,
                    id: r.id.clone(),
                    max_len,
                },
                other => DataError::Invalid {
                    path: path.to_path_buf(),
                    line: r.line,
                    msg: format!("record {:?}: {other}", r.id),
                },
            })
        })
        .collect()
}

/// Writes records as JSONL.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    fs::write(path, out)
}
