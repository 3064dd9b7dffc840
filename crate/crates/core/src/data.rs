//! Labeled-document datasets and their conversion to model inputs.
//!
//! Dataset files are UTF-8 TSV with one document per line: `label<TAB>text`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::detector::{candidate_list, detect_mentions, tokenize};
use crate::embeddings::{build_vocab, Vocabulary};
use crate::error::{Error, Result};
use crate::kb_ingest::EntityDictionary;
use crate::model::{Candidate, DocumentInput};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledText {
    pub label: String,
    pub text: String,
}

pub fn parse_dataset(content: &str, path: &Path) -> Result<Vec<LabeledText>> {
    let mut docs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((label, text)) = line.split_once('\t') else {
            return Err(Error::parse(path, i + 1, "expected label<TAB>text"));
        };
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::parse(path, i + 1, "empty label"));
        }
        docs.push(LabeledText {
            label: label.to_string(),
            text: text.to_string(),
        });
    }
    Ok(docs)
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledText>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&content, path)
}

/// A document after tokenization and entity detection, before vocabulary lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDoc {
    pub words: Vec<String>,
    /// `(entity title, commonness)` in candidate-list order.
    pub entities: Vec<(String, f64)>,
    pub label: Option<String>,
}

pub fn prepare(text: &str, label: Option<&str>, dict: &EntityDictionary) -> PreparedDoc {
    let tokens = tokenize(text);
    let mentions = detect_mentions(&tokens, dict);
    let entities = candidate_list(&mentions)
        .into_iter()
        .map(|c| (dict.title(c.entity_id).to_string(), c.commonness))
        .collect();
    PreparedDoc {
        words: tokens.into_iter().map(|t| t.text).collect(),
        entities,
        label: label.map(str::to_string),
    }
}

pub fn prepare_all(docs: &[LabeledText], dict: &EntityDictionary) -> Vec<PreparedDoc> {
    docs.iter()
        .map(|d| prepare(&d.text, Some(&d.label), dict))
        .collect()
}

pub fn vocab_from(docs: &[PreparedDoc], min_count: u64) -> Result<Vocabulary> {
    build_vocab(
        docs.iter().map(|d| {
            (
                d.words.iter().map(String::as_str),
                d.entities.iter().map(|(t, _)| t.as_str()),
            )
        }),
        min_count,
    )
}

/// Sorted distinct labels.
pub fn label_set(docs: &[PreparedDoc]) -> Vec<String> {
    docs.iter()
        .filter_map(|d| d.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Maps words and entities to vocabulary indices, dropping out-of-vocabulary items.
pub fn encode(doc: &PreparedDoc, vocab: &Vocabulary, labels: &[String]) -> Result<DocumentInput> {
    let label = match &doc.label {
        Some(l) => Some(labels.iter().position(|x| x == l).ok_or_else(|| {
            Error::InvalidInput(format!("label {l:?} does not occur in the training data"))
        })?),
        None => None,
    };
    Ok(DocumentInput {
        words: doc
            .words
            .iter()
            .filter_map(|w| vocab.word_index(w))
            .collect(),
        candidates: doc
            .entities
            .iter()
            .filter_map(|(t, c)| {
                vocab.entity_index(t).map(|entity| Candidate {
                    entity,
                    commonness: *c,
                })
            })
            .collect(),
        label,
    })
}

pub fn encode_all(
    docs: &[PreparedDoc],
    vocab: &Vocabulary,
    labels: &[String],
) -> Result<Vec<DocumentInput>> {
    docs.iter().map(|d| encode(d, vocab, labels)).collect()
}
