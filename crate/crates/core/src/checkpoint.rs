//! Self-describing model checkpoint.
//!
//! Layout: the 8-byte magic `NABOECKP`, a little-endian `u32` format version, a
//! `u64` header length, a JSON header (config, vocabulary, class labels, tensor
//! shapes), then every tensor as raw little-endian f64 in a fixed order. Floats
//! are never formatted as text, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, NUM_FEATURES};

const MAGIC: &[u8; 8] = b"NABOECKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    labels: Vec<String>,
    word_rows: usize,
    entity_rows: usize,
    dim: usize,
    classes: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let header = Header {
            config: self.config,
            vocab: self.vocab.clone(),
            labels: self.labels.clone(),
            word_rows: p.word_embeddings.rows(),
            entity_rows: p.entity_embeddings.rows(),
            dim: p.dim(),
            classes: p.num_classes(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let tensors: [&[f64]; 6] = [
            p.word_embeddings.as_slice(),
            p.entity_embeddings.as_slice(),
            &p.attention_weights,
            std::slice::from_ref(&p.attention_bias),
            p.classifier_weights.as_slice(),
            &p.classifier_bias,
        ];
        for t in tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |msg: &str| Error::parse(path, 0, format!("corrupt checkpoint: {msg}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                found: version.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes
            .get(20..20usize.saturating_add(header_len))
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| corrupt(&format!("header: {e}")))?;
        let mut rest = &bytes[20 + header_len..];
        let mut take = |n: usize| -> Result<Vec<f64>> {
            if rest.len() < n * 8 {
                return Err(corrupt("truncated tensor data"));
            }
            let (head, tail) = rest.split_at(n * 8);
            rest = tail;
            Ok(head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let (d, c) = (header.dim, header.classes);
        let words = EmbeddingMatrix::from_vec(header.word_rows, d, take(header.word_rows * d)?)?;
        let entities =
            EmbeddingMatrix::from_vec(header.entity_rows, d, take(header.entity_rows * d)?)?;
        let attention = take(NUM_FEATURES)?;
        let bias = take(1)?[0];
        let classifier = EmbeddingMatrix::from_vec(c, d, take(c * d)?)?;
        let classifier_bias = take(c)?;
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        if header.vocab.num_words() != header.word_rows
            || header.vocab.num_entities() != header.entity_rows
            || header.labels.len() != c
        {
            return Err(corrupt("header shapes disagree with vocabulary or labels"));
        }
        Ok(Checkpoint {
            config: header.config,
            vocab: header.vocab,
            labels: header.labels,
            params: ModelParams {
                word_embeddings: words,
                entity_embeddings: entities,
                attention_weights: [attention[0], attention[1]],
                attention_bias: bias,
                classifier_weights: classifier,
                classifier_bias,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
