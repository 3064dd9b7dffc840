//! Tokenization and dictionary-based mention detection.
//!
//! Mentions are found with a greedy left-to-right scan: at each token the
//! longest dictionary name starting there wins, and scanning resumes after it.
//! No disambiguation happens here; every candidate entity of a detected name is
//! passed on to the model.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::kb_ingest::{CandidateEntity, EntityDictionary};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lowercased token text.
    pub text: String,
    /// Byte offsets into the source text.
    pub span: Range<usize>,
}

/// Splits on whitespace and punctuation, dropping both, and lowercases the pieces.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (pos, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(pos);
            }
        } else if let Some(s) = start.take() {
            tokens.push(make_token(text, s..pos));
        }
    }
    if let Some(s) = start {
        tokens.push(make_token(text, s..text.len()));
    }
    tokens
}

fn make_token(text: &str, span: Range<usize>) -> Token {
    Token {
        text: text[span.clone()].to_lowercase(),
        span,
    }
}

/// Canonical form of an entity name: the tokenizer's output joined by single spaces.
///
/// This is the lowercase/whitespace-collapsed surface with punctuation removed,
/// so names and document tokens always compare in the same space.
pub fn normalize_name(surface: &str) -> String {
    let tokens = tokenize(surface);
    let mut out = String::with_capacity(surface.len());
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&t.text);
    }
    out
}

/// Prefix index over a set of space-joined token names.
///
/// Maps every token-prefix of every name to whether the prefix is itself a name,
/// which lets the scan stop as soon as no longer name can match.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NameMatcher {
    prefixes: HashMap<String, bool>,
    max_tokens: usize,
}

impl NameMatcher {
    pub fn new<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let mut prefixes: HashMap<String, bool> = HashMap::new();
        let mut max_tokens = 0;
        for name in names {
            let parts: Vec<&str> = name.split(' ').collect();
            max_tokens = max_tokens.max(parts.len());
            let mut key = String::new();
            for (i, part) in parts.iter().enumerate() {
                if i > 0 {
                    key.push(' ');
                }
                key.push_str(part);
                let is_name = i + 1 == parts.len();
                let entry = prefixes.entry(key.clone()).or_insert(false);
                *entry |= is_name;
            }
        }
        NameMatcher {
            prefixes,
            max_tokens,
        }
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    /// Length in tokens of the longest name starting at `tokens[start]`.
    pub fn longest_at<S: AsRef<str>>(&self, tokens: &[S], start: usize) -> Option<usize> {
        let mut key = String::new();
        let mut best = None;
        let limit = self.max_tokens.min(tokens.len().saturating_sub(start));
        for n in 1..=limit {
            if n > 1 {
                key.push(' ');
            }
            key.push_str(tokens[start + n - 1].as_ref());
            match self.prefixes.get(&key) {
                None => break,
                Some(true) => best = Some(n),
                Some(false) => {}
            }
        }
        best
    }

    /// Non-overlapping earliest-longest matches as token ranges, in order.
    pub fn find_all<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            match self.longest_at(tokens, i) {
                Some(n) => {
                    spans.push(i..i + n);
                    i += n;
                }
                None => i += 1,
            }
        }
        spans
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    /// Token index range `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub name: String,
    pub candidates: Vec<CandidateEntity>,
}

pub fn detect_mentions(tokens: &[Token], dict: &EntityDictionary) -> Vec<Mention> {
    let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
    dict.matcher()
        .find_all(&texts)
        .into_iter()
        .map(|span| {
            let name = texts[span.clone()].join(" ");
            let candidates = dict
                .candidates(&name)
                .expect("matched name is a dictionary key")
                .to_vec();
            Mention {
                start: span.start,
                end: span.end,
                name,
                candidates,
            }
        })
        .collect()
}

/// Flattens mentions into the model's candidate list. Duplicates are kept.
pub fn candidate_list(mentions: &[Mention]) -> Vec<CandidateEntity> {
    mentions
        .iter()
        .flat_map(|m| m.candidates.iter().cloned())
        .collect()
}
