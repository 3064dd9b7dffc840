//! Word/entity vocabularies and embedding matrices.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_COUNT: u64 = 3;
pub const DEFAULT_DIM: usize = 300;
pub const ENTITY_PREFIX: &str = "ENTITY/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VocabularyData {
    min_count: u64,
    words: Vec<(String, u64)>,
    entities: Vec<(String, u64)>,
}

/// Frequency-filtered word and entity vocabularies with dense indices.
///
/// Items are ordered by descending count, ties by ascending string. Entities
/// are keyed by canonical title.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    data: VocabularyData,
    word_index: HashMap<String, u32>,
    entity_index: HashMap<String, u32>,
}

impl From<VocabularyData> for Vocabulary {
    fn from(data: VocabularyData) -> Self {
        let index = |items: &[(String, u64)]| {
            items
                .iter()
                .enumerate()
                .map(|(i, (s, _))| (s.clone(), i as u32))
                .collect()
        };
        Vocabulary {
            word_index: index(&data.words),
            entity_index: index(&data.entities),
            data,
        }
    }
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        v.data
    }
}

impl Vocabulary {
    pub fn min_count(&self) -> u64 {
        self.data.min_count
    }

    pub fn num_words(&self) -> usize {
        self.data.words.len()
    }

    pub fn num_entities(&self) -> usize {
        self.data.entities.len()
    }

    pub fn word_index(&self, word: &str) -> Option<u32> {
        self.word_index.get(word).copied()
    }

    pub fn entity_index(&self, title: &str) -> Option<u32> {
        self.entity_index.get(title).copied()
    }

    pub fn word(&self, index: u32) -> &str {
        &self.data.words[index as usize].0
    }

    pub fn entity(&self, index: u32) -> &str {
        &self.data.entities[index as usize].0
    }

    pub fn word_count(&self, word: &str) -> Option<u64> {
        self.word_index(word).map(|i| self.data.words[i as usize].1)
    }

    pub fn entity_count(&self, title: &str) -> Option<u64> {
        self.entity_index(title)
            .map(|i| self.data.entities[i as usize].1)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.data.words.iter().map(|(w, _)| w.as_str())
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.data.entities.iter().map(|(e, _)| e.as_str())
    }
}

fn filter_sorted(counts: BTreeMap<String, u64>, min_count: u64) -> Vec<(String, u64)> {
    let mut items: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    // BTreeMap order is ascending by string; a stable sort keeps it for ties
    items.sort_by_key(|item| std::cmp::Reverse(item.1));
    items
}

/// Counts word occurrences and entity detections over `corpus` and keeps items
/// seen at least `min_count` times.
pub fn build_vocab<'a, I, W, E>(corpus: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = (W, E)>,
    W: IntoIterator<Item = &'a str>,
    E: IntoIterator<Item = &'a str>,
{
    if min_count == 0 {
        return Err(Error::InvalidInput("min_count must be at least 1".into()));
    }
    let mut words: BTreeMap<String, u64> = BTreeMap::new();
    let mut entities: BTreeMap<String, u64> = BTreeMap::new();
    for (doc_words, doc_entities) in corpus {
        for w in doc_words {
            *words.entry(w.to_string()).or_insert(0) += 1;
        }
        for e in doc_entities {
            *entities.entry(e.to_string()).or_insert(0) += 1;
        }
    }
    Ok(VocabularyData {
        min_count,
        words: filter_sorted(words, min_count),
        entities: filter_sorted(entities, min_count),
    }
    .into())
}

/// Row-major `rows × dim` matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                found: data.len(),
            });
        }
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    /// Elements drawn uniformly from `[-0.5/dim, 0.5/dim]`.
    pub fn random<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Self {
        let bound = 0.5 / dim as f64;
        let data = (0..rows * dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        EmbeddingMatrix { rows, dim, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Random word and entity matrices for `vocab`, both drawn from one seeded stream.
pub fn random_init(
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> (EmbeddingMatrix, EmbeddingMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = EmbeddingMatrix::random(vocab.num_words(), dim, &mut rng);
    let entities = EmbeddingMatrix::random(vocab.num_entities(), dim, &mut rng);
    (words, entities)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub hits: usize,
    pub misses: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub words: Coverage,
    pub entities: Coverage,
}

pub fn entity_token(title: &str) -> String {
    format!("{ENTITY_PREFIX}{}", title.replace(' ', "_"))
}

/// Initializes embeddings from a text vector file (`count dim` header, then
/// `token v1 .. vd` lines). Vocabulary items missing from the file keep the
/// rows [`random_init`] gives them for `seed`.
pub fn load_pretrained(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix, CoverageReport)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "missing `count dim` header")),
    };
    let mut fields = header.split_whitespace();
    let (Some(count), Some(file_dim), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(Error::parse(path, 1, "expected `count dim` header"));
    };
    let count: usize = count
        .parse()
        .map_err(|e| Error::parse(path, 1, format!("bad count: {e}")))?;
    let file_dim: usize = file_dim
        .parse()
        .map_err(|e| Error::parse(path, 1, format!("bad dimension: {e}")))?;
    if file_dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: file_dim,
        });
    }

    let entity_lookup: HashMap<String, u32> = vocab
        .entities()
        .enumerate()
        .map(|(i, t)| (entity_token(t), i as u32))
        .collect();
    let (mut words, mut entities) = random_init(vocab, dim, seed);
    let mut word_seen = vec![false; vocab.num_words()];
    let mut entity_seen = vec![false; vocab.num_entities()];
    let mut vector = Vec::with_capacity(dim);
    let mut n_lines = 0;
    for (i, line) in lines.enumerate() {
        let no = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        n_lines += 1;
        let mut parts = line.split(' ');
        let token = parts.next().unwrap_or("");
        vector.clear();
        for p in parts.filter(|p| !p.is_empty()) {
            let v: f64 = p
                .parse()
                .map_err(|e| Error::parse(path, no, format!("bad value {p:?}: {e}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, no, "non-finite value"));
            }
            vector.push(v);
        }
        if token.is_empty() || vector.len() != dim {
            return Err(Error::parse(
                path,
                no,
                format!(
                    "expected a token and {dim} values, found {} values",
                    vector.len()
                ),
            ));
        }
        let target = if token.starts_with(ENTITY_PREFIX) {
            entity_lookup
                .get(token)
                .map(|&i| (&mut entities, &mut entity_seen, i))
        } else {
            vocab
                .word_index(token)
                .map(|i| (&mut words, &mut word_seen, i))
        };
        if let Some((matrix, seen, i)) = target {
            if !seen[i as usize] {
                seen[i as usize] = true;
                matrix.row_mut(i as usize).copy_from_slice(&vector);
            }
        }
    }
    if n_lines != count {
        return Err(Error::parse(
            path,
            1,
            format!("header declares {count} vectors, file has {n_lines}"),
        ));
    }
    let coverage = |seen: &[bool]| {
        let hits = seen.iter().filter(|s| **s).count();
        Coverage {
            hits,
            misses: seen.len() - hits,
        }
    };
    let report = CoverageReport {
        words: coverage(&word_seen),
        entities: coverage(&entity_seen),
    };
    Ok((words, entities, report))
}

/// Writes all vocabulary rows in the text vector format read by [`load_pretrained`].
pub fn save_vectors(
    path: &Path,
    vocab: &Vocabulary,
    words: &EmbeddingMatrix,
    entities: &EmbeddingMatrix,
) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", words.rows() + entities.rows(), words.dim());
    let mut line = |token: &str, row: &[f64]| {
        out.push_str(token);
        for v in row {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    };
    for (i, w) in vocab.words().enumerate() {
        line(w, words.row(i));
    }
    for (i, e) in vocab.entities().enumerate() {
        line(&entity_token(e), entities.row(i));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(words: &[&str], entities: &[&str], min_count: u64) -> Vocabulary {
        build_vocab(
            [(words.iter().copied(), entities.iter().copied())],
            min_count,
        )
        .unwrap()
    }

    #[test]
    fn min_count_filters() {
        let v = vocab(&["cat", "dog", "cat", "dog", "cat"], &[], 3);
        assert_eq!(v.words().collect::<Vec<_>>(), ["cat"]);
        let v = vocab(&["cat", "dog", "cat", "dog", "cat"], &[], 1);
        assert_eq!(v.words().collect::<Vec<_>>(), ["cat", "dog"]);
    }

    #[test]
    fn entity_counts_across_documents() {
        let corpus = [
            (vec!["a"], vec!["E A", "E A", "E B"]),
            (vec!["b"], vec!["E A", "E A", "E A"]),
        ];
        let v = build_vocab(
            corpus
                .iter()
                .map(|(w, e)| (w.iter().copied(), e.iter().copied())),
            3,
        )
        .unwrap();
        assert_eq!(v.entity_count("E A"), Some(5));
        assert_eq!(v.entity_index("E B"), None);
        assert_eq!(v.num_words(), 0);
    }

    #[test]
    fn ordering_by_count_then_string() {
        let v = vocab(&["b", "a", "c", "c", "b", "a", "z", "z", "z"], &[], 1);
        assert_eq!(v.words().collect::<Vec<_>>(), ["z", "a", "b", "c"]);
        assert_eq!(v.word_index("a"), Some(1));
    }

    #[test]
    fn empty_corpus_is_valid() {
        let v = build_vocab(std::iter::empty::<(Vec<&str>, Vec<&str>)>(), 3).unwrap();
        assert_eq!((v.num_words(), v.num_entities()), (0, 0));
        assert!(build_vocab(std::iter::empty::<(Vec<&str>, Vec<&str>)>(), 0).is_err());
    }

    #[test]
    fn random_init_is_seeded_and_bounded() {
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let v = build_vocab([(words.iter().map(String::as_str), std::iter::empty())], 1).unwrap();
        let (a, _) = random_init(&v, 8, 1);
        let (b, _) = random_init(&v, 8, 1);
        let (c, _) = random_init(&v, 8, 2);
        assert_eq!(a.as_slice(), b.as_slice());
        assert_ne!(a.as_slice(), c.as_slice());
        assert!(a.as_slice().iter().all(|x| x.abs() <= 0.5 / 8.0));
    }

    #[test]
    fn pretrained_rows_copied() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        fs::write(
            &path,
            "3 4\ncat 1 2 3 4\nENTITY/Apple_Inc. 0.5 0.25 -1 2\nother 0 0 0 0\n",
        )
        .unwrap();
        let v = vocab(&["cat", "dog"], &["Apple Inc."], 1);
        let (w, e, report) = load_pretrained(&path, &v, 4, 0).unwrap();
        assert_eq!(
            w.row(v.word_index("cat").unwrap() as usize),
            [1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(e.row(0), [0.5, 0.25, -1.0, 2.0]);
        assert_eq!(report.words, Coverage { hits: 1, misses: 1 });
        assert_eq!(report.entities, Coverage { hits: 1, misses: 0 });
        let (rw, _) = random_init(&v, 4, 0);
        let dog = v.word_index("dog").unwrap() as usize;
        assert_eq!(w.row(dog), rw.row(dog));
    }

    #[test]
    fn dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        fs::write(&path, "0 300\n").unwrap();
        let v = vocab(&["cat"], &[], 1);
        assert!(matches!(
            load_pretrained(&path, &v, 100, 0),
            Err(Error::DimensionMismatch {
                expected: 100,
                found: 300
            })
        ));
    }

    #[test]
    fn malformed_vector_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        fs::write(&path, "2 2\ncat 1 2\ndog 1\n").unwrap();
        let v = vocab(&["cat"], &[], 1);
        assert!(matches!(
            load_pretrained(&path, &v, 2, 0),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        let v = vocab(&["cat", "dog", "dog"], &["Apple Inc.", "Pear"], 1);
        let (w, e) = random_init(&v, 5, 42);
        save_vectors(&path, &v, &w, &e).unwrap();
        let (w2, e2, report) = load_pretrained(&path, &v, 5, 7).unwrap();
        assert_eq!((w2, e2), (w.clone(), e.clone()));
        assert_eq!(report.words.misses + report.entities.misses, 0);
        let path2 = dir.path().join("vec2.txt");
        save_vectors(&path2, &v, &w, &e).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    proptest! {
        #[test]
        fn vocab_invariant_to_document_order(
            docs in prop::collection::vec(prop::collection::vec(0u8..8, 0..10), 0..8),
            min_count in 1u64..4,
        ) {
            let as_strs = |d: &Vec<u8>| d.iter().map(|t| format!("w{t}")).collect::<Vec<_>>();
            let docs: Vec<Vec<String>> = docs.iter().map(as_strs).collect();
            let forward = build_vocab(
                docs.iter().map(|d| (d.iter().map(String::as_str), d.iter().map(String::as_str))),
                min_count,
            ).unwrap();
            let backward = build_vocab(
                docs.iter().rev().map(|d| (d.iter().map(String::as_str), d.iter().map(String::as_str))),
                min_count,
            ).unwrap();
            prop_assert_eq!(&forward, &backward);
            for (i, w) in forward.words().enumerate() {
                prop_assert_eq!(forward.word_index(w), Some(i as u32));
                prop_assert!(forward.word_count(w).unwrap() >= min_count);
            }
        }
    }
}
