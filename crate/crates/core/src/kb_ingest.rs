//! Anchor statistics and the pruned entity dictionary.
//!
//! The dictionary maps a normalized entity name to every entity it was used to
//! link to, with two corpus statistics:
//!
//! * **link probability** of a name: anchored uses / all occurrences of the name;
//! * **commonness** of a (name, entity) pair: anchors to the entity / anchored uses
//!   of the name.
//!
//! Statistics come either from raw wikitext ([`extract_anchors`] followed by
//! [`aggregate_stats`]) or from a precomputed `anchors.tsv` / `occurrences.tsv`
//! pair ([`read_stats`]).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{normalize_name, tokenize, NameMatcher};
use crate::error::{Error, Result};

pub const DEFAULT_LINK_PROBABILITY_THRESHOLD: f64 = 0.01;
pub const DEFAULT_COMMONNESS_THRESHOLD: f64 = 0.03;

const DICTIONARY_MAGIC: &str = "naboe-dictionary";
const DICTIONARY_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnchorRecord {
    pub name: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntity {
    pub entity_id: u32,
    pub commonness: f64,
}

// Namespaces whose pages are not entity articles.
const NAMESPACES: &[&str] = &[
    "file",
    "image",
    "media",
    "category",
    "template",
    "wikipedia",
    "wp",
    "help",
    "portal",
    "user",
    "talk",
    "special",
    "draft",
    "module",
    "mediawiki",
    "book",
    "timedtext",
    "wikt",
    "wiktionary",
    "commons",
    "meta",
    "species",
];

fn is_namespaced(target: &str) -> bool {
    if target.starts_with(':') {
        return true;
    }
    let Some((prefix, _)) = target.split_once(':') else {
        return false;
    };
    let lower = prefix.trim().to_lowercase();
    if NAMESPACES.contains(&lower.as_str()) || lower.ends_with(" talk") {
        return true;
    }
    // interlanguage links such as [[de:Apfel]] or [[zh-yue:...]]
    let mut parts = prefix.splitn(2, '-');
    let lang = parts.next().unwrap_or("");
    (2..=3).contains(&lang.len())
        && lang.chars().all(|c| c.is_ascii_lowercase())
        && parts
            .next()
            .is_none_or(|rest| rest.chars().all(|c| c.is_ascii_lowercase()))
}

/// Wikipedia-style canonical title: underscores to spaces, whitespace
/// collapsed, first letter uppercased.
pub fn canonical_title(raw: &str) -> String {
    let spaced = raw.replace('_', " ");
    let collapsed = spaced.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut chars = collapsed.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn parse_link(content: &str) -> Option<AnchorRecord> {
    if content.contains(['\n', '[', ']']) {
        return None;
    }
    let (raw_target, anchor) = match content.split_once('|') {
        Some((t, a)) => (t, Some(a)),
        None => (content, None),
    };
    let raw_target = raw_target.split('#').next().unwrap_or("");
    if is_namespaced(raw_target.trim()) {
        return None;
    }
    let target = canonical_title(raw_target);
    if target.is_empty() {
        return None;
    }
    let name = normalize_name(anchor.unwrap_or(raw_target));
    if name.is_empty() {
        return None;
    }
    Some(AnchorRecord { name, target })
}

/// Byte ranges of every `[[...]]` span, with the anchor record when the span
/// is a well-formed entity link.
pub fn link_spans(text: &str) -> Vec<(Range<usize>, Option<AnchorRecord>)> {
    let mut spans = Vec::new();
    let mut pos = 0;
    while let Some(offset) = text[pos..].find("[[") {
        let open = pos + offset;
        let body = open + 2;
        let Some(close_offset) = text[body..].find("]]") else {
            break;
        };
        let close = body + close_offset;
        let content = &text[body..close];
        if let Some(inner) = content.find("[[") {
            // nested link (e.g. inside a file caption): restart at the inner one
            pos = body + inner;
            continue;
        }
        spans.push((open..close + 2, parse_link(content)));
        pos = close + 2;
    }
    spans
}

/// One record per well-formed internal link, in document order.
pub fn extract_anchors(wikitext: &str) -> Vec<AnchorRecord> {
    link_spans(wikitext)
        .into_iter()
        .filter_map(|(_, record)| record)
        .collect()
}

/// The wikitext with every link span removed, for counting unanchored name
/// occurrences. Removed spans become line breaks so that surrounding words do
/// not fuse.
pub fn strip_links(wikitext: &str) -> String {
    let mut out = String::with_capacity(wikitext.len());
    let mut last = 0;
    for (span, _) in link_spans(wikitext) {
        out.push_str(&wikitext[last..span.start]);
        out.push('\n');
        last = span.end;
    }
    out.push_str(&wikitext[last..]);
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnchorStats {
    pub anchor_counts: BTreeMap<(String, String), u64>,
    pub name_anchor_totals: BTreeMap<String, u64>,
    pub name_occurrence_totals: BTreeMap<String, u64>,
}

impl AnchorStats {
    pub fn add_anchor(&mut self, name: &str, target: &str, count: u64) {
        *self
            .anchor_counts
            .entry((name.to_string(), target.to_string()))
            .or_insert(0) += count;
        *self.name_anchor_totals.entry(name.to_string()).or_insert(0) += count;
    }

    pub fn add_occurrences(&mut self, name: &str, count: u64) {
        *self
            .name_occurrence_totals
            .entry(name.to_string())
            .or_insert(0) += count;
    }

    /// Order-independent merge.
    pub fn merge(&mut self, other: &AnchorStats) {
        for ((name, target), count) in &other.anchor_counts {
            self.add_anchor(name, target, *count);
        }
        for (name, count) in &other.name_occurrence_totals {
            self.add_occurrences(name, *count);
        }
    }

    /// Link probability as the exact ratio `(anchored, occurrences)`.
    pub fn link_probability_ratio(&self, name: &str) -> Option<(u64, u64)> {
        let anchors = *self.name_anchor_totals.get(name)?;
        let occurrences = self.name_occurrence_totals.get(name).copied().unwrap_or(0);
        Some((anchors, occurrences))
    }

    /// Commonness as the exact ratio `(anchors to target, anchored uses of name)`.
    pub fn commonness_ratio(&self, name: &str, target: &str) -> Option<(u64, u64)> {
        let count = *self
            .anchor_counts
            .get(&(name.to_string(), target.to_string()))?;
        Some((count, self.name_anchor_totals[name]))
    }

    pub fn targets<'a>(&'a self, name: &'a str) -> impl Iterator<Item = (&'a str, u64)> + 'a {
        let start = (name.to_string(), String::new());
        self.anchor_counts
            .range(start..)
            .take_while(move |((n, _), _)| n == name)
            .map(|((_, t), c)| (t.as_str(), *c))
    }
}

/// Tallies anchor records and counts name occurrences in plain text.
///
/// `known_names` restricts occurrence counting; every record name must be in
/// it. Plain-text occurrences are found with the detector's earliest-longest
/// matcher; each name's anchored uses are added on top.
pub fn aggregate_stats<R, T, S>(
    records: R,
    plain_texts: T,
    known_names: &BTreeSet<String>,
) -> Result<AnchorStats>
where
    R: IntoIterator<Item = AnchorRecord>,
    T: IntoIterator<Item = Vec<S>>,
    S: AsRef<str>,
{
    let mut stats = AnchorStats::default();
    for record in records {
        if !known_names.contains(&record.name) {
            return Err(Error::UnknownName(record.name));
        }
        stats.add_anchor(&record.name, &record.target, 1);
    }
    let mut counter = OccurrenceCounter::new(known_names);
    for tokens in plain_texts {
        counter.add(&tokens);
    }
    counter.finish(&mut stats);
    Ok(stats)
}

/// Incremental plain-text occurrence counting, one document at a time.
pub struct OccurrenceCounter {
    matcher: NameMatcher,
    plain: HashMap<String, u64>,
}

impl OccurrenceCounter {
    pub fn new<'a>(known_names: impl IntoIterator<Item = &'a String>) -> Self {
        OccurrenceCounter {
            matcher: NameMatcher::new(known_names.into_iter().map(String::as_str)),
            plain: HashMap::new(),
        }
    }

    pub fn add<S: AsRef<str>>(&mut self, tokens: &[S]) {
        for span in self.matcher.find_all(tokens) {
            let name = tokens[span]
                .iter()
                .map(|t| t.as_ref())
                .collect::<Vec<_>>()
                .join(" ");
            *self.plain.entry(name).or_insert(0) += 1;
        }
    }

    /// Adds the counted occurrences to `stats`, plus each name's anchored uses.
    pub fn finish(self, stats: &mut AnchorStats) {
        for (name, total) in stats.name_anchor_totals.clone() {
            stats.add_occurrences(&name, total);
        }
        for (name, count) in self.plain {
            stats.add_occurrences(&name, count);
        }
    }
}

/// Two-pass statistics over a set of wikitext documents.
pub fn stats_from_wikitext<S: AsRef<str>>(documents: &[S]) -> Result<AnchorStats> {
    let records: Vec<AnchorRecord> = documents
        .iter()
        .flat_map(|d| extract_anchors(d.as_ref()))
        .collect();
    let known: BTreeSet<String> = records.iter().map(|r| r.name.clone()).collect();
    let plain = documents.iter().map(|d| {
        tokenize(&strip_links(d.as_ref()))
            .into_iter()
            .map(|t| t.text)
            .collect::<Vec<_>>()
    });
    aggregate_stats(records, plain, &known)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityDictionary {
    entries: BTreeMap<String, Vec<CandidateEntity>>,
    link_probability: BTreeMap<String, f64>,
    titles: Vec<String>,
    title_ids: HashMap<String, u32>,
    lp_threshold: f64,
    commonness_threshold: f64,
    matcher: NameMatcher,
}

impl EntityDictionary {
    fn assemble(
        entries: BTreeMap<String, Vec<CandidateEntity>>,
        link_probability: BTreeMap<String, f64>,
        titles: Vec<String>,
        lp_threshold: f64,
        commonness_threshold: f64,
    ) -> Self {
        let matcher = NameMatcher::new(entries.keys().map(String::as_str));
        let title_ids = titles
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        EntityDictionary {
            entries,
            link_probability,
            titles,
            title_ids,
            lp_threshold,
            commonness_threshold,
            matcher,
        }
    }

    pub fn candidates(&self, name: &str) -> Option<&[CandidateEntity]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn link_probability(&self, name: &str) -> Option<f64> {
        self.link_probability.get(name).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[CandidateEntity])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn title(&self, entity_id: u32) -> &str {
        &self.titles[entity_id as usize]
    }

    pub fn entity_id(&self, title: &str) -> Option<u32> {
        self.title_ids.get(title).copied()
    }

    pub fn num_names(&self) -> usize {
        self.entries.len()
    }

    pub fn num_entities(&self) -> usize {
        self.titles.len()
    }

    pub fn mean_candidates(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let total: usize = self.entries.values().map(Vec::len).sum();
        total as f64 / self.entries.len() as f64
    }

    pub fn max_name_tokens(&self) -> usize {
        self.matcher.max_tokens()
    }

    pub fn thresholds(&self) -> (f64, f64) {
        (self.lp_threshold, self.commonness_threshold)
    }

    pub(crate) fn matcher(&self) -> &NameMatcher {
        &self.matcher
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{DICTIONARY_MAGIC}\t{DICTIONARY_VERSION}");
        let _ = writeln!(out, "lp_threshold\t{}", self.lp_threshold);
        let _ = writeln!(out, "commonness_threshold\t{}", self.commonness_threshold);
        let _ = writeln!(out, "entities\t{}", self.titles.len());
        let _ = writeln!(out, "names\t{}", self.entries.len());
        let _ = writeln!(out, "max_name_tokens\t{}", self.max_name_tokens());
        for (id, title) in self.titles.iter().enumerate() {
            let _ = writeln!(out, "E\t{id}\t{title}");
        }
        for (name, candidates) in &self.entries {
            let _ = write!(out, "N\t{name}\t{}", self.link_probability[name]);
            for c in candidates {
                let _ = write!(out, "\t{}\t{}", c.entity_id, c.commonness);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |key: &str| -> Result<String> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("missing header field {key}")))?;
            match line.split_once('\t') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(Error::parse(
                    path,
                    no,
                    format!("expected header field {key}"),
                )),
            }
        };
        let version = header(DICTIONARY_MAGIC)
            .map_err(|_| Error::parse(path, 1, "not an entity dictionary file"))?;
        if version != DICTIONARY_VERSION {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                found: version,
                expected: DICTIONARY_VERSION.to_string(),
            });
        }
        let float = |v: String, no| {
            v.parse::<f64>()
                .map_err(|e| Error::parse(path, no, format!("bad number {v:?}: {e}")))
        };
        let int = |v: String, no| {
            v.parse::<usize>()
                .map_err(|e| Error::parse(path, no, format!("bad count {v:?}: {e}")))
        };
        let lp_threshold = float(header("lp_threshold")?, 2)?;
        let commonness_threshold = float(header("commonness_threshold")?, 3)?;
        let n_entities = int(header("entities")?, 4)?;
        let n_names = int(header("names")?, 5)?;
        let max_tokens = int(header("max_name_tokens")?, 6)?;

        let mut titles = Vec::with_capacity(n_entities);
        let mut entries = BTreeMap::new();
        let mut link_probability = BTreeMap::new();
        for (no, line) in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                "E" if fields.len() == 3 => {
                    if int(fields[1].to_string(), no)? != titles.len() {
                        return Err(Error::parse(path, no, "entity ids out of order"));
                    }
                    titles.push(fields[2].to_string());
                }
                "N" if fields.len() >= 5 && fields.len() % 2 == 1 => {
                    let name = fields[1].to_string();
                    let lp = float(fields[2].to_string(), no)?;
                    let mut candidates = Vec::new();
                    for pair in fields[3..].chunks(2) {
                        let id = int(pair[0].to_string(), no)?;
                        if id >= n_entities {
                            return Err(Error::parse(path, no, "entity id out of range"));
                        }
                        candidates.push(CandidateEntity {
                            entity_id: id as u32,
                            commonness: float(pair[1].to_string(), no)?,
                        });
                    }
                    link_probability.insert(name.clone(), lp);
                    if entries.insert(name, candidates).is_some() {
                        return Err(Error::parse(path, no, "duplicate name"));
                    }
                }
                _ => return Err(Error::parse(path, no, "malformed dictionary line")),
            }
        }
        if titles.len() != n_entities || entries.len() != n_names {
            return Err(Error::parse(
                path,
                0,
                "entity or name count does not match header",
            ));
        }
        let dict = Self::assemble(
            entries,
            link_probability,
            titles,
            lp_threshold,
            commonness_threshold,
        );
        if dict.max_name_tokens() != max_tokens {
            return Err(Error::parse(
                path,
                6,
                "max_name_tokens does not match entries",
            ));
        }
        Ok(dict)
    }
}

/// Computes link probability and commonness and prunes by both thresholds.
///
/// Commonness values are raw corpus ratios and are not renormalized after
/// pruning.
pub fn build_dictionary(
    stats: &AnchorStats,
    lp_threshold: f64,
    comm_threshold: f64,
) -> Result<EntityDictionary> {
    for t in [lp_threshold, comm_threshold] {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidInput(format!("threshold {t} not in [0, 1]")));
        }
    }
    let mut kept: BTreeMap<String, (f64, Vec<(String, f64)>)> = BTreeMap::new();
    for (name, &anchors) in &stats.name_anchor_totals {
        let occurrences = stats.name_occurrence_totals.get(name).copied().unwrap_or(0);
        if occurrences < anchors {
            return Err(Error::InconsistentStats {
                name: name.clone(),
                anchors,
                occurrences,
            });
        }
        let lp = anchors as f64 / occurrences as f64;
        if lp < lp_threshold {
            continue;
        }
        let mut candidates: Vec<(String, f64)> = stats
            .targets(name)
            .map(|(t, c)| (t.to_string(), c as f64 / anchors as f64))
            .filter(|(_, comm)| *comm >= comm_threshold)
            .collect();
        if candidates.is_empty() {
            continue;
        }
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.insert(name.clone(), (lp, candidates));
    }

    let titles: Vec<String> = kept
        .values()
        .flat_map(|(_, c)| c.iter().map(|(t, _)| t.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ids: HashMap<&str, u32> = titles
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i as u32))
        .collect();
    let mut entries = BTreeMap::new();
    let mut link_probability = BTreeMap::new();
    for (name, (lp, candidates)) in &kept {
        entries.insert(
            name.clone(),
            candidates
                .iter()
                .map(|(t, comm)| CandidateEntity {
                    entity_id: ids[t.as_str()],
                    commonness: *comm,
                })
                .collect(),
        );
        link_probability.insert(name.clone(), *lp);
    }
    Ok(EntityDictionary::assemble(
        entries,
        link_probability,
        titles,
        lp_threshold,
        comm_threshold,
    ))
}

pub fn save_dictionary(dict: &EntityDictionary, path: &Path) -> Result<()> {
    fs::write(path, dict.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_dictionary(path: &Path) -> Result<EntityDictionary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EntityDictionary::from_text(&text, path)
}

fn check_name(name: &str, path: &Path, line: usize) -> Result<()> {
    if name.is_empty() || normalize_name(name) != name {
        return Err(Error::parse(
            path,
            line,
            format!("name {name:?} is empty or not normalized"),
        ));
    }
    Ok(())
}

fn parse_count(field: &str, path: &Path, line: usize) -> Result<u64> {
    field
        .parse()
        .map_err(|e| Error::parse(path, line, format!("bad count {field:?}: {e}")))
}

pub fn anchors_tsv(stats: &AnchorStats) -> String {
    let mut out = String::new();
    for ((name, target), count) in &stats.anchor_counts {
        let _ = writeln!(out, "{name}\t{target}\t{count}");
    }
    out
}

pub fn occurrences_tsv(stats: &AnchorStats) -> String {
    let mut out = String::new();
    for (name, count) in &stats.name_occurrence_totals {
        let _ = writeln!(out, "{name}\t{count}");
    }
    out
}

pub fn write_stats(
    stats: &AnchorStats,
    anchors_path: &Path,
    occurrences_path: &Path,
) -> Result<()> {
    fs::write(anchors_path, anchors_tsv(stats)).map_err(|e| Error::io(anchors_path, e))?;
    fs::write(occurrences_path, occurrences_tsv(stats)).map_err(|e| Error::io(occurrences_path, e))
}

/// Reads a precomputed `anchors.tsv` / `occurrences.tsv` pair. Repeated keys are summed.
pub fn read_stats(anchors_path: &Path, occurrences_path: &Path) -> Result<AnchorStats> {
    let mut stats = AnchorStats::default();
    let anchors = fs::read_to_string(anchors_path).map_err(|e| Error::io(anchors_path, e))?;
    for (i, line) in anchors.lines().enumerate() {
        let no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, target, count] = fields[..] else {
            return Err(Error::parse(
                anchors_path,
                no,
                "expected name<TAB>entity<TAB>count",
            ));
        };
        check_name(name, anchors_path, no)?;
        if target.is_empty() {
            return Err(Error::parse(anchors_path, no, "empty entity title"));
        }
        let count = parse_count(count, anchors_path, no)?;
        if count == 0 {
            return Err(Error::parse(
                anchors_path,
                no,
                "anchor count must be at least 1",
            ));
        }
        stats.add_anchor(name, target, count);
    }
    let occurrences =
        fs::read_to_string(occurrences_path).map_err(|e| Error::io(occurrences_path, e))?;
    for (i, line) in occurrences.lines().enumerate() {
        let no = i + 1;
        let Some((name, count)) = line.split_once('\t') else {
            return Err(Error::parse(
                occurrences_path,
                no,
                "expected name<TAB>count",
            ));
        };
        check_name(name, occurrences_path, no)?;
        stats.add_occurrences(name, parse_count(count, occurrences_path, no)?);
    }
    Ok(stats)
}
