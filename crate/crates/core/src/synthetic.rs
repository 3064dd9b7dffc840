//! Deterministic synthetic corpus: a small wikitext collection for building
//! the entity dictionary and a four-class labeled dataset whose classes are
//! signalled by entity mentions.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const SEED: u64 = 20_190_612;

pub const CLASSES: [&str; 4] = ["astronomy", "cooking", "finance", "football"];
pub const TRAIN_PER_CLASS: usize = 40;
pub const TEST_PER_CLASS: usize = 10;

/// `(anchor text, target title, anchor count)`.
type Link = (&'static str, &'static str, usize);

const CLASS_ENTITIES: [&[Link]; 4] = [
    &[
        ("Jupiter", "Jupiter", 9),
        ("Saturn", "Saturn", 8),
        ("Andromeda", "Andromeda Galaxy", 6),
        ("Hubble", "Hubble Space Telescope", 7),
        ("Milky Way", "Milky Way", 8),
        ("black hole", "Black hole", 6),
        ("nebula", "Nebula", 5),
        ("comet", "Comet", 5),
    ],
    &[
        ("risotto", "Risotto", 6),
        ("sourdough", "Sourdough", 6),
        ("saffron", "Saffron", 5),
        ("cast iron", "Cast-iron cookware", 5),
        ("Julia Child", "Julia Child", 7),
        ("paella", "Paella", 6),
        ("olive oil", "Olive oil", 8),
        ("basil", "Basil", 5),
    ],
    &[
        ("Wall Street", "Wall Street", 9),
        ("Federal Reserve", "Federal Reserve", 8),
        ("Nasdaq", "Nasdaq", 7),
        ("Dow Jones", "Dow Jones Industrial Average", 6),
        ("hedge fund", "Hedge fund", 6),
        ("bitcoin", "Bitcoin", 7),
        ("Goldman Sachs", "Goldman Sachs", 6),
        ("inflation", "Inflation", 8),
    ],
    &[
        ("Premier League", "Premier League", 9),
        ("Manchester United", "Manchester United F.C.", 8),
        ("World Cup", "FIFA World Cup", 8),
        ("Lionel Messi", "Lionel Messi", 7),
        ("penalty kick", "Penalty kick (association football)", 5),
        ("offside", "Offside (association football)", 5),
        ("Champions League", "UEFA Champions League", 7),
        ("Anfield", "Anfield", 5),
    ],
];

/// Names shared by several senses; the last sense of `mercury` falls below
/// the default commonness threshold.
const AMBIGUOUS: &[Link] = &[
    ("Mercury", "Mercury (planet)", 20),
    ("Mercury", "Mercury (element)", 10),
    ("Mercury", "Freddie Mercury", 9),
    ("Mercury", "Mercury (automobile)", 1),
    ("star", "Star", 10),
    ("star", "Celebrity", 6),
    ("pitch", "Pitch (sports field)", 8),
    ("pitch", "Pitch (music)", 4),
    ("stock", "Stock (finance)", 10),
    ("stock", "Stock (food)", 7),
    ("pan", "Cookware and bakeware", 6),
    ("pan", "Pan (moon)", 3),
    ("Mars", "Mars", 10),
    ("Mars", "Mars (chocolate bar)", 4),
    ("bond", "Bond (finance)", 9),
    ("bond", "James Bond", 3),
];

/// Names that are linked rarely but appear often in plain text, so they fall
/// below the default link-probability threshold.
const RARELY_LINKED: &[(&str, &str, usize, usize)] = &[
    ("goal", "Goal (sports)", 1, 150),
    ("market", "Market (economics)", 1, 120),
];

/// Ambiguous names sprinkled over documents of every class.
const SHARED_NAMES: &[&str] = &["mercury", "star", "pitch", "stock", "pan", "mars", "bond"];

/// Per-document ranges for class-specific and shared names, and the chance
/// of one class-specific name from another class.
const INFORMATIVE: (usize, usize) = (2, 3);
const SHARED: (usize, usize) = (1, 3);
const DISTRACTOR_PROBABILITY: f64 = 0.3;

const CLASS_WORDS: [&[&str]; 4] = [
    &[
        "orbit", "light", "years", "observed", "planets", "moons", "bright", "distant", "sky",
    ],
    &[
        "recipe", "simmer", "flavour", "kitchen", "bake", "dough", "chef", "salt", "roast",
    ],
    &[
        "shares",
        "investors",
        "rates",
        "prices",
        "trading",
        "profit",
        "quarter",
        "market",
        "debt",
    ],
    &[
        "match", "striker", "season", "scored", "coach", "fans", "league", "goal", "defender",
    ],
];

const FILLER: &[&str] = &[
    "the", "a", "of", "and", "in", "to", "on", "with", "for", "this", "that", "new", "report",
    "people", "said", "today", "many", "some", "more", "after", "before", "during", "week",
    "first", "last", "were", "was", "is", "are", "about", "from", "by", "local", "story",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    /// `(file name, wikitext)`.
    pub wiki: Vec<(String, String)>,
    pub train: String,
    pub test: String,
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty word list")
}

fn link_markup(anchor: &str, target: &str) -> String {
    if anchor == target {
        format!("[[{target}]]")
    } else {
        format!("[[{target}|{anchor}]]")
    }
}

fn filler_run(rng: &mut ChaCha8Rng, words: &mut Vec<String>, min: usize, max: usize) {
    for _ in 0..rng.gen_range(min..=max) {
        words.push(pick(rng, FILLER).to_string());
    }
}

fn sentence(rng: &mut ChaCha8Rng, core: &str, topic_words: &[&str]) -> String {
    let mut words = Vec::new();
    filler_run(rng, &mut words, 2, 5);
    words.push(pick(rng, topic_words).to_string());
    words.push(core.to_string());
    filler_run(rng, &mut words, 1, 4);
    let mut text = words.join(" ");
    if let Some(first) = text.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    text.push('.');
    text
}

fn wikitext(rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
    // sentences per file: one file per class plus a miscellany
    let mut files: Vec<Vec<String>> = vec![Vec::new(); CLASSES.len() + 1];
    let misc = CLASSES.len();
    for (class, links) in CLASS_ENTITIES.iter().enumerate() {
        for &(anchor, target, count) in links.iter() {
            for i in 0..count {
                let core = link_markup(anchor, target);
                files[class].push(sentence(rng, &core, CLASS_WORDS[class]));
                // one unlinked mention per three links
                if i % 3 == 0 {
                    files[class].push(sentence(rng, &anchor.to_lowercase(), CLASS_WORDS[class]));
                }
            }
        }
    }
    for &(anchor, target, count) in AMBIGUOUS {
        for _ in 0..count {
            let core = link_markup(anchor, target);
            files[misc].push(sentence(rng, &core, FILLER));
        }
    }
    for &(anchor, target, links, plain) in RARELY_LINKED {
        for _ in 0..links {
            files[misc].push(sentence(rng, &link_markup(anchor, target), FILLER));
        }
        for _ in 0..plain {
            files[misc].push(sentence(rng, anchor, FILLER));
        }
    }
    let mut out = Vec::new();
    for (i, mut sentences) in files.into_iter().enumerate() {
        sentences.shuffle(rng);
        let title = CLASSES.get(i).copied().unwrap_or("miscellany");
        let mut text = format!("'''{title}'''\n\n");
        for paragraph in sentences.chunks(6) {
            text.push_str(&paragraph.join(" "));
            text.push_str("\n\n");
        }
        text.push_str(&format!("[[Category:{title}]]\n"));
        out.push((format!("{title}.wiki"), text));
    }
    out
}

fn document(rng: &mut ChaCha8Rng, class: usize) -> String {
    let mut words: Vec<String> = Vec::new();
    let names: Vec<&str> = CLASS_ENTITIES[class].iter().map(|l| l.0).collect();
    for _ in 0..rng.gen_range(INFORMATIVE.0..=INFORMATIVE.1) {
        words.push(pick(rng, &names).to_lowercase());
    }
    if rng.gen_bool(DISTRACTOR_PROBABILITY) {
        let other = (class + rng.gen_range(1..CLASSES.len())) % CLASSES.len();
        let (name, _, _) = *CLASS_ENTITIES[other].choose(rng).expect("non-empty");
        words.push(name.to_lowercase());
    }
    for _ in 0..rng.gen_range(SHARED.0..=SHARED.1) {
        words.push(pick(rng, SHARED_NAMES).to_string());
    }
    for _ in 0..rng.gen_range(3..=6) {
        words.push(pick(rng, CLASS_WORDS[class]).to_string());
    }
    filler_run(rng, &mut words, 8, 16);
    words.shuffle(rng);
    words.join(" ")
}

fn dataset(rng: &mut ChaCha8Rng, per_class: usize) -> String {
    let mut lines = Vec::new();
    for _ in 0..per_class {
        for (class, label) in CLASSES.iter().enumerate() {
            lines.push(format!("{label}\t{}", document(rng, class)));
        }
    }
    lines.join("\n") + "\n"
}

pub fn generate() -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let wiki = wikitext(&mut rng);
    let train = dataset(&mut rng, TRAIN_PER_CLASS);
    let test = dataset(&mut rng, TEST_PER_CLASS);
    SyntheticCorpus { wiki, train, test }
}

impl SyntheticCorpus {
    /// Writes `wiki/*.wiki`, `train.tsv` and `test.tsv` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let wiki_dir = dir.join("wiki");
        fs::create_dir_all(&wiki_dir).map_err(|e| Error::io(&wiki_dir, e))?;
        for (name, text) in &self.wiki {
            let path = wiki_dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        for (name, text) in [("train.tsv", &self.train), ("test.tsv", &self.test)] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
