//! End-to-end commands shared by the command-line tool and the tests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::PipelineConfig;
use crate::data::{encode_all, label_set, prepare_all, read_dataset, vocab_from, PreparedDoc};
use crate::detector::{detect_mentions, tokenize};
use crate::dump::for_each_article_in_file;
use crate::embeddings::{load_pretrained, random_init, CoverageReport, Vocabulary};
use crate::error::{Error, Result};
use crate::eval_analysis::{
    evaluate, run_ablations, top_influential_entities, AblationData, AblationMatrix, EvalReport,
    InfluenceTable,
};
use crate::kb_ingest::{
    build_dictionary, extract_anchors, load_dictionary, read_stats, save_dictionary, strip_links,
    write_stats, AnchorStats, EntityDictionary, OccurrenceCounter,
};
use crate::model::{DocumentInput, ModelConfig, ModelParams};
use crate::training::{split_dev, train, EpochRecord, TrainConfig, TrainObserver, TrainOutcome};

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const INFLUENCE: &str = "influential_entities.json";
pub const ABLATIONS_JSON: &str = "ablations.json";
pub const ABLATIONS_TABLE: &str = "ablations.txt";
pub const ABLATIONS_CSV: &str = "ablations.csv";
pub const COVERAGE: &str = "coverage.json";

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Pretrained,
    #[default]
    Random,
}

impl std::fmt::Display for Init {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Init::Pretrained => "pretrained",
            Init::Random => "random",
        })
    }
}

/// Embeddings (random or from a vector file) plus fresh attention/classifier parameters.
pub fn initial_params(
    vocab: &Vocabulary,
    num_classes: usize,
    dim: usize,
    init: Init,
    pretrained: Option<&Path>,
    seed: u64,
) -> Result<(ModelParams, Option<CoverageReport>)> {
    let (words, entities, coverage) = match init {
        Init::Random => {
            let (w, e) = random_init(vocab, dim, seed);
            (w, e, None)
        }
        Init::Pretrained => {
            let path = pretrained.ok_or_else(|| {
                Error::Config("pretrained initialization needs an embeddings file".into())
            })?;
            let (w, e, report) = load_pretrained(path, vocab, dim, seed)?;
            (w, e, Some(report))
        }
    };
    Ok((
        ModelParams::new(words, entities, num_classes, seed)?,
        coverage,
    ))
}

/// Splits off the dev set and trains.
pub fn fit(
    docs: Vec<DocumentInput>,
    params: ModelParams,
    model: &ModelConfig,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let (train_docs, dev_docs) = split_dev(docs, config.dev_fraction, config.seed)?;
    train(&train_docs, &dev_docs, params, model, config, observer)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtractSummary {
    pub files: usize,
    pub documents: usize,
    pub anchor_records: usize,
    pub distinct_names: usize,
    pub name_entity_pairs: usize,
}

fn is_xml_dump(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("xml"))
}

/// Calls `f` for every document in `path`: each article of an `.xml` dump, or
/// the whole file for anything else.
fn for_each_document(path: &Path, f: impl FnMut(&str) -> Result<()>) -> Result<usize> {
    if is_xml_dump(path) {
        for_each_article_in_file(path, f)
    } else {
        let mut f = f;
        f(&read_text(path)?)?;
        Ok(1)
    }
}

/// Two streaming passes over wikitext files or XML dumps: collect anchors,
/// then count plain-text occurrences of the anchored names. Writes
/// `anchors.tsv` and `occurrences.tsv`.
pub fn extract_anchors_cmd(
    inputs: &[PathBuf],
    anchors_out: &Path,
    occurrences_out: &Path,
) -> Result<ExtractSummary> {
    let mut stats = AnchorStats::default();
    let mut anchor_records = 0;
    let mut documents = 0;
    for path in inputs {
        documents += for_each_document(path, |text| {
            for record in extract_anchors(text) {
                stats.add_anchor(&record.name, &record.target, 1);
                anchor_records += 1;
            }
            Ok(())
        })?;
    }
    let mut counter = OccurrenceCounter::new(stats.name_anchor_totals.keys());
    for path in inputs {
        for_each_document(path, |text| {
            let tokens: Vec<String> = tokenize(&strip_links(text))
                .into_iter()
                .map(|t| t.text)
                .collect();
            counter.add(&tokens);
            Ok(())
        })?;
    }
    counter.finish(&mut stats);
    ensure_parent(anchors_out)?;
    ensure_parent(occurrences_out)?;
    write_stats(&stats, anchors_out, occurrences_out)?;
    Ok(ExtractSummary {
        files: inputs.len(),
        documents,
        anchor_records,
        distinct_names: stats.name_anchor_totals.len(),
        name_entity_pairs: stats.anchor_counts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DictionarySummary {
    pub names: usize,
    pub entities: usize,
    pub mean_candidates: f64,
    pub max_name_tokens: usize,
}

pub fn build_dict_cmd(
    anchors: &Path,
    occurrences: &Path,
    lp_threshold: f64,
    commonness_threshold: f64,
    output: &Path,
) -> Result<DictionarySummary> {
    let stats = read_stats(anchors, occurrences)?;
    let dict = build_dictionary(&stats, lp_threshold, commonness_threshold)?;
    ensure_parent(output)?;
    save_dictionary(&dict, output)?;
    Ok(DictionarySummary {
        names: dict.num_names(),
        entities: dict.num_entities(),
        mean_candidates: dict.mean_candidates(),
        max_name_tokens: dict.max_name_tokens(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOut {
    pub entity: String,
    pub commonness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionOut {
    pub start: usize,
    pub end: usize,
    pub name: String,
    pub candidates: Vec<CandidateOut>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectLine {
    pub doc_id: usize,
    pub mentions: Vec<MentionOut>,
}

/// Mention annotations for each non-empty input line. A line containing a
/// tab is treated as `label<TAB>text`.
pub fn detect_lines(input: &str, dict: &EntityDictionary) -> Vec<DetectLine> {
    input
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(doc_id, line)| {
            let text = line.split_once('\t').map_or(line, |(_, t)| t);
            let mentions = detect_mentions(&tokenize(text), dict)
                .into_iter()
                .map(|m| MentionOut {
                    start: m.start,
                    end: m.end,
                    name: m.name,
                    candidates: m
                        .candidates
                        .iter()
                        .map(|c| CandidateOut {
                            entity: dict.title(c.entity_id).to_string(),
                            commonness: c.commonness,
                        })
                        .collect(),
                })
                .collect();
            DetectLine { doc_id, mentions }
        })
        .collect()
}

pub fn detect_cmd(dictionary: &Path, input: &Path, out: &mut dyn Write) -> Result<usize> {
    let dict = load_dictionary(dictionary)?;
    let lines = detect_lines(&read_text(input)?, &dict);
    for line in &lines {
        let json = serde_json::to_string(line).expect("serializable");
        writeln!(out, "{json}").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(lines.len())
}

/// Dictionary, prepared training documents, vocabulary and labels for a config.
pub struct TrainingData {
    pub dictionary: EntityDictionary,
    pub prepared: Vec<PreparedDoc>,
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
}

pub fn load_training_data(config: &PipelineConfig) -> Result<TrainingData> {
    let dictionary = load_dictionary(&config.existing(&config.paths.dictionary)?)?;
    let texts = read_dataset(&config.existing(&config.paths.train)?)?;
    let prepared = prepare_all(&texts, &dictionary);
    let vocab = vocab_from(&prepared, config.min_count)?;
    let labels = label_set(&prepared);
    if labels.is_empty() {
        return Err(Error::InvalidInput("training data is empty".into()));
    }
    Ok(TrainingData {
        dictionary,
        prepared,
        vocab,
        labels,
    })
}

struct FileObserver<'a> {
    log: fs::File,
    log_path: PathBuf,
    checkpoint_path: PathBuf,
    config: ModelConfig,
    vocab: &'a Vocabulary,
    labels: &'a [String],
}

impl TrainObserver for FileObserver<'_> {
    fn on_epoch(&mut self, record: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("serializable");
        writeln!(self.log, "{line}").map_err(|e| Error::io(&self.log_path, e))
    }

    fn on_improvement(&mut self, _epoch: usize, params: &ModelParams) -> Result<()> {
        Checkpoint {
            config: self.config,
            vocab: self.vocab.clone(),
            labels: self.labels.to_vec(),
            params: params.clone(),
        }
        .save(&self.checkpoint_path)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub documents: usize,
    pub words: usize,
    pub entities: usize,
    pub classes: usize,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub epochs_run: usize,
    pub coverage: Option<CoverageReport>,
}

/// Trains per `config`; writes the epoch log and the best checkpoint to the output dir.
pub fn train_cmd(config: &PipelineConfig) -> Result<TrainSummary> {
    let data = load_training_data(config)?;
    let pretrained = match &config.paths.embeddings {
        Some(p) if config.init == Init::Pretrained => Some(config.existing(p)?),
        _ => None,
    };
    let docs = encode_all(&data.prepared, &data.vocab, &data.labels)?;
    let train_config = config.train_config();
    let (params, coverage) = initial_params(
        &data.vocab,
        data.labels.len(),
        config.model.dim,
        config.init,
        pretrained.as_deref(),
        train_config.seed,
    )?;

    let out_dir = config.output_dir();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    if let Some(report) = &coverage {
        write_file(&out_dir.join(COVERAGE), to_json(report))?;
    }
    let log_path = out_dir.join(TRAIN_LOG);
    let log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut observer = FileObserver {
        log,
        log_path,
        checkpoint_path: out_dir.join(CHECKPOINT),
        config: config.model,
        vocab: &data.vocab,
        labels: &data.labels,
    };
    let n_docs = docs.len();
    let outcome = fit(docs, params, &config.model, &train_config, &mut observer)?;
    Ok(TrainSummary {
        documents: n_docs,
        words: data.vocab.num_words(),
        entities: data.vocab.num_entities(),
        classes: data.labels.len(),
        best_epoch: outcome.best_epoch,
        best_dev_accuracy: outcome.best_dev_accuracy,
        epochs_run: outcome.history.len(),
        coverage,
    })
}

fn checkpoint_path(config: &PipelineConfig, explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => config.output_dir().join(CHECKPOINT),
    }
}

/// Loads the checkpoint and the encoded test set, checking that the
/// checkpoint's vocabulary is the one this config's preprocessing produces.
fn load_eval_inputs(
    config: &PipelineConfig,
    checkpoint: Option<&Path>,
) -> Result<(Checkpoint, Vec<DocumentInput>, TrainingData)> {
    let ckpt_path = checkpoint_path(config, checkpoint);
    if !ckpt_path.exists() {
        return Err(Error::io(
            &ckpt_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        ));
    }
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let data = load_training_data(config)?;
    if data.vocab != ckpt.vocab {
        return Err(Error::VocabularyMismatch(format!(
            "checkpoint has {} words / {} entities, current preprocessing gives {} / {}",
            ckpt.vocab.num_words(),
            ckpt.vocab.num_entities(),
            data.vocab.num_words(),
            data.vocab.num_entities()
        )));
    }
    if data.labels != ckpt.labels {
        return Err(Error::VocabularyMismatch(
            "checkpoint class labels differ from the training data".into(),
        ));
    }
    let test_path = config
        .paths
        .test
        .as_ref()
        .ok_or_else(|| Error::Config("paths.test is required for evaluation".into()))?;
    let texts = read_dataset(&config.existing(test_path)?)?;
    let prepared = prepare_all(&texts, &data.dictionary);
    let docs = encode_all(&prepared, &ckpt.vocab, &ckpt.labels)?;
    Ok((ckpt, docs, data))
}

pub fn eval_cmd(config: &PipelineConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let (ckpt, docs, _) = load_eval_inputs(config, checkpoint)?;
    let report = evaluate(&ckpt, &docs)?;
    let out_dir = config.output_dir();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    write_file(&out_dir.join(EVAL_REPORT), report_json(&report))?;
    Ok(report)
}

/// Canonical JSON rendering of an [`EvalReport`].
pub fn report_json(report: &EvalReport) -> String {
    to_json(report)
}

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub influence: Option<InfluenceTable>,
    pub ablations: Option<AblationMatrix>,
}

/// Attention-winner table from the trained checkpoint and, optionally, the
/// full ablation grid (retrains every cell).
pub fn analyze_cmd(
    config: &PipelineConfig,
    checkpoint: Option<&Path>,
    top_n: usize,
    ablations: bool,
) -> Result<AnalysisOutput> {
    let (ckpt, test_docs, data) = load_eval_inputs(config, checkpoint)?;
    let out_dir = config.output_dir();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let influence = if ckpt.config.attention == crate::model::AttentionMode::Uniform {
        None
    } else {
        let table = top_influential_entities(&ckpt, &test_docs, top_n)?;
        write_file(&out_dir.join(INFLUENCE), to_json(&table))?;
        Some(table)
    };

    let ablations = if ablations {
        let pretrained = match &config.paths.embeddings {
            Some(p) => Some(config.existing(p)?),
            None => None,
        };
        let ablation_data = AblationData {
            train: encode_all(&data.prepared, &data.vocab, &data.labels)?,
            vocab: data.vocab,
            labels: data.labels,
            test: test_docs,
        };
        let matrix = run_ablations(
            &ablation_data,
            &config.model,
            &config.train_config(),
            pretrained.as_deref(),
        );
        write_file(&out_dir.join(ABLATIONS_JSON), to_json(&matrix))?;
        write_file(&out_dir.join(ABLATIONS_TABLE), matrix.render_table())?;
        write_file(&out_dir.join(ABLATIONS_CSV), matrix.to_csv())?;
        Some(matrix)
    } else {
        None
    };
    Ok(AnalysisOutput {
        influence,
        ablations,
    })
}
