//! Accuracy / F1 reports, attention-winner counts and the ablation grid.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::embeddings::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{forward, AttentionMode, DocumentInput, ModelConfig, Representation};
use crate::pipeline::{fit, initial_params, Init};
use crate::training::TrainConfig;

pub const DEFAULT_TOP_N: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics from parallel gold/predicted class indices.
///
/// `per_class` covers every class in `classes`; the macro average is taken over
/// classes with at least one gold document. 0/0 precision or recall counts as 0.
pub fn metrics(gold: &[usize], predicted: &[usize], classes: &[String]) -> Result<EvalReport> {
    if gold.is_empty() {
        return Err(Error::InvalidInput(
            "cannot evaluate an empty document set".into(),
        ));
    }
    if gold.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            found: predicted.len(),
        });
    }
    let c = classes.len();
    if let Some(&bad) = gold.iter().chain(predicted).find(|&&k| k >= c) {
        return Err(Error::InvalidLabel {
            label: bad,
            classes: c,
        });
    }
    let mut true_pos = vec![0usize; c];
    let mut pred_count = vec![0usize; c];
    let mut gold_count = vec![0usize; c];
    for (&g, &p) in gold.iter().zip(predicted) {
        gold_count[g] += 1;
        pred_count[p] += 1;
        if g == p {
            true_pos[g] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let precision = ratio(true_pos[k], pred_count[k]);
            let recall = ratio(true_pos[k], gold_count[k]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                class: classes[k].clone(),
                precision,
                recall,
                f1,
                support: gold_count[k],
            }
        })
        .collect();
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let macro_f1 = present.iter().map(|m| m.f1).sum::<f64>() / present.len() as f64;
    let correct: usize = true_pos.iter().sum();
    Ok(EvalReport {
        accuracy: ratio(correct, gold.len()),
        macro_f1,
        correct,
        total: gold.len(),
        per_class,
    })
}

fn gold_labels(docs: &[DocumentInput]) -> Result<Vec<usize>> {
    docs.iter()
        .map(|d| {
            d.label
                .ok_or_else(|| Error::InvalidInput("evaluation document without a label".into()))
        })
        .collect()
}

pub fn evaluate(checkpoint: &Checkpoint, docs: &[DocumentInput]) -> Result<EvalReport> {
    let gold = gold_labels(docs)?;
    for d in docs {
        checkpoint.params.check_document(d)?;
    }
    let predicted: Vec<usize> = docs
        .iter()
        .map(|d| forward(d, &checkpoint.params, &checkpoint.config).prediction())
        .collect();
    metrics(&gold, &predicted, &checkpoint.labels)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCount {
    pub entity: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfluence {
    pub class: String,
    /// Documents of this class with at least one candidate entity.
    pub documents: usize,
    pub entities: Vec<EntityCount>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfluenceTable {
    pub classes: Vec<ClassInfluence>,
    /// Documents with no candidate entities.
    pub skipped_docs: usize,
}

/// For each gold class, the entities that most often receive a document's
/// highest attention weight. Ties in count are ordered by entity title.
pub fn top_influential_entities(
    checkpoint: &Checkpoint,
    docs: &[DocumentInput],
    top_n: usize,
) -> Result<InfluenceTable> {
    if checkpoint.config.attention == AttentionMode::Uniform {
        return Err(Error::InvalidInput(
            "uniform attention has no highest-weighted entity".into(),
        ));
    }
    let gold = gold_labels(docs)?;
    let mut counts: Vec<HashMap<u32, usize>> = vec![HashMap::new(); checkpoint.labels.len()];
    let mut documents = vec![0usize; checkpoint.labels.len()];
    let mut skipped_docs = 0;
    for (doc, &label) in docs.iter().zip(&gold) {
        checkpoint.params.check_document(doc)?;
        let trace = forward(doc, &checkpoint.params, &checkpoint.config);
        match trace.top_attention() {
            Some(pos) => {
                *counts[label].entry(doc.candidates[pos].entity).or_insert(0) += 1;
                documents[label] += 1;
            }
            None => skipped_docs += 1,
        }
    }
    let vocab = &checkpoint.vocab;
    let classes = counts
        .into_iter()
        .enumerate()
        .map(|(k, per_entity)| {
            let mut entities: Vec<EntityCount> = per_entity
                .into_iter()
                .map(|(e, count)| EntityCount {
                    entity: vocab.entity(e).to_string(),
                    count,
                })
                .collect();
            entities.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.entity.cmp(&b.entity)));
            entities.truncate(top_n);
            ClassInfluence {
                class: checkpoint.labels[k].clone(),
                documents: documents[k],
                entities,
            }
        })
        .collect();
    Ok(InfluenceTable {
        classes,
        skipped_docs,
    })
}

/// Encoded train/test data shared by every ablation cell.
#[derive(Debug, Clone)]
pub struct AblationData {
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
    /// Training documents before the dev split.
    pub train: Vec<DocumentInput>,
    pub test: Vec<DocumentInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub test: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub representation: Representation,
    pub attention: AttentionMode,
    pub init: Init,
    pub outcome: std::result::Result<CellResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub cells: Vec<AblationCell>,
}

/// Trains and evaluates every combination of representation, attention mode
/// and initialization. A failing cell records its error and the rest still run.
pub fn run_ablations(
    data: &AblationData,
    base: &ModelConfig,
    train_config: &TrainConfig,
    pretrained: Option<&Path>,
) -> AblationMatrix {
    let mut cells = Vec::new();
    for representation in [Representation::Entity, Representation::Full] {
        for attention in AttentionMode::ALL {
            for init in [Init::Pretrained, Init::Random] {
                let config = ModelConfig {
                    representation,
                    attention,
                    ..*base
                };
                let outcome = run_cell(data, &config, train_config, init, pretrained)
                    .map_err(|e| e.to_string());
                cells.push(AblationCell {
                    representation,
                    attention,
                    init,
                    outcome,
                });
            }
        }
    }
    AblationMatrix { cells }
}

fn run_cell(
    data: &AblationData,
    config: &ModelConfig,
    train_config: &TrainConfig,
    init: Init,
    pretrained: Option<&Path>,
) -> Result<CellResult> {
    let (params, _) = initial_params(
        &data.vocab,
        data.labels.len(),
        config.dim,
        init,
        pretrained,
        train_config.seed,
    )?;
    let outcome = fit(data.train.clone(), params, config, train_config, &mut ())?;
    let checkpoint = Checkpoint {
        config: *config,
        vocab: data.vocab.clone(),
        labels: data.labels.clone(),
        params: outcome.best_params,
    };
    Ok(CellResult {
        best_epoch: outcome.best_epoch,
        best_dev_accuracy: outcome.best_dev_accuracy,
        test: evaluate(&checkpoint, &data.test)?,
    })
}

impl AblationMatrix {
    pub fn cell(
        &self,
        representation: Representation,
        attention: AttentionMode,
        init: Init,
    ) -> Option<&AblationCell> {
        self.cells.iter().find(|c| {
            c.representation == representation && c.attention == attention && c.init == init
        })
    }

    fn rows(&self) -> Vec<[String; 8]> {
        self.cells
            .iter()
            .map(|c| {
                let (dev, acc, f1, epoch, err) = match &c.outcome {
                    Ok(r) => (
                        format!("{:.4}", r.best_dev_accuracy),
                        format!("{:.4}", r.test.accuracy),
                        format!("{:.4}", r.test.macro_f1),
                        r.best_epoch.to_string(),
                        String::new(),
                    ),
                    Err(e) => ("-".into(), "-".into(), "-".into(), "-".into(), e.clone()),
                };
                [
                    c.representation.to_string(),
                    c.attention.to_string(),
                    c.init.to_string(),
                    dev,
                    acc,
                    f1,
                    epoch,
                    err,
                ]
            })
            .collect()
    }

    const HEADER: [&'static str; 8] = [
        "representation",
        "attention",
        "init",
        "dev_acc",
        "test_acc",
        "test_macro_f1",
        "best_epoch",
        "error",
    ];

    /// Column-aligned plain-text table.
    pub fn render_table(&self) -> String {
        let rows = self.rows();
        let mut widths: Vec<usize> = Self::HEADER.iter().map(|h| h.len()).collect();
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cells: Vec<&str>| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(Self::HEADER.to_vec());
        for row in &rows {
            line(row.iter().map(String::as_str).collect());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = Self::HEADER.join(",");
        out.push('\n');
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|c| quote(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Per-class F1 as `class → f1`, convenient for tabulating.
pub fn class_f1(report: &EvalReport) -> BTreeMap<String, f64> {
    report
        .per_class
        .iter()
        .map(|m| (m.class.clone(), m.f1))
        .collect()
}
