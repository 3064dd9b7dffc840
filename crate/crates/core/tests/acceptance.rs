//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic;
use std::process::Command;
use std::time::{Duration, Instant};

use naboe::checkpoint::Checkpoint;
use naboe::config::PipelineConfig;
use naboe::data::encode_all;
use naboe::detector::{detect_mentions, tokenize};
use naboe::embeddings::{build_vocab, EmbeddingMatrix};
use naboe::eval_analysis::{evaluate, metrics};
use naboe::kb_ingest::{build_dictionary, stats_from_wikitext, AnchorStats};
use naboe::model::{
    attention_weights, forward, loss_and_gradients, softmax, AttentionMode, Candidate,
    DocumentInput, ModelConfig, ModelParams, Representation,
};
use naboe::pipeline::{self, fit, initial_params, load_training_data};
use naboe::training::count_correct;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

struct Outcome {
    passed: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

const NON_UNIFORM: [AttentionMode; 3] = [
    AttentionMode::Both,
    AttentionMode::CosineOnly,
    AttentionMode::CommonnessOnly,
];

fn gradient_correctness() -> Outcome {
    const STEP: f64 = 1e-5;
    const TOLERANCE: f64 = 1e-4;
    // components smaller than this are compared on an absolute scale
    const FLOOR: f64 = 1e-6;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut instances, mut components, mut worst) = (0, 0, 0.0f64);
    for representation in [Representation::Entity, Representation::Full] {
        for attention in AttentionMode::ALL {
            for k in [1, 2, 3, 5] {
                for n in [1, 5, 20] {
                    let params = random_params(&mut rng, 8, 4);
                    let doc = random_doc(&mut rng, n, k, 4);
                    let config = model(representation, attention, 8);
                    let (_, grads) = loss_and_gradients(&doc, &params, &config).unwrap();
                    let analytic = flatten_gradients(&grads, &params);
                    let numeric = numeric_gradient(&doc, &params, &config, STEP);
                    for (a, n) in analytic.iter().zip(&numeric) {
                        worst = worst.max(relative_error(*a, *n, FLOOR));
                        components += 1;
                    }
                    instances += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        instances >= 20 && worst < TOLERANCE && elapsed < Duration::from_secs(10),
        format!(
            "{instances} instances, {components} components, max relative error {worst:.2e} (< {TOLERANCE:e}), {:.2}s (< 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn random_features(rng: &mut ChaCha8Rng, k: usize) -> Vec<[f64; 2]> {
    (0..k)
        .map(|_| [rng.gen_range(-1.0..=1.0), rng.gen_range(0.0..=1.0)])
        .collect()
}

fn attention_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut sum_err, mut shift_err, mut perm_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut negative = 0;
    for i in 0..1000 {
        let mut params = random_params(&mut rng, 4, 2);
        params.attention_weights = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let mode = NON_UNIFORM[i % 3];
        let k = rng.gen_range(1..=10);
        let features = random_features(&mut rng, k);
        let w = attention_weights(&features, &params, mode);
        negative += w.iter().filter(|x| **x < 0.0).count();
        sum_err = sum_err.max((w.iter().sum::<f64>() - 1.0).abs());

        let offset = rng.gen_range(-10.0..10.0);
        let mut shifted = params.clone();
        shifted.attention_bias += offset;
        let ws = attention_weights(&features, &shifted, mode);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let moved: Vec<f64> = logits.iter().map(|l| l + offset).collect();
        for (a, b) in w
            .iter()
            .zip(&ws)
            .chain(softmax(&logits).iter().zip(&softmax(&moved)))
        {
            shift_err = shift_err.max((a - b).abs());
        }

        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<[f64; 2]> = perm.iter().map(|&j| features[j]).collect();
        let wp = attention_weights(&permuted, &params, mode);
        for (pos, &j) in perm.iter().enumerate() {
            perm_err = perm_err.max((wp[pos] - w[j]).abs());
        }
    }
    outcome(
        negative == 0 && sum_err <= 1e-9 && shift_err <= 1e-12 && perm_err <= 1e-12,
        format!(
            "1000 instances, {negative} negative weights, max |sum-1| {sum_err:.1e}, max shift deviation {shift_err:.1e}, max permutation deviation {perm_err:.1e}"
        ),
    )
}

fn uniform_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..500 {
        let params = random_params(&mut rng, 8, 4);
        let k = rng.gen_range(1..=8);
        let n = rng.gen_range(0..=10);
        let doc = random_doc(&mut rng, n, k, 4);
        let representation = if i % 2 == 0 {
            Representation::Entity
        } else {
            Representation::Full
        };
        let trace = forward(
            &doc,
            &params,
            &model(representation, AttentionMode::Uniform, 8),
        );
        let mut mean = vec![0.0; 8];
        for c in &doc.candidates {
            for (m, v) in mean
                .iter_mut()
                .zip(params.entity_embeddings.row(c.entity as usize))
            {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= k as f64;
        }
        for (a, b) in trace.z_entity.iter().zip(&mean) {
            worst = worst.max((a - b).abs());
        }
        for ((full, e), w) in trace.z_full.iter().zip(&mean).zip(&trace.z_word) {
            worst = worst.max((full - (e + w)).abs());
        }
        checked += 1;
    }
    outcome(
        worst <= 1e-12,
        format!("{checked} instances, max deviation from the unweighted mean {worst:.1e}"),
    )
}

const ALPHABET: [&str; 5] = ["a", "b", "c", "d", "e"];

fn random_name(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(1..=3);
    (0..len)
        .map(|_| *ALPHABET.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// All spans whose tokens spell a key, then earliest start, longest span, resume after it.
fn exhaustive_detection(tokens: &[String], keys: &BTreeSet<String>) -> Vec<(usize, usize, String)> {
    let mut spans = Vec::new();
    for i in 0..tokens.len() {
        for j in i + 1..=tokens.len() {
            let name = tokens[i..j].join(" ");
            if keys.contains(&name) {
                spans.push((i, j, name));
            }
        }
    }
    let mut out = Vec::new();
    let mut cursor = 0;
    while let Some(start) = spans.iter().filter(|s| s.0 >= cursor).map(|s| s.0).min() {
        let best = spans
            .iter()
            .filter(|s| s.0 == start)
            .max_by_key(|s| s.1)
            .unwrap()
            .clone();
        cursor = best.1;
        out.push(best);
    }
    out
}

fn detection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let separators = [" ", "  ", ", ", "-", ". ", "\t"];
    let (mut agree, mut mentions) = (0, 0);
    for _ in 0..1000 {
        let keys: BTreeSet<String> = (0..rng.gen_range(1..=20))
            .map(|_| random_name(&mut rng))
            .collect();
        let mut stats = AnchorStats::default();
        for key in &keys {
            stats.add_anchor(key, &format!("Entity {key}"), 1);
            stats.add_occurrences(key, 1);
        }
        let dict = build_dictionary(&stats, 0.01, 0.03).unwrap();
        let n = rng.gen_range(0..=30);
        let mut text = String::new();
        for i in 0..n {
            if i > 0 {
                text.push_str(separators.choose(&mut rng).unwrap());
            }
            let word = *ALPHABET.choose(&mut rng).unwrap();
            if rng.gen_bool(0.2) {
                text.push_str(&word.to_uppercase());
            } else {
                text.push_str(word);
            }
        }
        let tokens = tokenize(&text);
        let words: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
        let expected = exhaustive_detection(&words, &keys);
        let got = detect_mentions(&tokens, &dict);
        let same = got.len() == expected.len()
            && got.iter().zip(&expected).all(|(m, (s, e, name))| {
                m.start == *s
                    && m.end == *e
                    && &m.name == name
                    && m.candidates.as_slice() == dict.candidates(name).unwrap()
            });
        if same {
            agree += 1;
        }
        mentions += expected.len();
    }
    outcome(
        agree == 1000,
        format!("{agree}/1000 instances identical to the exhaustive oracle ({mentions} mentions)"),
    )
}

fn statistics_oracle() -> Outcome {
    let texts: Vec<String> = toy_wiki_files()
        .iter()
        .map(|p| fs::read_to_string(p).unwrap())
        .collect();
    let stats = stats_from_wikitext(&texts).unwrap();
    // (name, anchored uses, occurrences)
    let link_probability = [
        ("apple", 4, 8),
        ("jaguar", 34, 35),
        ("new york", 2, 3),
        ("python", 1, 100),
        ("spam", 1, 101),
        ("york", 1, 2),
    ];
    // (name, entity, numerator, denominator)
    let commonness = [
        ("apple", "Apple Inc.", 3, 4),
        ("apple", "Apple (fruit)", 1, 4),
        ("jaguar", "Jaguar Cars", 33, 34),
        ("jaguar", "Jaguar", 1, 34),
        ("new york", "New York City", 2, 2),
        ("python", "Python (programming language)", 1, 1),
        ("spam", "Spam (food)", 1, 1),
        ("york", "York", 1, 1),
    ];
    let mut mismatches = Vec::new();
    let names: BTreeSet<&str> = stats
        .name_anchor_totals
        .keys()
        .map(String::as_str)
        .collect();
    let expected_names: BTreeSet<&str> = link_probability.iter().map(|x| x.0).collect();
    if names != expected_names {
        mismatches.push(format!("names {names:?}"));
    }
    for (name, p, q) in link_probability {
        match stats.link_probability_ratio(name) {
            Some((a, b)) if a * q == p * b => {}
            other => mismatches.push(format!("lp({name}) = {other:?}")),
        }
    }
    for (name, entity, p, q) in commonness {
        match stats.commonness_ratio(name, entity) {
            Some((a, b)) if a * q == p * b => {}
            other => mismatches.push(format!("commonness({name}, {entity}) = {other:?}")),
        }
    }
    if stats.anchor_counts.len() != commonness.len() {
        mismatches.push(format!("{} name/entity pairs", stats.anchor_counts.len()));
    }

    let dict = build_dictionary(&stats, 0.01, 0.03).unwrap();
    let retained: Vec<(String, Vec<String>)> = dict
        .entries()
        .map(|(name, cands)| {
            (
                name.to_string(),
                cands
                    .iter()
                    .map(|c| dict.title(c.entity_id).to_string())
                    .collect(),
            )
        })
        .collect();
    let expected: Vec<(String, Vec<String>)> = [
        ("apple", vec!["Apple Inc.", "Apple (fruit)"]),
        ("jaguar", vec!["Jaguar Cars"]),
        ("new york", vec!["New York City"]),
        ("python", vec!["Python (programming language)"]),
        ("york", vec!["York"]),
    ]
    .into_iter()
    .map(|(n, c)| (n.to_string(), c.into_iter().map(String::from).collect()))
    .collect();
    if retained != expected {
        mismatches.push(format!("retained {retained:?}"));
    }
    outcome(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "6 link probabilities and 8 commonness ratios exact; pruned spam (1/101) and Jaguar (1/34), kept python (1/100)".to_string()
        } else {
            mismatches.join("; ")
        },
    )
}

fn end_to_end_overfit() -> Outcome {
    let (tmp, config_path) = synthetic_workspace();
    let config = PipelineConfig::load(&config_path).unwrap();
    assert_eq!(config.threads, 1);
    assert_eq!(config.model.representation, Representation::Entity);
    assert_eq!(config.model.dim, 32);
    let start = Instant::now();
    let summary = pipeline::train_cmd(&config).unwrap();
    let elapsed = start.elapsed();
    let checkpoint = Checkpoint::load(&tmp.path().join("out/checkpoint.bin")).unwrap();
    let data = load_training_data(&config).unwrap();
    let train_docs = encode_all(&data.prepared, &checkpoint.vocab, &checkpoint.labels).unwrap();
    let train_correct = count_correct(&train_docs, &checkpoint.params, &checkpoint.config);
    let train_accuracy = train_correct as f64 / train_docs.len() as f64;
    let report = pipeline::eval_cmd(&config, None).unwrap();
    outcome(
        train_accuracy >= 0.99
            && report.accuracy >= 0.95
            && summary.epochs_run <= 30
            && elapsed < Duration::from_secs(60),
        format!(
            "train accuracy {train_correct}/{} = {train_accuracy:.4} (>= 0.99), test accuracy {}/{} = {:.4} (>= 0.95), {} epochs (best {}), {:.2}s",
            train_docs.len(),
            report.correct,
            report.total,
            report.accuracy,
            summary.epochs_run,
            summary.best_epoch,
            elapsed.as_secs_f64()
        ),
    )
}

/// Naive per-class loops; macro average over classes present in gold.
fn naive_metrics(gold: &[usize], predicted: &[usize], classes: usize) -> (f64, f64) {
    let correct = gold.iter().zip(predicted).filter(|(g, p)| g == p).count();
    let mut f1s = Vec::new();
    for c in 0..classes {
        if !gold.contains(&c) {
            continue;
        }
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for i in 0..gold.len() {
            if predicted[i] == c && gold[i] == c {
                tp += 1;
            } else if predicted[i] == c {
                fp += 1;
            } else if gold[i] == c {
                fn_ += 1;
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        f1s.push(if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        });
    }
    (
        correct as f64 / gold.len() as f64,
        f1s.iter().sum::<f64>() / f1s.len() as f64,
    )
}

/// Checkpoint whose prediction for a single-candidate document is class 0
/// for entity "pos" and class 1 for entity "neg".
fn sign_checkpoint() -> Checkpoint {
    let vocab = build_vocab([(vec!["w"], vec!["pos", "neg"])], 1).unwrap();
    let mut entities = vec![0.0; 2];
    entities[vocab.entity_index("pos").unwrap() as usize] = 1.0;
    entities[vocab.entity_index("neg").unwrap() as usize] = -1.0;
    let params = ModelParams {
        word_embeddings: EmbeddingMatrix::zeros(vocab.num_words(), 1),
        entity_embeddings: EmbeddingMatrix::from_vec(2, 1, entities).unwrap(),
        attention_weights: [0.0; 2],
        attention_bias: 0.0,
        classifier_weights: EmbeddingMatrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap(),
        classifier_bias: vec![0.0; 2],
    };
    Checkpoint {
        config: ModelConfig {
            representation: Representation::Entity,
            attention: AttentionMode::Both,
            dim: 1,
        },
        vocab,
        labels: vec!["c0".into(), "c1".into()],
        params,
    }
}

fn metrics_oracle() -> Outcome {
    // confusion matrix [[1,1],[0,2]]: gold 0 -> {0, 1}, gold 1 -> {1, 1}
    let checkpoint = sign_checkpoint();
    let doc = |entity: &str, label| DocumentInput {
        words: vec![],
        candidates: vec![Candidate {
            entity: checkpoint.vocab.entity_index(entity).unwrap(),
            commonness: 1.0,
        }],
        label: Some(label),
    };
    let docs = [doc("pos", 0), doc("neg", 0), doc("neg", 1), doc("neg", 1)];
    let report = evaluate(&checkpoint, &docs).unwrap();
    let example_ok = report.correct * 4 == 3 * report.total
        && report.accuracy == 0.75
        && (report.macro_f1 - 11.0 / 15.0).abs() <= f64::EPSILON
        && (report.per_class[0].f1 - 2.0 / 3.0).abs() <= f64::EPSILON
        && report.per_class[1].f1 == 0.8;

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut agree = 0;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let classes = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=60);
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let predicted: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let labels: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
        let report = metrics(&gold, &predicted, &labels).unwrap();
        let (accuracy, macro_f1) = naive_metrics(&gold, &predicted, classes);
        let correct = gold.iter().zip(&predicted).filter(|(g, p)| g == p).count();
        let diff = (report.accuracy - accuracy)
            .abs()
            .max((report.macro_f1 - macro_f1).abs());
        worst = worst.max(diff);
        if report.correct == correct && report.total == n && diff <= 1e-12 {
            agree += 1;
        }
    }
    outcome(
        example_ok && agree == 200,
        format!(
            "example: accuracy {} macro-F1 {:.6} (11/15 = {:.6}); naive oracle agrees on {agree}/200 (max deviation {worst:.1e})",
            report.accuracy,
            report.macro_f1,
            11.0 / 15.0
        ),
    )
}

fn determinism() -> Outcome {
    let (tmp, config_path) = synthetic_workspace();
    let out = tmp.path().join("out");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let status = Command::new(env!("CARGO_BIN_EXE_naboe"))
            .arg("--config")
            .arg(&config_path)
            .args(["--threads", "1", "train"])
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        let log = fs::read(out.join(pipeline::TRAIN_LOG)).unwrap();
        let checkpoint = fs::read(out.join(pipeline::CHECKPOINT)).unwrap();
        fs::remove_dir_all(&out).unwrap();
        runs.push((log, checkpoint));
    }
    let same_log = runs[0].0 == runs[1].0;
    let same_checkpoint = runs[0].1 == runs[1].1;
    outcome(
        same_log && same_checkpoint && !runs[0].0.is_empty(),
        format!(
            "log identical: {same_log} ({} bytes), checkpoint identical: {same_checkpoint} ({} bytes)",
            runs[0].0.len(),
            runs[0].1.len()
        ),
    )
}

fn ablation_ordering() -> Outcome {
    let (_tmp, config_path) = synthetic_workspace();
    let config = PipelineConfig::load(&config_path).unwrap();
    let data = load_training_data(&config).unwrap();
    let docs = encode_all(&data.prepared, &data.vocab, &data.labels).unwrap();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let mut dev = [0.0; 2];
        for (slot, attention) in [AttentionMode::Both, AttentionMode::Uniform]
            .into_iter()
            .enumerate()
        {
            let model = ModelConfig {
                attention,
                ..config.model
            };
            let mut train_config = config.train_config();
            train_config.seed = seed;
            let (params, _) = initial_params(
                &data.vocab,
                data.labels.len(),
                model.dim,
                config.init,
                None,
                seed,
            )
            .unwrap();
            dev[slot] = fit(docs.clone(), params, &model, &train_config, &mut ())
                .unwrap()
                .best_dev_accuracy;
        }
        if dev[0] >= dev[1] {
            wins += 1;
        }
        rows.push(format!("seed {seed}: {:.4} vs {:.4}", dev[0], dev[1]));
    }
    outcome(
        wins >= 3,
        format!(
            "attention >= uniform dev accuracy on {wins}/5 seeds ({})",
            rows.join(", ")
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradient_correctness),
        ("attention properties", attention_properties),
        ("uniform-ablation equivalence", uniform_equivalence),
        ("detection oracle", detection_oracle),
        ("statistics oracle", statistics_oracle),
        ("end-to-end overfit", end_to_end_overfit),
        ("metrics oracle", metrics_oracle),
        ("determinism", determinism),
        ("ablation ordering at synthetic scale", ablation_ordering),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(check).unwrap_or_else(|e| {
            let message = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {message}"))
        });
        let status = if result.passed { "PASS" } else { "FAIL" };
        if !result.passed {
            failures += 1;
        }
        println!(
            "[{status}] criterion {}: {name}: {} [{:.2}s]",
            i + 1,
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
