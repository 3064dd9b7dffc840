//! Forward and backward pass of the attentive bag-of-entities classifier.
//!
//! For a document with words `w_1..w_N` and candidate entities `e_1..e_K`:
//!
//! ```text
//! z_word    = mean_i v_{w_i}
//! phi(e)    = (cos(v_e, z_word), commonness(e))
//! a         = softmax_i(w_a . phi(e_i) + b_a)
//! z_entity  = sum_i a_i v_{e_i}
//! z_full    = z_entity + z_word
//! p(y | D)  = softmax(W z + b)        z = z_entity or z_full
//! ```
//!
//! Gradients are derived by hand and flow through both the weighted sum and the
//! cosine feature, so word embeddings receive signal even in the entity-only
//! representation whenever the cosine feature is active.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const NUM_FEATURES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Classify from the attended entity average alone.
    Entity,
    /// Classify from the entity average plus the word average.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    Both,
    CosineOnly,
    CommonnessOnly,
    /// Every candidate weighted 1/K; attention parameters unused.
    Uniform,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 4] = [
        AttentionMode::Both,
        AttentionMode::Uniform,
        AttentionMode::CosineOnly,
        AttentionMode::CommonnessOnly,
    ];

    fn feature_mask(self) -> [f64; NUM_FEATURES] {
        match self {
            AttentionMode::Both => [1.0, 1.0],
            AttentionMode::CosineOnly => [1.0, 0.0],
            AttentionMode::CommonnessOnly => [0.0, 1.0],
            AttentionMode::Uniform => [0.0, 0.0],
        }
    }
}

impl std::fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionMode::Both => "both",
            AttentionMode::CosineOnly => "cosine_only",
            AttentionMode::CommonnessOnly => "commonness_only",
            AttentionMode::Uniform => "uniform",
        })
    }
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Representation::Entity => "entity",
            Representation::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub representation: Representation,
    pub attention: AttentionMode,
    pub dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            representation: Representation::Full,
            attention: AttentionMode::Both,
            dim: crate::embeddings::DEFAULT_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity: u32,
    pub commonness: f64,
}

/// A document reduced to vocabulary indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DocumentInput {
    pub words: Vec<u32>,
    pub candidates: Vec<Candidate>,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub word_embeddings: EmbeddingMatrix,
    pub entity_embeddings: EmbeddingMatrix,
    pub attention_weights: [f64; NUM_FEATURES],
    pub attention_bias: f64,
    /// `classes × dim`.
    pub classifier_weights: EmbeddingMatrix,
    pub classifier_bias: Vec<f64>,
}

impl ModelParams {
    /// Wraps embedding tables with fresh attention and classifier parameters.
    ///
    /// Attention starts at zero (uniform weights); classifier weights are
    /// Glorot-uniform from `seed`, biases zero.
    pub fn new(
        word_embeddings: EmbeddingMatrix,
        entity_embeddings: EmbeddingMatrix,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let dim = word_embeddings.dim();
        if entity_embeddings.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: entity_embeddings.dim(),
            });
        }
        if num_classes == 0 || dim == 0 {
            return Err(Error::InvalidInput(
                "model needs at least one class and a positive dimension".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a5_5e5e_ed00);
        let bound = (6.0 / (dim + num_classes) as f64).sqrt();
        let weights = (0..num_classes * dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Ok(ModelParams {
            word_embeddings,
            entity_embeddings,
            attention_weights: [0.0; NUM_FEATURES],
            attention_bias: 0.0,
            classifier_weights: EmbeddingMatrix::from_vec(num_classes, dim, weights)?,
            classifier_bias: vec![0.0; num_classes],
        })
    }

    pub fn dim(&self) -> usize {
        self.word_embeddings.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier_bias.len()
    }

    pub fn check_document(&self, doc: &DocumentInput) -> Result<()> {
        if let Some(w) = doc
            .words
            .iter()
            .find(|&&w| w as usize >= self.word_embeddings.rows())
        {
            return Err(Error::InvalidInput(format!("word index {w} out of range")));
        }
        if let Some(c) = doc
            .candidates
            .iter()
            .find(|c| c.entity as usize >= self.entity_embeddings.rows())
        {
            return Err(Error::InvalidInput(format!(
                "entity index {} out of range",
                c.entity
            )));
        }
        if let Some(label) = doc.label {
            if label >= self.num_classes() {
                return Err(Error::InvalidLabel {
                    label,
                    classes: self.num_classes(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub z_word: Vec<f64>,
    /// Unmasked `(cosine, commonness)` per candidate.
    pub features: Vec<[f64; NUM_FEATURES]>,
    pub attention: Vec<f64>,
    pub z_entity: Vec<f64>,
    pub z_full: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ForwardTrace {
    /// Highest-scoring class; ties go to the lowest index.
    pub fn prediction(&self) -> usize {
        argmax(&self.logits)
    }

    /// Candidate position with the highest attention; ties go to the earliest.
    pub fn top_attention(&self) -> Option<usize> {
        (!self.attention.is_empty()).then(|| argmax(&self.attention))
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, defined as 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Mean of the document's word embeddings; the zero vector when N = 0.
pub fn compute_z_word(doc: &DocumentInput, params: &ModelParams) -> Vec<f64> {
    let mut z = vec![0.0; params.dim()];
    if doc.words.is_empty() {
        return z;
    }
    for &w in &doc.words {
        for (acc, v) in z.iter_mut().zip(params.word_embeddings.row(w as usize)) {
            *acc += v;
        }
    }
    let n = doc.words.len() as f64;
    z.iter_mut().for_each(|x| *x /= n);
    z
}

pub fn attention_features(
    candidate: &Candidate,
    z_word: &[f64],
    params: &ModelParams,
) -> [f64; NUM_FEATURES] {
    let v = params.entity_embeddings.row(candidate.entity as usize);
    [cosine(v, z_word), candidate.commonness]
}

/// Pre-softmax attention scores `w_a . (mask * phi) + b_a`.
pub fn attention_logits(
    features: &[[f64; NUM_FEATURES]],
    params: &ModelParams,
    mode: AttentionMode,
) -> Vec<f64> {
    let mask = mode.feature_mask();
    features
        .iter()
        .map(|f| {
            (0..NUM_FEATURES)
                .map(|j| params.attention_weights[j] * mask[j] * f[j])
                .sum::<f64>()
                + params.attention_bias
        })
        .collect()
}

/// Normalized attention over candidates; empty when K = 0.
pub fn attention_weights(
    features: &[[f64; NUM_FEATURES]],
    params: &ModelParams,
    mode: AttentionMode,
) -> Vec<f64> {
    if features.is_empty() {
        return Vec::new();
    }
    if mode == AttentionMode::Uniform {
        let k = features.len() as f64;
        return vec![1.0 / k; features.len()];
    }
    softmax(&attention_logits(features, params, mode))
}

pub fn compute_z_entity(doc: &DocumentInput, attention: &[f64], params: &ModelParams) -> Vec<f64> {
    let mut z = vec![0.0; params.dim()];
    for (c, a) in doc.candidates.iter().zip(attention) {
        for (acc, v) in z
            .iter_mut()
            .zip(params.entity_embeddings.row(c.entity as usize))
        {
            *acc += a * v;
        }
    }
    z
}

pub fn compute_z_full(z_entity: &[f64], z_word: &[f64]) -> Vec<f64> {
    z_entity.iter().zip(z_word).map(|(e, w)| e + w).collect()
}

pub fn forward(doc: &DocumentInput, params: &ModelParams, config: &ModelConfig) -> ForwardTrace {
    let z_word = compute_z_word(doc, params);
    let features: Vec<_> = doc
        .candidates
        .iter()
        .map(|c| attention_features(c, &z_word, params))
        .collect();
    let attention = attention_weights(&features, params, config.attention);
    let z_entity = compute_z_entity(doc, &attention, params);
    let z_full = compute_z_full(&z_entity, &z_word);
    let z = match config.representation {
        Representation::Entity => &z_entity,
        Representation::Full => &z_full,
    };
    let logits: Vec<f64> = (0..params.num_classes())
        .map(|k| dot(params.classifier_weights.row(k), z) + params.classifier_bias[k])
        .collect();
    let probabilities = softmax(&logits);
    ForwardTrace {
        z_word,
        features,
        attention,
        z_entity,
        z_full,
        logits,
        probabilities,
    }
}

/// Gradient of the loss with respect to [`ModelParams`].
///
/// Embedding gradients are sparse: only rows touched by the document appear.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub word_embeddings: BTreeMap<u32, Vec<f64>>,
    pub entity_embeddings: BTreeMap<u32, Vec<f64>>,
    pub attention_weights: [f64; NUM_FEATURES],
    pub attention_bias: f64,
    pub classifier_weights: Vec<f64>,
    pub classifier_bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros(params: &ModelParams) -> Self {
        Gradients {
            word_embeddings: BTreeMap::new(),
            entity_embeddings: BTreeMap::new(),
            attention_weights: [0.0; NUM_FEATURES],
            attention_bias: 0.0,
            classifier_weights: vec![0.0; params.classifier_weights.as_slice().len()],
            classifier_bias: vec![0.0; params.num_classes()],
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        fn add_rows(dst: &mut BTreeMap<u32, Vec<f64>>, src: &BTreeMap<u32, Vec<f64>>, scale: f64) {
            for (i, row) in src {
                let acc = dst.entry(*i).or_insert_with(|| vec![0.0; row.len()]);
                for (a, g) in acc.iter_mut().zip(row) {
                    *a += scale * g;
                }
            }
        }
        add_rows(&mut self.word_embeddings, &other.word_embeddings, scale);
        add_rows(&mut self.entity_embeddings, &other.entity_embeddings, scale);
        for (a, g) in self
            .attention_weights
            .iter_mut()
            .zip(&other.attention_weights)
        {
            *a += scale * g;
        }
        self.attention_bias += scale * other.attention_bias;
        for (a, g) in self
            .classifier_weights
            .iter_mut()
            .zip(&other.classifier_weights)
        {
            *a += scale * g;
        }
        for (a, g) in self.classifier_bias.iter_mut().zip(&other.classifier_bias) {
            *a += scale * g;
        }
    }
}

fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Cross-entropy loss `-log p(label)` and its analytic gradient.
pub fn loss_and_gradients(
    doc: &DocumentInput,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(f64, Gradients)> {
    let label = doc
        .label
        .ok_or_else(|| Error::InvalidInput("document has no label".into()))?;
    params.check_document(doc)?;
    let dim = params.dim();
    let trace = forward(doc, params, config);
    let loss = log_sum_exp(&trace.logits) - trace.logits[label];

    let mut grads = Gradients::zeros(params);
    let z = match config.representation {
        Representation::Entity => &trace.z_entity,
        Representation::Full => &trace.z_full,
    };

    // classifier head
    let mut dz = vec![0.0; dim];
    for (k, p) in trace.probabilities.iter().enumerate() {
        let dlogit = p - if k == label { 1.0 } else { 0.0 };
        grads.classifier_bias[k] = dlogit;
        axpy(
            &mut grads.classifier_weights[k * dim..(k + 1) * dim],
            dlogit,
            z,
        );
        axpy(&mut dz, dlogit, params.classifier_weights.row(k));
    }

    let mut dz_word = match config.representation {
        Representation::Entity => vec![0.0; dim],
        Representation::Full => dz.clone(),
    };
    let mut word_path = config.representation == Representation::Full;

    // weighted entity sum
    let rows = &mut grads.entity_embeddings;
    for (c, a) in doc.candidates.iter().zip(&trace.attention) {
        let row = rows.entry(c.entity).or_insert_with(|| vec![0.0; dim]);
        axpy(row, *a, &dz);
    }

    if config.attention != AttentionMode::Uniform && !doc.candidates.is_empty() {
        let mask = config.attention.feature_mask();
        let d_attention: Vec<f64> = doc
            .candidates
            .iter()
            .map(|c| dot(params.entity_embeddings.row(c.entity as usize), &dz))
            .collect();
        let mean: f64 = trace
            .attention
            .iter()
            .zip(&d_attention)
            .map(|(a, d)| a * d)
            .sum();
        let z_word_norm = norm(&trace.z_word);
        for (i, c) in doc.candidates.iter().enumerate() {
            let d_score = trace.attention[i] * (d_attention[i] - mean);
            for ((g, m), f) in grads
                .attention_weights
                .iter_mut()
                .zip(mask)
                .zip(trace.features[i])
            {
                *g += d_score * m * f;
            }
            grads.attention_bias += d_score;

            if mask[0] == 0.0 || z_word_norm == 0.0 {
                continue;
            }
            let v = params.entity_embeddings.row(c.entity as usize);
            let v_norm = norm(v);
            if v_norm == 0.0 {
                continue;
            }
            word_path = true;
            let d_cos = d_score * params.attention_weights[0];
            let cos = trace.features[i][0];
            let inv = 1.0 / (v_norm * z_word_norm);
            let row = rows.get_mut(&c.entity).expect("row inserted above");
            for k in 0..dim {
                row[k] += d_cos * (trace.z_word[k] * inv - cos * v[k] / (v_norm * v_norm));
                dz_word[k] +=
                    d_cos * (v[k] * inv - cos * trace.z_word[k] / (z_word_norm * z_word_norm));
            }
        }
    }

    if word_path && !doc.words.is_empty() {
        let scale = 1.0 / doc.words.len() as f64;
        for &w in &doc.words {
            let row = grads
                .word_embeddings
                .entry(w)
                .or_insert_with(|| vec![0.0; dim]);
            axpy(row, scale, &dz_word);
        }
    }
    Ok((loss, grads))
}

/// Cross-entropy loss alone, from the forward pass.
pub fn loss(doc: &DocumentInput, params: &ModelParams, config: &ModelConfig) -> Result<f64> {
    let label = doc
        .label
        .ok_or_else(|| Error::InvalidInput("document has no label".into()))?;
    params.check_document(doc)?;
    let trace = forward(doc, params, config);
    Ok(log_sum_exp(&trace.logits) - trace.logits[label])
}
