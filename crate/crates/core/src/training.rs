//! Mini-batch Adam training with dev-set early stopping.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    forward, loss_and_gradients, DocumentInput, Gradients, ModelConfig, ModelParams, NUM_FEATURES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub dev_fraction: f64,
    /// Write wall-clock time into the epoch log. Off for byte-reproducible logs.
    pub log_elapsed: bool,
    #[serde(skip)]
    pub seed: u64,
    /// Per-document gradients are computed on this many threads. The batch sum
    /// is always taken in document order, so results do not depend on it.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            max_epochs: 30,
            patience: 5,
            dev_fraction: 0.05,
            log_elapsed: true,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return bad("dev_fraction must be in (0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
        {
            return bad("learning_rate must be positive and Adam betas in [0, 1)");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }
}

/// Seeded shuffle, then the first `ceil(dev_fraction * n)` items become the dev set.
///
/// Returns `(train, dev)`.
pub fn split_dev<T>(docs: Vec<T>, dev_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let n = docs.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 documents to split off a dev set, got {n}"
        )));
    }
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::Config("dev_fraction must be in (0, 1)".into()));
    }
    // tolerance keeps products like 0.05 * 100 from rounding up to 6
    let n_dev = ((dev_fraction * n as f64) - 1e-9)
        .ceil()
        .clamp(1.0, (n - 1) as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<T>> = docs.into_iter().map(Some).collect();
    let mut dev = Vec::with_capacity(n_dev);
    let mut train = Vec::with_capacity(n - n_dev);
    for (rank, i) in order.into_iter().enumerate() {
        let doc = slots[i].take().expect("index visited once");
        if rank < n_dev {
            dev.push(doc);
        } else {
            train.push(doc);
        }
    }
    Ok((train, dev))
}

/// Adam moments with the same shapes as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Moments,
    second_moment: Moments,
    step_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    word_embeddings: Vec<f64>,
    entity_embeddings: Vec<f64>,
    attention_weights: [f64; NUM_FEATURES],
    attention_bias: f64,
    classifier_weights: Vec<f64>,
    classifier_bias: Vec<f64>,
}

impl Moments {
    fn zeros(params: &ModelParams) -> Self {
        Moments {
            word_embeddings: vec![0.0; params.word_embeddings.as_slice().len()],
            entity_embeddings: vec![0.0; params.entity_embeddings.as_slice().len()],
            attention_weights: [0.0; NUM_FEATURES],
            attention_bias: 0.0,
            classifier_weights: vec![0.0; params.classifier_weights.as_slice().len()],
            classifier_bias: vec![0.0; params.num_classes()],
        }
    }
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            first_moment: Moments::zeros(params),
            second_moment: Moments::zeros(params),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

struct AdamCoefficients {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_size: f64,
    correction1: f64,
    correction2: f64,
}

impl AdamCoefficients {
    #[inline]
    fn update(&self, param: &mut f64, grad: f64, m: &mut f64, v: &mut f64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * grad;
        *v = self.beta2 * *v + (1.0 - self.beta2) * grad * grad;
        let m_hat = *m / self.correction1;
        let v_hat = *v / self.correction2;
        *param -= self.step_size * m_hat / (v_hat.sqrt() + self.epsilon);
    }

    fn dense(&self, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
        for i in 0..params.len() {
            self.update(&mut params[i], grads[i], &mut m[i], &mut v[i]);
        }
    }

    /// Every element advances; rows absent from `grads` see a zero gradient.
    fn sparse_rows(
        &self,
        params: &mut [f64],
        dim: usize,
        grads: &BTreeMap<u32, Vec<f64>>,
        m: &mut [f64],
        v: &mut [f64],
    ) {
        let mut pending = grads.iter().peekable();
        for (row, ((p, m), v)) in params
            .chunks_mut(dim)
            .zip(m.chunks_mut(dim))
            .zip(v.chunks_mut(dim))
            .enumerate()
        {
            let g = pending
                .next_if(|(&r, _)| r as usize == row)
                .map(|(_, g)| g.as_slice());
            for k in 0..dim {
                self.update(&mut p[k], g.map_or(0.0, |g| g[k]), &mut m[k], &mut v[k]);
            }
        }
    }
}

fn check_finite(grads: &Gradients) -> Result<()> {
    let bad = |name: String| Err(Error::NonFinite { tensor: name });
    for (table, rows) in [
        ("word_embeddings", &grads.word_embeddings),
        ("entity_embeddings", &grads.entity_embeddings),
    ] {
        for (r, row) in rows {
            if row.iter().any(|g| !g.is_finite()) {
                return bad(format!("{table} gradient (row {r})"));
            }
        }
    }
    if grads.attention_weights.iter().any(|g| !g.is_finite()) {
        return bad("attention_weights gradient".into());
    }
    if !grads.attention_bias.is_finite() {
        return bad("attention_bias gradient".into());
    }
    if grads.classifier_weights.iter().any(|g| !g.is_finite()) {
        return bad("classifier_weights gradient".into());
    }
    if grads.classifier_bias.iter().any(|g| !g.is_finite()) {
        return bad("classifier_bias gradient".into());
    }
    Ok(())
}

/// One bias-corrected Adam update over every parameter.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    check_finite(grads)?;
    if grads.classifier_weights.len() != params.classifier_weights.as_slice().len()
        || grads.classifier_bias.len() != params.num_classes()
    {
        return Err(Error::DimensionMismatch {
            expected: params.classifier_weights.as_slice().len(),
            found: grads.classifier_weights.len(),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let coef = AdamCoefficients {
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        epsilon: config.adam_epsilon,
        step_size: config.learning_rate,
        correction1: 1.0 - config.adam_beta1.powi(t),
        correction2: 1.0 - config.adam_beta2.powi(t),
    };
    let dim = params.dim();
    let (m, v) = (&mut state.first_moment, &mut state.second_moment);
    coef.sparse_rows(
        params.word_embeddings.as_mut_slice(),
        dim,
        &grads.word_embeddings,
        &mut m.word_embeddings,
        &mut v.word_embeddings,
    );
    coef.sparse_rows(
        params.entity_embeddings.as_mut_slice(),
        dim,
        &grads.entity_embeddings,
        &mut m.entity_embeddings,
        &mut v.entity_embeddings,
    );
    coef.dense(
        &mut params.attention_weights,
        &grads.attention_weights,
        &mut m.attention_weights,
        &mut v.attention_weights,
    );
    coef.update(
        &mut params.attention_bias,
        grads.attention_bias,
        &mut m.attention_bias,
        &mut v.attention_bias,
    );
    coef.dense(
        params.classifier_weights.as_mut_slice(),
        &grads.classifier_weights,
        &mut m.classifier_weights,
        &mut v.classifier_weights,
    );
    coef.dense(
        &mut params.classifier_bias,
        &grads.classifier_bias,
        &mut m.classifier_bias,
        &mut v.classifier_bias,
    );
    Ok(())
}

/// Number of documents whose argmax prediction equals the label.
pub fn count_correct(docs: &[DocumentInput], params: &ModelParams, config: &ModelConfig) -> usize {
    docs.iter()
        .filter(|d| d.label == Some(forward(d, params, config).prediction()))
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

/// Hooks for logging and checkpointing during [`train`].
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }

    /// Called when `epoch` sets a new best dev accuracy.
    fn on_improvement(&mut self, _epoch: usize, _params: &ModelParams) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

fn batch_gradients(
    batch: &[&DocumentInput],
    params: &ModelParams,
    model: &ModelConfig,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<(f64, Gradients)>> {
    match pool {
        Some(pool) => pool.install(|| {
            batch
                .par_iter()
                .map(|d| loss_and_gradients(d, params, model))
                .collect()
        }),
        None => batch
            .iter()
            .map(|d| loss_and_gradients(d, params, model))
            .collect(),
    }
}

pub fn train(
    train_docs: &[DocumentInput],
    dev_docs: &[DocumentInput],
    mut params: ModelParams,
    model: &ModelConfig,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_docs.is_empty() || dev_docs.is_empty() {
        return Err(Error::InvalidInput(
            "training and dev sets must be non-empty".into(),
        ));
    }
    for doc in train_docs.iter().chain(dev_docs) {
        if doc.label.is_none() {
            return Err(Error::InvalidInput(
                "training document without a label".into(),
            ));
        }
        params.check_document(doc)?;
    }
    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x7261_696e));
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, usize, ModelParams)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&DocumentInput> = chunk.iter().map(|&i| &train_docs[i]).collect();
            let results = batch_gradients(&batch, &params, model, pool.as_ref())?;
            let mut grads = Gradients::zeros(&params);
            let scale = 1.0 / batch.len() as f64;
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: b + 1,
                    });
                }
                loss_sum += loss;
                grads.add_scaled(g, scale);
            }
            adam_step(&mut params, &grads, &mut state, config)?;
        }

        let correct = count_correct(dev_docs, &params, model);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_docs.len() as f64,
            dev_accuracy: correct as f64 / dev_docs.len() as f64,
            elapsed_seconds: if config.log_elapsed {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        observer.on_epoch(&record)?;
        history.push(record);

        if best.as_ref().is_none_or(|(_, c, _)| correct > *c) {
            observer.on_improvement(epoch, &params)?;
            best = Some((epoch, correct, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (best_epoch, correct, best_params) = best.expect("max_epochs >= 1 evaluates once");
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        best_dev_accuracy: correct as f64 / dev_docs.len() as f64,
        history,
    })
}
