//! Training loop, evaluation, and the split → graph → train → test
//! pipeline shared by the CLI and the ablation harness.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, Variant};
use crate::dataset::{split, window_corpus, AnnotationRecord, Split};
use crate::embeddings::{toy_embed, toy_word_vectors, word_average_from, EmbeddingTable};
use crate::error::{Error, Result};
use crate::metrics::{intent_metrics, reason_metrics, MetricsReport, DECISION_THRESHOLD};
use crate::model::{Model, ReasonGraphInputs, Sample};
use crate::optim::{Adam, AdamConfig};
use crate::reason_graph::{build_adjacency, count_cooccurrence, normalize_adjacency, ReasonVocabulary};
use crate::tape::Tape;
use crate::tfe::{FeatureProvider, FileFeatureProvider, ToyFeatureProvider};

/// Samples per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

/// Windows every record of `corpus` and featurizes each window.
pub fn build_samples(
    corpus: &[AnnotationRecord],
    provider: &dyn FeatureProvider,
    config: &TrainConfig,
) -> Result<Vec<Sample>> {
    if provider.width() != config.d_v {
        return Err(Error::Config(format!(
            "feature provider width {} does not match d_v = {}",
            provider.width(),
            config.d_v
        )));
    }
    let (windows, _) = window_corpus(corpus, config.t, config.overlap);
    windows
        .iter()
        .map(|w| {
            Ok(Sample {
                pedestrian_id: w.record.pedestrian_id.clone(),
                obs: provider.observe(w)?,
                intent: w.record.intent.as_label(),
                reasons: w.record.reason_targets(config.n),
            })
        })
        .collect()
}

/// Reason graph inputs from the co-occurrences of `train`.
pub fn graph_inputs(
    train: &[AnnotationRecord],
    vocab: &ReasonVocabulary,
    embeddings: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<ReasonGraphInputs> {
    let stats = count_cooccurrence(train, vocab)?;
    let a = build_adjacency(&stats, config.adjacency_threshold);
    Ok(ReasonGraphInputs::new(embeddings, normalize_adjacency(&a, config.normalization)))
}

/// Externally supplied inputs; anything absent falls back to the toy
/// providers seeded by `provider_seed`.
#[derive(Clone, Debug, Default)]
pub struct DataSources {
    pub sentence_embeddings: Option<EmbeddingTable>,
    pub word_vectors: Option<HashMap<String, Vec<f64>>>,
    pub features: Option<FileFeatureProvider>,
}

impl DataSources {
    /// Base reason embeddings for `config.variant`; `None` when the variant
    /// has no reason graph.
    pub fn embeddings(&self, vocab: &ReasonVocabulary, config: &TrainConfig) -> Result<Option<EmbeddingTable>> {
        let table = match config.variant {
            Variant::NoCrossmodal => return Ok(None),
            Variant::WordEmbed => match &self.word_vectors {
                Some(words) => word_average_from(vocab, words)?,
                None => {
                    let words: HashMap<String, Vec<f64>> =
                        toy_word_vectors(vocab, config.d, config.provider_seed).into_iter().collect();
                    word_average_from(vocab, &words)?
                }
            },
            Variant::Full | Variant::RecurrentBackbone => match &self.sentence_embeddings {
                Some(t) => t.clone(),
                None => toy_embed(vocab, config.d, config.provider_seed)?,
            },
        };
        if table.d != config.d || table.n() != config.n {
            return Err(Error::Config(format!(
                "embedding table is {}×{}, configuration expects {}×{}",
                table.n(),
                table.d,
                config.n,
                config.d
            )));
        }
        Ok(Some(table))
    }

    pub fn provider(&self, config: &TrainConfig) -> Result<Box<dyn FeatureProvider>> {
        Ok(match &self.features {
            Some(f) => Box::new(f.clone()),
            None => Box::new(ToyFeatureProvider::new(config.d_v, config.feature_noise, config.provider_seed)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_intent_accuracy: Option<f64>,
    pub val_reason_subset_accuracy: Option<f64>,
    pub val_reason_macro_f1: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss, or of the
    /// last epoch without validation data.
    pub best: Model,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochLog>,
}

/// Mean loss over `samples` without building gradients.
pub fn mean_loss(model: &Model, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let refs: Vec<&Sample> = chunk.iter().collect();
        let loss = model.batch_loss(&mut tape, &bound, &refs)?;
        total += tape.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

fn param_norms(model: &Model) -> String {
    model
        .params
        .entries()
        .iter()
        .filter(|e| e.trainable)
        .map(|e| {
            let norm = e.tensor.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            format!("{}={norm:.3e}", e.name)
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Seeded minibatch Adam. Batch order per epoch comes from a generator
/// seeded by `config.seed`, so identical inputs give identical parameters.
pub fn train(
    config: &TrainConfig,
    graph: Option<&ReasonGraphInputs>,
    train_samples: &[Sample],
    val_samples: &[Sample],
) -> Result<TrainOutcome> {
    let mut model = Model::build(config, graph)?;
    if train_samples.is_empty() && config.epochs > 0 {
        return Err(Error::Validation("no training windows".into()));
    }
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(10);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_val = f64::INFINITY;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_samples[i]).collect();
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let step = model
                .batch_loss(&mut tape, &bound, &batch)
                .and_then(|loss| Ok((tape.value(loss).item(), tape.backward(loss)?)));
            let (loss, grads) = step.map_err(|e| match e {
                Error::NonFinite { op } => Error::Diverged(format!(
                    "non-finite value in {op} at epoch {epoch}, batch {b}; parameter norms: {}",
                    param_norms(&model)
                )),
                other => other,
            })?;
            model.params.zero_grad();
            model.params.accumulate(&bound, &grads)?;
            adam.step(&mut model.params);
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_samples.len() as f64;
        let mut entry = EpochLog {
            epoch,
            train_loss,
            val_loss: None,
            val_intent_accuracy: None,
            val_reason_subset_accuracy: None,
            val_reason_macro_f1: None,
            seconds: 0.0,
        };
        if !val_samples.is_empty() {
            let val_loss = mean_loss(&model, val_samples)?;
            let report = evaluate(&model, val_samples)?;
            entry.val_loss = Some(val_loss);
            entry.val_intent_accuracy = Some(report.intent.accuracy);
            entry.val_reason_subset_accuracy = Some(report.reason.subset_accuracy);
            entry.val_reason_macro_f1 = Some(report.reason.macro_f1);
            if val_loss < best_val {
                best_val = val_loss;
                best = model.clone();
                best_epoch = Some(epoch);
            }
        } else {
            best = model.clone();
            best_epoch = Some(epoch);
        }
        entry.seconds = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5}, val loss {:?}, {:.1}s",
            entry.val_loss,
            entry.seconds
        );
        log.push(entry);
    }
    model.params.zero_grad();
    best.params.zero_grad();
    Ok(TrainOutcome { best, best_epoch, log })
}

/// Metrics of `model` on `samples` at decision threshold 0.5.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty split".into()));
    }
    let started = Instant::now();
    let mut probs = Vec::with_capacity(samples.len());
    let mut predicted = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let obs: Vec<_> = chunk.iter().map(|s| &s.obs).collect();
        for p in model.predict_batch(&obs)? {
            probs.push(p.intent_probability());
            predicted.push(p.reason_probabilities().iter().map(|&q| q >= DECISION_THRESHOLD).collect());
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let labels: Vec<bool> = samples.iter().map(|s| s.intent >= 0.5).collect();
    let targets: Vec<Vec<bool>> = samples
        .iter()
        .map(|s| s.reasons.iter().map(|&r| r >= 0.5).collect())
        .collect();
    Ok(MetricsReport {
        samples: samples.len(),
        intent: intent_metrics(&probs, &labels),
        reason: reason_metrics(&predicted, &targets)?,
        wall_clock_per_sample: elapsed / samples.len() as f64,
    })
}

/// Everything one seeded run produces.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub outcome: TrainOutcome,
    pub test: MetricsReport,
    pub train_windows: usize,
    pub test_windows: usize,
}

/// Prepared split and samples of one run.
pub struct PreparedData {
    pub split: Split,
    pub graph: Option<ReasonGraphInputs>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn prepare(
    config: &TrainConfig,
    corpus: &[AnnotationRecord],
    vocab: &ReasonVocabulary,
    sources: &DataSources,
) -> Result<PreparedData> {
    config.validate()?;
    if vocab.len() != config.n {
        return Err(Error::Config(format!(
            "vocabulary has {} reasons, configuration expects n = {}",
            vocab.len(),
            config.n
        )));
    }
    let parts = split(corpus, config.split, config.seed)?;
    let graph = match sources.embeddings(vocab, config)? {
        Some(table) => Some(graph_inputs(&parts.train, vocab, &table, config)?),
        None => None,
    };
    let provider = sources.provider(config)?;
    let train = build_samples(&parts.train, provider.as_ref(), config)?;
    let val = build_samples(&parts.val, provider.as_ref(), config)?;
    let test = build_samples(&parts.test, provider.as_ref(), config)?;
    Ok(PreparedData {
        split: parts,
        graph,
        train,
        val,
        test,
    })
}

/// Split, train on the train part with validation-based model selection,
/// and report test metrics of the selected model.
pub fn run_experiment(
    config: &TrainConfig,
    corpus: &[AnnotationRecord],
    vocab: &ReasonVocabulary,
    sources: &DataSources,
) -> Result<ExperimentResult> {
    let data = prepare(config, corpus, vocab, sources)?;
    let outcome = train(config, data.graph.as_ref(), &data.train, &data.val)?;
    let test = evaluate(&outcome.best, &data.test)?;
    Ok(ExperimentResult {
        outcome,
        test,
        train_windows: data.train.len(),
        test_windows: data.test.len(),
    })
}
