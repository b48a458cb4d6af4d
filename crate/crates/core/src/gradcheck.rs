//! Central finite-difference check of every trainable parameter of the
//! assembled model on a small synthetic batch.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, Variant};
use crate::dataset::{generate_synthetic, GeneratorConfig};
use crate::error::{Error, Result};
use crate::model::{Model, Sample};
use crate::reason_graph::ReasonVocabulary;
use crate::tape::Tape;
use crate::train::{build_samples, graph_inputs, DataSources};

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error. A central difference with step
/// `1e-6` on an order-one loss carries about `1e-10` of rounding error, so
/// gradients smaller than this compare on an absolute `1e-9` scale.
pub const RELATIVE_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// `t = 3`, `d_v = 8`, `n = 17`, two encoder layers.
pub fn gradcheck_config(seed: u64, variant: Variant) -> TrainConfig {
    TrainConfig {
        t: 3,
        d_v: 8,
        d: 8,
        d_h: 16,
        d_out: 20,
        layers: 2,
        heads_visual: 2,
        heads_box: 2,
        seed,
        variant,
        provider_seed: seed,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub group: String,
    pub entries: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub worst_parameter: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupResult>,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub seconds: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= self.tolerance
    }
}

/// `gcn.w1`, `tfe.local`, `fusion.wc`, `head.intent`, ...
pub fn group_of(name: &str) -> String {
    name.split('.').take(2).collect::<Vec<_>>().join(".")
}

fn batch_loss(model: &Model, batch: &[&Sample]) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let loss = model.batch_loss(&mut tape, &bound, batch)?;
    Ok(tape.value(loss).item())
}

/// Compares analytic and central-difference gradients of the batch loss
/// for every trainable scalar of `model`.
pub fn check_model(model: &mut Model, batch: &[&Sample], step: f64, tolerance: f64) -> Result<GradcheckReport> {
    let started = Instant::now();
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let loss = model.batch_loss(&mut tape, &bound, batch)?;
    let grads = tape.backward(loss)?;
    model.params.zero_grad();
    model.params.accumulate(&bound, &grads)?;

    let mut groups: BTreeMap<String, GroupResult> = BTreeMap::new();
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let entry = &model.params.entries()[id.index()];
        if !entry.trainable {
            continue;
        }
        let name = entry.name.clone();
        let analytic = entry
            .tensor
            .grad
            .clone()
            .ok_or_else(|| Error::Usage(format!("no gradient recorded for {name}")))?;
        let group = groups.entry(group_of(&name)).or_insert_with(|| GroupResult {
            group: group_of(&name),
            entries: 0,
            max_relative_error: 0.0,
            max_absolute_error: 0.0,
            worst_parameter: String::new(),
        });
        for (k, &a) in analytic.iter().enumerate() {
            let original = model.params.tensor(id).data()[k];
            model.params.tensor_mut(id).data_mut()[k] = original + step;
            let up = batch_loss(model, batch)?;
            model.params.tensor_mut(id).data_mut()[k] = original - step;
            let down = batch_loss(model, batch)?;
            model.params.tensor_mut(id).data_mut()[k] = original;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(a, numeric);
            group.entries += 1;
            group.max_absolute_error = group.max_absolute_error.max((a - numeric).abs());
            if err > group.max_relative_error || group.worst_parameter.is_empty() {
                group.max_relative_error = group.max_relative_error.max(err);
                group.worst_parameter = format!("{name}[{k}]");
            }
        }
    }
    model.params.zero_grad();
    let groups: Vec<GroupResult> = groups.into_values().collect();
    let max_relative_error = groups.iter().map(|g| g.max_relative_error).fold(0.0, f64::max);
    let max_absolute_error = groups.iter().map(|g| g.max_absolute_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        step,
        tolerance,
        groups,
        max_relative_error,
        max_absolute_error,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Builds the toy model and a two-window batch from a small synthetic
/// corpus, then runs [`check_model`].
pub fn run_gradcheck(seed: u64, variant: Variant, step: f64, tolerance: f64) -> Result<GradcheckReport> {
    run_gradcheck_for(&gradcheck_config(seed, variant), step, tolerance)
}

/// [`run_gradcheck`] for an arbitrary small configuration.
pub fn run_gradcheck_for(cfg: &TrainConfig, step: f64, tolerance: f64) -> Result<GradcheckReport> {
    let (mut model, batch) = toy_instance_for(cfg)?;
    let refs: Vec<&Sample> = batch.iter().collect();
    check_model(&mut model, &refs, step, tolerance)
}

/// A freshly initialized model for [`gradcheck_config`] and two samples
/// with different intents where the corpus allows.
pub fn toy_instance(seed: u64, variant: Variant) -> Result<(Model, Vec<Sample>)> {
    toy_instance_for(&gradcheck_config(seed, variant))
}

/// [`toy_instance`] for an arbitrary small configuration.
pub fn toy_instance_for(cfg: &TrainConfig) -> Result<(Model, Vec<Sample>)> {
    let seed = cfg.seed;
    let vocab = ReasonVocabulary::default_pie();
    let corpus = generate_synthetic(
        &GeneratorConfig {
            n_records: 12,
            seed,
            noise_rate: 0.0,
            ..GeneratorConfig::default()
        },
        &vocab,
    )?;
    let sources = DataSources::default();
    let graph = match sources.embeddings(&vocab, cfg)? {
        Some(table) => Some(graph_inputs(&corpus, &vocab, &table, cfg)?),
        None => None,
    };
    let provider = sources.provider(cfg)?;
    let samples = build_samples(&corpus, provider.as_ref(), cfg)?;
    let first = samples.first().ok_or_else(|| Error::Validation("toy corpus yielded no windows".into()))?;
    let second = samples
        .iter()
        .find(|s| s.intent != first.intent)
        .or_else(|| samples.get(1))
        .ok_or_else(|| Error::Validation("toy corpus yielded a single window".into()))?;
    let batch = vec![first.clone(), second.clone()];
    Ok((Model::build(cfg, graph.as_ref())?, batch))
}
