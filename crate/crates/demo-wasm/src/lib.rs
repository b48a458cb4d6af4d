//! Browser demo bindings.
//!
//! Every exported function returns a JSON string; errors come back as
//! `{"error": "..."}` so the page can show them inline.

use crossing_intent::config::TrainConfig;
use crossing_intent::dataset::{generate_synthetic, icc, GeneratorConfig, IccModel, RaterMatrix};
use crossing_intent::fusion::ReasonHead;
use crossing_intent::reason_graph::{build_adjacency, count_cooccurrence, normalize_adjacency, Normalization, ReasonVocabulary};
use crossing_intent::train::{prepare, train, DataSources};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Records per corpus the attention demo trains on.
const ATTENTION_RECORDS: usize = 150;
const ATTENTION_SAMPLES: usize = 6;
const MAX_EPOCHS: usize = 8;

fn respond(result: crossing_intent::Result<Value>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn corpus(n_records: usize, seed: u64, noise_rate: f64, vocab: &ReasonVocabulary) -> crossing_intent::Result<Vec<crossing_intent::dataset::AnnotationRecord>> {
    generate_synthetic(
        &GeneratorConfig {
            n_records,
            seed,
            noise_rate,
            ..GeneratorConfig::default()
        },
        vocab,
    )
}

/// Conditional co-occurrence matrix `P(j | i)` of a generated corpus, raw
/// and after the chosen normalization (`"row"` or `"symmetric"`).
#[wasm_bindgen]
pub fn adjacency_heatmap(n_records: usize, seed: u64, noise_rate: f64, threshold: f64, normalization: &str) -> String {
    respond((|| {
        let vocab = ReasonVocabulary::default_pie();
        let records = corpus(n_records, seed, noise_rate, &vocab)?;
        let stats = count_cooccurrence(&records, &vocab)?;
        let a = build_adjacency(&stats, (threshold > 0.0).then_some(threshold));
        let norm = if normalization == "symmetric" { Normalization::Symmetric } else { Normalization::Row };
        let hat = normalize_adjacency(&a, norm);
        let n = vocab.len();
        let rows = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> { (0..n).map(|i| (0..n).map(|j| f(i, j)).collect()).collect() };
        Ok(json!({
            "labels": vocab.entries().iter().map(|e| e.text.clone()).collect::<Vec<_>>(),
            "classes": vocab.entries().iter().map(|e| format!("{:?}", e.intent_class)).collect::<Vec<_>>(),
            "conditional": rows(&|i, j| a.get(i, j)),
            "normalized": rows(&|i, j| hat.row(i)[j]),
            "records": records.len(),
        }))
    })())
}

/// Three ICC forms of a ratings grid given as text, one subject per line,
/// values separated by commas or whitespace.
#[wasm_bindgen]
pub fn icc_explorer(ratings: &str) -> String {
    respond((|| {
        let rows: Vec<Vec<f64>> = ratings
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, line)| {
                line.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|t| !t.is_empty())
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| crossing_intent::Error::Validation(format!("line {}: {t:?} is not a number", i + 1)))
                    })
                    .collect()
            })
            .collect::<crossing_intent::Result<_>>()?;
        let m = RaterMatrix::new(&rows)?;
        Ok(json!({
            "subjects": m.subjects(),
            "raters": m.raters(),
            "oneway": icc(&m, IccModel::Oneway)?,
            "twoway_consistency": icc(&m, IccModel::TwowayRandomConsistency)?,
            "twoway_agreement": icc(&m, IccModel::TwowayRandomAgreement)?,
        }))
    })())
}

/// Trains a small model for a few epochs on a generated corpus and returns
/// the temporal attention weights of held-out windows with their
/// predictions.
#[wasm_bindgen]
pub fn attention_weights(seed: u64, epochs: usize) -> String {
    respond((|| {
        let vocab = ReasonVocabulary::default_pie();
        let records = corpus(ATTENTION_RECORDS, seed, 0.05, &vocab)?;
        let config = TrainConfig {
            t: 8,
            d_v: 8,
            d_out: 20,
            d: 8,
            d_h: 16,
            layers: 1,
            heads_visual: 2,
            heads_box: 2,
            lr: 3e-3,
            epochs: epochs.min(MAX_EPOCHS),
            reason_head: ReasonHead::Affine,
            seed,
            provider_seed: seed,
            ..TrainConfig::default()
        };
        let data = prepare(&config, &records, &vocab, &DataSources::default())?;
        let outcome = train(&config, data.graph.as_ref(), &data.train, &data.val)?;
        let shown: Vec<_> = data.test.iter().take(ATTENTION_SAMPLES).collect();
        let observations: Vec<_> = shown.iter().map(|s| &s.obs).collect();
        let predictions = outcome.best.predict_batch(&observations)?;
        let samples: Vec<Value> = shown
            .iter()
            .zip(&predictions)
            .map(|(s, p)| {
                let probs = p.reason_probabilities();
                json!({
                    "pedestrian": s.pedestrian_id,
                    "intent_label": s.intent,
                    "intent_probability": p.intent_probability(),
                    "attention": p.attention,
                    "true_reasons": s.reasons.iter().enumerate().filter(|(_, &t)| t > 0.5).map(|(i, _)| i).collect::<Vec<_>>(),
                    "predicted_reasons": probs.iter().enumerate().filter(|(_, &q)| q > 0.5).map(|(i, _)| i).collect::<Vec<_>>(),
                })
            })
            .collect();
        Ok(json!({
            "labels": vocab.entries().iter().map(|e| e.text.clone()).collect::<Vec<_>>(),
            "epochs": config.epochs,
            "final_train_loss": outcome.log.last().map(|l| l.train_loss),
            "samples": samples,
        }))
    })())
}
