//! Multi-seed comparison of model variants and loss weightings.

use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, Variant};
use crate::dataset::AnnotationRecord;
use crate::error::{Error, Result};
use crate::fusion::LossWeights;
use crate::metrics::MetricsReport;
use crate::reason_graph::ReasonVocabulary;
use crate::train::{run_experiment, DataSources};

pub const MIN_SEEDS: usize = 3;

/// One configuration under comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    pub variant: Variant,
    pub weights: LossWeights,
}

impl Arm {
    pub fn variant(variant: Variant) -> Self {
        Self {
            label: variant.name().to_string(),
            variant,
            weights: LossWeights::default(),
        }
    }

    pub fn weighted(reason: f64, intent: f64) -> Self {
        Self {
            label: format!("gamma_r={reason},gamma_i={intent}"),
            variant: Variant::Full,
            weights: LossWeights { reason, intent },
        }
    }
}

/// `(γ_R, γ_I)` ∈ {(0.5, 1), (1, 0.5), (1, 1)}.
pub fn weight_grid() -> Vec<Arm> {
    vec![Arm::weighted(0.5, 1.0), Arm::weighted(1.0, 0.5), Arm::weighted(1.0, 1.0)]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub test: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub intent_accuracy: MeanStd,
    pub intent_f1: MeanStd,
    pub reason_subset_accuracy: MeanStd,
    pub reason_hamming_accuracy: MeanStd,
    pub reason_macro_f1: MeanStd,
    pub runs: Vec<SeedRun>,
}

impl ArmSummary {
    fn from_runs(arm: Arm, runs: Vec<SeedRun>) -> Self {
        let stat = |f: &dyn Fn(&MetricsReport) -> f64| MeanStd::of(&runs.iter().map(|r| f(&r.test)).collect::<Vec<_>>());
        Self {
            intent_accuracy: stat(&|m| m.intent.accuracy),
            intent_f1: stat(&|m| m.intent.f1),
            reason_subset_accuracy: stat(&|m| m.reason.subset_accuracy),
            reason_hamming_accuracy: stat(&|m| m.reason.hamming_accuracy),
            reason_macro_f1: stat(&|m| m.reason.macro_f1),
            arm,
            runs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub notes: Vec<String>,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmSummary>,
}

impl AblationReport {
    pub fn arm(&self, label: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm.label == label)
    }
}

/// Trains and tests every arm once per seed. Arms share the base config
/// apart from variant and loss weights.
pub fn run_ablation(
    base: &TrainConfig,
    arms: &[Arm],
    seeds: &[u64],
    corpus: &[AnnotationRecord],
    vocab: &ReasonVocabulary,
    sources: &DataSources,
) -> Result<AblationReport> {
    if seeds.len() < MIN_SEEDS {
        return Err(Error::Config(format!(
            "ablations need at least {MIN_SEEDS} seeds, got {}",
            seeds.len()
        )));
    }
    if arms.is_empty() {
        return Err(Error::Config("no ablation arms given".into()));
    }
    let mut notes = vec![format!(
        "reason subset accuracy is the primary reason metric; macro-F1 and hamming accuracy are reported alongside"
    )];
    if arms.iter().any(|a| a.variant == Variant::RecurrentBackbone) {
        notes.push(
            "recurrent_backbone swaps only the temporal encoders for a gated recurrent unit; no pretrained spatial backbone is involved"
                .into(),
        );
    }
    let mut summaries = Vec::with_capacity(arms.len());
    for arm in arms {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                variant: arm.variant,
                gamma_reason: arm.weights.reason,
                gamma_intent: arm.weights.intent,
                ..base.clone()
            };
            log::info!("ablation arm {} seed {seed}", arm.label);
            let result = run_experiment(&cfg, corpus, vocab, sources)?;
            runs.push(SeedRun {
                seed,
                best_epoch: result.outcome.best_epoch,
                test: result.test,
            });
        }
        summaries.push(ArmSummary::from_runs(arm.clone(), runs));
    }
    Ok(AblationReport {
        notes,
        seeds: seeds.to_vec(),
        arms: summaries,
    })
}
