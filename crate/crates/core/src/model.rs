//! The assembled predictor: stream encoders, reason graph, attention
//! fusion and heads over one shared parameter store.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::{TrainConfig, Variant};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::fusion::{cross_modal, multitask_loss, Fusion, Logits};
use crate::params::{Bound, ModelParams, ParamId};
use crate::reason_graph::Gcn;
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::Tensor;
use crate::tfe::{GruEncoder, ObservationSequence, StreamEncoder, Tfe, TransformerEncoder, BOX_WIDTH};

pub const X0_NAME: &str = "csea.x0";
pub const A_HAT_NAME: &str = "csea.a_hat";

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub pedestrian_id: String,
    pub obs: ObservationSequence,
    pub intent: f64,
    pub reasons: Vec<f64>,
}

/// Graph nodes of the reason graph: base embeddings and propagation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ReasonGraphInputs {
    /// `n × d`
    pub x0: Tensor,
    /// `n × n`
    pub a_hat: Tensor,
}

impl ReasonGraphInputs {
    pub fn new(embeddings: &EmbeddingTable, a_hat: Tensor) -> Self {
        Self {
            x0: embeddings.to_tensor(),
            a_hat,
        }
    }
}

/// Tape handles of one sample's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SampleOutput {
    pub logits: Logits,
    /// `1 × t`
    pub alpha: Var,
    /// `1 × w`
    pub f: Var,
    /// `1 × n`; absent without the cross-modal product.
    pub c: Option<Var>,
}

/// Plain-value prediction of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub intent_logit: f64,
    pub reason_logits: Vec<f64>,
    pub attention: Vec<f64>,
    pub cross_modal: Option<Vec<f64>>,
}

impl Prediction {
    pub fn intent_probability(&self) -> f64 {
        sigmoid(self.intent_logit)
    }

    pub fn reason_probabilities(&self) -> Vec<f64> {
        self.reason_logits.iter().map(|&z| sigmoid(z)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub tfe: Tfe,
    pub gcn: Option<Gcn>,
    pub fusion: Fusion,
    pub x0: Option<ParamId>,
    pub a_hat: Option<ParamId>,
}

/// Independent initialization streams so that each component's initial
/// weights depend only on the seed, not on which other components exist.
fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn stream_encoder(
    params: &mut ModelParams,
    cfg: &TrainConfig,
    prefix: &str,
    width: usize,
    heads: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StreamEncoder> {
    Ok(match cfg.variant {
        Variant::RecurrentBackbone => StreamEncoder::Recurrent(GruEncoder::init(params, prefix, width, rng)),
        _ => StreamEncoder::Transformer(TransformerEncoder::init(
            params,
            prefix,
            width,
            heads,
            cfg.layers,
            cfg.t,
            cfg.mlp_ratio * width,
            rng,
        )?),
    })
}

impl Model {
    /// Freshly initialized model. Cross-modal variants need the reason
    /// graph inputs; they are stored as frozen parameters.
    pub fn build(config: &TrainConfig, graph: Option<&ReasonGraphInputs>) -> Result<Self> {
        config.validate()?;
        let mut params = ModelParams::new();
        let seed = config.seed;
        let w = config.fused_width();

        let mut rng = component_rng(seed, 1);
        let local = stream_encoder(&mut params, config, "tfe.local", config.d_v, config.heads_visual, &mut rng)?;
        let mut rng = component_rng(seed, 2);
        let global = stream_encoder(&mut params, config, "tfe.global", config.d_v, config.heads_visual, &mut rng)?;
        let mut rng = component_rng(seed, 3);
        let boxes = stream_encoder(&mut params, config, "tfe.boxes", BOX_WIDTH, config.heads_box, &mut rng)?;
        let tfe = Tfe { local, global, boxes };

        let mut rng = component_rng(seed, 4);
        let fusion = Fusion::init(
            &mut params,
            w,
            config.n,
            config.reason_head,
            config.variant.cross_modal(),
            &mut rng,
        );

        let (gcn, x0, a_hat) = if config.variant.cross_modal() {
            let graph = graph.ok_or_else(|| {
                Error::Config(format!("variant {} needs reason embeddings and an adjacency", config.variant.name()))
            })?;
            if graph.x0.shape() != [config.n, config.d] {
                return Err(Error::Config(format!(
                    "reason embeddings are {:?}, configuration expects {}×{}",
                    graph.x0.shape(),
                    config.n,
                    config.d
                )));
            }
            if graph.a_hat.shape() != [config.n, config.n] {
                return Err(Error::Config(format!(
                    "adjacency is {:?}, configuration expects {}×{}",
                    graph.a_hat.shape(),
                    config.n,
                    config.n
                )));
            }
            let mut rng = component_rng(seed, 5);
            let gcn = Gcn::init(&mut params, &[config.d, config.d_h, config.d_out], &mut rng)?;
            let x0 = params.add(X0_NAME, graph.x0.clone(), false);
            let a_hat = params.add(A_HAT_NAME, graph.a_hat.clone(), false);
            (Some(gcn), Some(x0), Some(a_hat))
        } else {
            (None, None, None)
        };

        Ok(Self {
            config: config.clone(),
            params,
            tfe,
            gcn,
            fusion,
            x0,
            a_hat,
        })
    }

    /// Rebuilds the structure from `config` and adopts `params`, which must
    /// carry exactly the expected names and shapes.
    pub fn restore(config: &TrainConfig, params: ModelParams) -> Result<Self> {
        let placeholder = ReasonGraphInputs {
            x0: Tensor::zeros(&[config.n, config.d]),
            a_hat: Tensor::zeros(&[config.n, config.n]),
        };
        let mut model = Self::build(config, Some(&placeholder))?;
        let expected = model.params.entries();
        let got = params.entries();
        if expected.len() != got.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, configuration expects {}",
                got.len(),
                expected.len()
            )));
        }
        for (e, g) in expected.iter().zip(got) {
            if e.name != g.name || e.tensor.shape() != g.tensor.shape() || e.trainable != g.trainable {
                return Err(Error::Config(format!(
                    "checkpoint tensor {} {:?} does not match expected {} {:?}",
                    g.name,
                    g.tensor.shape(),
                    e.name,
                    e.tensor.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let config = serde_json::to_value(&self.config).expect("config serializes");
        checkpoint::save(dir, &self.params, config)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (params, config) = checkpoint::load(dir)?;
        let config: TrainConfig = serde_json::from_value(config)
            .map_err(|e| Error::parse(dir.join(checkpoint::MANIFEST_FILE), e.to_string()))?;
        Self::restore(&config, params)
    }

    /// Graph-refined reason embeddings `X` (`n × D`), computed once per tape.
    pub fn reason_embeddings(&self, tape: &mut Tape, bound: &Bound) -> Result<Option<Var>> {
        match (&self.gcn, self.x0, self.a_hat) {
            (Some(gcn), Some(x0), Some(a_hat)) => Ok(Some(gcn.forward(tape, bound, bound[x0], bound[a_hat])?)),
            _ => Ok(None),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        reasons: Option<Var>,
        obs: &ObservationSequence,
    ) -> Result<SampleOutput> {
        let h = self.tfe.encode_observation(tape, bound, obs)?;
        let att = self.fusion.attend(tape, bound, h)?;
        let (logits, c) = match (self.fusion.cross_modal, reasons) {
            (true, Some(x)) => {
                let c = cross_modal(tape, att.f, x)?;
                (self.fusion.heads(tape, bound, c)?, Some(c))
            }
            (true, None) => {
                return Err(Error::Usage("cross-modal forward needs the reason embeddings".into()));
            }
            (false, _) => (self.fusion.heads(tape, bound, att.f)?, None),
        };
        Ok(SampleOutput {
            logits,
            alpha: att.alpha,
            f: att.f,
            c,
        })
    }

    /// Mean multitask loss over `batch`, summed in batch order.
    pub fn batch_loss(&self, tape: &mut Tape, bound: &Bound, batch: &[&Sample]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let x = self.reason_embeddings(tape, bound)?;
        let weights = self.config.loss_weights();
        let mut total: Option<Var> = None;
        for s in batch {
            let out = self.forward(tape, bound, x, &s.obs)?;
            let loss = multitask_loss(tape, out.logits, s.intent, &s.reasons, weights)?;
            total = Some(match total {
                Some(t) => tape.add(t, loss)?,
                None => loss,
            });
        }
        tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64)
    }

    pub fn predict_batch(&self, observations: &[&ObservationSequence]) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = self.reason_embeddings(&mut tape, &bound)?;
        observations
            .iter()
            .map(|obs| {
                let out = self.forward(&mut tape, &bound, x, obs)?;
                Ok(Prediction {
                    intent_logit: tape.value(out.logits.intent).item(),
                    reason_logits: tape.value(out.logits.reasons).data().to_vec(),
                    attention: tape.value(out.alpha).data().to_vec(),
                    cross_modal: out.c.map(|c| tape.value(c).data().to_vec()),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::toy_embed;
    use crate::reason_graph::ReasonVocabulary;
    use rand::SeedableRng;

    fn small_config(variant: Variant) -> TrainConfig {
        TrainConfig {
            t: 3,
            d_v: 8,
            d: 6,
            d_h: 10,
            d_out: 20,
            layers: 1,
            heads_visual: 2,
            heads_box: 2,
            variant,
            ..TrainConfig::default()
        }
    }

    fn graph(cfg: &TrainConfig) -> ReasonGraphInputs {
        let vocab = ReasonVocabulary::default_pie();
        ReasonGraphInputs::new(&toy_embed(&vocab, cfg.d, 1).unwrap(), Tensor::eye(cfg.n))
    }

    fn obs(seed: u64) -> ObservationSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let boxes = Tensor::from_rows(&[
            vec![0.1, 0.2, 0.3, 0.6],
            vec![0.12, 0.2, 0.32, 0.62],
            vec![0.14, 0.2, 0.34, 0.64],
        ])
        .unwrap();
        ObservationSequence::new(Tensor::randn(&[3, 8], 1.0, &mut rng), Tensor::randn(&[3, 8], 1.0, &mut rng), boxes)
            .unwrap()
    }

    #[test]
    fn prediction_shapes_and_attention_normalization() {
        let cfg = small_config(Variant::Full);
        let model = Model::build(&cfg, Some(&graph(&cfg))).unwrap();
        let o = obs(1);
        let p = &model.predict_batch(&[&o]).unwrap()[0];
        assert_eq!(p.reason_logits.len(), 17);
        assert_eq!(p.attention.len(), 3);
        assert!((p.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(p.cross_modal.as_deref(), Some(&p.reason_logits[..]));
    }

    #[test]
    fn cross_modal_variant_requires_graph() {
        let cfg = small_config(Variant::Full);
        assert!(matches!(Model::build(&cfg, None), Err(Error::Config(_))));
        let cfg = small_config(Variant::NoCrossmodal);
        let model = Model::build(&cfg, None).unwrap();
        assert!(model.gcn.is_none());
        assert_eq!(model.predict_batch(&[&obs(2)]).unwrap()[0].reason_logits.len(), 17);
    }

    #[test]
    fn variants_share_encoder_initialization() {
        let full_cfg = small_config(Variant::Full);
        let full = Model::build(&full_cfg, Some(&graph(&full_cfg))).unwrap();
        let ablated = Model::build(&small_config(Variant::NoCrossmodal), None).unwrap();
        for e in ablated.params.entries().iter().filter(|e| e.name.starts_with("tfe.")) {
            let id = full.params.find(&e.name).unwrap();
            assert_eq!(full.params.tensor(id), &e.tensor);
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_predictions() {
        let cfg = small_config(Variant::Full);
        let model = Model::build(&cfg, Some(&graph(&cfg))).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = Model::load(dir.path()).unwrap();
        assert!(back.params.bit_identical(&model.params));
        let o = obs(3);
        assert_eq!(model.predict_batch(&[&o]).unwrap(), back.predict_batch(&[&o]).unwrap());
    }

    #[test]
    fn restore_rejects_mismatched_structure() {
        let cfg = small_config(Variant::Full);
        let model = Model::build(&cfg, Some(&graph(&cfg))).unwrap();
        let other = small_config(Variant::RecurrentBackbone);
        assert!(Model::restore(&other, model.params.clone()).is_err());
    }
}
