//! Training configuration, read from TOML with command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{LossWeights, ReasonHead};
use crate::reason_graph::Normalization;
use crate::tfe::BOX_WIDTH;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Transformer streams, attention, cross-modal product with graph
    /// embeddings.
    #[default]
    Full,
    /// Heads read the attention output directly; no reason graph.
    NoCrossmodal,
    /// Full model over word-averaged reason embeddings.
    WordEmbed,
    /// Full model with gated recurrent stream encoders.
    RecurrentBackbone,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoCrossmodal,
        Variant::WordEmbed,
        Variant::RecurrentBackbone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCrossmodal => "no_crossmodal",
            Variant::WordEmbed => "word_embed",
            Variant::RecurrentBackbone => "recurrent_backbone",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }

    pub fn cross_modal(self) -> bool {
        self != Variant::NoCrossmodal
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Observation window length in frames; also the positional table size.
    pub t: usize,
    /// Width of the local and global feature streams.
    pub d_v: usize,
    /// Number of reason classes.
    pub n: usize,
    /// Base reason embedding width.
    pub d: usize,
    /// Hidden width of the graph convolution.
    pub d_h: usize,
    /// Graph output width; must equal `2·d_v + 4`.
    pub d_out: usize,
    pub layers: usize,
    pub heads_visual: usize,
    pub heads_box: usize,
    /// MLP hidden width as a multiple of the stream width.
    pub mlp_ratio: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub gamma_reason: f64,
    pub gamma_intent: f64,
    pub seed: u64,
    pub variant: Variant,
    pub reason_head: ReasonHead,
    pub normalization: Normalization,
    /// Drop adjacency entries below this probability; off by default.
    pub adjacency_threshold: Option<f64>,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub overlap: f64,
    /// Noise of the toy feature provider.
    pub feature_noise: f64,
    /// Seed of the toy embedders and toy feature provider.
    pub provider_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t: 8,
            d_v: 16,
            n: 17,
            d: 32,
            d_h: 128,
            d_out: 2 * 16 + BOX_WIDTH,
            layers: 2,
            heads_visual: 4,
            heads_box: 2,
            mlp_ratio: 2,
            lr: 5e-5,
            batch_size: 8,
            epochs: 30,
            gamma_reason: 1.0,
            gamma_intent: 1.0,
            seed: 0,
            variant: Variant::Full,
            reason_head: ReasonHead::Identity,
            normalization: Normalization::Row,
            adjacency_threshold: None,
            split: [0.7, 0.1, 0.2],
            overlap: 0.6,
            feature_noise: 0.2,
            provider_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn fused_width(&self) -> usize {
        2 * self.d_v + BOX_WIDTH
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            reason: self.gamma_reason,
            intent: self.gamma_intent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t", self.t),
            ("d_v", self.d_v),
            ("n", self.n),
            ("d", self.d),
            ("d_h", self.d_h),
            ("d_out", self.d_out),
            ("heads_visual", self.heads_visual),
            ("heads_box", self.heads_box),
            ("mlp_ratio", self.mlp_ratio),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.variant.cross_modal() && self.d_out != self.fused_width() {
            return Err(Error::Config(format!(
                "graph output width {} must equal the fused width 2·d_v+4 = {}",
                self.d_out,
                self.fused_width()
            )));
        }
        if !self.d_v.is_multiple_of(self.heads_visual) || !BOX_WIDTH.is_multiple_of(self.heads_box) {
            return Err(Error::Config(format!(
                "head counts ({}, {}) must divide the stream widths ({}, {BOX_WIDTH})",
                self.heads_visual, self.heads_box, self.d_v
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap must lie in [0, 1), got {}", self.overlap)));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::Config("feature_noise must be finite and non-negative".into()));
        }
        if let Some(th) = self.adjacency_threshold {
            if !(0.0..=1.0).contains(&th) {
                return Err(Error::Config(format!("adjacency threshold {th} outside [0, 1]")));
            }
        }
        self.loss_weights().validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::io::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}
