//! Planted-factor corpus generator.
//!
//! Each record draws latent scene factors, derives its intent and reason
//! set from the rule table in `data/planted_rules.json`, and then applies
//! label noise:
//!
//! 1. the intent is flipped with probability `noise_rate`;
//! 2. reasons are the rule output for the (possibly flipped) intent, or the
//!    class fallback reason when no rule fires;
//! 3. with probability `noise_rate` one uniformly chosen reason of the
//!    record's class is toggled (undone if that would empty the set).
//!
//! Record `i` draws from its own generator seeded with
//! `record_seed(base_seed, i)`, so records can be produced independently
//! and in any order.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, Frame};
use crate::error::{Error, Result};
use crate::reason_graph::{Intent, ReasonVocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Red,
    Green,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speed {
    Low,
    High,
}

/// Latent scene description behind one generated pedestrian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlantedSceneFactors {
    pub signal: Signal,
    pub ego_speed: Speed,
    pub other_vehicle_speed: Speed,
    pub group_size: u32,
    pub at_crosswalk: bool,
    pub engaged_roadside: bool,
    pub acknowledges_ego: bool,
}

/// Conjunction of factor constraints; absent keys are unconstrained.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    #[serde(default)]
    pub signal: Option<Signal>,
    #[serde(default)]
    pub ego_speed: Option<Speed>,
    #[serde(default)]
    pub other_vehicle_speed: Option<Speed>,
    /// Inclusive `[min, max]`.
    #[serde(default)]
    pub group_size: Option<[u32; 2]>,
    #[serde(default)]
    pub at_crosswalk: Option<bool>,
    #[serde(default)]
    pub engaged_roadside: Option<bool>,
    #[serde(default)]
    pub acknowledges_ego: Option<bool>,
}

impl Condition {
    pub fn matches(&self, f: &PlantedSceneFactors) -> bool {
        self.signal.is_none_or(|s| s == f.signal)
            && self.ego_speed.is_none_or(|s| s == f.ego_speed)
            && self.other_vehicle_speed.is_none_or(|s| s == f.other_vehicle_speed)
            && self
                .group_size
                .is_none_or(|[lo, hi]| (lo..=hi).contains(&f.group_size))
            && self.at_crosswalk.is_none_or(|b| b == f.at_crosswalk)
            && self.engaged_roadside.is_none_or(|b| b == f.engaged_roadside)
            && self.acknowledges_ego.is_none_or(|b| b == f.acknowledges_ego)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorProbabilities {
    pub signal_red: f64,
    pub ego_speed_high: f64,
    pub other_vehicle_speed_high: f64,
    pub at_crosswalk: f64,
    pub engaged_roadside: f64,
    pub acknowledges_ego: f64,
    /// Group size → probability.
    pub group_size: BTreeMap<u32, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonRule {
    pub reason: usize,
    pub when: Condition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fallback {
    #[serde(rename = "C")]
    pub cross: usize,
    #[serde(rename = "NC")]
    pub no_cross: usize,
}

/// The factor distribution and factor → label rules of the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub factor_probabilities: FactorProbabilities,
    pub no_cross_when_any: Vec<Condition>,
    pub reasons: Vec<ReasonRule>,
    pub fallback: Fallback,
}

pub const RULES_JSON: &str = include_str!("../../data/planted_rules.json");

static DEFAULT_RULES: LazyLock<RuleTable> =
    LazyLock::new(|| serde_json::from_str(RULES_JSON).expect("shipped rule table parses"));

impl RuleTable {
    pub fn shipped() -> &'static RuleTable {
        &DEFAULT_RULES
    }

    pub fn intent_for(&self, f: &PlantedSceneFactors) -> Intent {
        if self.no_cross_when_any.iter().any(|c| c.matches(f)) {
            Intent::NoCross
        } else {
            Intent::Cross
        }
    }

    /// Sorted reasons of class `intent` whose rules fire, without fallback.
    pub fn fired_reasons(&self, f: &PlantedSceneFactors, intent: Intent, vocab: &ReasonVocabulary) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .reasons
            .iter()
            .filter(|r| vocab.get(r.reason).is_some_and(|e| e.intent_class == intent))
            .filter(|r| r.when.matches(f))
            .map(|r| r.reason)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn reasons_for(&self, f: &PlantedSceneFactors, intent: Intent, vocab: &ReasonVocabulary) -> Vec<usize> {
        let fired = self.fired_reasons(f, intent, vocab);
        if fired.is_empty() {
            vec![match intent {
                Intent::Cross => self.fallback.cross,
                Intent::NoCross => self.fallback.no_cross,
            }]
        } else {
            fired
        }
    }

    /// Every factor combination with its probability. Probabilities sum
    /// to 1.
    pub fn factor_space(&self) -> Vec<(PlantedSceneFactors, f64)> {
        let p = &self.factor_probabilities;
        let bern = |b: bool, q: f64| if b { q } else { 1.0 - q };
        let mut out = Vec::new();
        for bits in 0u32..64 {
            let bit = |k: u32| bits & (1 << k) != 0;
            for (&group_size, &pg) in &p.group_size {
                let f = PlantedSceneFactors {
                    signal: if bit(0) { Signal::Red } else { Signal::Green },
                    ego_speed: if bit(1) { Speed::High } else { Speed::Low },
                    other_vehicle_speed: if bit(2) { Speed::High } else { Speed::Low },
                    group_size,
                    at_crosswalk: bit(3),
                    engaged_roadside: bit(4),
                    acknowledges_ego: bit(5),
                };
                let prob = pg
                    * bern(bit(0), p.signal_red)
                    * bern(bit(1), p.ego_speed_high)
                    * bern(bit(2), p.other_vehicle_speed_high)
                    * bern(bit(3), p.at_crosswalk)
                    * bern(bit(4), p.engaged_roadside)
                    * bern(bit(5), p.acknowledges_ego);
                out.push((f, prob));
            }
        }
        out
    }

    pub fn sample_factors<R: Rng + ?Sized>(&self, rng: &mut R) -> PlantedSceneFactors {
        let p = &self.factor_probabilities;
        let signal = if rng.random_bool(p.signal_red) { Signal::Red } else { Signal::Green };
        let ego_speed = if rng.random_bool(p.ego_speed_high) { Speed::High } else { Speed::Low };
        let other_vehicle_speed = if rng.random_bool(p.other_vehicle_speed_high) {
            Speed::High
        } else {
            Speed::Low
        };
        let at_crosswalk = rng.random_bool(p.at_crosswalk);
        let engaged_roadside = rng.random_bool(p.engaged_roadside);
        let acknowledges_ego = rng.random_bool(p.acknowledges_ego);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut group_size = *p.group_size.keys().last().expect("non-empty group distribution");
        for (&g, &pg) in &p.group_size {
            acc += pg;
            if u < acc {
                group_size = g;
                break;
            }
        }
        PlantedSceneFactors {
            signal,
            ego_speed,
            other_vehicle_speed,
            group_size,
            at_crosswalk,
            engaged_roadside,
            acknowledges_ego,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_records: usize,
    pub seed: u64,
    pub noise_rate: f64,
    /// Inclusive range of track lengths.
    pub frames_min: u32,
    pub frames_max: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_records: 2000,
            seed: 0,
            noise_rate: 0.05,
            frames_min: 10,
            frames_max: 16,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Per-record seed derivation: `splitmix64(base ^ splitmix64(index))`.
pub fn record_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(index))
}

/// Generates one record; `generate_synthetic` is this over `0..n`.
pub fn generate_record(
    cfg: &GeneratorConfig,
    index: usize,
    rules: &RuleTable,
    vocab: &ReasonVocabulary,
) -> AnnotationRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(cfg.seed, index as u64));
    let scene = rules.sample_factors(&mut rng);

    let mut intent = rules.intent_for(&scene);
    if rng.random_bool(cfg.noise_rate) {
        intent = intent.flipped();
    }
    let mut reasons = rules.reasons_for(&scene, intent, vocab);
    if rng.random_bool(cfg.noise_rate) {
        let class = vocab.ids_for(intent);
        let pick = class[rng.random_range(0..class.len())];
        match reasons.binary_search(&pick) {
            Ok(pos) if reasons.len() > 1 => {
                reasons.remove(pos);
            }
            Ok(_) => {}
            Err(pos) => reasons.insert(pos, pick),
        }
    }

    let n_frames = rng.random_range(cfg.frames_min..=cfg.frames_max);
    let first = rng.random_range(0..300u32);
    let frames = trajectory(&scene, intent, n_frames, first, &mut rng);
    let critical_frame = frames.last().map_or(first, |f| f.frame_index);

    AnnotationRecord {
        pedestrian_id: format!("ped_{index:05}"),
        video_id: format!("video_{:04}", index / 20),
        frames,
        intent,
        reasons,
        critical_frame,
        scene: Some(scene),
    }
}

/// Box track: crossing pedestrians drift toward the image center, the box
/// grows faster when the ego vehicle approaches quickly.
fn trajectory<R: Rng + ?Sized>(
    scene: &PlantedSceneFactors,
    intent: Intent,
    n_frames: u32,
    first: u32,
    rng: &mut R,
) -> Vec<Frame> {
    let jitter = Normal::new(0.0, 0.001).expect("valid std");
    let mut cx: f64 = rng.random_range(0.15..0.85);
    let cy: f64 = rng.random_range(0.5..0.7);
    let mut h: f64 = rng.random_range(0.1..0.2);
    let toward_center = if cx < 0.5 { 1.0 } else { -1.0 };
    let drift = match intent {
        Intent::Cross => 0.004 * toward_center,
        Intent::NoCross => 0.0,
    };
    let growth = match scene.ego_speed {
        Speed::High => 1.02,
        Speed::Low => 1.005,
    };
    (0..n_frames)
        .map(|k| {
            let w = 0.4 * h;
            let x = cx + jitter.sample(rng);
            let y = cy + jitter.sample(rng);
            let bbox = [
                (x - w / 2.0).clamp(0.0, 1.0),
                (y - h / 2.0).clamp(0.0, 1.0),
                (x + w / 2.0).clamp(0.0, 1.0),
                (y + h / 2.0).clamp(0.0, 1.0),
            ];
            cx += drift;
            h = (h * growth).min(0.6);
            Frame {
                frame_index: first + k,
                bbox,
            }
        })
        .collect()
}

pub fn generate_synthetic(cfg: &GeneratorConfig, vocab: &ReasonVocabulary) -> Result<Vec<AnnotationRecord>> {
    if !(0.0..0.5).contains(&cfg.noise_rate) {
        return Err(Error::Config(format!("noise rate {} outside [0, 0.5)", cfg.noise_rate)));
    }
    if cfg.frames_min == 0 || cfg.frames_min > cfg.frames_max {
        return Err(Error::Config(format!(
            "frame range {}..={} is empty",
            cfg.frames_min, cfg.frames_max
        )));
    }
    let rules = RuleTable::shipped();
    Ok((0..cfg.n_records)
        .map(|i| generate_record(cfg, i, rules, vocab))
        .collect())
}
