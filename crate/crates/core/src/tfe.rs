//! Spatio-temporal feature encoding of the three observation streams
//! (local context, global context, bounding boxes).
//!
//! Spatial features come from a [`FeatureProvider`]. Each stream is encoded
//! over time by its own pre-LN transformer (or, for the recurrent ablation,
//! a gated recurrent unit) and the three encodings are concatenated per
//! frame into a `t × (2·d_v + 4)` sequence.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::synthetic::{PlantedSceneFactors, Signal, Speed};
use crate::dataset::FrameWindow;
use crate::error::{Error, Result};
use crate::io::fmt_real;
use crate::params::{Bound, ModelParams, ParamId};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BOX_WIDTH: usize = 4;
pub const LAYERNORM_EPS: f64 = 1e-5;

/// The three input streams of one observation window.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSequence {
    /// `t × d_v`
    pub local: Tensor,
    /// `t × d_v`
    pub global: Tensor,
    /// `t × 4`, `[x1, y1, x2, y2]` per frame.
    pub boxes: Tensor,
}

impl ObservationSequence {
    pub fn new(local: Tensor, global: Tensor, boxes: Tensor) -> Result<Self> {
        let t = local.rows();
        if local.shape().len() != 2 || global.shape().len() != 2 || boxes.shape().len() != 2 {
            return Err(Error::Validation("observation streams must be matrices".into()));
        }
        if global.rows() != t || boxes.rows() != t {
            return Err(Error::Validation(format!(
                "inconsistent sequence lengths: local {t}, global {}, boxes {}",
                global.rows(),
                boxes.rows()
            )));
        }
        if local.cols() != global.cols() {
            return Err(Error::Validation(format!(
                "local width {} differs from global width {}",
                local.cols(),
                global.cols()
            )));
        }
        if boxes.cols() != BOX_WIDTH {
            return Err(Error::Validation(format!("boxes need 4 columns, got {}", boxes.cols())));
        }
        for r in 0..t {
            let b = boxes.row(r);
            if b[0] > b[2] || b[1] > b[3] {
                return Err(Error::Validation(format!("frame {r}: box {b:?} has x1 > x2 or y1 > y2")));
            }
        }
        Ok(Self { local, global, boxes })
    }

    pub fn t(&self) -> usize {
        self.local.rows()
    }

    pub fn d_v(&self) -> usize {
        self.local.cols()
    }

    pub fn fused_width(&self) -> usize {
        2 * self.d_v() + BOX_WIDTH
    }
}

/// Source of per-frame local and global feature rows.
pub trait FeatureProvider {
    fn width(&self) -> usize;

    /// `(local, global)` rows for every frame of the window.
    fn featurize(&self, window: &FrameWindow<'_>) -> Result<(Tensor, Tensor)>;

    fn observe(&self, window: &FrameWindow<'_>) -> Result<ObservationSequence> {
        let (local, global) = self.featurize(window)?;
        let boxes: Vec<f64> = window.frames().iter().flat_map(|f| f.bbox).collect();
        let boxes = Tensor::new(&[window.len, BOX_WIDTH], boxes)?;
        ObservationSequence::new(local, global, boxes)
    }
}

/// Number of leading coordinates the toy provider reserves for factors.
pub const TOY_GLOBAL_SLOTS: usize = 5;
pub const TOY_LOCAL_SLOTS: usize = 3;

/// Featurizes planted scene factors.
///
/// Global rows: `[signal red, ego speed high, other speed high, at
/// crosswalk, group size / 2]` as ±1 codes. Local rows: `[engaged
/// roadside, acknowledges ego, group size / 2]`, where the acknowledgement
/// code ramps from half to full strength across the track. Remaining
/// columns hold a per-pedestrian appearance vector. Gaussian noise of
/// `noise_std` is added per frame, seeded by pedestrian and frame index.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyFeatureProvider {
    pub d_v: usize,
    pub noise_std: f64,
    pub seed: u64,
}

fn pm(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

fn key_seed(seed: u64, key: &str, frame: u32) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.rotate_left(17);
    for b in key.as_bytes().iter().chain(&frame.to_le_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ToyFeatureProvider {
    pub fn new(d_v: usize, noise_std: f64, seed: u64) -> Result<Self> {
        if d_v < TOY_GLOBAL_SLOTS {
            return Err(Error::Config(format!(
                "toy feature provider needs d_v >= {TOY_GLOBAL_SLOTS}, got {d_v}"
            )));
        }
        Ok(Self { d_v, noise_std, seed })
    }

    /// Noise-free rows for one frame; `progress` is the track position in
    /// `[0, 1]`.
    pub fn clean_rows(&self, scene: &PlantedSceneFactors, pedestrian_id: &str, progress: f64) -> (Vec<f64>, Vec<f64>) {
        let mut appearance = ChaCha8Rng::seed_from_u64(key_seed(self.seed, pedestrian_id, u32::MAX));
        let mut global = vec![0.0; self.d_v];
        let mut local = vec![0.0; self.d_v];
        let group = f64::from(scene.group_size) / 2.0;
        global[..TOY_GLOBAL_SLOTS].copy_from_slice(&[
            pm(scene.signal == Signal::Red),
            pm(scene.ego_speed == Speed::High),
            pm(scene.other_vehicle_speed == Speed::High),
            pm(scene.at_crosswalk),
            group,
        ]);
        local[..TOY_LOCAL_SLOTS].copy_from_slice(&[
            pm(scene.engaged_roadside),
            pm(scene.acknowledges_ego) * (0.5 + 0.5 * progress),
            group,
        ]);
        for v in global[TOY_GLOBAL_SLOTS..].iter_mut().chain(&mut local[TOY_LOCAL_SLOTS..]) {
            *v = appearance.random_range(-0.5..0.5);
        }
        (local, global)
    }
}

impl FeatureProvider for ToyFeatureProvider {
    fn width(&self) -> usize {
        self.d_v
    }

    fn featurize(&self, window: &FrameWindow<'_>) -> Result<(Tensor, Tensor)> {
        let record = window.record;
        let scene = record.scene.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "record {} has no scene descriptor for the toy feature provider",
                record.pedestrian_id
            ))
        })?;
        let first = record.frames.first().map_or(0, |f| f.frame_index);
        let span = f64::from(record.critical_frame.saturating_sub(first)).max(1.0);
        let noise = Normal::new(0.0, self.noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        let mut local = Vec::with_capacity(window.len * self.d_v);
        let mut global = Vec::with_capacity(window.len * self.d_v);
        for f in window.frames() {
            let progress = f64::from(f.frame_index - first) / span;
            let (mut l, mut g) = self.clean_rows(scene, &record.pedestrian_id, progress);
            if self.noise_std > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(key_seed(self.seed, &record.pedestrian_id, f.frame_index));
                for v in l.iter_mut().chain(g.iter_mut()) {
                    *v += noise.sample(&mut rng);
                }
            }
            local.extend(l);
            global.extend(g);
        }
        Ok((
            Tensor::new(&[window.len, self.d_v], local)?,
            Tensor::new(&[window.len, self.d_v], global)?,
        ))
    }
}

/// Precomputed features keyed by `(pedestrian_id, frame_index)`.
///
/// File format, one line per frame: `<pedestrian_id> <frame_index> <v1> ... <vd>`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FileFeatureProvider {
    pub d_v: usize,
    pub local: FeatureRows,
    pub global: FeatureRows,
}

/// Feature vectors keyed by `(pedestrian_id, frame_index)`.
pub type FeatureRows = HashMap<(String, u32), Vec<f64>>;

pub fn parse_feature_file(text: &str, path: &Path) -> Result<(usize, FeatureRows)> {
    let mut out = HashMap::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let ped = fields.next().expect("non-blank").to_string();
        let frame: u32 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::parse(path, format!("line {lineno}: missing frame index")))?;
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(path, format!("line {lineno}: bad real {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Validation(format!(
                    "{}: line {lineno}: width {} differs from {w}",
                    path.display(),
                    values.len()
                )))
            }
            _ => {}
        }
        if out.insert((ped.clone(), frame), values).is_some() {
            return Err(Error::Validation(format!(
                "{}: line {lineno}: duplicate entry for {ped} frame {frame}",
                path.display()
            )));
        }
    }
    let width = width.ok_or_else(|| Error::parse(path, "no feature rows"))?;
    Ok((width, out))
}

pub fn feature_file_string(rows: &[((String, u32), Vec<f64>)]) -> String {
    let mut out = String::new();
    for ((ped, frame), v) in rows {
        out.push_str(&format!("{ped} {frame}"));
        for x in v {
            out.push(' ');
            out.push_str(&fmt_real(*x));
        }
        out.push('\n');
    }
    out
}

impl FileFeatureProvider {
    pub fn load(local: &Path, global: &Path) -> Result<Self> {
        let (wl, local_rows) = parse_feature_file(&crate::io::read_to_string(local)?, local)?;
        let (wg, global_rows) = parse_feature_file(&crate::io::read_to_string(global)?, global)?;
        if wl != wg {
            return Err(Error::Config(format!(
                "local features have width {wl} but global features {wg}"
            )));
        }
        Ok(Self {
            d_v: wl,
            local: local_rows,
            global: global_rows,
        })
    }
}

impl FeatureProvider for FileFeatureProvider {
    fn width(&self) -> usize {
        self.d_v
    }

    fn featurize(&self, window: &FrameWindow<'_>) -> Result<(Tensor, Tensor)> {
        let ped = &window.record.pedestrian_id;
        let lookup = |table: &HashMap<(String, u32), Vec<f64>>, which: &str| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(window.len * self.d_v);
            for f in window.frames() {
                let row = table.get(&(ped.clone(), f.frame_index)).ok_or_else(|| {
                    Error::Config(format!("no {which} features for {ped} frame {}", f.frame_index))
                })?;
                out.extend_from_slice(row);
            }
            Ok(out)
        };
        Ok((
            Tensor::new(&[window.len, self.d_v], lookup(&self.local, "local")?)?,
            Tensor::new(&[window.len, self.d_v], lookup(&self.global, "global")?)?,
        ))
    }
}

/// Parameter ids of one pre-LN transformer layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    pub width: usize,
    pub heads: usize,
    pub max_t: usize,
    pub positional: ParamId,
    pub layers: Vec<EncoderLayer>,
}

impl TransformerEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        width: usize,
        heads: usize,
        n_layers: usize,
        max_t: usize,
        mlp_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{prefix}: width {width} is not divisible by {heads} heads"
            )));
        }
        let positional = params.add(format!("{prefix}.pos"), Tensor::randn(&[max_t, width], 0.1, rng), true);
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let p = |name: &str| format!("{prefix}.l{l}.{name}");
            let add = |params: &mut ModelParams, name: &str, t: Tensor| params.add(p(name), t, true);
            layers.push(EncoderLayer {
                ln1_gain: add(params, "ln1.gain", Tensor::filled(&[width], 1.0)),
                ln1_bias: add(params, "ln1.bias", Tensor::zeros(&[width])),
                wq: add(params, "wq", Tensor::glorot(width, width, rng)),
                bq: add(params, "bq", Tensor::zeros(&[width])),
                wk: add(params, "wk", Tensor::glorot(width, width, rng)),
                bk: add(params, "bk", Tensor::zeros(&[width])),
                wv: add(params, "wv", Tensor::glorot(width, width, rng)),
                bv: add(params, "bv", Tensor::zeros(&[width])),
                wo: add(params, "wo", Tensor::glorot(width, width, rng)),
                bo: add(params, "bo", Tensor::zeros(&[width])),
                ln2_gain: add(params, "ln2.gain", Tensor::filled(&[width], 1.0)),
                ln2_bias: add(params, "ln2.bias", Tensor::zeros(&[width])),
                w1: add(params, "mlp.w1", Tensor::glorot(width, mlp_hidden, rng)),
                b1: add(params, "mlp.b1", Tensor::zeros(&[mlp_hidden])),
                w2: add(params, "mlp.w2", Tensor::glorot(mlp_hidden, width, rng)),
                b2: add(params, "mlp.b2", Tensor::zeros(&[width])),
            });
        }
        Ok(Self {
            width,
            heads,
            max_t,
            positional,
            layers,
        })
    }

    pub fn encode(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        Ok(self.encode_traced(tape, bound, x)?.0)
    }

    /// Like [`encode`](Self::encode), also returning every attention matrix
    /// (`t × t`, one per layer and head).
    pub fn encode_traced(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<(Var, Vec<Var>)> {
        let (t, w) = match *tape.shape(x) {
            [t, w] => (t, w),
            ref s => return Err(Error::dim("encode_stream", format!("expected t × w, got {s:?}"))),
        };
        if w != self.width {
            return Err(Error::dim(
                "encode_stream",
                format!("input width {w} does not match encoder width {}", self.width),
            ));
        }
        if t > self.max_t {
            return Err(Error::Capacity(format!(
                "sequence of {t} frames exceeds the positional table of {}",
                self.max_t
            )));
        }
        let pos = tape.slice(bound[self.positional], 0, 0, t)?;
        let mut x = tape.add(x, pos)?;
        let head_dim = w / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut maps = Vec::new();
        for layer in &self.layers {
            let h = tape.layernorm(x, bound[layer.ln1_gain], bound[layer.ln1_bias], LAYERNORM_EPS)?;
            let q = affine(tape, h, bound[layer.wq], bound[layer.bq])?;
            let k = affine(tape, h, bound[layer.wk], bound[layer.bk])?;
            let v = affine(tape, h, bound[layer.wv], bound[layer.bv])?;
            let mut outs = Vec::with_capacity(self.heads);
            for head in 0..self.heads {
                let qh = tape.slice(q, 1, head * head_dim, head_dim)?;
                let kh = tape.slice(k, 1, head * head_dim, head_dim)?;
                let vh = tape.slice(v, 1, head * head_dim, head_dim)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale)?;
                let attn = tape.softmax(scores, 1)?;
                maps.push(attn);
                outs.push(tape.matmul(attn, vh)?);
            }
            let merged = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 1)? };
            let o = affine(tape, merged, bound[layer.wo], bound[layer.bo])?;
            x = tape.add(x, o)?;

            let h = tape.layernorm(x, bound[layer.ln2_gain], bound[layer.ln2_bias], LAYERNORM_EPS)?;
            let m = affine(tape, h, bound[layer.w1], bound[layer.b1])?;
            let m = tape.gelu(m)?;
            let m = affine(tape, m, bound[layer.w2], bound[layer.b2])?;
            x = tape.add(x, m)?;
        }
        Ok((x, maps))
    }
}

/// `x · W + b` with `b` broadcast over rows.
pub fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Single-layer gated recurrent encoder with hidden width equal to the
/// input width; emits every hidden state.
#[derive(Clone, Debug)]
pub struct GruEncoder {
    pub width: usize,
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
}

impl GruEncoder {
    pub fn init<R: Rng + ?Sized>(params: &mut ModelParams, prefix: &str, width: usize, rng: &mut R) -> Self {
        let mut m = |name: &str, rng: &mut R| params.add(format!("{prefix}.{name}"), Tensor::glorot(width, width, rng), true);
        let wz = m("wz", rng);
        let uz = m("uz", rng);
        let wr = m("wr", rng);
        let ur = m("ur", rng);
        let wh = m("wh", rng);
        let uh = m("uh", rng);
        let bz = params.add(format!("{prefix}.bz"), Tensor::zeros(&[width]), true);
        let br = params.add(format!("{prefix}.br"), Tensor::zeros(&[width]), true);
        let bh = params.add(format!("{prefix}.bh"), Tensor::zeros(&[width]), true);
        Self {
            width,
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wh,
            uh,
            bh,
        }
    }

    pub fn encode(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let (t, w) = match *tape.shape(x) {
            [t, w] => (t, w),
            ref s => return Err(Error::dim("gru", format!("expected t × w, got {s:?}"))),
        };
        if w != self.width {
            return Err(Error::dim("gru", format!("input width {w} != {}", self.width)));
        }
        let mut h = tape.constant(Tensor::zeros(&[1, w]));
        let mut states = Vec::with_capacity(t);
        for step in 0..t {
            let xt = tape.slice(x, 0, step, 1)?;
            let gate = |tape: &mut Tape, wx: ParamId, uh: ParamId, b: ParamId, hidden: Var| -> Result<Var> {
                let a = tape.matmul(xt, bound[wx])?;
                let c = tape.matmul(hidden, bound[uh])?;
                let s = tape.add(a, c)?;
                tape.add_row(s, bound[b])
            };
            let z = gate(tape, self.wz, self.uz, self.bz, h)?;
            let z = tape.sigmoid(z)?;
            let r = gate(tape, self.wr, self.ur, self.br, h)?;
            let r = tape.sigmoid(r)?;
            let rh = tape.mul(r, h)?;
            let cand = gate(tape, self.wh, self.uh, self.bh, rh)?;
            let cand = tape.tanh(cand)?;
            let diff = tape.sub(cand, h)?;
            let step_delta = tape.mul(z, diff)?;
            h = tape.add(h, step_delta)?;
            states.push(h);
        }
        tape.concat(&states, 0)
    }
}

#[derive(Clone, Debug)]
pub enum StreamEncoder {
    Transformer(TransformerEncoder),
    Recurrent(GruEncoder),
}

impl StreamEncoder {
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        match self {
            StreamEncoder::Transformer(e) => e.encode(tape, bound, x),
            StreamEncoder::Recurrent(e) => e.encode(tape, bound, x),
        }
    }
}

/// The three stream encoders.
#[derive(Clone, Debug)]
pub struct Tfe {
    pub local: StreamEncoder,
    pub global: StreamEncoder,
    pub boxes: StreamEncoder,
}

impl Tfe {
    /// Encodes each stream independently and concatenates per frame.
    pub fn encode_observation(&self, tape: &mut Tape, bound: &Bound, obs: &ObservationSequence) -> Result<Var> {
        let local = tape.constant(obs.local.clone());
        let global = tape.constant(obs.global.clone());
        let boxes = tape.constant(obs.boxes.clone());
        let l = self.local.encode(tape, bound, local)?;
        let g = self.global.encode(tape, bound, global)?;
        let b = self.boxes.encode(tape, bound, boxes)?;
        tape.concat(&[l, g, b], 1)
    }
}
