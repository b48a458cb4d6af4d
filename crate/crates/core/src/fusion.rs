//! Temporal attention over encoded frames, the cross-modal product with
//! reason embeddings, the two classifier heads and the multitask loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, ModelParams, ParamId};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tfe::affine;

/// Weights of the reason and intent BCE terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub reason: f64,
    pub intent: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            reason: 1.0,
            intent: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(reason: f64, intent: f64) -> Result<Self> {
        let w = Self { reason, intent };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reason >= 0.0 && self.intent >= 0.0) || !self.reason.is_finite() || !self.intent.is_finite() {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got ({}, {})",
                self.reason, self.intent
            )));
        }
        if self.reason == 0.0 && self.intent == 0.0 {
            return Err(Error::Config("loss weights cannot both be zero".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonHead {
    /// Reason logits are the cross-modal similarities themselves.
    #[default]
    Identity,
    Affine,
}

/// Output of [`attend`].
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `1 × w`, inside `(-1, 1)`.
    pub f: Var,
    /// `1 × t`, sums to one.
    pub alpha: Var,
}

/// Luong-style attention with the last state as query.
///
/// `score_s = h_e · W_s · h_s`, `α = softmax(score)`, `h_c = Σ α_s h_s`,
/// `F = tanh([h_c, h_e] · W_c)` with `W_c` of shape `2w × w`.
pub fn attend(tape: &mut Tape, h: Var, ws: Var, wc: Var) -> Result<Attended> {
    let (t, w) = match *tape.shape(h) {
        [t, w] => (t, w),
        ref s => return Err(Error::dim("attend", format!("hidden states must be t × w, got {s:?}"))),
    };
    if t == 0 {
        return Err(Error::Validation("attention over zero hidden states".into()));
    }
    if tape.shape(ws) != [w, w] || tape.shape(wc) != [2 * w, w] {
        return Err(Error::dim(
            "attend",
            format!(
                "w = {w} needs W_s {w}×{w} and W_c {}×{w}, got {:?} and {:?}",
                2 * w,
                tape.shape(ws),
                tape.shape(wc)
            ),
        ));
    }
    let he = tape.slice(h, 0, t - 1, 1)?;
    let query = tape.matmul(he, ws)?;
    let ht = tape.transpose(h)?;
    let scores = tape.matmul(query, ht)?;
    let alpha = tape.softmax(scores, 1)?;
    let hc = tape.matmul(alpha, h)?;
    let joined = tape.concat(&[hc, he], 1)?;
    let pre = tape.matmul(joined, wc)?;
    let f = tape.tanh(pre)?;
    Ok(Attended { f, alpha })
}

/// `C = F · Xᵀ`: similarity of the attention output with every reason row.
pub fn cross_modal(tape: &mut Tape, f: Var, x: Var) -> Result<Var> {
    let xt = tape.transpose(x)?;
    tape.matmul(f, xt)
}

/// Logits of one sample.
#[derive(Clone, Copy, Debug)]
pub struct Logits {
    /// `1 × 1`
    pub intent: Var,
    /// `1 × n`
    pub reasons: Var,
}

/// Mean-BCE multitask objective `γ_R·L_e + γ_I·L_i`.
pub fn multitask_loss(
    tape: &mut Tape,
    logits: Logits,
    intent_target: f64,
    reason_targets: &[f64],
    weights: LossWeights,
) -> Result<Var> {
    let n = reason_targets.len();
    let reason_t = Tensor::new(&[1, n], reason_targets.to_vec())?;
    let intent_t = Tensor::new(&[1, 1], vec![intent_target])?;
    let le = tape.bce_with_logits(logits.reasons, &reason_t, weights.reason)?;
    let li = tape.bce_with_logits(logits.intent, &intent_t, weights.intent)?;
    tape.add(le, li)
}

/// Parameters of the fusion tail.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub width: usize,
    pub n: usize,
    pub ws: ParamId,
    pub wc: ParamId,
    /// `(weight, bias)`; absent in identity mode.
    pub reason_head: Option<(ParamId, ParamId)>,
    pub intent_head: (ParamId, ParamId),
    pub cross_modal: bool,
}

impl Fusion {
    /// With `cross_modal` the heads read `C` (`n` wide); without it they
    /// read `F` directly (`w` wide) and the reason head is always affine.
    pub fn init<R: Rng + ?Sized>(
        params: &mut ModelParams,
        width: usize,
        n: usize,
        reason_head: ReasonHead,
        cross_modal: bool,
        rng: &mut R,
    ) -> Self {
        let ws = params.add("fusion.ws", Tensor::glorot(width, width, rng), true);
        let wc = params.add("fusion.wc", Tensor::glorot(2 * width, width, rng), true);
        let head_in = if cross_modal { n } else { width };
        let reason_head = (!cross_modal || reason_head == ReasonHead::Affine).then(|| {
            (
                params.add("head.reason.w", Tensor::glorot(head_in, n, rng), true),
                params.add("head.reason.b", Tensor::zeros(&[n]), true),
            )
        });
        let intent_head = (
            params.add("head.intent.w", Tensor::glorot(head_in, 1, rng), true),
            params.add("head.intent.b", Tensor::zeros(&[1]), true),
        );
        Self {
            width,
            n,
            ws,
            wc,
            reason_head,
            intent_head,
            cross_modal,
        }
    }

    pub fn attend(&self, tape: &mut Tape, bound: &Bound, h: Var) -> Result<Attended> {
        attend(tape, h, bound[self.ws], bound[self.wc])
    }

    /// Applies the heads to `C` (or to `F` without the cross-modal product).
    pub fn heads(&self, tape: &mut Tape, bound: &Bound, input: Var) -> Result<Logits> {
        let reasons = match self.reason_head {
            Some((w, b)) => affine(tape, input, bound[w], bound[b])?,
            None => input,
        };
        let intent = affine(tape, input, bound[self.intent_head.0], bound[self.intent_head.1])?;
        Ok(Logits { intent, reasons })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_state_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::randn(&[1, 3], 1.0, &mut rng));
        let ws = tape.constant(Tensor::randn(&[3, 3], 1.0, &mut rng));
        let wc_t = Tensor::randn(&[6, 3], 1.0, &mut rng);
        let wc = tape.constant(wc_t.clone());
        let out = attend(&mut tape, h, ws, wc).unwrap();
        assert_eq!(tape.value(out.alpha).data(), &[1.0]);
        let he = tape.value(h).data().to_vec();
        for j in 0..3 {
            let z: f64 = (0..3).map(|i| he[i] * (wc_t.at(i, j) + wc_t.at(i + 3, j))).sum();
            assert!((tape.value(out.f).data()[j] - z.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_score_matrix_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::randn(&[4, 3], 1.0, &mut rng));
        let ws = tape.constant(Tensor::zeros(&[3, 3]));
        let wc = tape.constant(Tensor::randn(&[6, 3], 1.0, &mut rng));
        let out = attend(&mut tape, h, ws, wc).unwrap();
        for a in tape.value(out.alpha).data() {
            assert!((a - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn attend_rejects_wrong_combine_shape() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[2, 3]));
        let ws = tape.constant(Tensor::zeros(&[3, 3]));
        let wc = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(attend(&mut tape, h, ws, wc), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cross_modal_of_zero_is_zero_and_picks_orthonormal_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::eye(4));
        let f = tape.constant(Tensor::zeros(&[1, 4]));
        let c = cross_modal(&mut tape, f, x).unwrap();
        assert!(tape.value(c).data().iter().all(|v| *v == 0.0));
        let f = tape.constant(Tensor::new(&[1, 4], vec![0.0, 0.0, 1.0, 0.0]).unwrap());
        let c = cross_modal(&mut tape, f, x).unwrap();
        assert_eq!(tape.value(c).data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn identity_head_passes_c_and_zero_intent_weights_give_bias() {
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fusion = Fusion::init(&mut params, 4, 3, ReasonHead::Identity, true, &mut rng);
        assert!(fusion.reason_head.is_none());
        params.tensor_mut(fusion.intent_head.0).data_mut().fill(0.0);
        params.tensor_mut(fusion.intent_head.1).data_mut()[0] = 0.7;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let c = tape.constant(Tensor::new(&[1, 3], vec![0.1, -2.0, 3.0]).unwrap());
        let logits = fusion.heads(&mut tape, &bound, c).unwrap();
        assert_eq!(tape.value(logits.reasons).data(), &[0.1, -2.0, 3.0]);
        assert_eq!(tape.value(logits.intent).data(), &[0.7]);
    }

    #[test]
    fn loss_of_zero_logits_is_weighted_ln2() {
        let mut tape = Tape::new();
        let reasons = tape.constant(Tensor::zeros(&[1, 5]));
        let intent = tape.constant(Tensor::zeros(&[1, 1]));
        let w = LossWeights::new(0.5, 1.0).unwrap();
        let loss = multitask_loss(&mut tape, Logits { intent, reasons }, 1.0, &[1.0; 5], w).unwrap();
        assert!((tape.value(loss).item() - 1.5 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn zero_reason_weight_is_pure_intent_loss() {
        let mut tape = Tape::new();
        let reasons = tape.constant(Tensor::new(&[1, 2], vec![3.0, -1.0]).unwrap());
        let intent = tape.constant(Tensor::new(&[1, 1], vec![0.4]).unwrap());
        let w = LossWeights::new(0.0, 1.0).unwrap();
        let loss = multitask_loss(&mut tape, Logits { intent, reasons }, 0.0, &[1.0, 0.0], w).unwrap();
        let expect = (1.0 + 0.4f64.exp()).ln();
        assert!((tape.value(loss).item() - expect).abs() < 1e-15);
    }

    #[test]
    fn loss_weights_reject_both_zero() {
        assert!(LossWeights::new(0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0).is_err());
    }
}
