//! Randomized comparisons of the tape implementations against the dense
//! references. Each returns the largest absolute deviation seen.

use crossing_intent::fusion;
use crossing_intent::params::ModelParams;
use crossing_intent::reason_graph::{gcn_forward, GCN_LEAKY_SLOPE};
use crossing_intent::tape::Tape;
use crossing_intent::tfe::{TransformerEncoder, LAYERNORM_EPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub fn attend_deviation(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let t = rng.random_range(1..=4);
        let w = rng.random_range(1..=5);
        let h = random_mat(t, w, 1.5, &mut rng);
        let ws = random_mat(w, w, 1.0, &mut rng);
        let wc = random_mat(2 * w, w, 1.0, &mut rng);
        let mut tape = Tape::new();
        let hv = tape.constant(tensor(&h));
        let wsv = tape.param(tensor(&ws));
        let wcv = tape.param(tensor(&wc));
        let out = fusion::attend(&mut tape, hv, wsv, wcv).unwrap();
        let (f, alpha) = attend(&h, &ws, &wc);
        worst = worst
            .max(max_abs_diff_vec(tape.value(out.f).data(), &f))
            .max(max_abs_diff_vec(tape.value(out.alpha).data(), &alpha));
    }
    worst
}

pub fn cross_modal_deviation(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(1..=6);
        let d = rng.random_range(1..=6);
        let f = random_mat(1, d, 1.0, &mut rng);
        let x = random_mat(n, d, 2.0, &mut rng);
        let mut tape = Tape::new();
        let fv = tape.param(tensor(&f));
        let xv = tape.param(tensor(&x));
        let c = fusion::cross_modal(&mut tape, fv, xv).unwrap();
        worst = worst.max(max_abs_diff_vec(tape.value(c).data(), &cross_modal(&f[0], &x)));
    }
    worst
}

/// Random non-negative row-normalized propagation matrix, with an
/// occasional isolated (all-zero) row.
pub fn random_propagation<R: Rng>(n: usize, rng: &mut R) -> Mat {
    (0..n)
        .map(|i| {
            if n > 2 && rng.random_bool(0.1) {
                return vec![0.0; n];
            }
            let mut row: Vec<f64> = (0..n).map(|j| if i == j { 1.0 } else { rng.random_range(0.0..1.0) }).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect()
}

pub fn gcn_deviation(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(2..=6);
        let widths = [rng.random_range(1..=5), rng.random_range(1..=6), rng.random_range(1..=5)];
        let x0 = random_mat(n, widths[0], 1.0, &mut rng);
        let a = random_propagation(n, &mut rng);
        let ws = vec![
            random_mat(widths[0], widths[1], 1.0, &mut rng),
            random_mat(widths[1], widths[2], 1.0, &mut rng),
        ];
        let mut tape = Tape::new();
        let xv = tape.constant(tensor(&x0));
        let av = tape.constant(tensor(&a));
        let wv: Vec<_> = ws.iter().map(|w| tape.param(tensor(w))).collect();
        let out = gcn_forward(&mut tape, xv, av, &wv, GCN_LEAKY_SLOPE).unwrap();
        worst = worst.max(max_abs_diff(&mat(tape.value(out)), &gcn(&x0, &a, &ws, GCN_LEAKY_SLOPE)));
    }
    worst
}

pub fn encode_stream_deviation(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let heads = rng.random_range(1..=2);
        let w = heads * rng.random_range(1..=3);
        let t = rng.random_range(1..=4);
        let layers = rng.random_range(1..=2);
        let mut params = ModelParams::new();
        let enc = TransformerEncoder::init(&mut params, "enc", w, heads, layers, 4, 2 * w, &mut rng).unwrap();
        // Move gains and biases off their 1/0 initial values.
        for e in params.entries_mut() {
            for v in e.tensor.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let x = random_mat(t, w, 1.0, &mut rng);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let xv = tape.constant(tensor(&x));
        let out = enc.encode(&mut tape, &bound, xv).unwrap();
        let expected = encode_stream(&params, "enc", layers, heads, &x, LAYERNORM_EPS);
        worst = worst.max(max_abs_diff(&mat(tape.value(out)), &expected));
    }
    worst
}
