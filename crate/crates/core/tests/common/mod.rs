//! Dense reference evaluations shared by the integration tests. Everything
//! here works on plain nested vectors and never touches the tape.

#![allow(dead_code)]

use crossing_intent::params::ModelParams;
use crossing_intent::Tensor;
use rand::Rng;

pub mod formulas;
pub mod graph;
pub mod icc;
pub mod metrics;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    t.to_rows()
}

pub fn vector(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

pub fn random_mat<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

pub fn tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let p = b[0].len();
    a.iter()
        .map(|row| {
            (0..p)
                .map(|j| row.iter().enumerate().map(|(k, v)| v * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn add_row(a: &Mat, b: &[f64]) -> Mat {
    a.iter().map(|r| r.iter().zip(b).map(|(p, q)| p + q).collect()).collect()
}

pub fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn layernorm(row: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    row.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| g * (v - mu) / (var + eps).sqrt() + b)
        .collect()
}

/// `Φ(x)` by composite Simpson quadrature of the Gaussian density from 0.
pub fn normal_cdf_quadrature(x: f64) -> f64 {
    let steps = 4000;
    let h = x / steps as f64;
    let pdf = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(0.0) + pdf(x);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(h * i as f64);
    }
    0.5 + s * h / 3.0
}

pub fn gelu(x: f64) -> f64 {
    x * normal_cdf_quadrature(x)
}

pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn bce(z: f64, t: f64) -> f64 {
    let p = 1.0 / (1.0 + (-z).exp());
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Attention fusion: returns `(F, α)`.
pub fn attend(h: &Mat, ws: &Mat, wc: &Mat) -> (Vec<f64>, Vec<f64>) {
    let he = h.last().unwrap().clone();
    let scores: Vec<f64> = h
        .iter()
        .map(|hs| {
            let mut s = 0.0;
            for a in 0..he.len() {
                for b in 0..hs.len() {
                    s += he[a] * ws[a][b] * hs[b];
                }
            }
            s
        })
        .collect();
    let alpha = softmax(&scores);
    let w = he.len();
    let mut hc = vec![0.0; w];
    for (a, hs) in alpha.iter().zip(h) {
        for k in 0..w {
            hc[k] += a * hs[k];
        }
    }
    let joined: Vec<f64> = hc.into_iter().chain(he).collect();
    let f = (0..w)
        .map(|j| joined.iter().enumerate().map(|(k, v)| v * wc[k][j]).sum::<f64>().tanh())
        .collect();
    (f, alpha)
}

pub fn cross_modal(f: &[f64], x: &Mat) -> Vec<f64> {
    x.iter().map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum()).collect()
}

pub fn gcn(x0: &Mat, a_hat: &Mat, weights: &[Mat], slope: f64) -> Mat {
    let mut x = x0.clone();
    for (l, w) in weights.iter().enumerate() {
        x = matmul(&matmul(a_hat, &x), w);
        if l + 1 < weights.len() {
            x = map(&x, |v| leaky(v, slope));
        }
    }
    x
}

fn named(params: &ModelParams, name: &str) -> Tensor {
    params.tensor(params.find(name).unwrap_or_else(|| panic!("missing {name}"))).clone()
}

/// Pre-LN transformer stream encoder read from the parameter names written
/// by `TransformerEncoder::init`.
pub fn encode_stream(params: &ModelParams, prefix: &str, layers: usize, heads: usize, x: &Mat, eps: f64) -> Mat {
    let t = x.len();
    let w = x[0].len();
    let pos = mat(&named(params, &format!("{prefix}.pos")));
    let mut x: Mat = (0..t).map(|i| x[i].iter().zip(&pos[i]).map(|(a, b)| a + b).collect()).collect();
    let dh = w / heads;
    for l in 0..layers {
        let p = |s: &str| named(params, &format!("{prefix}.l{l}.{s}"));
        let ln = |x: &Mat, g: &str, b: &str| -> Mat {
            let (g, b) = (vector(&p(g)), vector(&p(b)));
            x.iter().map(|r| layernorm(r, &g, &b, eps)).collect()
        };
        let aff = |x: &Mat, w: &str, b: &str| add_row(&matmul(x, &mat(&p(w))), &vector(&p(b)));
        let h = ln(&x, "ln1.gain", "ln1.bias");
        let (q, k, v) = (aff(&h, "wq", "bq"), aff(&h, "wk", "bk"), aff(&h, "wv", "bv"));
        let mut merged = vec![vec![0.0; w]; t];
        for head in 0..heads {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let a = softmax(&scores);
                for c in cols.clone() {
                    merged[i][c] = (0..t).map(|j| a[j] * v[j][c]).sum();
                }
            }
        }
        x = add(&x, &aff(&merged, "wo", "bo"));
        let h = ln(&x, "ln2.gain", "ln2.bias");
        let m = map(&aff(&h, "mlp.w1", "mlp.b1"), gelu);
        x = add(&x, &aff(&m, "mlp.w2", "mlp.b2"));
    }
    x
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff_vec(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
