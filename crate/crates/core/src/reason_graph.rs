//! Reason vocabulary, label co-occurrence statistics, the conditional
//! probability graph built from them, and the graph convolution that turns
//! sentence embeddings into correlated reason embeddings.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::AnnotationRecord;
use crate::error::{Error, Result};
use crate::params::{Bound, ModelParams, ParamId};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intent {
    #[serde(rename = "C")]
    Cross,
    #[serde(rename = "NC")]
    NoCross,
}

impl Intent {
    pub fn as_label(self) -> f64 {
        match self {
            Intent::Cross => 1.0,
            Intent::NoCross => 0.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Intent::Cross => Intent::NoCross,
            Intent::NoCross => Intent::Cross,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Intent::Cross => "C",
            Intent::NoCross => "NC",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonEntry {
    pub id: usize,
    pub intent_class: Intent,
    pub text: String,
}

const CROSS_REASONS: [&str; 14] = [
    "Waiting to cross with a neighbouring pedestrian",
    "Waiting for a safe passage to cross",
    "Waiting to cross with a group of pedestrians",
    "Waiting for the signal to turn red",
    "Waiting since the ego-vehicle speed is high",
    "Waiting since the vehicle speed is high",
    "Waiting for vehicles to slow down",
    "Waiting while giving right-of-way to ego-vehicle",
    "Pedestrian acknowledges ego-vehicle to stop",
    "Pedestrian intends to cross since the signal is red",
    "Pedestrian intends to cross since it\u{2019}s a safe passage",
    "Pedestrian intends to cross since ego-vehicle speed is slow",
    "Pedestrian intends to cross since vehicle speed is slow",
    "Neglects the ego-vehicle",
];

const NO_CROSS_REASONS: [&str; 3] = [
    "Two pedestrians just interacting (on road-side)",
    "Group of pedestrians just interacting (on road-side)",
    "Pedestrians doing their work on road-side",
];

/// The `n` reason classes, ids dense in `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonVocabulary {
    reasons: Vec<ReasonEntry>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    reasons: Vec<ReasonEntry>,
}

impl ReasonVocabulary {
    /// The 17 crossing / not-crossing reasons, crossing reasons first.
    pub fn default_pie() -> Self {
        let reasons = CROSS_REASONS
            .iter()
            .map(|t| (Intent::Cross, t))
            .chain(NO_CROSS_REASONS.iter().map(|t| (Intent::NoCross, t)))
            .enumerate()
            .map(|(id, (intent_class, text))| ReasonEntry {
                id,
                intent_class,
                text: text.to_string(),
            })
            .collect();
        Self { reasons }
    }

    pub fn new(mut reasons: Vec<ReasonEntry>) -> Result<Self> {
        reasons.sort_by_key(|r| r.id);
        for (expected, r) in reasons.iter().enumerate() {
            if r.id != expected {
                return Err(Error::Validation(format!(
                    "vocabulary ids must be dense and unique: expected id {expected}, found {}",
                    r.id
                )));
            }
        }
        if reasons.is_empty() {
            return Err(Error::Validation("vocabulary is empty".into()));
        }
        Ok(Self { reasons })
    }

    pub fn len(&self) -> usize {
        self.reasons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reasons.is_empty()
    }

    pub fn entries(&self) -> &[ReasonEntry] {
        &self.reasons
    }

    pub fn get(&self, id: usize) -> Option<&ReasonEntry> {
        self.reasons.get(id)
    }

    pub fn ids_for(&self, intent: Intent) -> Vec<usize> {
        self.reasons
            .iter()
            .filter(|r| r.intent_class == intent)
            .map(|r| r.id)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        let file: VocabularyFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        Self::new(file.reasons)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(
            path,
            &VocabularyFile {
                reasons: self.reasons.clone(),
            },
        )
    }
}

/// Per-label and pairwise label counts over a corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceStats {
    pub n: usize,
    pub count_i: Vec<u64>,
    /// Row-major `n × n`; the diagonal equals `count_i`.
    pub count_ij: Vec<u64>,
    pub total_records: u64,
}

impl CooccurrenceStats {
    pub fn pair(&self, i: usize, j: usize) -> u64 {
        self.count_ij[i * self.n + j]
    }
}

/// Counts co-occurrences over plain label sets. Duplicate ids inside one
/// set count once.
pub fn count_label_sets<'a>(
    sets: impl IntoIterator<Item = (&'a str, &'a [usize])>,
    n: usize,
) -> Result<CooccurrenceStats> {
    let mut count_ij = vec![0u64; n * n];
    let mut total = 0u64;
    let mut present = vec![false; n];
    for (name, set) in sets {
        present.iter_mut().for_each(|p| *p = false);
        for &id in set {
            if id >= n {
                return Err(Error::Validation(format!(
                    "record {name}: reason id {id} outside vocabulary of {n}"
                )));
            }
            present[id] = true;
        }
        let ids: Vec<usize> = (0..n).filter(|&i| present[i]).collect();
        for &i in &ids {
            for &j in &ids {
                count_ij[i * n + j] += 1;
            }
        }
        total += 1;
    }
    let count_i = (0..n).map(|i| count_ij[i * n + i]).collect();
    Ok(CooccurrenceStats {
        n,
        count_i,
        count_ij,
        total_records: total,
    })
}

pub fn count_cooccurrence(
    corpus: &[AnnotationRecord],
    vocab: &ReasonVocabulary,
) -> Result<CooccurrenceStats> {
    count_label_sets(
        corpus
            .iter()
            .map(|r| (r.pedestrian_id.as_str(), r.reasons.as_slice())),
        vocab.len(),
    )
}

/// Directed graph with `A[i][j] = P(reason j | reason i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyMatrix {
    pub n: usize,
    pub probs: Vec<f64>,
}

impl AdjacencyMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.n + j]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.n, self.n], self.probs.clone())
    }

    pub fn validate(&self, stats: &CooccurrenceStats) -> Result<()> {
        for i in 0..self.n {
            for j in 0..self.n {
                let p = self.get(i, j);
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Validation(format!("P({j}|{i}) = {p} outside [0, 1]")));
                }
            }
            if stats.count_i[i] > 0 && self.get(i, i) != 1.0 {
                return Err(Error::Validation(format!("P({i}|{i}) != 1 for observed reason")));
            }
        }
        Ok(())
    }
}

/// Conditional probabilities from counts. Rows of never-observed reasons
/// stay zero. With `threshold`, probabilities below it are dropped (off by
/// default).
pub fn build_adjacency(stats: &CooccurrenceStats, threshold: Option<f64>) -> AdjacencyMatrix {
    let n = stats.n;
    let mut probs = vec![0.0; n * n];
    for i in 0..n {
        let ci = stats.count_i[i];
        if ci == 0 {
            continue;
        }
        for j in 0..n {
            let p = stats.pair(i, j) as f64 / ci as f64;
            probs[i * n + j] = match threshold {
                Some(tau) if p < tau && i != j => 0.0,
                _ => p,
            };
        }
    }
    let a = AdjacencyMatrix { n, probs };
    debug_assert!(a.validate(stats).is_ok());
    a
}

/// Per-label line of a [`CooccurrenceReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelFrequency {
    pub id: usize,
    pub intent_class: Intent,
    pub text: String,
    pub count: u64,
    /// Share of records carrying the label.
    pub frequency: f64,
}

/// Counts, conditional probabilities and label frequencies of a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceReport {
    pub total_records: u64,
    pub mean_labels_per_record: f64,
    pub labels: Vec<LabelFrequency>,
    /// `n × n` co-occurrence counts.
    pub counts: Vec<Vec<u64>>,
    /// `n × n`, row `i` holds `P(j | i)`.
    pub conditional: Vec<Vec<f64>>,
}

impl CooccurrenceReport {
    pub fn new(stats: &CooccurrenceStats, adjacency: &AdjacencyMatrix, vocab: &ReasonVocabulary) -> Self {
        let n = stats.n;
        let total = stats.total_records;
        let labels = vocab
            .entries()
            .iter()
            .map(|e| LabelFrequency {
                id: e.id,
                intent_class: e.intent_class,
                text: e.text.clone(),
                count: stats.count_i[e.id],
                frequency: if total == 0 { 0.0 } else { stats.count_i[e.id] as f64 / total as f64 },
            })
            .collect();
        Self {
            total_records: total,
            mean_labels_per_record: if total == 0 {
                0.0
            } else {
                stats.count_i.iter().sum::<u64>() as f64 / total as f64
            },
            labels,
            counts: (0..n).map(|i| (0..n).map(|j| stats.pair(i, j)).collect()).collect(),
            conditional: (0..n).map(|i| (0..n).map(|j| adjacency.get(i, j)).collect()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Each row divided by its sum.
    #[default]
    Row,
    /// `A[i][j] / sqrt(d_i · d_j)` with out-degree row sums.
    Symmetric,
}

/// Propagation matrix for the graph convolution. The diagonal already holds
/// `P(i|i) = 1`, so no self-loops are added; zero rows stay zero.
pub fn normalize_adjacency(a: &AdjacencyMatrix, mode: Normalization) -> Tensor {
    let n = a.n;
    let sums: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a.get(i, j)).sum()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        if sums[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            let v = a.get(i, j);
            out[i * n + j] = match mode {
                Normalization::Row => v / sums[i],
                Normalization::Symmetric if sums[j] > 0.0 => v / (sums[i] * sums[j]).sqrt(),
                Normalization::Symmetric => 0.0,
            };
        }
    }
    Tensor::from_parts(vec![n, n], out)
}

/// Stack of graph-convolution weights `d → hidden… → out`.
#[derive(Clone, Debug)]
pub struct Gcn {
    pub layers: Vec<ParamId>,
    pub slope: f64,
}

pub const GCN_LEAKY_SLOPE: f64 = 0.2;

impl Gcn {
    pub fn init<R: Rng + ?Sized>(
        params: &mut ModelParams,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("a graph convolution needs at least one layer".into()));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| params.add(format!("gcn.w{}", l + 1), Tensor::glorot(w[0], w[1], rng), true))
            .collect();
        Ok(Self {
            layers,
            slope: GCN_LEAKY_SLOPE,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x0: Var, a_hat: Var) -> Result<Var> {
        let weights: Vec<Var> = self.layers.iter().map(|&id| bound[id]).collect();
        gcn_forward(tape, x0, a_hat, &weights, self.slope)
    }
}

/// `X_{l+1} = act(Â · X_l · W_l)`, LeakyReLU between layers, linear output.
pub fn gcn_forward(tape: &mut Tape, x0: Var, a_hat: Var, weights: &[Var], slope: f64) -> Result<Var> {
    let (n, d) = match *tape.shape(x0) {
        [n, d] => (n, d),
        ref s => return Err(Error::dim("gcn_forward", format!("node features must be a matrix, got {s:?}"))),
    };
    if tape.shape(a_hat) != [n, n] {
        return Err(Error::dim(
            "gcn_forward",
            format!("adjacency {:?} does not match {n} nodes", tape.shape(a_hat)),
        ));
    }
    let mut width = d;
    let mut x = x0;
    for (l, &w) in weights.iter().enumerate() {
        let ws = tape.shape(w).to_vec();
        if ws.len() != 2 || ws[0] != width {
            return Err(Error::dim(
                "gcn_forward",
                format!("layer {} weight {ws:?} does not accept width {width}", l + 1),
            ));
        }
        width = ws[1];
        let ax = tape.matmul(a_hat, x)?;
        x = tape.matmul(ax, w)?;
        if l + 1 < weights.len() {
            x = tape.leaky_relu(x, slope)?;
        }
    }
    Ok(x)
}
