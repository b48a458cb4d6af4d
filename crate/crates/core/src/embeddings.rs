//! Fixed reason-sentence embeddings fed to the reason graph.
//!
//! Three providers produce an [`EmbeddingTable`]: an importer for vectors
//! computed elsewhere (one line per reason, `<id> <v1> ... <vd>`), a seeded
//! hashing embedder that needs no external model, and a word-averaging
//! embedder over a GloVe-style word-vector file.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_real;
use crate::reason_graph::ReasonVocabulary;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderTag {
    File,
    ToyHash,
    WordAverage,
}

/// Words dropped before hashing or averaging.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "to", "for", "of", "on", "in", "at", "with", "since", "it", "s", "is",
    "its", "their", "while", "just", "and",
];

/// Lowercased alphanumeric tokens. Apostrophes and hyphens split words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn content_words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub d: usize,
    pub provider: ProviderTag,
    /// Indexed by reason id.
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(provider: ProviderTag, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let d = vectors.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(Error::Validation("embedding table is empty".into()));
        }
        for (id, v) in vectors.iter().enumerate() {
            if v.len() != d {
                return Err(Error::Validation(format!("reason {id} has width {} != {d}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("reason {id} has a non-finite component")));
            }
        }
        Ok(Self { d, provider, vectors })
    }

    pub fn n(&self) -> usize {
        self.vectors.len()
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        &self.vectors[id]
    }

    /// `n × d` node-feature matrix.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.n(), self.d], self.vectors.concat())
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (id, v) in self.vectors.iter().enumerate() {
            out.push_str(&id.to_string());
            for x in v {
                out.push(' ');
                out.push_str(&fmt_real(*x));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_file_string().as_bytes())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn l2_normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

fn parse_vector_lines(text: &str, path: &Path) -> Result<Vec<(usize, String, Vec<f64>)>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let key = fields.next().expect("non-blank line").to_string();
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(path, format!("line {lineno}: bad real {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::parse(path, format!("line {lineno}: no values")));
        }
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
        rows.push((lineno, key, values));
    }
    Ok(rows)
}

/// Reads an embedding file: one line per reason, `<id> <v1> ... <vd>`.
pub fn load_embeddings(path: &Path, vocab: &ReasonVocabulary) -> Result<EmbeddingTable> {
    let text = crate::io::read_to_string(path)?;
    parse_embeddings(&text, path, vocab)
}

pub fn parse_embeddings(text: &str, path: &Path, vocab: &ReasonVocabulary) -> Result<EmbeddingTable> {
    let mut slots: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (lineno, key, values) in parse_vector_lines(text, path)? {
        let id: usize = key
            .parse()
            .map_err(|_| Error::parse(path, format!("line {lineno}: bad reason id {key:?}")))?;
        let slot = slots.get_mut(id).ok_or_else(|| {
            Error::Validation(format!("{}: line {lineno}: unknown reason id {id}", path.display()))
        })?;
        if slot.is_some() {
            return Err(Error::Validation(format!(
                "{}: line {lineno}: duplicate reason id {id}",
                path.display()
            )));
        }
        *slot = Some(values);
    }
    let vectors = slots
        .into_iter()
        .enumerate()
        .map(|(id, v)| {
            v.ok_or_else(|| Error::Validation(format!("{}: missing reason id {id}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingTable::new(ProviderTag::File, vectors)
}

fn fnv1a(seed: u64, token: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Buckets each content word is hashed into by [`toy_embed`].
pub const TOY_BUCKETS_PER_WORD: u64 = 4;

/// Hashing embedder: each content word adds signed, seed-dependent weights
/// to [`TOY_BUCKETS_PER_WORD`] of the `d` buckets; the bucket sums are
/// L2-normalized. Sentences sharing words therefore overlap in the same
/// buckets while unrelated collisions tend to cancel.
pub fn toy_embed(vocab: &ReasonVocabulary, d: usize, seed: u64) -> Result<EmbeddingTable> {
    if d < 2 {
        return Err(Error::Config(format!("toy embedding width must be at least 2, got {d}")));
    }
    let vectors = vocab
        .entries()
        .iter()
        .map(|entry| {
            let mut words = content_words(&entry.text);
            if words.is_empty() {
                words = tokenize(&entry.text);
            }
            let mut v = vec![0.0; d];
            for w in &words {
                for probe in 0..TOY_BUCKETS_PER_WORD {
                    let h = fnv1a(seed ^ probe.wrapping_mul(0x9e37_79b9_7f4a_7c15), w);
                    let bucket = (h % d as u64) as usize;
                    let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
                    v[bucket] += sign * (0.5 + ((h >> 31) & 0xffff_ffff) as f64 / 4_294_967_296.0);
                }
            }
            l2_normalized(v).ok_or_else(|| {
                Error::Validation(format!("reason {} has no tokens to embed", entry.id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingTable::new(ProviderTag::ToyHash, vectors)
}

/// Per-reason mean of its content-word vectors, L2-normalized.
pub fn word_average_from(
    vocab: &ReasonVocabulary,
    words: &HashMap<String, Vec<f64>>,
) -> Result<EmbeddingTable> {
    let vectors = vocab
        .entries()
        .iter()
        .map(|entry| {
            let covered: Vec<&Vec<f64>> = content_words(&entry.text)
                .iter()
                .filter_map(|w| words.get(w))
                .collect();
            if covered.is_empty() {
                return Err(Error::Validation(format!(
                    "reason {} ({:?}) has no words covered by the word vectors",
                    entry.id, entry.text
                )));
            }
            let d = covered[0].len();
            let mut mean = vec![0.0; d];
            for v in &covered {
                mean.iter_mut().zip(v.iter()).for_each(|(m, x)| *m += x);
            }
            mean.iter_mut().for_each(|m| *m /= covered.len() as f64);
            l2_normalized(mean).ok_or_else(|| {
                Error::Validation(format!("reason {} averages to the zero vector", entry.id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingTable::new(ProviderTag::WordAverage, vectors)
}

/// Reads a word-vector file (`<word> <v1> ... <vd>` per line).
pub fn load_word_vectors(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let text = crate::io::read_to_string(path)?;
    Ok(parse_vector_lines(&text, path)?
        .into_iter()
        .map(|(_, w, v)| (w.to_lowercase(), v))
        .collect())
}

pub fn word_average_embed(vocab: &ReasonVocabulary, word_vector_file: &Path) -> Result<EmbeddingTable> {
    word_average_from(vocab, &load_word_vectors(word_vector_file)?)
}

/// Seeded Gaussian vectors for every content word of the vocabulary. Stands
/// in for pretrained word vectors in the word-level ablation.
pub fn toy_word_vectors(vocab: &ReasonVocabulary, d: usize, seed: u64) -> BTreeMap<String, Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut out = BTreeMap::new();
    for entry in vocab.entries() {
        for w in content_words(&entry.text) {
            out.entry(w.clone()).or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(seed, &w));
                (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
            });
        }
    }
    out
}

pub fn word_vectors_to_string(words: &BTreeMap<String, Vec<f64>>) -> String {
    let mut out = String::new();
    for (w, v) in words {
        out.push_str(w);
        for x in v {
            out.push(' ');
            out.push_str(&fmt_real(*x));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> ReasonVocabulary {
        ReasonVocabulary::default_pie()
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            content_words("Pedestrian intends to cross since it\u{2019}s a safe passage"),
            vec!["pedestrian", "intends", "cross", "safe", "passage"]
        );
        assert_eq!(tokenize("road-side"), vec!["road", "side"]);
    }

    #[test]
    fn toy_embed_is_deterministic_and_normalized() {
        let a = toy_embed(&vocab(), 32, 5).unwrap();
        let b = toy_embed(&vocab(), 32, 5).unwrap();
        assert_eq!(a, b);
        for id in 0..a.n() {
            let norm = a.vector(id).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-12);
        }
        assert_ne!(a, toy_embed(&vocab(), 32, 6).unwrap());
    }

    #[test]
    fn toy_embed_rejects_tiny_width() {
        assert!(matches!(toy_embed(&vocab(), 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn shared_words_raise_similarity() {
        // 1: "Waiting for a safe passage to cross"
        // 10: "Pedestrian intends to cross since it's a safe passage"
        // 16: "Pedestrians doing their work on road-side"
        for seed in 0..20 {
            let t = toy_embed(&vocab(), 32, seed).unwrap();
            let related = cosine(t.vector(1), t.vector(10));
            let unrelated = cosine(t.vector(1), t.vector(16));
            assert!(related > unrelated, "seed {seed}: {related} <= {unrelated}");
        }
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let t = toy_embed(&vocab(), 8, 3).unwrap();
        let text = t.to_file_string();
        let back = parse_embeddings(&text, Path::new("mem"), &vocab()).unwrap();
        assert_eq!(back.to_file_string(), text);
        assert_eq!(back.d, 8);
        for id in 0..17 {
            for (a, b) in t.vector(id).iter().zip(back.vector(id)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn missing_id_is_named() {
        let t = toy_embed(&vocab(), 8, 3).unwrap();
        let text: String = t
            .to_file_string()
            .lines()
            .filter(|l| !l.starts_with("16 "))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = parse_embeddings(&text, Path::new("mem"), &vocab()).unwrap_err();
        assert!(err.to_string().contains("missing reason id 16"), "{err}");
    }

    #[test]
    fn duplicate_and_ragged_lines_report_line_numbers() {
        let dup = "0 1 2\n0 1 2\n";
        let err = parse_embeddings(dup, Path::new("mem"), &vocab()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let ragged = "0 1 2\n1 1 2 3\n";
        let err = parse_embeddings(ragged, Path::new("mem"), &vocab()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn word_average_identical_vectors() {
        let v = vec![3.0, 4.0];
        let words: HashMap<String, Vec<f64>> = vocab()
            .entries()
            .iter()
            .flat_map(|e| content_words(&e.text))
            .map(|w| (w, v.clone()))
            .collect();
        let t = word_average_from(&vocab(), &words).unwrap();
        for id in 0..17 {
            assert!((t.vector(id)[0] - 0.6).abs() < 1e-15);
            assert!((t.vector(id)[1] - 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn word_average_uncovered_reason_fails() {
        let words: HashMap<String, Vec<f64>> = [("waiting".to_string(), vec![1.0, 0.0])].into();
        assert!(matches!(
            word_average_from(&vocab(), &words),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn toy_word_vectors_cover_vocabulary() {
        let words = toy_word_vectors(&vocab(), 8, 1);
        let map: HashMap<String, Vec<f64>> = words.into_iter().collect();
        let t = word_average_from(&vocab(), &map).unwrap();
        assert_eq!(t.provider, ProviderTag::WordAverage);
        assert_eq!(t.d, 8);
    }
}
