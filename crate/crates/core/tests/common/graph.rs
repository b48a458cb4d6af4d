//! Co-occurrence references over randomly drawn schema-valid corpora.

use crossing_intent::dataset::{AnnotationRecord, Frame};
use crossing_intent::reason_graph::{
    build_adjacency, count_cooccurrence, Intent, ReasonVocabulary,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` records with a random intent and a random non-empty reason set
/// of that intent's class.
pub fn random_records<R: Rng>(count: usize, vocab: &ReasonVocabulary, rng: &mut R) -> Vec<AnnotationRecord> {
    (0..count)
        .map(|i| {
            let intent = if rng.random_bool(0.7) { Intent::Cross } else { Intent::NoCross };
            let pool = vocab.ids_for(intent);
            let k = rng.random_range(1..=pool.len().min(5));
            let mut reasons: Vec<usize> = pool.choose_multiple(rng, k).copied().collect();
            reasons.sort_unstable();
            AnnotationRecord {
                pedestrian_id: format!("p{i}"),
                video_id: "v".into(),
                frames: vec![Frame {
                    frame_index: 0,
                    bbox: [0.1, 0.1, 0.2, 0.3],
                }],
                intent,
                reasons,
                critical_frame: 0,
                scene: None,
            }
        })
        .collect()
}

/// Pair counts by direct membership tests.
pub fn pair_counts(corpus: &[AnnotationRecord], n: usize) -> Vec<Vec<u64>> {
    let mut out = vec![vec![0u64; n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = corpus
                .iter()
                .filter(|r| r.reasons.contains(&i) && r.reasons.contains(&j))
                .count() as u64;
        }
    }
    out
}

/// Outcome of the co-occurrence comparison over `corpora` random corpora of
/// at most 10 records.
#[derive(Debug, Default)]
pub struct CooccurrenceCheck {
    pub count_mismatches: usize,
    pub probability_mismatches: usize,
    pub invariant_violations: usize,
    pub cross_block_nonzero: usize,
}

impl CooccurrenceCheck {
    pub fn clean(&self) -> bool {
        self.count_mismatches == 0
            && self.probability_mismatches == 0
            && self.invariant_violations == 0
            && self.cross_block_nonzero == 0
    }
}

pub fn check_random_corpora(corpora: usize, seed: u64) -> CooccurrenceCheck {
    let vocab = ReasonVocabulary::default_pie();
    let n = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CooccurrenceCheck::default();
    for _ in 0..corpora {
        let size = rng.random_range(0..=10);
        let corpus = random_records(size, &vocab, &mut rng);
        let stats = count_cooccurrence(&corpus, &vocab).unwrap();
        let expected = pair_counts(&corpus, n);
        let a = build_adjacency(&stats, None);
        for (i, row) in expected.iter().enumerate() {
            let ci = row[i];
            for (j, &cij) in row.iter().enumerate() {
                if stats.pair(i, j) != cij {
                    out.count_mismatches += 1;
                }
                let p = if ci == 0 { 0.0 } else { cij as f64 / ci as f64 };
                if a.get(i, j) != p {
                    out.probability_mismatches += 1;
                }
                if !(0.0..=1.0).contains(&a.get(i, j)) {
                    out.invariant_violations += 1;
                }
                let ei = vocab.get(i).unwrap().intent_class;
                let ej = vocab.get(j).unwrap().intent_class;
                if ei != ej && a.get(i, j) != 0.0 {
                    out.cross_block_nonzero += 1;
                }
            }
            if ci > 0 && a.get(i, i) != 1.0 {
                out.invariant_violations += 1;
            }
            if ci == 0 && (0..n).any(|j| a.get(i, j) != 0.0) {
                out.invariant_violations += 1;
            }
        }
    }
    out
}
