//! Annotation records, corpus files, windowing, splits and rater agreement.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"pedestrian_id":"ped_00000","video_id":"video_0000","frames":[{"frame_index":12,"bbox":[0.41,0.52,0.45,0.66]},...],
//!  "intent":"C","reasons":[4,9],"critical_frame":27,"scene":{...}}
//! ```
//!
//! `scene` is optional and only present on generated records; the toy
//! feature provider derives per-frame features from it.

pub mod icc;
pub mod synthetic;

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reason_graph::{Intent, ReasonVocabulary};

pub use icc::{icc, IccModel, RaterMatrix};
pub use synthetic::{generate_synthetic, GeneratorConfig, PlantedSceneFactors, RuleTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_index: u32,
    /// `[x1, y1, x2, y2]` in normalized image coordinates.
    pub bbox: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub pedestrian_id: String,
    pub video_id: String,
    pub frames: Vec<Frame>,
    pub intent: Intent,
    pub reasons: Vec<usize>,
    pub critical_frame: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PlantedSceneFactors>,
}

impl AnnotationRecord {
    pub fn validate(&self, vocab: &ReasonVocabulary) -> Result<()> {
        let who = &self.pedestrian_id;
        if self.reasons.is_empty() {
            return Err(Error::Validation(format!("record {who}: empty reason set")));
        }
        let mut seen = BTreeSet::new();
        for &r in &self.reasons {
            let entry = vocab.get(r).ok_or_else(|| {
                Error::Validation(format!("record {who}: unknown reason id {r}"))
            })?;
            if entry.intent_class != self.intent {
                return Err(Error::Validation(format!(
                    "record {who}: reason {r} ({:?}) belongs to {} but the record intent is {}",
                    entry.text,
                    entry.intent_class.code(),
                    self.intent.code()
                )));
            }
            if !seen.insert(r) {
                return Err(Error::Validation(format!("record {who}: duplicate reason {r}")));
            }
        }
        if self.frames.is_empty() {
            return Err(Error::Validation(format!("record {who}: no frames")));
        }
        for pair in self.frames.windows(2) {
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(Error::Validation(format!(
                    "record {who}: frame indices not strictly increasing at {}",
                    pair[1].frame_index
                )));
            }
        }
        for f in &self.frames {
            if f.frame_index > self.critical_frame {
                return Err(Error::Validation(format!(
                    "record {who}: frame {} lies beyond critical frame {}",
                    f.frame_index, self.critical_frame
                )));
            }
            let [x1, y1, x2, y2] = f.bbox;
            let in_unit = f.bbox.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
            if !in_unit || x1 > x2 || y1 > y2 {
                return Err(Error::Validation(format!(
                    "record {who}: malformed bbox {:?} at frame {}",
                    f.bbox, f.frame_index
                )));
            }
        }
        Ok(())
    }

    /// Multi-hot reason targets of length `n`.
    pub fn reason_targets(&self, n: usize) -> Vec<f64> {
        let mut t = vec![0.0; n];
        for &r in &self.reasons {
            t[r] = 1.0;
        }
        t
    }
}

pub fn parse_corpus(text: &str, source: &Path, vocab: &ReasonVocabulary) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(source, format!("line {}: {e}", i + 1)))?;
        rec.validate(vocab).map_err(|e| match e {
            Error::Validation(msg) => {
                Error::Validation(format!("{} line {}: {msg}", source.display(), i + 1))
            }
            other => other,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path, vocab: &ReasonVocabulary) -> Result<Vec<AnnotationRecord>> {
    parse_corpus(&crate::io::read_to_string(path)?, path, vocab)
}

pub fn corpus_to_string(corpus: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in corpus {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(path: &Path, corpus: &[AnnotationRecord]) -> Result<()> {
    crate::io::write_atomic(path, corpus_to_string(corpus).as_bytes())
}

/// Stride for windows of length `t` overlapping by `overlap`:
/// `ceil(t · (1 − overlap))`, at least 1.
pub fn window_stride(t: usize, overlap: f64) -> usize {
    // The epsilon keeps 10·(1 − 0.6) at 4 instead of 5.
    let raw = t as f64 * (1.0 - overlap);
    ((raw - 1e-9).ceil() as usize).max(1)
}

/// Start positions (into the usable frame list) of every full window.
pub fn window_starts(usable_frames: usize, t: usize, overlap: f64) -> Vec<usize> {
    if t == 0 || usable_frames < t {
        return Vec::new();
    }
    let stride = window_stride(t, overlap);
    (0..=usable_frames - t).step_by(stride).collect()
}

/// One observation window of a record: `t` consecutive frames, all at or
/// before the critical frame, plus the record's targets.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameWindow<'a> {
    pub record: &'a AnnotationRecord,
    /// Position of the first frame inside `record.frames`.
    pub start: usize,
    pub len: usize,
}

impl<'a> FrameWindow<'a> {
    pub fn frames(&self) -> &'a [Frame] {
        &self.record.frames[self.start..self.start + self.len]
    }
}

pub fn window(record: &AnnotationRecord, t: usize, overlap: f64) -> Vec<FrameWindow<'_>> {
    let usable = record
        .frames
        .iter()
        .take_while(|f| f.frame_index <= record.critical_frame)
        .count();
    window_starts(usable, t, overlap)
        .into_iter()
        .map(|start| FrameWindow { record, start, len: t })
        .collect()
}

/// Windows of every record; records shorter than `t` are skipped and
/// counted.
pub fn window_corpus(corpus: &[AnnotationRecord], t: usize, overlap: f64) -> (Vec<FrameWindow<'_>>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for r in corpus {
        let w = window(r, t, overlap);
        if w.is_empty() {
            skipped += 1;
        }
        out.extend(w);
    }
    if skipped > 0 {
        log::info!("skipped {skipped} records shorter than {t} frames");
    }
    (out, skipped)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<AnnotationRecord>,
    pub val: Vec<AnnotationRecord>,
    pub test: Vec<AnnotationRecord>,
}

/// Seeded split at pedestrian granularity: every record of a pedestrian
/// lands in the same part.
pub fn split(corpus: &[AnnotationRecord], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let ids: BTreeSet<&str> = corpus.iter().map(|r| r.pedestrian_id.as_str()).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let lookup: std::collections::HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(pos, &id)| {
            let part = if pos < n_train {
                0
            } else if pos < n_train + n_val {
                1
            } else {
                2
            };
            (id, part)
        })
        .collect();
    let mut out = Split::default();
    for r in corpus {
        match lookup[r.pedestrian_id.as_str()] {
            0 => out.train.push(r.clone()),
            1 => out.val.push(r.clone()),
            _ => out.test.push(r.clone()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(intent: Intent, reasons: Vec<usize>, n_frames: u32) -> AnnotationRecord {
        AnnotationRecord {
            pedestrian_id: "p1".into(),
            video_id: "v1".into(),
            frames: (0..n_frames)
                .map(|i| Frame {
                    frame_index: i,
                    bbox: [0.1, 0.2, 0.3, 0.5],
                })
                .collect(),
            intent,
            reasons,
            critical_frame: n_frames.saturating_sub(1),
            scene: None,
        }
    }

    #[test]
    fn no_cross_record_with_roadside_work_accepted() {
        let v = ReasonVocabulary::default_pie();
        assert!(record(Intent::NoCross, vec![16], 5).validate(&v).is_ok());
    }

    #[test]
    fn cross_intent_reason_mismatch_rejected() {
        let v = ReasonVocabulary::default_pie();
        let err = record(Intent::NoCross, vec![3], 5).validate(&v).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(record(Intent::Cross, vec![15], 5).validate(&v).is_err());
    }

    #[test]
    fn malformed_boxes_and_frames_rejected() {
        let v = ReasonVocabulary::default_pie();
        let mut r = record(Intent::Cross, vec![1], 3);
        r.frames[1].bbox = [0.5, 0.2, 0.3, 0.5];
        assert!(r.validate(&v).is_err());
        let mut r = record(Intent::Cross, vec![1], 3);
        r.frames[2].frame_index = 1;
        assert!(r.validate(&v).is_err());
        let mut r = record(Intent::Cross, vec![1], 3);
        r.critical_frame = 1;
        assert!(r.validate(&v).is_err());
        let r = record(Intent::Cross, vec![], 3);
        assert!(r.validate(&v).is_err());
    }

    #[test]
    fn stride_arithmetic() {
        assert_eq!(window_stride(10, 0.6), 4);
        assert_eq!(window_stride(8, 0.6), 4);
        assert_eq!(window_stride(15, 0.6), 6);
        assert_eq!(window_stride(3, 0.9), 1);
        assert_eq!(window_starts(10, 10, 0.6), vec![0]);
        assert_eq!(window_starts(20, 10, 0.6), vec![0, 4, 8]);
        assert!(window_starts(9, 10, 0.6).is_empty());
    }

    #[test]
    fn windows_stop_at_critical_frame() {
        let r = record(Intent::Cross, vec![1], 20);
        let ws = window(&r, 10, 0.6);
        assert_eq!(ws.len(), 3);
        for w in &ws {
            assert!(w.frames().iter().all(|f| f.frame_index <= r.critical_frame));
        }
        assert_eq!(ws.last().unwrap().frames().last().unwrap().frame_index, 17);
    }

    #[test]
    fn short_records_are_counted_not_fatal() {
        let corpus = vec![record(Intent::Cross, vec![1], 4), record(Intent::Cross, vec![1], 12)];
        let (ws, skipped) = window_corpus(&corpus, 8, 0.6);
        assert_eq!(skipped, 1);
        assert_eq!(ws.len(), 2);
    }

    fn peds(n: usize) -> Vec<AnnotationRecord> {
        (0..n)
            .map(|i| {
                let mut r = record(Intent::Cross, vec![1], 3);
                r.pedestrian_id = format!("p{i:03}");
                r
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = peds(100);
        let s = split(&c, [0.7, 0.1, 0.2], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        assert_eq!(s, split(&c, [0.7, 0.1, 0.2], 3).unwrap());
        let all = split(&c, [1.0, 0.0, 0.0], 9).unwrap();
        assert_eq!(all.train.len(), 100);
        assert!(split(&c, [0.5, 0.1, 0.1], 1).is_err());
    }

    #[test]
    fn split_keeps_pedestrians_together() {
        let mut c = peds(30);
        let extra: Vec<_> = c.iter().take(10).cloned().collect();
        c.extend(extra);
        let s = split(&c, [0.5, 0.25, 0.25], 4).unwrap();
        let ids = |v: &[AnnotationRecord]| -> BTreeSet<String> {
            v.iter().map(|r| r.pedestrian_id.clone()).collect()
        };
        assert!(ids(&s.train).is_disjoint(&ids(&s.test)));
        assert!(ids(&s.train).is_disjoint(&ids(&s.val)));
        assert!(ids(&s.val).is_disjoint(&ids(&s.test)));
    }
}
