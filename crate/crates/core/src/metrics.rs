//! Region similarity: the Jaccard index and its mean, recall and decay.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

pub const DEFAULT_RECALL_TAU: f64 = 0.5;

/// `|m ∩ g| / |m ∪ g|`; 1 when both masks are empty.
pub fn jaccard(m: &BinaryMask, g: &BinaryMask) -> Result<f64> {
    let (inter, union) = m.overlap_counts(g)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// How recall aggregates a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecallMode {
    /// Fraction of a sequence's frames with J above the threshold,
    /// averaged over sequences.
    #[default]
    Frame,
    /// Fraction of sequences whose mean J is above the threshold.
    Sequence,
}

impl std::str::FromStr for RecallMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(RecallMode::Frame),
            "sequence" => Ok(RecallMode::Sequence),
            other => Err(Error::Config(format!("unknown recall mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScores {
    pub name: String,
    pub per_frame_j: Vec<f64>,
}

impl SequenceScores {
    pub fn mean(&self) -> f64 {
        mean(&self.per_frame_j)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-sequence J values; aggregates are computed from them on demand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequences: Vec<SequenceScores>,
}

impl EvalReport {
    pub fn new(sequences: Vec<SequenceScores>) -> Result<Self> {
        for s in &sequences {
            if s.per_frame_j.is_empty() {
                return Err(Error::InvalidInput(format!("sequence {} has no frames", s.name)));
            }
            if let Some(v) = s.per_frame_j.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidInput(format!("sequence {}: J value {v} outside [0,1]", s.name)));
            }
        }
        Ok(EvalReport { sequences })
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(Error::InvalidInput("report has no sequences".into()));
        }
        Ok(())
    }
}

/// Unweighted mean over sequences of each sequence's mean J.
pub fn j_mean(r: &EvalReport) -> Result<f64> {
    r.check_nonempty()?;
    Ok(mean(&r.sequences.iter().map(SequenceScores::mean).collect::<Vec<_>>()))
}

/// Recall at threshold `tau` (strictly above counts).
pub fn j_recall(r: &EvalReport, tau: f64, mode: RecallMode) -> Result<f64> {
    r.check_nonempty()?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!("recall threshold {tau} outside (0,1)")));
    }
    let above = |v: f64| f64::from(u8::from(v > tau));
    let per_seq: Vec<f64> = match mode {
        RecallMode::Frame => r
            .sequences
            .iter()
            .map(|s| mean(&s.per_frame_j.iter().map(|&v| above(v)).collect::<Vec<_>>()))
            .collect(),
        RecallMode::Sequence => r.sequences.iter().map(|s| above(s.mean())).collect(),
    };
    Ok(mean(&per_seq))
}

/// Splits `n` items into 4 contiguous bins, remainder to the earlier bins.
fn quartile_bounds(n: usize) -> [(usize, usize); 4] {
    let (q, rem) = (n / 4, n % 4);
    let mut out = [(0, 0); 4];
    let mut start = 0;
    for (b, slot) in out.iter_mut().enumerate() {
        let len = q + usize::from(b < rem);
        *slot = (start, start + len);
        start += len;
    }
    out
}

/// Mean J of the first quarter of frames minus that of the last quarter,
/// averaged over sequences.
pub fn j_decay(r: &EvalReport) -> Result<f64> {
    r.check_nonempty()?;
    let mut per_seq = Vec::with_capacity(r.sequences.len());
    for s in &r.sequences {
        let n = s.per_frame_j.len();
        if n < 4 {
            return Err(Error::InvalidInput(format!(
                "sequence {} has {n} frames; decay needs at least 4",
                s.name
            )));
        }
        let bins = quartile_bounds(n);
        let first = mean(&s.per_frame_j[bins[0].0..bins[0].1]);
        let last = mean(&s.per_frame_j[bins[3].0..bins[3].1]);
        per_seq.push(first - last);
    }
    Ok(mean(&per_seq))
}

/// The serialized report: per-sequence values plus the aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub sequences: Vec<SequenceScores>,
    pub j_mean: f64,
    pub j_recall: f64,
    /// Absent when some sequence is too short to bin.
    pub j_decay: Option<f64>,
    pub recall_mode: RecallMode,
    pub tau: f64,
}

impl ReportDocument {
    pub fn build(r: &EvalReport, tau: f64, mode: RecallMode) -> Result<Self> {
        Ok(ReportDocument {
            sequences: r.sequences.clone(),
            j_mean: j_mean(r)?,
            j_recall: j_recall(r, tau, mode)?,
            j_decay: j_decay(r).ok(),
            recall_mode: mode,
            tau,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::write(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::write(path, e))
    }

    /// One row per sequence with its own J mean, recall and decay.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::write(path, e))?;
        w.write_record(["sequence", "frames", "j_mean", "j_recall", "j_decay"])
            .map_err(|e| Error::write(path, e))?;
        for s in &self.sequences {
            let one = EvalReport {
                sequences: vec![s.clone()],
            };
            let recall = j_recall(&one, self.tau, self.recall_mode)?;
            let decay = j_decay(&one).map(|d| d.to_string()).unwrap_or_default();
            w.write_record([
                s.name.clone(),
                s.per_frame_j.len().to_string(),
                s.mean().to_string(),
                recall.to_string(),
                decay,
            ])
            .map_err(|e| Error::write(path, e))?;
        }
        w.flush().map_err(|e| Error::write(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(w: usize, h: usize, rows: &[usize]) -> BinaryMask {
        BinaryMask::from_fn(w, h, |_, y| rows.contains(&y))
    }

    fn report(seqs: &[&[f64]]) -> EvalReport {
        EvalReport::new(
            seqs.iter()
                .enumerate()
                .map(|(i, j)| SequenceScores {
                    name: format!("s{i}"),
                    per_frame_j: j.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn jaccard_cases() {
        let a = rows(4, 4, &[0, 1]);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &rows(4, 4, &[3])).unwrap(), 0.0);
        assert!((jaccard(&a, &rows(4, 4, &[1, 2])).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let e = BinaryMask::new(4, 4);
        assert_eq!(jaccard(&e, &e).unwrap(), 1.0);
        assert_eq!(jaccard(&e, &a).unwrap(), 0.0);
        assert!(jaccard(&e, &BinaryMask::new(3, 4)).is_err());
    }

    #[test]
    fn mean_cases() {
        assert!((j_mean(&report(&[&[0.5, 0.7]])).unwrap() - 0.6).abs() < 1e-12);
        assert!((j_mean(&report(&[&[0.4], &[0.8, 0.8, 0.8]])).unwrap() - 0.6).abs() < 1e-12);
        assert!(j_mean(&EvalReport::default()).is_err());
    }

    #[test]
    fn recall_cases() {
        let r = report(&[&[0.6, 0.4, 0.7]]);
        assert!((j_recall(&r, 0.5, RecallMode::Frame).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(j_recall(&report(&[&[0.9, 0.6]]), 0.5, RecallMode::Frame).unwrap(), 1.0);
        // strict: exactly tau does not count
        assert_eq!(j_recall(&report(&[&[0.5]]), 0.5, RecallMode::Frame).unwrap(), 0.0);
        let two = report(&[&[0.6, 0.4, 0.7], &[0.3, 0.6]]);
        assert!((j_recall(&two, 0.5, RecallMode::Sequence).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn decay_cases() {
        assert!(j_decay(&report(&[&[0.7; 9]])).unwrap().abs() < 1e-12);
        assert!((j_decay(&report(&[&[0.9, 0.8, 0.7, 0.6]])).unwrap() - 0.3).abs() < 1e-12);
        assert!(j_decay(&report(&[&[0.9, 0.8, 0.7]])).is_err());
    }

    #[test]
    fn quartiles_give_remainder_to_early_bins() {
        assert_eq!(quartile_bounds(6), [(0, 2), (2, 4), (4, 5), (5, 6)]);
        assert_eq!(quartile_bounds(8), [(0, 2), (2, 4), (4, 6), (6, 8)]);
    }

    #[test]
    fn document_round_trip() {
        let r = report(&[&[0.9, 0.8, 0.7, 0.6]]);
        let doc = ReportDocument::build(&r, 0.5, RecallMode::Frame).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        doc.write_json(&p).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
        for key in ["sequences", "j_mean", "j_recall", "j_decay", "recall_mode", "tau"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["recall_mode"], "frame");
        assert_eq!(v["sequences"][0]["per_frame_j"].as_array().unwrap().len(), 4);
        let c = dir.path().join("r.csv");
        doc.write_csv(&c).unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("sequence,frames,j_mean,j_recall,j_decay"));
    }

    fn mask_strategy() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (prop::collection::vec(any::<bool>(), 20), prop::collection::vec(any::<bool>(), 20)).prop_map(|(a, b)| {
            (
                BinaryMask::from_bits(5, 4, a).unwrap(),
                BinaryMask::from_bits(5, 4, b).unwrap(),
            )
        })
    }

    proptest! {
        #[test]
        fn jaccard_symmetric_and_bounded((a, b) in mask_strategy()) {
            let j = jaccard(&a, &b).unwrap();
            prop_assert_eq!(j, jaccard(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&j));
        }

        #[test]
        fn reversal_negates_decay(quarter in 1usize..5, vals in prop::collection::vec(0.0f64..=1.0, 16)) {
            let j = vals[..4 * quarter].to_vec();
            let mut rev = j.clone();
            rev.reverse();
            let d = j_decay(&report(&[&j])).unwrap();
            let dr = j_decay(&report(&[&rev])).unwrap();
            prop_assert!((d + dr).abs() < 1e-12);
        }

        #[test]
        fn aggregates_ignore_sequence_order(
            seqs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 4..9), 1..5),
        ) {
            let refs: Vec<&[f64]> = seqs.iter().map(|s| s.as_slice()).collect();
            let mut rev = refs.clone();
            rev.reverse();
            let (a, b) = (report(&refs), report(&rev));
            prop_assert!((j_mean(&a).unwrap() - j_mean(&b).unwrap()).abs() < 1e-12);
            prop_assert!((j_decay(&a).unwrap() - j_decay(&b).unwrap()).abs() < 1e-12);
            for mode in [RecallMode::Frame, RecallMode::Sequence] {
                prop_assert!((j_recall(&a, 0.5, mode).unwrap() - j_recall(&b, 0.5, mode).unwrap()).abs() < 1e-12);
            }
        }
    }
}
