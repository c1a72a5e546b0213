//! Per-frame preliminary masks from the top-ranked proposals.

use crate::error::{Error, Result};
use crate::ingest::{Descriptor, ProposalSet};
use crate::raster::{BinaryMask, SoftMask};
use crate::scalar::Real;

/// Number of proposals kept per frame.
pub const DEFAULT_TOP_K: usize = 5;
/// Score-map binarization threshold.
pub const DEFAULT_BINARIZE_TAU: f64 = 0.2;

/// One retained proposal with its feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord<T> {
    pub frame_index: usize,
    /// Rank within the frame's sorted proposals.
    pub proposal_index: usize,
    pub mask: BinaryMask,
    pub descriptor: Descriptor<T>,
    pub cluster_label: Option<usize>,
}

/// Bit set iff value ≥ `tau` (inclusive).
pub fn binarize<T: Real>(m: &SoftMask<T>, tau: T) -> Result<BinaryMask> {
    if !(tau > T::zero() && tau < T::one()) {
        return Err(Error::InvalidInput(format!("threshold {tau} outside (0,1)")));
    }
    Ok(m.threshold(tau))
}

/// Union of the top `k` binarized proposals of one frame, and a record for
/// each nonempty one.
///
/// `descriptors` is aligned with `ps.proposals()`. Proposals that binarize
/// to nothing are skipped; a frame where every proposal is empty yields an
/// empty mask and no records.
pub fn preliminary_mask<T: Real>(
    ps: &ProposalSet<T>,
    descriptors: &[Descriptor<T>],
    dims: (usize, usize),
    k: usize,
    tau: T,
) -> Result<(BinaryMask, Vec<SegmentRecord<T>>)> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let keep = k.min(ps.len());
    if descriptors.len() < keep {
        return Err(Error::InvalidInput(format!(
            "frame {}: {} descriptors for {keep} retained proposals",
            ps.frame_index(),
            descriptors.len()
        )));
    }
    let mut union = BinaryMask::new(dims.0, dims.1);
    let mut records = Vec::with_capacity(keep);
    for (j, (p, d)) in ps.proposals().iter().zip(descriptors).take(keep).enumerate() {
        let mask = binarize(&p.score_map, tau)?;
        if mask.is_empty() {
            continue;
        }
        union.union_in_place(&mask)?;
        records.push(SegmentRecord {
            frame_index: ps.frame_index(),
            proposal_index: j,
            mask,
            descriptor: d.clone(),
            cluster_label: None,
        });
    }
    Ok((union, records))
}
