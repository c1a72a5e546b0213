//! Track-and-fill: masks for frames where the object went undetected,
//! transferred from the nearest detected frames.

pub mod energy;
pub mod gmm;
pub mod grabcut;
pub mod graph;
pub mod maxflow;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{bbox_of, BinaryMask, BoundingBox, SoftMask, VideoSequence};
use crate::scalar::Real;
use crate::track::Tracker;

pub use energy::{estimate_beta, pairwise_weight, unary_potentials, GrabCutEnergy, UnaryField};
pub use gmm::{fit_gmm, gmm_density, Component, GaussianMixture};
pub use grabcut::{grabcut_fill, grabcut_fill_traced, GrabCutParams, GrabCutTrace};
pub use graph::{min_cut, CapacityGraph, LabelField, Link};
pub use maxflow::{Capacity, MaxFlow};

fn detected(m: &Option<BinaryMask>) -> bool {
    m.as_ref().is_some_and(|m| !m.is_empty())
}

/// Ascending indices of frames whose mask is absent or empty.
pub fn find_undetected(masks: &[Option<BinaryMask>]) -> Result<Vec<usize>> {
    let out: Vec<usize> = (0..masks.len()).filter(|&i| !detected(&masks[i])).collect();
    if !masks.is_empty() && out.len() == masks.len() {
        return Err(Error::UnfillableSequence);
    }
    Ok(out)
}

/// The `p` detected frames closest to `x`, nearest first, earlier frame
/// first on ties.
pub fn nearest_detected(x: usize, detected: &[usize], p: usize) -> Vec<usize> {
    let mut d = detected.to_vec();
    d.sort_by_key(|&i| (i.abs_diff(x), i));
    d.dedup();
    d.truncate(p);
    d
}

/// Pixel-wise mean of the donor windows, each cropped to its box and
/// resized (nearest neighbor) to `w x h`. Empty donors are skipped.
pub fn build_soft_mask<T: Real>(donors: &[(&BinaryMask, BoundingBox)], w: usize, h: usize) -> Result<SoftMask<T>> {
    let mut counts = vec![0u32; w * h];
    let mut used = 0u32;
    for (m, b) in donors {
        if m.is_empty() {
            continue;
        }
        let win = m.crop(b)?.resize_nearest(w, h)?;
        for (c, &bit) in counts.iter_mut().zip(win.bits()) {
            *c += u32::from(bit);
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::NoDonors);
    }
    let n = T::lit(f64::from(used));
    SoftMask::new(w, h, counts.into_iter().map(|c| T::lit(f64::from(c)) / n).collect())
}

/// One transferred mask and how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct FilledFrame {
    pub frame: usize,
    pub mask: BinaryMask,
    /// Detected frame the window was tracked from.
    pub source: usize,
    pub window: BoundingBox,
    pub donors: Vec<usize>,
}

/// Fills every undetected frame of `masks` from detected ones. Filled
/// frames never donate, so the frames are independent and run in parallel;
/// frame `i` draws its randomness from `seed + i`. Results come back
/// ordered by distance to the nearest detected frame, then index.
pub fn fill_undetected<T: Real>(
    seq: &VideoSequence<T>,
    masks: &[Option<BinaryMask>],
    tracker: &dyn Tracker<T>,
    params: &GrabCutParams,
    seed: u64,
) -> Result<Vec<FilledFrame>> {
    params.validate()?;
    if masks.len() != seq.len() {
        return Err(Error::InvalidInput(format!(
            "{} masks for {} frames",
            masks.len(),
            seq.len()
        )));
    }
    let undetected = find_undetected(masks)?;
    let donors: Vec<usize> = (0..masks.len()).filter(|&i| detected(&masks[i])).collect();
    let boxes: Vec<Option<BoundingBox>> = masks
        .iter()
        .map(|m| m.as_ref().filter(|m| !m.is_empty()).map(|m| bbox_of(m).expect("nonempty")))
        .collect();

    let mut order: Vec<(usize, Vec<usize>)> = undetected
        .into_iter()
        .map(|x| (x, nearest_detected(x, &donors, params.p)))
        .collect();
    order.sort_by_key(|(x, near)| (near[0].abs_diff(*x), *x));

    let (fw, fh) = seq.dims();
    let fill_one = |x: usize, near: &[usize]| -> Result<FilledFrame> {
        let src = near[0];
        let src_box = boxes[src].expect("donor has a box");
        let window = tracker.track(seq, src, src_box, x)?.clamp_to(fw, fh);
        let win: Vec<(&BinaryMask, BoundingBox)> = near
            .iter()
            .map(|&d| (masks[d].as_ref().expect("donor mask"), boxes[d].expect("donor box")))
            .collect();
        let soft = build_soft_mask::<T>(&win, window.w, window.h)?;
        let mask = grabcut_fill(seq.frame(x), &window, &soft, params, seed.wrapping_add(x as u64))?;
        Ok(FilledFrame {
            frame: x,
            mask,
            source: src,
            window,
            donors: near.to_vec(),
        })
    };
    let results: Vec<Result<FilledFrame>> = order.par_iter().map(|(x, near)| fill_one(*x, near)).collect();
    results
        .into_iter()
        .zip(&order)
        .map(|(r, (x, _))| {
            r.map_err(|e| Error::UnfillableFrame {
                frame: *x,
                reason: e.to_string(),
            })
        })
        .collect()
}
