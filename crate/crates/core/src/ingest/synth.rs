//! Fully synthetic sequences with known ground truth.
//!
//! A colored rectangle bounces across a static textured background. Every
//! frame gets a jittered copy of the true rectangle as a proposal plus
//! blob-shaped distractors. Descriptors are unit-sphere cluster samples:
//! the true proposals share one tight cluster, each distractor draws from
//! one of several other clusters, so no distractor cluster covers most of
//! the frames. On dropped frames the true proposal is left out.

use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    frame_stem, write_binary_mask, write_descriptor_file, write_frame, write_proposal_set,
    Descriptor, Proposal, ProposalSet, FEATURES_DIR, FRAMES_DIR, GT_DIR, PROPOSALS_DIR,
};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, BoundingBox, Frame, SoftMask, VideoSequence};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub name: String,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Fraction of frames whose true proposal is dropped, in `[0, 0.5]`.
    pub drop_fraction: f64,
    /// Object extent as a fraction of the frame's width and height.
    pub object_scale: f64,
    /// Object speed in pixels per frame.
    pub speed: f64,
    /// Max per-edge displacement of the true proposal, in pixels.
    pub jitter_px: usize,
    pub distractors: usize,
    pub distractor_clusters: usize,
    pub descriptor_dim: usize,
    /// Expected Euclidean norm of the per-descriptor noise before
    /// normalization.
    pub descriptor_spread: f64,
    /// Per-channel pixel noise amplitude.
    pub pixel_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synth".into(),
            frames: 40,
            width: 96,
            height: 96,
            drop_fraction: 0.2,
            object_scale: 0.3,
            speed: 1.5,
            jitter_px: 1,
            distractors: 4,
            distractor_clusters: 12,
            descriptor_dim: 128,
            descriptor_spread: 0.1,
            pixel_noise: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.frames < 4 {
            return bad(format!("synthetic case needs at least 4 frames, got {}", self.frames));
        }
        if self.width < 32 || self.height < 32 {
            return bad(format!(
                "synthetic frames must be at least 32x32, got {}x{}",
                self.width, self.height
            ));
        }
        if !(0.0..=0.5).contains(&self.drop_fraction) {
            return bad(format!("drop fraction {} outside [0, 0.5]", self.drop_fraction));
        }
        if !(self.object_scale > 0.05 && self.object_scale <= 0.6) {
            return bad(format!("object scale {} outside (0.05, 0.6]", self.object_scale));
        }
        if !(self.speed.is_finite() && self.speed >= 0.0) {
            return bad(format!("speed {} must be finite and nonnegative", self.speed));
        }
        if self.descriptor_dim < 3 {
            return bad("descriptor dimension must be at least 3".into());
        }
        if self.distractors > 0 && self.distractor_clusters == 0 {
            return bad("distractors need at least one distractor cluster".into());
        }
        if !(self.descriptor_spread >= 0.0 && self.descriptor_spread < 0.5) {
            return bad(format!("descriptor spread {} outside [0, 0.5)", self.descriptor_spread));
        }
        if !(0.0..0.2).contains(&self.pixel_noise) {
            return bad(format!("pixel noise {} outside [0, 0.2)", self.pixel_noise));
        }
        Ok(())
    }

    /// `floor(frames * drop_fraction)`.
    pub fn dropped_count(&self) -> usize {
        (self.frames as f64 * self.drop_fraction).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCase<T> {
    pub sequence: VideoSequence<T>,
    pub ground_truth: Vec<BinaryMask>,
    /// True object box per frame.
    pub trajectory: Vec<BoundingBox>,
    pub proposals: Vec<ProposalSet<T>>,
    /// Aligned with the sorted proposals of each frame.
    pub descriptors: Vec<Vec<Descriptor<T>>>,
    /// Ascending.
    pub dropped_frames: Vec<usize>,
}

const BACKGROUND: [f64; 3] = [0.25, 0.45, 0.55];
const FOREGROUND: [f64; 3] = [0.95, 0.6, 0.1];

/// Unit vector drawn uniformly from the sphere in `dim` dimensions.
pub fn random_unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `count` unit centers with pairwise Euclidean distance above `min_dist`.
pub fn separated_centers(rng: &mut impl Rng, count: usize, dim: usize, min_dist: f64) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while centers.len() < count {
        attempts += 1;
        assert!(attempts < 100_000, "cannot place {count} centers {min_dist} apart in {dim}-d");
        let c = random_unit_vector(rng, dim);
        let far = centers
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() > min_dist);
        if far {
            centers.push(c);
        }
    }
    centers
}

/// `center + sigma * N(0, I)` projected back onto the unit sphere.
pub fn perturb_on_sphere(rng: &mut impl Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    let v: Vec<f64> = center
        .iter()
        .map(|&c| c + sigma * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Planted Gaussian blobs on the unit sphere: `per_blob` points around each
/// of `blobs` centers (pairwise more than `min_center_dist` apart), with
/// per-coordinate noise `sigma`. Points are emitted in a shuffled order and
/// returned with their planted blob labels.
pub fn planted_blobs(
    seed: u64,
    blobs: usize,
    per_blob: usize,
    dim: usize,
    sigma: f64,
    min_center_dist: f64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = separated_centers(&mut rng, blobs, dim, min_center_dist);
    let mut pts: Vec<(Vec<f64>, usize)> = Vec::with_capacity(blobs * per_blob);
    for (label, c) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            pts.push((perturb_on_sphere(&mut rng, c, sigma), label));
        }
    }
    // Shuffled so input order does not reveal the labels.
    pts.shuffle(&mut rng);
    pts.into_iter().unzip()
}

fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x));
    let iy = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y));
    let inter = (ix * iy) as f64;
    inter / ((a.area() + b.area()) as f64 - inter)
}

fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (inter, union) = a.overlap_counts(b).expect("same dims");
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Box-bounce trajectory of the object's top-left corner.
fn trajectory(rng: &mut ChaCha8Rng, cfg: &SynthConfig, ow: usize, oh: usize) -> Vec<BoundingBox> {
    let max_x = (cfg.width - ow) as f64;
    let max_y = (cfg.height - oh) as f64;
    let mut x = rng.random_range(0.0..=max_x);
    let mut y = rng.random_range(0.0..=max_y);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (mut vx, mut vy) = (cfg.speed * angle.cos(), cfg.speed * angle.sin());
    let mut out = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        out.push(BoundingBox {
            x: x.round() as usize,
            y: y.round() as usize,
            w: ow,
            h: oh,
        });
        x += vx;
        y += vy;
        if x < 0.0 || x > max_x {
            vx = -vx;
            x = x.clamp(0.0, max_x);
        }
        if y < 0.0 || y > max_y {
            vy = -vy;
            y = y.clamp(0.0, max_y);
        }
    }
    out
}

/// Jittered copy of `truth` with IoU at least 0.7 against it.
fn jitter_box(rng: &mut ChaCha8Rng, truth: &BoundingBox, j: usize, fw: usize, fh: usize) -> BoundingBox {
    let j = j as i64;
    for _ in 0..64 {
        let mut d = [0i64; 4];
        for v in &mut d {
            *v = rng.random_range(-j..=j);
        }
        let x0 = (truth.x as i64 + d[0]).clamp(0, fw as i64 - 1);
        let y0 = (truth.y as i64 + d[1]).clamp(0, fh as i64 - 1);
        let x1 = ((truth.x + truth.w) as i64 + d[2]).clamp(x0 + 1, fw as i64);
        let y1 = ((truth.y + truth.h) as i64 + d[3]).clamp(y0 + 1, fh as i64);
        let b = BoundingBox {
            x: x0 as usize,
            y: y0 as usize,
            w: (x1 - x0) as usize,
            h: (y1 - y0) as usize,
        };
        if iou(&b, truth) >= 0.7 {
            return b;
        }
    }
    *truth
}

/// Score map that binarizes (at any threshold in `(0.1, 0.6]`) to `region`.
fn score_map<T: Real>(rng: &mut ChaCha8Rng, region: &BinaryMask) -> SoftMask<T> {
    let vals = region
        .bits()
        .iter()
        .map(|&inside| {
            let u: f64 = rng.random();
            T::lit(if inside { 0.6 + 0.4 * u } else { 0.1 * u })
        })
        .collect();
    SoftMask::new(region.width(), region.height(), vals).expect("values in range")
}

/// Elliptical blob kept clear of the object (IoU at most 0.2 with it).
fn distractor_blob(rng: &mut ChaCha8Rng, truth: &BinaryMask, fw: usize, fh: usize) -> BinaryMask {
    let short = fw.min(fh) as f64;
    let mut best: Option<(f64, BinaryMask)> = None;
    for _ in 0..64 {
        let rx = rng.random_range(0.04 * short..=0.12 * short);
        let ry = rng.random_range(0.04 * short..=0.12 * short);
        let cx = rng.random_range(rx..=(fw as f64 - rx));
        let cy = rng.random_range(ry..=(fh as f64 - ry));
        let m = BinaryMask::from_fn(fw, fh, |x, y| {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            dx * dx + dy * dy <= 1.0
        });
        if m.is_empty() {
            continue;
        }
        let overlap = m.intersection(truth).expect("same dims").area();
        if overlap == 0 {
            return m;
        }
        let score = mask_iou(&m, truth);
        if score <= 0.2 && best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, m));
        }
    }
    best.map(|(_, m)| m).unwrap_or_else(|| {
        // Fall back to a single pixel outside the object.
        let mut m = BinaryMask::new(fw, fh);
        let spot = (0..fw * fh)
            .find(|&i| !truth.bits()[i])
            .unwrap_or(0);
        m.set(spot % fw, spot / fw, true);
        m
    })
}

fn descriptor<T: Real>(rng: &mut ChaCha8Rng, center: &[f64], spread: f64) -> Descriptor<T> {
    let sigma = spread / (center.len() as f64).sqrt();
    let v = perturb_on_sphere(rng, center, sigma);
    // Arbitrary positive scale; downstream normalization must undo it.
    let scale: f64 = rng.random_range(0.5..3.0);
    Descriptor::new(v.into_iter().map(|x| T::lit(x * scale)).collect()).expect("finite")
}

/// Deterministic function of `(cfg, seed)`.
pub fn generate_synthetic_case<T: Real>(cfg: &SynthConfig, seed: u64) -> Result<SynthCase<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h, n) = (cfg.width, cfg.height, cfg.frames);

    let mut dropped = index::sample(&mut rng, n, cfg.dropped_count()).into_vec();
    dropped.sort_unstable();

    // Static low-frequency texture with a fixed random phase per channel.
    let phases: Vec<[f64; 3]> = (0..3)
        .map(|_| [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)])
        .collect();
    let texture = |x: usize, y: usize| -> [f64; 3] {
        let (fx, fy) = (x as f64 / w as f64, y as f64 / h as f64);
        let mut c = BACKGROUND;
        for (ch, v) in c.iter_mut().enumerate() {
            let p = phases[ch];
            *v += 0.06 * (9.0 * fx + p[0]).sin()
                + 0.06 * (7.0 * fy + p[1]).sin()
                + 0.04 * (13.0 * (fx + fy) + p[2]).sin();
        }
        c
    };

    let ow = ((w as f64 * cfg.object_scale).round() as usize).clamp(4, w - 2);
    let oh = ((h as f64 * cfg.object_scale).round() as usize).clamp(4, h - 2);
    let path = trajectory(&mut rng, cfg, ow, oh);

    // centers[0] is the object's cluster, the rest belong to distractors.
    let centers = separated_centers(&mut rng, cfg.distractor_clusters + 1, cfg.descriptor_dim, 0.8);

    // Distractor clusters are dealt from a reshuffled deck so their sizes
    // differ by at most one and none can rival the object's cluster.
    let mut deck: Vec<usize> = Vec::new();
    let mut frames = Vec::with_capacity(n);
    let mut ground_truth = Vec::with_capacity(n);
    let mut proposals = Vec::with_capacity(n);
    let mut descriptors = Vec::with_capacity(n);
    for (i, truth_box) in path.iter().enumerate() {
        let noise = cfg.pixel_noise;
        let frame = Frame::<T>::from_fn(w, h, |x, y| {
            let base = if truth_box.contains(x, y) { FOREGROUND } else { texture(x, y) };
            base.map(|c| T::lit(c + noise * (2.0 * rng.random::<f64>() - 1.0)))
        })?;
        frames.push(frame);
        let truth = BinaryMask::from_box(w, h, truth_box);

        let mut raw: Vec<(Proposal<T>, Descriptor<T>)> = Vec::new();
        if dropped.binary_search(&i).is_err() {
            let jb = jitter_box(&mut rng, truth_box, cfg.jitter_px, w, h);
            let region = BinaryMask::from_box(w, h, &jb);
            let objectness = rng.random_range(0.5..1.0);
            raw.push((
                Proposal {
                    score_map: score_map(&mut rng, &region),
                    objectness,
                },
                descriptor(&mut rng, &centers[0], cfg.descriptor_spread),
            ));
        }
        for _ in 0..cfg.distractors {
            let blob = distractor_blob(&mut rng, &truth, w, h);
            let objectness = rng.random_range(0.05..0.95);
            if deck.is_empty() {
                deck = (1..=cfg.distractor_clusters).collect();
                deck.shuffle(&mut rng);
            }
            let cluster = deck.pop().expect("refilled");
            raw.push((
                Proposal {
                    score_map: score_map(&mut rng, &blob),
                    objectness,
                },
                descriptor(&mut rng, &centers[cluster], cfg.descriptor_spread),
            ));
        }
        raw.sort_by(|a, b| b.0.objectness.total_cmp(&a.0.objectness));
        let (props, descs): (Vec<_>, Vec<_>) = raw.into_iter().unzip();
        proposals.push(ProposalSet::new(i, props)?);
        descriptors.push(descs);
        ground_truth.push(truth);
    }

    Ok(SynthCase {
        sequence: VideoSequence::new(cfg.name.clone(), frames)?,
        ground_truth,
        trajectory: path,
        proposals,
        descriptors,
        dropped_frames: dropped,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthRecord {
    pub seed: u64,
    pub config: SynthConfig,
    pub dropped_frames: Vec<usize>,
}

/// Writes `case` under `root` in the ingest layout, plus `synth.json`
/// recording the seed, config and dropped frames.
pub fn write_synthetic_case<T: Real>(case: &SynthCase<T>, cfg: &SynthConfig, seed: u64, root: &Path) -> Result<()> {
    for sub in [FRAMES_DIR, PROPOSALS_DIR, FEATURES_DIR, GT_DIR] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::write(&d, e))?;
    }
    for (i, frame) in case.sequence.frames().iter().enumerate() {
        let stem = frame_stem(i);
        write_frame(frame, &root.join(FRAMES_DIR).join(format!("{stem}.png")))?;
        write_binary_mask(&case.ground_truth[i], &root.join(GT_DIR).join(format!("{stem}.png")))?;
        write_proposal_set(&case.proposals[i], &root.join(PROPOSALS_DIR))?;
        write_descriptor_file(&case.descriptors[i], &root.join(FEATURES_DIR).join(format!("{stem}.feat")))?;
    }
    let record = SynthRecord {
        seed,
        config: cfg.clone(),
        dropped_frames: case.dropped_frames.clone(),
    };
    let path = root.join("synth.json");
    let json = serde_json::to_string_pretty(&record).map_err(|e| Error::write(&path, e))?;
    fs::write(&path, json).map_err(|e| Error::write(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_drops_at_zero_fraction() {
        let cfg = SynthConfig {
            drop_fraction: 0.0,
            frames: 8,
            ..Default::default()
        };
        let case = generate_synthetic_case::<f64>(&cfg, 3).unwrap();
        assert!(case.dropped_frames.is_empty());
        assert!(case.proposals.iter().all(|p| p.len() == 5));
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = SynthConfig {
            frames: 6,
            ..Default::default()
        };
        let a = generate_synthetic_case::<f32>(&cfg, 11).unwrap();
        let b = generate_synthetic_case::<f32>(&cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_case::<f32>(&cfg, 12).unwrap();
        assert_ne!(a.sequence, c.sequence);
    }

    #[test]
    fn drops_floor_of_fraction() {
        let cfg = SynthConfig::default();
        let case = generate_synthetic_case::<f64>(&cfg, 7).unwrap();
        assert_eq!(case.dropped_frames.len(), 8);
        assert!(case.dropped_frames.windows(2).all(|w| w[0] < w[1]));
        for &d in &case.dropped_frames {
            assert_eq!(case.proposals[d].len(), 4);
        }
    }

    #[test]
    fn proposals_respect_overlap_contract() {
        let cfg = SynthConfig::default();
        let case = generate_synthetic_case::<f64>(&cfg, 5).unwrap();
        for (i, ps) in case.proposals.iter().enumerate() {
            let truth = &case.ground_truth[i];
            let best = ps
                .proposals()
                .iter()
                .map(|p| mask_iou(&p.score_map.threshold(0.2), truth))
                .fold(0.0, f64::max);
            if case.dropped_frames.contains(&i) {
                assert!(best <= 0.2, "frame {i}: {best}");
            } else {
                assert!(best >= 0.7, "frame {i}: {best}");
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            SynthConfig { frames: 3, ..Default::default() },
            SynthConfig { width: 31, ..Default::default() },
            SynthConfig { drop_fraction: 0.6, ..Default::default() },
        ] {
            assert!(matches!(
                generate_synthetic_case::<f64>(&cfg, 0),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn planted_centers_are_separated() {
        let (pts, labels) = planted_blobs(1, 3, 20, 3, 0.02, 0.8);
        assert_eq!(pts.len(), 60);
        assert_eq!(labels.iter().filter(|&&l| l == 2).count(), 20);
        assert!(pts.iter().all(|p| (p.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12));
    }
}
