//! Bounding-box propagation between frames.
//!
//! [`Tracker`] is the seam the fill stage depends on. [`NccTracker`] is the
//! default: grayscale template matching by normalized cross-correlation,
//! stepping one frame at a time with a slowly updated template.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BoundingBox, VideoSequence};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    /// Half-width of the square search window, in pixels.
    pub search_radius: usize,
    /// Blend factor for the matched patch when refreshing the template.
    pub template_update_rate: f64,
    /// Surrounding context matched along with the box, as a fraction of
    /// its longer side (at least one pixel). A box drawn tightly around a
    /// uniform object has no internal structure to correlate; its edges
    /// only show up with some background around them.
    pub context: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams {
            search_radius: 16,
            template_update_rate: 0.05,
            context: 0.25,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        if self.search_radius < 1 {
            return Err(Error::Config("tracker search radius must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.template_update_rate) {
            return Err(Error::Config(format!(
                "template update rate {} outside [0,1]",
                self.template_update_rate
            )));
        }
        if !(self.context >= 0.0 && self.context.is_finite()) {
            return Err(Error::Config(format!("tracker context {} must be nonnegative", self.context)));
        }
        Ok(())
    }
}

/// Moves a box from frame `src` to frame `dst` of a sequence.
pub trait Tracker<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn track(&self, seq: &VideoSequence<T>, src: usize, b: BoundingBox, dst: usize) -> Result<BoundingBox>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NccTracker {
    pub params: TrackerParams,
}

impl NccTracker {
    pub fn new(params: TrackerParams) -> Self {
        NccTracker { params }
    }
}

/// Search offsets ordered by magnitude, then row-major, so the first
/// maximum found is the tie-break winner.
fn search_offsets(r: usize) -> Vec<(i64, i64)> {
    let r = r as i64;
    let mut offs: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .collect();
    offs.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    offs
}

/// Luma plane in f64 for accumulation.
fn plane<T: Real>(seq: &VideoSequence<T>, i: usize) -> Vec<f64> {
    seq.frame(i).luma_plane().into_iter().map(Real::as_f64).collect()
}

/// Zero-mean template and its centered sum of squares.
fn centered(template: &[f64]) -> (Vec<f64>, f64) {
    let mean = template.iter().sum::<f64>() / template.len() as f64;
    let c: Vec<f64> = template.iter().map(|v| v - mean).collect();
    let ss = c.iter().map(|v| v * v).sum();
    (c, ss)
}

/// NCC between a centered template and the patch at `(x, y)`; zero when
/// either side has no variance.
fn ncc(tc: &[f64], t_ss: f64, img: &[f64], stride: usize, x: usize, y: usize, w: usize, h: usize) -> f64 {
    let n = (w * h) as f64;
    let mut sp = 0.0;
    let mut spp = 0.0;
    let mut stp = 0.0;
    for row in 0..h {
        let p = &img[(y + row) * stride + x..][..w];
        let t = &tc[row * w..][..w];
        for (&pv, &tv) in p.iter().zip(t) {
            sp += pv;
            spp += pv * pv;
            stp += tv * pv;
        }
    }
    let p_ss = spp - sp * sp / n;
    let denom = (t_ss * p_ss).sqrt();
    if !(denom > 1e-12) {
        return 0.0;
    }
    stp / denom
}

fn patch(img: &[f64], stride: usize, b: &BoundingBox) -> Vec<f64> {
    (0..b.h)
        .flat_map(|row| img[(b.y + row) * stride + b.x..][..b.w].iter().copied())
        .collect()
}

impl<T: Real> Tracker<T> for NccTracker {
    fn name(&self) -> &'static str {
        "ncc"
    }

    fn track(&self, seq: &VideoSequence<T>, src: usize, b: BoundingBox, dst: usize) -> Result<BoundingBox> {
        self.params.validate()?;
        let n = seq.len();
        if src >= n || dst >= n {
            return Err(Error::InvalidInput(format!(
                "track {src} -> {dst} outside a {n}-frame sequence"
            )));
        }
        if src == dst {
            return Err(Error::InvalidInput("tracking needs distinct frames".into()));
        }
        let (fw, fh) = seq.dims();
        if b.w == 0 || b.h == 0 || b.w > fw || b.h > fh {
            return Err(Error::InvalidInput(format!(
                "box {b:?} is degenerate for a {fw}x{fh} frame"
            )));
        }
        b.check_within(fw, fh)?;

        let margin = ((b.w.max(b.h) as f64 * self.params.context).round() as usize).max(1);
        let win = b.expand(margin, fw, fh);
        let (off_x, off_y) = (b.x - win.x, b.y - win.y);

        let offsets = search_offsets(self.params.search_radius);
        let rate = self.params.template_update_rate;
        let mut template = patch(&plane(seq, src), fw, &win);
        let mut pos = win;
        let max_x = (fw - win.w) as i64;
        let max_y = (fh - win.h) as i64;
        let step: i64 = if dst > src { 1 } else { -1 };
        let mut f = src as i64;
        while f != dst as i64 {
            f += step;
            let img = plane(seq, f as usize);
            let (tc, t_ss) = centered(&template);
            let mut best = f64::NEG_INFINITY;
            let mut best_pos = pos;
            for &(dx, dy) in &offsets {
                let cx = pos.x as i64 + dx;
                let cy = pos.y as i64 + dy;
                if cx < 0 || cy < 0 || cx > max_x || cy > max_y {
                    continue;
                }
                let s = ncc(&tc, t_ss, &img, fw, cx as usize, cy as usize, win.w, win.h);
                if s > best {
                    best = s;
                    best_pos = BoundingBox {
                        x: cx as usize,
                        y: cy as usize,
                        ..pos
                    };
                }
            }
            pos = best_pos;
            let matched = patch(&img, fw, &pos);
            for (t, m) in template.iter_mut().zip(&matched) {
                *t = (1.0 - rate) * *t + rate * m;
            }
        }
        let moved = BoundingBox {
            x: pos.x + off_x,
            y: pos.y + off_y,
            ..b
        };
        Ok(moved.clamp_to(fw, fh))
    }
}

/// Tracks with the default NCC tracker.
pub fn track_bbox<T: Real>(
    seq: &VideoSequence<T>,
    src: usize,
    b: BoundingBox,
    dst: usize,
    params: TrackerParams,
) -> Result<BoundingBox> {
    NccTracker::new(params).track(seq, src, b, dst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_case, SynthConfig};
    use crate::raster::Frame;

    fn textured(w: usize, h: usize) -> Frame<f64> {
        Frame::from_fn(w, h, |x, y| {
            let v = 0.5 + 0.3 * ((x as f64 * 0.7).sin() * (y as f64 * 0.45).cos());
            [v, 1.0 - v, 0.5]
        })
        .unwrap()
    }

    #[test]
    fn static_scene_keeps_box() {
        let seq = VideoSequence::new("s", vec![textured(40, 30); 6]).unwrap();
        let b = BoundingBox { x: 9, y: 7, w: 12, h: 10 };
        assert_eq!(track_bbox(&seq, 0, b, 1, TrackerParams::default()).unwrap(), b);
        assert_eq!(track_bbox(&seq, 0, b, 5, TrackerParams::default()).unwrap(), b);
        assert_eq!(track_bbox(&seq, 5, b, 2, TrackerParams::default()).unwrap(), b);
    }

    #[test]
    fn flat_frames_keep_box() {
        let flat = Frame::from_fn(20, 20, |_, _| [0.3f64; 3]).unwrap();
        let seq = VideoSequence::new("f", vec![flat; 3]).unwrap();
        let b = BoundingBox { x: 3, y: 4, w: 5, h: 5 };
        assert_eq!(track_bbox(&seq, 0, b, 2, TrackerParams::default()).unwrap(), b);
    }

    fn translating_case() -> (crate::ingest::SynthCase<f64>, usize) {
        let cfg = SynthConfig {
            frames: 12,
            width: 96,
            height: 96,
            drop_fraction: 0.0,
            speed: 2.0,
            ..Default::default()
        };
        // a seed whose trajectory does not bounce in the first frames
        let seed = (0..100)
            .find(|&s| {
                let t = generate_synthetic_case::<f64>(&cfg, s).unwrap().trajectory;
                let step = |i: usize| {
                    let ((ax, ay), (bx, by)) = (t[i - 1].center(), t[i].center());
                    (bx - ax, by - ay)
                };
                let (vx, vy) = step(1);
                (2..t.len()).all(|i| {
                    let (dx, dy) = step(i);
                    (dx - vx).abs() <= 1.0 && (dy - vy).abs() <= 1.0
                })
            })
            .expect("a non-bouncing seed");
        (generate_synthetic_case::<f64>(&cfg, seed).unwrap(), 5)
    }

    fn center_err(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        (ax - bx).abs().max((ay - by).abs())
    }

    #[test]
    fn follows_translating_object_forward() {
        let (case, steps) = translating_case();
        let p = TrackerParams {
            search_radius: 4,
            ..Default::default()
        };
        let t = &case.trajectory;
        let got = track_bbox(&case.sequence, 0, t[0], steps, p).unwrap();
        assert!(center_err(&got, &t[steps]) <= 1.0, "{got:?} vs {:?}", t[steps]);
    }

    #[test]
    fn follows_translating_object_backward() {
        let (case, _) = translating_case();
        let p = TrackerParams {
            search_radius: 4,
            ..Default::default()
        };
        let t = &case.trajectory;
        let got = track_bbox(&case.sequence, 8, t[8], 5, p).unwrap();
        assert!(center_err(&got, &t[5]) <= 1.0, "{got:?} vs {:?}", t[5]);
    }

    #[test]
    fn rejects_degenerate_requests() {
        let seq = VideoSequence::new("s", vec![textured(10, 10); 2]).unwrap();
        let p = TrackerParams::default();
        let big = BoundingBox { x: 0, y: 0, w: 11, h: 2 };
        assert!(track_bbox(&seq, 0, big, 1, p).is_err());
        let ok = BoundingBox { x: 0, y: 0, w: 2, h: 2 };
        assert!(track_bbox(&seq, 0, ok, 0, p).is_err());
        assert!(track_bbox(&seq, 0, ok, 2, p).is_err());
    }

    #[test]
    fn offsets_prefer_small_moves() {
        let o = search_offsets(1);
        assert_eq!(o[0], (0, 0));
        assert_eq!(&o[1..5], &[(0, -1), (-1, 0), (1, 0), (0, 1)]);
    }
}
