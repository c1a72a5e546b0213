//! Soft-mask-initialized GrabCut inside a single window.

use log::{debug, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, BoundingBox, Frame, SoftMask};
use crate::scalar::{Real, Rgb};

use super::energy::{estimate_beta, pairwise_links, unary_potentials, GrabCutEnergy};
use super::gmm::{fit_gmm, GaussianMixture};
use super::graph::{min_cut, LabelField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrabCutParams {
    /// Components per color model.
    #[serde(alias = "K")]
    pub k: usize,
    pub gamma: f64,
    /// How many nearest detected frames donate to the soft mask.
    pub p: usize,
    pub prob_clamp: f64,
    pub max_rounds: usize,
    pub convergence_frac: f64,
    /// Added to every GMM covariance diagonal.
    pub gmm_reg: f64,
    /// Width of the ring around the window whose pixels always train the
    /// background model.
    pub background_band: usize,
    /// Cap on training samples per model; larger pools are strided.
    pub max_gmm_samples: usize,
}

impl Default for GrabCutParams {
    fn default() -> Self {
        GrabCutParams {
            k: 5,
            gamma: 50.0,
            p: 10,
            prob_clamp: 1e-6,
            max_rounds: 5,
            convergence_frac: 0.001,
            gmm_reg: 1e-4,
            background_band: 10,
            max_gmm_samples: 20_000,
        }
    }
}

impl GrabCutParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k < 1 {
            return bad("K must be at least 1".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be finite and nonnegative", self.gamma));
        }
        if self.p < 1 {
            return bad("p must be at least 1".into());
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return bad(format!("prob_clamp {} outside (0, 0.5)", self.prob_clamp));
        }
        if self.max_rounds < 1 {
            return bad("max_rounds must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.convergence_frac) {
            return bad(format!("convergence_frac {} outside [0, 1]", self.convergence_frac));
        }
        if !(self.gmm_reg > 0.0 && self.gmm_reg.is_finite()) {
            return bad(format!("gmm_reg {} must be positive", self.gmm_reg));
        }
        if self.max_gmm_samples < 1 {
            return bad("max_gmm_samples must be at least 1".into());
        }
        Ok(())
    }
}

/// Everything [`grabcut_fill_traced`] learned along the way.
#[derive(Debug, Clone)]
pub struct GrabCutTrace<T> {
    /// Labels from thresholding the soft mask at 0.5.
    pub initial: LabelField,
    /// Final in-window labels.
    pub labels: LabelField,
    /// Color models used for the last cut.
    pub fg: GaussianMixture<T>,
    pub bg: GaussianMixture<T>,
    pub rounds: usize,
    /// Whether the last cut came out empty and the initial labels were
    /// kept instead.
    pub fell_back: bool,
}

/// Every `len / cap`-th element, so at most `cap` survive.
fn stride<T: Copy>(v: Vec<T>, cap: usize) -> Vec<T> {
    if v.len() <= cap {
        return v;
    }
    let n = v.len();
    (0..cap).map(|i| v[i * n / cap]).collect()
}

/// Background training set: the band around the window and the window's
/// current background labels are kept in full where the budget allows, the
/// rest of the frame fills what is left. Falls back to the window's own
/// border when nothing else is available.
fn background_samples<T: Real>(
    frame: &Frame<T>,
    b: &BoundingBox,
    labels: &LabelField,
    params: &GrabCutParams,
) -> Vec<Rgb<T>> {
    let (fw, fh) = frame.dims();
    let band = b.expand(params.background_band, fw, fh);
    let mut near = Vec::new();
    let mut far = Vec::new();
    for y in 0..fh {
        for x in 0..fw {
            if b.contains(x, y) {
                if !labels.labels[(y - b.y) * b.w + (x - b.x)] {
                    near.push(frame.pixel(x, y));
                }
            } else if band.contains(x, y) {
                near.push(frame.pixel(x, y));
            } else {
                far.push(frame.pixel(x, y));
            }
        }
    }
    let cap = params.max_gmm_samples;
    let mut out = stride(near, cap);
    let room = cap - out.len();
    if room > 0 {
        out.extend(stride(far, room));
    }
    if out.is_empty() {
        warn!("no background pixels for window {b:?}; using its border");
        for y in b.y..b.y + b.h {
            for x in b.x..b.x + b.w {
                if x == b.x || y == b.y || x + 1 == b.x + b.w || y + 1 == b.y + b.h {
                    out.push(frame.pixel(x, y));
                }
            }
        }
        out = stride(out, cap);
    }
    out
}

fn foreground_samples<T: Real>(frame: &Frame<T>, b: &BoundingBox, labels: &LabelField, cap: usize) -> Vec<Rgb<T>> {
    let px = labels
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &fg)| fg)
        .map(|(i, _)| frame.pixel(b.x + i % b.w, b.y + i / b.w))
        .collect();
    stride(px, cap)
}

/// Runs GrabCut in window `b` of `frame`, seeded by soft mask `m` (sized
/// like the window), and reports the intermediate state.
///
/// Each round refits both color models on the current labels, rebuilds the
/// energy and takes its exact minimum cut. Rounds stop once fewer than
/// `convergence_frac` of the window's pixels change.
pub fn grabcut_fill_traced<T: Real>(
    frame: &Frame<T>,
    b: &BoundingBox,
    m: &SoftMask<T>,
    params: &GrabCutParams,
    seed: u64,
) -> Result<GrabCutTrace<T>> {
    params.validate()?;
    if b.w == 0 || b.h == 0 {
        return Err(Error::InvalidInput(format!("empty window {b:?}")));
    }
    b.check_within(frame.width(), frame.height())?;
    if m.dims() != (b.w, b.h) {
        return Err(Error::dims(m.dims(), (b.w, b.h)));
    }
    let half = T::lit(0.5);
    let initial = LabelField::new(b.w, b.h, m.values().iter().map(|&v| v >= half).collect())?;
    if initial.foreground_count() == 0 {
        return Err(Error::EmptyMask);
    }

    let gamma = T::lit(params.gamma);
    let clamp = T::lit(params.prob_clamp);
    let reg = T::lit(params.gmm_reg);
    // Links depend only on the image, so they are shared by every round.
    let beta = estimate_beta(frame, b)?;
    let links = pairwise_links(frame, b, beta, gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n = b.w * b.h;
    let mut labels = initial.clone();
    let mut fell_back = false;
    let mut rounds = 0;
    let mut models = None;
    while rounds < params.max_rounds {
        rounds += 1;
        let fg_px = foreground_samples(frame, b, &labels, params.max_gmm_samples);
        let bg_px = background_samples(frame, b, &labels, params);
        let fg = fit_gmm(&fg_px, params.k, rng.next_u64(), reg)?;
        let bg = fit_gmm(&bg_px, params.k, rng.next_u64(), reg)?;
        let unary = unary_potentials(frame, b, m, &fg, &bg, clamp)?;
        let energy = GrabCutEnergy::from_parts(&unary, links.clone());
        let (cut, _) = min_cut(&energy.to_graph()?);
        models = Some((fg, bg));
        if cut.foreground_count() == 0 {
            warn!("cut in window {b:?} came out empty; keeping the soft-mask labels");
            labels = initial.clone();
            fell_back = true;
            break;
        }
        let changed = cut.labels.iter().zip(&labels.labels).filter(|(a, b)| a != b).count();
        labels = cut;
        debug!("grabcut round {rounds}: {changed} of {n} labels changed");
        if (changed as f64) < params.convergence_frac * n as f64 {
            break;
        }
    }
    let (fg, bg) = models.expect("at least one round");
    Ok(GrabCutTrace {
        initial,
        labels,
        fg,
        bg,
        rounds,
        fell_back,
    })
}

/// GrabCut in window `b`, returned as a full-frame mask that is background
/// outside the window.
pub fn grabcut_fill<T: Real>(
    frame: &Frame<T>,
    b: &BoundingBox,
    m: &SoftMask<T>,
    params: &GrabCutParams,
    seed: u64,
) -> Result<BinaryMask> {
    let trace = grabcut_fill_traced(frame, b, m, params, seed)?;
    trace.labels.to_mask().embed(b, frame.width(), frame.height())
}
