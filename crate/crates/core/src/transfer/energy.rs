//! The binary segmentation energy `E(C) = Σ φ + Σ ψ` over a pixel window.

use crate::error::{Error, Result};
use crate::raster::{BoundingBox, Frame, SoftMask};
use crate::scalar::{Real, Rgb};

use super::gmm::GaussianMixture;
use super::graph::{grid8_pairs, CapacityGraph, LabelField, Link};

/// Per-pixel label costs over a window, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField<T> {
    pub width: usize,
    pub height: usize,
    pub phi_bg: Vec<T>,
    pub phi_fg: Vec<T>,
}

fn check_region<T: Real>(frame: &Frame<T>, region: &BoundingBox) -> Result<()> {
    if region.w == 0 || region.h == 0 {
        return Err(Error::InvalidInput(format!("empty region {region:?}")));
    }
    region.check_within(frame.width(), frame.height())
}

fn region_pixels<T: Real>(frame: &Frame<T>, region: &BoundingBox) -> Vec<Rgb<T>> {
    (0..region.h)
        .flat_map(|y| (0..region.w).map(move |x| frame.pixel(region.x + x, region.y + y)))
        .collect()
}

/// `φ(c) = -ln P_c(x) - ln Q(c)` with the location prior
/// `Q(1) = clip(M, clamp, 1 - clamp)`.
pub fn unary_potentials<T: Real>(
    frame: &Frame<T>,
    region: &BoundingBox,
    m: &SoftMask<T>,
    fg: &GaussianMixture<T>,
    bg: &GaussianMixture<T>,
    clamp: T,
) -> Result<UnaryField<T>> {
    check_region(frame, region)?;
    if m.dims() != (region.w, region.h) {
        return Err(Error::dims(m.dims(), (region.w, region.h)));
    }
    if !(clamp > T::zero() && clamp < T::lit(0.5)) {
        return Err(Error::InvalidInput(format!("probability clamp {clamp} outside (0, 0.5)")));
    }
    let px = region_pixels(frame, region);
    let (phi_bg, phi_fg) = px
        .iter()
        .zip(m.values())
        .map(|(x, &mv)| {
            let q1 = mv.max(clamp).min(T::one() - clamp);
            let q0 = T::one() - q1;
            (-bg.log_density(x) - q0.ln(), -fg.log_density(x) - q1.ln())
        })
        .unzip();
    Ok(UnaryField {
        width: region.w,
        height: region.h,
        phi_bg,
        phi_fg,
    })
}

/// `β = 1 / (2 · mean ‖x_i - x_j‖²)` over 8-neighbor pairs of the region,
/// or 0 when the region is constant.
pub fn estimate_beta<T: Real>(frame: &Frame<T>, region: &BoundingBox) -> Result<T> {
    check_region(frame, region)?;
    let px = region_pixels(frame, region);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (i, j, _) in grid8_pairs(region.w, region.h) {
        total += crate::scalar::sq_dist(&px[i], &px[j]).as_f64();
        count += 1;
    }
    if count == 0 || total == 0.0 {
        return Ok(T::zero());
    }
    Ok(T::lit(1.0 / (2.0 * total / count as f64)))
}

/// `γ / d · exp(-β ‖x_i - x_j‖²)`, paid when the two labels differ.
pub fn pairwise_weight<T: Real>(xi: &Rgb<T>, xj: &Rgb<T>, dij: T, beta: T, gamma: T) -> T {
    gamma / dij * (-beta * crate::scalar::sq_dist(xi, xj)).exp()
}

/// A fully built energy over one window, evaluated in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct GrabCutEnergy {
    width: usize,
    height: usize,
    phi_bg: Vec<f64>,
    phi_fg: Vec<f64>,
    links: Vec<Link<f64>>,
}

/// Contrast-sensitive 8-neighborhood links for a window.
pub fn pairwise_links<T: Real>(frame: &Frame<T>, region: &BoundingBox, beta: T, gamma: T) -> Result<Vec<Link<f64>>> {
    check_region(frame, region)?;
    let px = region_pixels(frame, region);
    let diag = T::lit(std::f64::consts::SQRT_2);
    Ok(grid8_pairs(region.w, region.h)
        .map(|(a, b, is_diag)| Link {
            a,
            b,
            cap: pairwise_weight(&px[a], &px[b], if is_diag { diag } else { T::one() }, beta, gamma).as_f64(),
        })
        .collect())
}

impl GrabCutEnergy {
    pub fn from_parts<T: Real>(unary: &UnaryField<T>, links: Vec<Link<f64>>) -> Self {
        GrabCutEnergy {
            width: unary.width,
            height: unary.height,
            phi_bg: unary.phi_bg.iter().map(|v| v.as_f64()).collect(),
            phi_fg: unary.phi_fg.iter().map(|v| v.as_f64()).collect(),
            links,
        }
    }

    /// Builds unaries and links from scratch; β is estimated from the
    /// region itself.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        frame: &Frame<T>,
        region: &BoundingBox,
        m: &SoftMask<T>,
        fg: &GaussianMixture<T>,
        bg: &GaussianMixture<T>,
        gamma: T,
        clamp: T,
    ) -> Result<Self> {
        let unary = unary_potentials(frame, region, m, fg, bg, clamp)?;
        let beta = estimate_beta(frame, region)?;
        Ok(Self::from_parts(&unary, pairwise_links(frame, region, beta, gamma)?))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `E(C)` for a labeling of the window.
    pub fn energy(&self, labels: &LabelField) -> f64 {
        assert_eq!((labels.width, labels.height), (self.width, self.height), "label field size");
        let unary: f64 = labels
            .labels
            .iter()
            .enumerate()
            .map(|(i, &fg)| if fg { self.phi_fg[i] } else { self.phi_bg[i] })
            .sum();
        let pair: f64 = self
            .links
            .iter()
            .filter(|l| labels.labels[l.a] != labels.labels[l.b])
            .map(|l| l.cap)
            .sum();
        unary + pair
    }

    /// Labeling-independent amount removed from the terminal capacities;
    /// `energy(C) = cut_cost(C) + offset()`.
    pub fn offset(&self) -> f64 {
        self.phi_bg.iter().zip(&self.phi_fg).map(|(b, f)| b.min(*f)).sum()
    }

    /// The standard reduction: source arc carries `φ_bg`, sink arc `φ_fg`,
    /// each pixel shifted by the smaller of the two so capacities are
    /// nonnegative.
    pub fn to_graph(&self) -> Result<CapacityGraph<f64>> {
        let (source, sink) = self
            .phi_bg
            .iter()
            .zip(&self.phi_fg)
            .map(|(&b, &f)| {
                let m = b.min(f);
                (b - m, f - m)
            })
            .unzip();
        CapacityGraph::new(self.width, self.height, source, sink, self.links.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::gmm::Component;
    use crate::transfer::graph::min_cut;

    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

    fn iso(v: f64) -> [[f64; 3]; 3] {
        [[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]]
    }

    fn single(mean: [f64; 3], var: f64) -> GaussianMixture<f64> {
        GaussianMixture::new(vec![Component::new(1.0, mean, iso(var)).unwrap()]).unwrap()
    }

    fn normal_pdf(x: [f64; 3], mean: [f64; 3], var: f64) -> f64 {
        let d2: f64 = (0..3).map(|c| (x[c] - mean[c]).powi(2)).sum();
        (TWO_PI * var).powf(-1.5) * (-d2 / (2.0 * var)).exp()
    }

    fn one_pixel(c: [f64; 3]) -> (Frame<f64>, BoundingBox) {
        (Frame::new(1, 1, vec![c]).unwrap(), BoundingBox { x: 0, y: 0, w: 1, h: 1 })
    }

    #[test]
    fn certain_foreground_location_term_vanishes() {
        let (f, b) = one_pixel([0.5, 0.4, 0.3]);
        let fg = single([0.5, 0.5, 0.5], 0.02);
        let bg = single([0.1, 0.1, 0.1], 0.02);
        let u = unary_potentials(&f, &b, &SoftMask::constant(1, 1, 1.0).unwrap(), &fg, &bg, 1e-6).unwrap();
        let appearance = -fg.log_density(&[0.5, 0.4, 0.3]);
        assert!((u.phi_fg[0] - appearance).abs() < 1e-5);
        assert!((u.phi_bg[0] - (-bg.log_density(&[0.5, 0.4, 0.3]) - 1e-6f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn half_prior_leaves_only_appearance() {
        let x = [0.3, 0.6, 0.2];
        let (f, b) = one_pixel(x);
        let fg = single([0.3, 0.5, 0.2], 0.01);
        let bg = single([0.8, 0.1, 0.7], 0.05);
        let u = unary_potentials(&f, &b, &SoftMask::constant(1, 1, 0.5).unwrap(), &fg, &bg, 1e-6).unwrap();
        let want = bg.log_density(&x) - fg.log_density(&x);
        assert!((u.phi_fg[0] - u.phi_bg[0] - want).abs() < 1e-12);
    }

    #[test]
    fn hand_case_quarter_prior() {
        let x = [0.4, 0.4, 0.4];
        let (f, b) = one_pixel(x);
        let (mf, mb) = ([0.5, 0.4, 0.4], [0.2, 0.3, 0.4]);
        let u = unary_potentials(
            &f,
            &b,
            &SoftMask::constant(1, 1, 0.25).unwrap(),
            &single(mf, 0.01),
            &single(mb, 0.04),
            1e-6,
        )
        .unwrap();
        let phi_fg = -normal_pdf(x, mf, 0.01).ln() - 0.25f64.ln();
        let phi_bg = -normal_pdf(x, mb, 0.04).ln() - 0.75f64.ln();
        assert!((u.phi_fg[0] - phi_fg).abs() < 1e-12, "{} vs {phi_fg}", u.phi_fg[0]);
        assert!((u.phi_bg[0] - phi_bg).abs() < 1e-12);
    }

    #[test]
    fn unaries_finite_for_extreme_inputs() {
        let f = Frame::new(2, 1, vec![[0.0; 3], [1.0; 3]]).unwrap();
        let b = f.full_box();
        let m = SoftMask::new(2, 1, vec![0.0, 1.0]).unwrap();
        let g = single([0.5; 3], 1e-8);
        let u = unary_potentials(&f, &b, &m, &g, &g, 1e-6).unwrap();
        assert!(u.phi_bg.iter().chain(&u.phi_fg).all(|v| v.is_finite()));
    }

    #[test]
    fn beta_cases() {
        let flat = Frame::from_fn(5, 4, |_, _| [0.2f64, 0.4, 0.6]).unwrap();
        assert_eq!(estimate_beta(&flat, &flat.full_box()).unwrap(), 0.0);
        // a single row has only horizontal pairs, each with ‖Δ‖² = 0.02
        let d = 0.02f64.sqrt();
        let row = Frame::from_fn(6, 1, |x, _| [if x % 2 == 0 { 0.2 } else { 0.2 + d }, 0.5, 0.5]).unwrap();
        let beta = estimate_beta(&row, &row.full_box()).unwrap();
        assert!((beta - 25.0).abs() < 1e-9, "{beta}");
        let shifted = Frame::from_fn(6, 1, |x, _| [if x % 2 == 0 { 0.3 } else { 0.3 + d }, 0.6, 0.6]).unwrap();
        assert!((estimate_beta(&shifted, &shifted.full_box()).unwrap() - beta).abs() < 1e-9);
    }

    #[test]
    fn pairwise_cases() {
        let c = [0.3, 0.3, 0.3];
        assert_eq!(pairwise_weight(&c, &c, 1.0, 7.0, 50.0), 50.0);
        assert!((pairwise_weight(&c, &c, std::f64::consts::SQRT_2, 7.0, 50.0) - 50.0 / 2f64.sqrt()).abs() < 1e-12);
        let beta = 4.0;
        // ‖Δ‖² = 1/β
        let d = (1.0f64 / beta / 3.0).sqrt();
        let w = pairwise_weight(&c, &[0.3 + d, 0.3 + d, 0.3 + d], 1.0, beta, 50.0);
        assert!((w - 50.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(pairwise_weight(&c, &[0.9; 3], 1.0, beta, 0.0), 0.0);
    }

    #[test]
    fn cut_plus_offset_is_energy() {
        let f = Frame::from_fn(4, 3, |x, y| [0.1 * x as f64, 0.2 * y as f64, 0.5]).unwrap();
        let b = f.full_box();
        let m = SoftMask::new(4, 3, (0..12).map(|i| if i % 4 < 2 { 0.9 } else { 0.2 }).collect()).unwrap();
        let e = GrabCutEnergy::new(&f, &b, &m, &single([0.0, 0.2, 0.5], 0.05), &single([0.3, 0.2, 0.5], 0.05), 5.0, 1e-6)
            .unwrap();
        let g = e.to_graph().unwrap();
        let (labels, cut) = min_cut(&g);
        assert!((cut + e.offset() - e.energy(&labels)).abs() < 1e-9);
        // exhaustive check over all 2^12 labelings
        let best = (0u32..1 << 12)
            .map(|bits| {
                let l = LabelField::new(4, 3, (0..12).map(|i| bits >> i & 1 == 1).collect()).unwrap();
                e.energy(&l)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((e.energy(&labels) - best).abs() < 1e-9);
    }
}
