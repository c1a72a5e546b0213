//! Raster and geometry primitives.
//!
//! All rasters are row-major with the origin at the top-left pixel; index
//! `y * width + x` addresses pixel `(x, y)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{clamp01, Real, Rgb};

/// One RGB frame with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    width: usize,
    height: usize,
    rgb: Vec<Rgb<T>>,
}

impl<T: Real> Frame<T> {
    pub fn new(width: usize, height: usize, rgb: Vec<Rgb<T>>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "frame must be at least 1x1, got {width}x{height}"
            )));
        }
        if rgb.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "frame {width}x{height} needs {} pixels, got {}",
                width * height,
                rgb.len()
            )));
        }
        let in_range = |v: T| v >= T::zero() && v <= T::one();
        if let Some(i) = rgb.iter().position(|p| !p.iter().all(|&c| in_range(c))) {
            return Err(Error::InvalidInput(format!(
                "pixel {i} has a channel outside [0,1]"
            )));
        }
        Ok(Frame { width, height, rgb })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb<T>) -> Result<Self> {
        let mut rgb = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                rgb.push(f(x, y).map(clamp01));
            }
        }
        Self::new(width, height, rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb<T>] {
        &self.rgb
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> Rgb<T> {
        self.rgb[y * self.width + x]
    }

    /// Rec. 601 luma of pixel `(x, y)`.
    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> T {
        let [r, g, b] = self.pixel(x, y);
        T::lit(0.299) * r + T::lit(0.587) * g + T::lit(0.114) * b
    }

    /// The whole frame as a luma plane.
    pub fn luma_plane(&self) -> Vec<T> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .map(|(x, y)| self.luma(x, y))
            .collect()
    }

    pub fn full_box(&self) -> BoundingBox {
        BoundingBox {
            x: 0,
            y: 0,
            w: self.width,
            h: self.height,
        }
    }
}

/// An ordered, equally sized run of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence<T> {
    name: String,
    frames: Vec<Frame<T>>,
}

impl<T: Real> VideoSequence<T> {
    pub fn new(name: impl Into<String>, frames: Vec<Frame<T>>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidInput("sequence has no frames".into()))?;
        let dims = first.dims();
        if let Some(bad) = frames.iter().find(|f| f.dims() != dims) {
            return Err(Error::dims(dims, bad.dims()));
        }
        Ok(VideoSequence {
            name: name.into(),
            frames,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn frames(&self) -> &[Frame<T>] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Frame<T> {
        &self.frames[i]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }
}

/// Per-pixel foreground bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// All-background mask.
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "mask {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask { width, height, bits }
    }

    /// Mask whose set bits are exactly the pixels of `b`.
    pub fn from_box(width: usize, height: usize, b: &BoundingBox) -> Self {
        Self::from_fn(width, height, |x, y| b.contains(x, y))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    /// Number of set bits.
    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True when no bit is set.
    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }

    fn zip_with(&self, other: &BinaryMask, op: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.check_dims(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| op(a, b)).collect(),
        })
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    /// In-place union, used when folding many masks.
    pub fn union_in_place(&mut self, other: &BinaryMask) -> Result<()> {
        self.check_dims(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// `(|a ∩ b|, |a ∪ b|)`.
    pub fn overlap_counts(&self, other: &BinaryMask) -> Result<(usize, usize)> {
        self.check_dims(other)?;
        let mut inter = 0;
        let mut union = 0;
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        Ok((inter, union))
    }

    pub fn bbox(&self) -> Result<BoundingBox> {
        bbox_of(self)
    }

    /// Sub-mask covered by `b`.
    pub fn crop(&self, b: &BoundingBox) -> Result<BinaryMask> {
        b.check_within(self.width, self.height)?;
        Ok(BinaryMask::from_fn(b.w, b.h, |x, y| self.get(b.x + x, b.y + y)))
    }

    /// Nearest-neighbor resize with pixel-center sampling.
    pub fn resize_nearest(&self, w: usize, h: usize) -> Result<BinaryMask> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidInput(format!("resize target {w}x{h} is empty")));
        }
        let xs = nearest_indices(self.width, w);
        let ys = nearest_indices(self.height, h);
        Ok(BinaryMask::from_fn(w, h, |x, y| self.get(xs[x], ys[y])))
    }

    /// Places `self` at `b` inside an otherwise empty `width x height` mask.
    pub fn embed(&self, b: &BoundingBox, width: usize, height: usize) -> Result<BinaryMask> {
        b.check_within(width, height)?;
        if (b.w, b.h) != self.dims() {
            return Err(Error::dims((b.w, b.h), self.dims()));
        }
        let mut out = BinaryMask::new(width, height);
        for y in 0..b.h {
            for x in 0..b.w {
                if self.get(x, y) {
                    out.set(b.x + x, b.y + y, true);
                }
            }
        }
        Ok(out)
    }

    /// Set bits as a soft mask of zeros and ones.
    pub fn to_soft<T: Real>(&self) -> SoftMask<T> {
        SoftMask {
            width: self.width,
            height: self.height,
            values: self
                .bits
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        }
    }
}

/// Source index sampled by output pixel centers.
fn nearest_indices(src: usize, dst: usize) -> Vec<usize> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| (((i as f64 + 0.5) * scale).floor() as usize).min(src - 1))
        .collect()
}

/// Per-pixel foreground evidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask<T> {
    width: usize,
    height: usize,
    values: Vec<T>,
}

impl<T: Real> SoftMask<T> {
    pub fn new(width: usize, height: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "soft mask {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::InvalidInput(format!(
                "soft mask value {i} is outside [0,1]"
            )));
        }
        Ok(SoftMask {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, v: T) -> Result<Self> {
        Self::new(width, height, vec![v; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.values[y * self.width + x]
    }

    /// Bits set where the value is at least `tau`.
    pub fn threshold(&self, tau: T) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.values.iter().map(|&v| v >= tau).collect(),
        }
    }

    /// Bilinear resize sampling at pixel centers.
    pub fn resize_bilinear(&self, w: usize, h: usize) -> Result<SoftMask<T>> {
        resize_soft(self, w, h)
    }
}

/// Pixel-wise OR of two equally sized masks.
pub fn mask_union(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    a.union(b)
}

/// Tightest box containing every set bit.
pub fn bbox_of(m: &BinaryMask) -> Result<BoundingBox> {
    let mut min_x = usize::MAX;
    let mut min_y = usize::MAX;
    let mut max_x = 0;
    let mut max_y = 0;
    for y in 0..m.height {
        let row = &m.bits[y * m.width..(y + 1) * m.width];
        let Some(first) = row.iter().position(|&b| b) else {
            continue;
        };
        let last = row.iter().rposition(|&b| b).unwrap_or(first);
        min_x = min_x.min(first);
        max_x = max_x.max(last);
        min_y = min_y.min(y);
        max_y = y;
    }
    if min_x == usize::MAX {
        return Err(Error::EmptyMask);
    }
    Ok(BoundingBox {
        x: min_x,
        y: min_y,
        w: max_x - min_x + 1,
        h: max_y - min_y + 1,
    })
}

/// Bilinear resize of a soft mask. Output pixel centers are mapped back
/// to source coordinates with `(i + 0.5) * src / dst - 0.5`, clamped to
/// the source grid.
pub fn resize_soft<T: Real>(m: &SoftMask<T>, w: usize, h: usize) -> Result<SoftMask<T>> {
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput(format!("resize target {w}x{h} is empty")));
    }
    if (w, h) == m.dims() {
        return Ok(m.clone());
    }
    let xs = bilinear_taps::<T>(m.width, w);
    let ys = bilinear_taps::<T>(m.height, h);
    let mut values = Vec::with_capacity(w * h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = m.get(x0, y0) * (T::one() - fx) + m.get(x1, y0) * fx;
            let bottom = m.get(x0, y1) * (T::one() - fx) + m.get(x1, y1) * fx;
            values.push(clamp01(top * (T::one() - fy) + bottom * fy));
        }
    }
    SoftMask::new(w, h, values)
}

fn bilinear_taps<T: Real>(src: usize, dst: usize) -> Vec<(usize, usize, T)> {
    let scale = src as f64 / dst as f64;
    let max = (src - 1) as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, T::lit(s - lo as f64))
        })
        .collect()
}

/// Axis-aligned pixel rectangle `[x, x + w) x [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    /// Box validated against a `frame_w x frame_h` raster.
    pub fn new(x: usize, y: usize, w: usize, h: usize, frame_w: usize, frame_h: usize) -> Result<Self> {
        let b = BoundingBox { x, y, w, h };
        b.check_within(frame_w, frame_h)?;
        Ok(b)
    }

    pub fn check_within(&self, frame_w: usize, frame_h: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 {
            return Err(Error::InvalidInput(format!("box {self:?} has zero extent")));
        }
        if self.x + self.w > frame_w || self.y + self.h > frame_h {
            return Err(Error::InvalidInput(format!(
                "box {self:?} exceeds frame {frame_w}x{frame_h}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    /// Grows the box by `margin` on every side, clipped to the frame.
    pub fn expand(&self, margin: usize, frame_w: usize, frame_h: usize) -> BoundingBox {
        let x = self.x.saturating_sub(margin);
        let y = self.y.saturating_sub(margin);
        let right = (self.x + self.w + margin).min(frame_w);
        let bottom = (self.y + self.h + margin).min(frame_h);
        BoundingBox {
            x,
            y,
            w: right - x,
            h: bottom - y,
        }
    }

    /// Moves the top-left corner so the box lies inside the frame.
    /// The box must already fit in the frame's extent.
    pub fn clamp_to(&self, frame_w: usize, frame_h: usize) -> BoundingBox {
        BoundingBox {
            x: self.x.min(frame_w.saturating_sub(self.w)),
            y: self.y.min(frame_h.saturating_sub(self.h)),
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(w: usize, h: usize, rows: &[usize]) -> BinaryMask {
        BinaryMask::from_fn(w, h, |_, y| rows.contains(&y))
    }

    #[test]
    fn union_with_empty_is_identity() {
        let m = BinaryMask::from_fn(4, 4, |x, y| (x * 3 + y) % 5 == 0);
        assert_eq!(mask_union(&BinaryMask::new(4, 4), &m).unwrap(), m);
    }

    #[test]
    fn union_of_halves_is_full() {
        let left = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        let right = BinaryMask::from_fn(4, 4, |x, _| x >= 2);
        assert_eq!(mask_union(&left, &right).unwrap().area(), 16);
    }

    #[test]
    fn union_of_overlapping_rows() {
        let u = mask_union(&rows(4, 4, &[0, 1]), &rows(4, 4, &[1, 2])).unwrap();
        assert_eq!(u, rows(4, 4, &[0, 1, 2]));
        assert_eq!(u.area(), 12);
    }

    #[test]
    fn union_rejects_mismatch() {
        let err = mask_union(&BinaryMask::new(4, 4), &BinaryMask::new(4, 3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn bbox_examples() {
        let mut m = BinaryMask::new(6, 6);
        m.set(2, 3, true);
        assert_eq!(bbox_of(&m).unwrap(), BoundingBox { x: 2, y: 3, w: 1, h: 1 });

        let full = BinaryMask::from_fn(7, 5, |_, _| true);
        assert_eq!(bbox_of(&full).unwrap(), BoundingBox { x: 0, y: 0, w: 7, h: 5 });

        let mut two = BinaryMask::new(6, 6);
        two.set(1, 1, true);
        two.set(4, 2, true);
        assert_eq!(bbox_of(&two).unwrap(), BoundingBox { x: 1, y: 1, w: 4, h: 2 });

        assert!(matches!(bbox_of(&BinaryMask::new(3, 3)), Err(Error::EmptyMask)));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let m = SoftMask::constant(5, 3, 0.5f64).unwrap();
        let r = resize_soft(&m, 11, 7).unwrap();
        assert!(r.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn resize_same_size_is_identity() {
        let m = SoftMask::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6f64]).unwrap();
        assert_eq!(resize_soft(&m, 3, 2).unwrap(), m);
    }

    #[test]
    fn resize_ramp_upsamples_monotonically() {
        // Centers of a 4-wide output map to source x = -0.25, 0.25, 0.75, 1.25.
        let m = SoftMask::new(2, 1, vec![0.0, 1.0f64]).unwrap();
        let r = resize_soft(&m, 4, 1).unwrap();
        assert_eq!(r.values(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn nearest_resize_of_full_mask_stays_full() {
        let m = BinaryMask::from_fn(3, 5, |_, _| true);
        assert_eq!(m.resize_nearest(8, 2).unwrap().area(), 16);
    }

    #[test]
    fn frame_rejects_out_of_range_channel() {
        assert!(Frame::new(1, 1, vec![[0.0, 1.5, 0.0f64]]).is_err());
        assert!(Frame::<f64>::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn sequence_rejects_mixed_dims() {
        let a = Frame::from_fn(2, 2, |_, _| [0.0f32; 3]).unwrap();
        let b = Frame::from_fn(3, 2, |_, _| [0.0f32; 3]).unwrap();
        assert!(VideoSequence::new("x", vec![a, b]).is_err());
    }

    #[test]
    fn box_expand_clips() {
        let b = BoundingBox { x: 2, y: 1, w: 3, h: 3 };
        assert_eq!(b.expand(10, 8, 6), BoundingBox { x: 0, y: 0, w: 8, h: 6 });
    }

    fn arb_mask(w: usize, h: usize) -> impl Strategy<Value = BinaryMask> {
        proptest::collection::vec(any::<bool>(), w * h)
            .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
    }

    proptest! {
        #[test]
        fn union_laws(a in arb_mask(5, 4), b in arb_mask(5, 4), c in arb_mask(5, 4)) {
            prop_assert_eq!(a.union(&b).unwrap(), b.union(&a).unwrap());
            prop_assert_eq!(
                a.union(&b).unwrap().union(&c).unwrap(),
                a.union(&b.union(&c).unwrap()).unwrap()
            );
            prop_assert_eq!(a.union(&a).unwrap(), a.clone());
            let inter = a.intersection(&b).unwrap().area();
            prop_assert_eq!(a.union(&b).unwrap().area() + inter, a.area() + b.area());
        }

        #[test]
        fn bbox_is_tight(m in arb_mask(6, 5)) {
            prop_assume!(!m.is_empty());
            let b = bbox_of(&m).unwrap();
            for y in 0..m.height() {
                for x in 0..m.width() {
                    if m.get(x, y) {
                        prop_assert!(b.contains(x, y));
                    }
                }
            }
            let col_hit = |x: usize| (b.y..b.y + b.h).any(|y| m.get(x, y));
            let row_hit = |y: usize| (b.x..b.x + b.w).any(|x| m.get(x, y));
            prop_assert!(col_hit(b.x) && col_hit(b.x + b.w - 1));
            prop_assert!(row_hit(b.y) && row_hit(b.y + b.h - 1));
        }

        #[test]
        fn resize_stays_in_unit_interval(
            vals in proptest::collection::vec(0.0f64..=1.0, 12),
            w in 1usize..20,
            h in 1usize..20,
        ) {
            let m = SoftMask::new(4, 3, vals).unwrap();
            let r = resize_soft(&m, w, h).unwrap();
            prop_assert!(r.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
