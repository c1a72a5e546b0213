//! Pixel-grid s-t graphs and their exact minimum cut.

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

use super::maxflow::{Capacity, MaxFlow};

/// Per-pixel labels; `true` is foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelField {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<bool>,
}

impl LabelField {
    pub fn new(width: usize, height: usize, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "label field {width}x{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(LabelField {
            width,
            height,
            labels,
        })
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn to_mask(&self) -> BinaryMask {
        BinaryMask::from_bits(self.width, self.height, self.labels.clone()).expect("sizes match")
    }

    pub fn from_mask(m: &BinaryMask) -> Self {
        LabelField {
            width: m.width(),
            height: m.height(),
            labels: m.bits().to_vec(),
        }
    }
}

/// Undirected neighbor link carrying the same capacity both ways.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link<C> {
    pub a: usize,
    pub b: usize,
    pub cap: C,
}

/// The 8-neighborhood of a `width x height` grid as unordered pairs
/// `(i, j, diagonal)`, each pair listed once.
pub fn grid8_pairs(width: usize, height: usize) -> impl Iterator<Item = (usize, usize, bool)> {
    (0..height).flat_map(move |y| {
        (0..width).flat_map(move |x| {
            let i = y * width + x;
            let right = (x + 1 < width).then(|| (i, i + 1, false));
            let down = (y + 1 < height).then(|| (i, i + width, false));
            let down_right = (x + 1 < width && y + 1 < height).then(|| (i, i + width + 1, true));
            let down_left = (x > 0 && y + 1 < height).then(|| (i, i + width - 1, true));
            [right, down, down_right, down_left].into_iter().flatten()
        })
    })
}

/// A grid of pixel nodes plus the two terminals.
///
/// `source[i]` is paid when pixel `i` ends on the sink (background) side,
/// `sink[i]` when it ends on the source (foreground) side, and a link's
/// capacity when its endpoints are separated.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityGraph<C> {
    width: usize,
    height: usize,
    source: Vec<C>,
    sink: Vec<C>,
    links: Vec<Link<C>>,
}

impl<C: Capacity> CapacityGraph<C> {
    pub fn new(width: usize, height: usize, source: Vec<C>, sink: Vec<C>, links: Vec<Link<C>>) -> Result<Self> {
        let n = width * height;
        if source.len() != n || sink.len() != n {
            return Err(Error::InvalidInput(format!(
                "graph of {n} pixels given {} source and {} sink capacities",
                source.len(),
                sink.len()
            )));
        }
        if let Some(c) = source.iter().chain(&sink).find(|c| !c.is_valid()) {
            return Err(Error::InvalidInput(format!("invalid terminal capacity {c:?}")));
        }
        for l in &links {
            if l.a >= n || l.b >= n || l.a == l.b {
                return Err(Error::InvalidInput(format!("bad link {} -> {}", l.a, l.b)));
            }
            if !l.cap.is_valid() {
                return Err(Error::InvalidInput(format!("invalid link capacity {:?}", l.cap)));
            }
        }
        Ok(CapacityGraph {
            width,
            height,
            source,
            sink,
            links,
        })
    }

    /// Graph whose links are exactly the 8-neighborhood, weighted by
    /// `weight(i, j, diagonal)`.
    pub fn grid8(
        width: usize,
        height: usize,
        source: Vec<C>,
        sink: Vec<C>,
        mut weight: impl FnMut(usize, usize, bool) -> C,
    ) -> Result<Self> {
        let links = grid8_pairs(width, height)
            .map(|(a, b, diag)| Link {
                a,
                b,
                cap: weight(a, b, diag),
            })
            .collect();
        Self::new(width, height, source, sink, links)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn node_count(&self) -> usize {
        self.width * self.height + 2
    }

    pub fn links(&self) -> &[Link<C>] {
        &self.links
    }

    pub fn source_caps(&self) -> &[C] {
        &self.source
    }

    pub fn sink_caps(&self) -> &[C] {
        &self.sink
    }

    /// Capacity of the cut induced by `labels` (foreground = source side).
    pub fn cut_cost(&self, labels: &LabelField) -> C {
        let mut total = C::zero();
        for (i, &fg) in labels.labels.iter().enumerate() {
            total = total + if fg { self.sink[i] } else { self.source[i] };
        }
        for l in &self.links {
            if labels.labels[l.a] != labels.labels[l.b] {
                total = total + l.cap;
            }
        }
        total
    }
}

/// Exact minimum s-t cut. Source-side pixels are labeled foreground; the
/// returned value is the cut capacity.
pub fn min_cut<C: Capacity>(g: &CapacityGraph<C>) -> (LabelField, C) {
    let n = g.width * g.height;
    let mut mf = MaxFlow::new(n);
    mf.reserve_edges(g.links.len());
    for i in 0..n {
        mf.add_tweights(i, g.source[i], g.sink[i]);
    }
    for l in &g.links {
        mf.add_edge(l.a, l.b, l.cap, l.cap);
    }
    let value = mf.maxflow();
    let labels = (0..n).map(|i| mf.in_source_segment(i)).collect();
    (
        LabelField {
            width: g.width,
            height: g.height,
            labels,
        },
        value,
    )
}
