//! Boykov-Kolmogorov augmenting-path max-flow.
//!
//! Two search trees grow from the terminals until they touch, the path is
//! augmented, and orphaned nodes are re-adopted instead of rebuilding the
//! trees from scratch. Terminal capacities are stored as a single signed
//! residual per node: positive means residual from the source, negative
//! means residual to the sink.

use std::collections::VecDeque;
use std::fmt::Debug;
use std::ops::{Add, Neg, Sub};

use num_traits::Zero;

/// Arc capacity: integers for exact arithmetic or floats.
pub trait Capacity:
    Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Neg<Output = Self> + Zero + Debug + Send + Sync
{
    /// Nonnegative and finite.
    fn is_valid(self) -> bool;
}

macro_rules! int_capacity {
    ($($t:ty),*) => {$(
        impl Capacity for $t {
            fn is_valid(self) -> bool { self >= 0 }
        }
    )*};
}
macro_rules! float_capacity {
    ($($t:ty),*) => {$(
        impl Capacity for $t {
            fn is_valid(self) -> bool { self.is_finite() && self >= 0.0 }
        }
    )*};
}
int_capacity!(i32, i64);
float_capacity!(f32, f64);

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Parent {
    Free,
    Terminal,
    Orphan,
    Arc(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tree {
    Source,
    Sink,
}

#[derive(Debug, Clone)]
struct Node<C> {
    first: usize,
    parent: Parent,
    tree: Tree,
    tr_cap: C,
    active: bool,
    ts: u64,
    dist: u32,
}

#[derive(Debug, Clone)]
struct Arc<C> {
    head: usize,
    next: usize,
    r_cap: C,
}

#[derive(Debug, Clone)]
pub struct MaxFlow<C> {
    nodes: Vec<Node<C>>,
    arcs: Vec<Arc<C>>,
    flow: C,
    active: VecDeque<usize>,
    orphans: VecDeque<usize>,
    time: u64,
}

impl<C: Capacity> MaxFlow<C> {
    pub fn new(n: usize) -> Self {
        MaxFlow {
            nodes: (0..n)
                .map(|_| Node {
                    first: NONE,
                    parent: Parent::Free,
                    tree: Tree::Source,
                    tr_cap: C::zero(),
                    active: false,
                    ts: 0,
                    dist: 0,
                })
                .collect(),
            arcs: Vec::new(),
            flow: C::zero(),
            active: VecDeque::new(),
            orphans: VecDeque::new(),
            time: 0,
        }
    }

    pub fn reserve_edges(&mut self, edges: usize) {
        self.arcs.reserve(2 * edges);
    }

    /// Adds `source -> i` and `i -> sink` capacities. Flow along
    /// `source -> i -> sink` is pushed immediately.
    pub fn add_tweights(&mut self, i: usize, to_source: C, to_sink: C) {
        let mut cs = to_source;
        let mut ct = to_sink;
        let delta = self.nodes[i].tr_cap;
        if delta > C::zero() {
            cs = cs + delta;
        } else {
            ct = ct - delta;
        }
        let pushed = if cs < ct { cs } else { ct };
        self.flow = self.flow + pushed;
        self.nodes[i].tr_cap = cs - ct;
    }

    /// Adds arcs `i -> j` with capacity `cap` and `j -> i` with `rev_cap`.
    pub fn add_edge(&mut self, i: usize, j: usize, cap: C, rev_cap: C) {
        debug_assert_ne!(i, j);
        let a = self.arcs.len();
        self.arcs.push(Arc {
            head: j,
            next: self.nodes[i].first,
            r_cap: cap,
        });
        self.arcs.push(Arc {
            head: i,
            next: self.nodes[j].first,
            r_cap: rev_cap,
        });
        self.nodes[i].first = a;
        self.nodes[j].first = a + 1;
    }

    #[inline]
    fn sister(a: usize) -> usize {
        a ^ 1
    }

    fn set_active(&mut self, i: usize) {
        if !self.nodes[i].active {
            self.nodes[i].active = true;
            self.active.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<usize> {
        while let Some(i) = self.active.pop_front() {
            self.nodes[i].active = false;
            if self.nodes[i].parent != Parent::Free {
                return Some(i);
            }
        }
        None
    }

    fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let mut a = self.nodes[i].first;
        std::iter::from_fn(move || {
            if a == NONE {
                return None;
            }
            let cur = a;
            a = self.arcs[a].next;
            Some(cur)
        })
    }

    /// Runs to completion and returns the max-flow value.
    pub fn maxflow(&mut self) -> C {
        for i in 0..self.nodes.len() {
            let n = &mut self.nodes[i];
            if n.tr_cap > C::zero() {
                n.tree = Tree::Source;
                n.parent = Parent::Terminal;
                n.dist = 1;
            } else if n.tr_cap < C::zero() {
                n.tree = Tree::Sink;
                n.parent = Parent::Terminal;
                n.dist = 1;
            } else {
                n.parent = Parent::Free;
                continue;
            }
            self.set_active(i);
        }

        let mut current: Option<usize> = None;
        loop {
            let i = match current {
                Some(i) if self.nodes[i].parent != Parent::Free => i,
                _ => match self.next_active() {
                    Some(i) => i,
                    None => break,
                },
            };
            let bridge = self.grow(i);
            self.time += 1;
            match bridge {
                Some(a) => {
                    current = Some(i);
                    self.augment(a);
                    self.adopt_orphans();
                }
                None => current = None,
            }
        }
        self.flow
    }

    /// Expands the tree of `i` through its residual arcs. Returns an arc
    /// from the source tree into the sink tree when the trees meet.
    fn grow(&mut self, i: usize) -> Option<usize> {
        let tree = self.nodes[i].tree;
        let mut a = self.nodes[i].first;
        while a != NONE {
            let next = self.arcs[a].next;
            let out_cap = match tree {
                Tree::Source => self.arcs[a].r_cap,
                Tree::Sink => self.arcs[Self::sister(a)].r_cap,
            };
            if out_cap > C::zero() {
                let j = self.arcs[a].head;
                if self.nodes[j].parent == Parent::Free {
                    let (ts, dist) = (self.nodes[i].ts, self.nodes[i].dist);
                    let nj = &mut self.nodes[j];
                    nj.tree = tree;
                    nj.parent = Parent::Arc(Self::sister(a));
                    nj.ts = ts;
                    nj.dist = dist + 1;
                    self.set_active(j);
                } else if self.nodes[j].tree != tree {
                    return Some(match tree {
                        Tree::Source => a,
                        Tree::Sink => Self::sister(a),
                    });
                } else if self.nodes[j].ts <= self.nodes[i].ts && self.nodes[j].dist > self.nodes[i].dist {
                    // Shorten j's path to its terminal through i.
                    let (ts, dist) = (self.nodes[i].ts, self.nodes[i].dist);
                    let nj = &mut self.nodes[j];
                    nj.parent = Parent::Arc(Self::sister(a));
                    nj.ts = ts;
                    nj.dist = dist + 1;
                }
            }
            a = next;
        }
        None
    }

    fn make_orphan(&mut self, i: usize) {
        self.nodes[i].parent = Parent::Orphan;
        self.orphans.push_back(i);
    }

    /// Pushes the bottleneck along source ~> tail(mid) -> head(mid) ~> sink.
    fn augment(&mut self, mid: usize) {
        let mut bottleneck = self.arcs[mid].r_cap;
        let tail = self.arcs[Self::sister(mid)].head;
        let head = self.arcs[mid].head;

        let mut i = tail;
        while let Parent::Arc(a) = self.nodes[i].parent {
            let c = self.arcs[Self::sister(a)].r_cap;
            if c < bottleneck {
                bottleneck = c;
            }
            i = self.arcs[a].head;
        }
        if self.nodes[i].tr_cap < bottleneck {
            bottleneck = self.nodes[i].tr_cap;
        }
        let mut i = head;
        while let Parent::Arc(a) = self.nodes[i].parent {
            let c = self.arcs[a].r_cap;
            if c < bottleneck {
                bottleneck = c;
            }
            i = self.arcs[a].head;
        }
        if -self.nodes[i].tr_cap < bottleneck {
            bottleneck = -self.nodes[i].tr_cap;
        }

        let s = Self::sister(mid);
        self.arcs[s].r_cap = self.arcs[s].r_cap + bottleneck;
        self.arcs[mid].r_cap = self.arcs[mid].r_cap - bottleneck;

        let mut i = tail;
        while let Parent::Arc(a) = self.nodes[i].parent {
            let sa = Self::sister(a);
            self.arcs[a].r_cap = self.arcs[a].r_cap + bottleneck;
            self.arcs[sa].r_cap = self.arcs[sa].r_cap - bottleneck;
            let next = self.arcs[a].head;
            if !(self.arcs[sa].r_cap > C::zero()) {
                self.make_orphan(i);
            }
            i = next;
        }
        self.nodes[i].tr_cap = self.nodes[i].tr_cap - bottleneck;
        if !(self.nodes[i].tr_cap > C::zero()) {
            self.make_orphan(i);
        }

        let mut i = head;
        while let Parent::Arc(a) = self.nodes[i].parent {
            let sa = Self::sister(a);
            self.arcs[sa].r_cap = self.arcs[sa].r_cap + bottleneck;
            self.arcs[a].r_cap = self.arcs[a].r_cap - bottleneck;
            let next = self.arcs[a].head;
            if !(self.arcs[a].r_cap > C::zero()) {
                self.make_orphan(i);
            }
            i = next;
        }
        self.nodes[i].tr_cap = self.nodes[i].tr_cap + bottleneck;
        if !(self.nodes[i].tr_cap < C::zero()) {
            self.make_orphan(i);
        }

        self.flow = self.flow + bottleneck;
    }

    fn adopt_orphans(&mut self) {
        while let Some(i) = self.orphans.pop_front() {
            self.adopt(i);
        }
    }

    /// Distance from `j` to a terminal through valid parents, or `None`
    /// when the path ends at an orphan or free node.
    fn origin_distance(&mut self, start: usize) -> Option<u32> {
        let mut d: u32 = 0;
        let mut j = start;
        loop {
            if self.nodes[j].ts == self.time {
                d += self.nodes[j].dist;
                break;
            }
            d += 1;
            match self.nodes[j].parent {
                Parent::Terminal => {
                    self.nodes[j].ts = self.time;
                    self.nodes[j].dist = 1;
                    break;
                }
                Parent::Arc(a) => j = self.arcs[a].head,
                Parent::Orphan | Parent::Free => return None,
            }
        }
        // Cache distances along the verified path.
        let mut j = start;
        let mut dd = d;
        while self.nodes[j].ts != self.time {
            self.nodes[j].ts = self.time;
            self.nodes[j].dist = dd;
            dd -= 1;
            match self.nodes[j].parent {
                Parent::Arc(a) => j = self.arcs[a].head,
                _ => break,
            }
        }
        Some(d)
    }

    fn adopt(&mut self, i: usize) {
        let tree = self.nodes[i].tree;
        let mut best: Option<(usize, u32)> = None;
        let arcs: Vec<usize> = self.neighbors(i).collect();
        for &a0 in &arcs {
            // residual toward i for the source tree, away from i for the sink tree
            let cap = match tree {
                Tree::Source => self.arcs[Self::sister(a0)].r_cap,
                Tree::Sink => self.arcs[a0].r_cap,
            };
            if !(cap > C::zero()) {
                continue;
            }
            let j = self.arcs[a0].head;
            if self.nodes[j].tree != tree || self.nodes[j].parent == Parent::Free {
                continue;
            }
            if let Some(d) = self.origin_distance(j) {
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((a0, d));
                }
            }
        }

        if let Some((a0, d)) = best {
            let n = &mut self.nodes[i];
            n.parent = Parent::Arc(a0);
            n.ts = self.time;
            n.dist = d + 1;
            return;
        }

        self.nodes[i].parent = Parent::Free;
        for &a0 in &arcs {
            let j = self.arcs[a0].head;
            if self.nodes[j].tree != tree || self.nodes[j].parent == Parent::Free {
                continue;
            }
            let cap = match tree {
                Tree::Source => self.arcs[Self::sister(a0)].r_cap,
                Tree::Sink => self.arcs[a0].r_cap,
            };
            if cap > C::zero() {
                self.set_active(j);
            }
            if let Parent::Arc(pa) = self.nodes[j].parent {
                if self.arcs[pa].head == i {
                    self.make_orphan(j);
                }
            }
        }
    }

    /// True when `i` ends on the source side of the minimum cut. Nodes
    /// reachable from neither terminal go to the sink side.
    pub fn in_source_segment(&self, i: usize) -> bool {
        let n = &self.nodes[i];
        n.parent != Parent::Free && n.tree == Tree::Source
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_example() {
        let mut g = MaxFlow::<i64>::new(2);
        g.add_tweights(0, 10, 0);
        g.add_tweights(1, 0, 10);
        g.add_edge(0, 1, 1, 1);
        assert_eq!(g.maxflow(), 1);
        assert!(g.in_source_segment(0));
        assert!(!g.in_source_segment(1));
    }

    #[test]
    fn chain_bottleneck() {
        // s -5-> 0 -3-> 1 -4-> 2 -6-> t
        let mut g = MaxFlow::<i32>::new(3);
        g.add_tweights(0, 5, 0);
        g.add_tweights(2, 0, 6);
        g.add_edge(0, 1, 3, 0);
        g.add_edge(1, 2, 4, 0);
        assert_eq!(g.maxflow(), 3);
        assert!(g.in_source_segment(0));
        assert!(!g.in_source_segment(1));
    }

    #[test]
    fn classic_network() {
        // CLRS flow network, max flow 23
        let mut g = MaxFlow::<i64>::new(4);
        g.add_tweights(0, 16, 0);
        g.add_tweights(1, 13, 0);
        g.add_tweights(2, 0, 20);
        g.add_tweights(3, 0, 4);
        g.add_edge(0, 2, 12, 0);
        g.add_edge(1, 0, 4, 10);
        g.add_edge(2, 1, 9, 0);
        g.add_edge(1, 3, 14, 0);
        g.add_edge(3, 2, 7, 0);
        assert_eq!(g.maxflow(), 23);
    }

    #[test]
    fn direct_terminal_flow_counts() {
        let mut g = MaxFlow::<f64>::new(1);
        g.add_tweights(0, 2.5, 1.5);
        g.add_tweights(0, 0.0, 2.0);
        assert_eq!(g.maxflow(), 2.5);
        assert!(!g.in_source_segment(0));
    }
}
