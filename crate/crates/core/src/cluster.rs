//! Mean-shift grouping of segment descriptors and foreground selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Descriptor;
use crate::premask::SegmentRecord;
use crate::raster::BinaryMask;
use crate::scalar::{sq_dist, Real};

pub const DEFAULT_MIN_FRAC: f64 = 0.6;
pub const DEFAULT_BANDWIDTH_FACTOR: f64 = 0.7;
pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 300;

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize<T: Real>(v: &Descriptor<T>) -> Result<Descriptor<T>> {
    let n = v.norm();
    if n == T::zero() || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Descriptor::new(v.values().iter().map(|&x| x / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment<T> {
    /// Mode index for each input point.
    pub labels: Vec<usize>,
    pub modes: Vec<Vec<T>>,
    pub bandwidth: T,
}

impl<T: Real> ClusterAssignment<T> {
    pub fn num_clusters(&self) -> usize {
        self.modes.len()
    }

    /// Member count per cluster id.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.modes.len()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Runs one point uphill under a flat kernel of radius `h`.
fn climb<T: Real, P: AsRef<[T]>>(points: &[P], start: &[T], h2: T, tol: T, max_iter: usize) -> Vec<T> {
    let dim = start.len();
    let mut y = start.to_vec();
    let mut sum = vec![T::zero(); dim];
    for _ in 0..max_iter {
        sum.iter_mut().for_each(|s| *s = T::zero());
        let mut count = 0usize;
        for p in points {
            let p = p.as_ref();
            if sq_dist(p, &y) <= h2 {
                for (s, &v) in sum.iter_mut().zip(p) {
                    *s += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            break;
        }
        let inv = T::one() / T::lit(count as f64);
        let mut shift2 = T::zero();
        for (yv, &s) in y.iter_mut().zip(&sum) {
            let next = s * inv;
            shift2 += (next - *yv) * (next - *yv);
            *yv = next;
        }
        if shift2.sqrt() < tol {
            break;
        }
    }
    y
}

/// Flat-kernel mean shift.
///
/// Each point climbs to the mean of the points within `bandwidth` until the
/// shift drops below `tol` or `max_iter` steps pass. Converged positions are
/// then visited in input order: a position within `bandwidth / 2` of an
/// existing mode's first member joins it, otherwise it opens a new mode.
/// Reported modes are the mean of their members' converged positions.
///
/// Climbs run in parallel; the result does not depend on scheduling.
pub fn mean_shift<T: Real, P: AsRef<[T]> + Sync>(
    points: &[P],
    bandwidth: T,
    tol: T,
    max_iter: usize,
) -> Result<ClusterAssignment<T>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("mean shift needs at least one point".into()));
    }
    if !(bandwidth > T::zero() && bandwidth.is_finite()) {
        return Err(Error::InvalidInput(format!("bandwidth {bandwidth} must be positive")));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::InvalidInput("points differ in dimension".into()));
    }
    let h2 = bandwidth * bandwidth;
    let converged: Vec<Vec<T>> = points
        .par_iter()
        .map(|p| climb(points, p.as_ref(), h2, tol, max_iter))
        .collect();

    let merge2 = h2 * T::lit(0.25);
    let mut reps: Vec<usize> = Vec::new();
    let mut sums: Vec<Vec<T>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut labels = Vec::with_capacity(points.len());
    for (i, pos) in converged.iter().enumerate() {
        let hit = reps
            .iter()
            .position(|&r| sq_dist(&converged[r], pos) < merge2);
        let label = match hit {
            Some(m) => m,
            None => {
                reps.push(i);
                sums.push(vec![T::zero(); dim]);
                counts.push(0);
                reps.len() - 1
            }
        };
        for (s, &v) in sums[label].iter_mut().zip(pos) {
            *s += v;
        }
        counts[label] += 1;
        labels.push(label);
    }
    let modes = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| {
            let inv = T::one() / T::lit(c as f64);
            s.into_iter().map(|v| v * inv).collect()
        })
        .collect();
    Ok(ClusterAssignment {
        labels,
        modes,
        bandwidth,
    })
}

/// Median of all pairwise Euclidean distances (mean of the middle two for
/// an even count). Zero for fewer than two points.
pub fn median_pairwise_distance<T: Real, P: AsRef<[T]> + Sync>(points: &[P]) -> T {
    let n = points.len();
    let mut d: Vec<T> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            ((i + 1)..n).map(move |j| sq_dist(points[i].as_ref(), points[j].as_ref()).sqrt())
        })
        .collect();
    if d.is_empty() {
        return T::zero();
    }
    let mid = d.len() / 2;
    let (_, &mut upper, _) = d.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite"));
    if d.len() % 2 == 1 {
        upper
    } else {
        let lower = d[..mid]
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max);
        (lower + upper) * T::lit(0.5)
    }
}

/// Bandwidth scaled from the median pairwise distance, floored at 1e-6 so
/// duplicate-heavy inputs still get a usable kernel.
pub fn auto_bandwidth<T: Real, P: AsRef<[T]> + Sync>(points: &[P], factor: T) -> T {
    (median_pairwise_distance(points) * factor).max(T::lit(1e-6))
}

/// Unit in which the minimum foreground-cluster size is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterSizeRule {
    /// Distinct frames covered, as a fraction of the frame count.
    #[default]
    Frames,
    /// Members, as a fraction of all records.
    Records,
}

/// `ceil(frac * total)`, tolerant of representation error in `frac`.
fn min_count(frac: f64, total: usize) -> usize {
    (frac * total as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Picks the foreground cluster: among clusters large enough under `rule`,
/// the one with the most members, ties to the lowest id.
///
/// `labels[r]` is the cluster of `records[r]`.
pub fn select_foreground<T: Real>(
    assign: &ClusterAssignment<T>,
    records: &[SegmentRecord<T>],
    n_frames: usize,
    min_frac: f64,
    rule: ClusterSizeRule,
) -> Option<usize> {
    assert_eq!(
        assign.labels.len(),
        records.len(),
        "assignment and records must be index-aligned"
    );
    let k = assign.num_clusters();
    let mut members = vec![0usize; k];
    let mut frames: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (&l, r) in assign.labels.iter().zip(records) {
        members[l] += 1;
        frames[l].push(r.frame_index);
    }
    let needed = match rule {
        ClusterSizeRule::Frames => min_count(min_frac, n_frames),
        ClusterSizeRule::Records => min_count(min_frac, records.len()),
    };
    let size = |c: usize| match rule {
        ClusterSizeRule::Frames => {
            let mut f = frames[c].clone();
            f.sort_unstable();
            f.dedup();
            f.len()
        }
        ClusterSizeRule::Records => members[c],
    };
    (0..k)
        .filter(|&c| members[c] > 0 && size(c) >= needed)
        .fold(None, |best: Option<usize>, c| match best {
            Some(b) if members[b] >= members[c] => Some(b),
            _ => Some(c),
        })
}

/// Writes each record's cluster label.
pub fn apply_labels<T: Real>(records: &mut [SegmentRecord<T>], assign: &ClusterAssignment<T>) {
    for (r, &l) in records.iter_mut().zip(&assign.labels) {
        r.cluster_label = Some(l);
    }
}

/// Per frame, the union of masks of records labeled `fg`; `None` where a
/// frame has no such record.
pub fn cluster_masks<T: Real>(
    records: &[SegmentRecord<T>],
    fg: usize,
    n_frames: usize,
) -> Result<Vec<Option<BinaryMask>>> {
    let mut out: Vec<Option<BinaryMask>> = vec![None; n_frames];
    for r in records.iter().filter(|r| r.cluster_label == Some(fg)) {
        let slot = out.get_mut(r.frame_index).ok_or_else(|| {
            Error::InvalidInput(format!("record frame {} out of range", r.frame_index))
        })?;
        match slot {
            Some(m) => m.union_in_place(&r.mask)?,
            None => *slot = Some(r.mask.clone()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synth::planted_blobs;
    use crate::raster::BoundingBox;
    use proptest::prelude::*;

    fn d(v: &[f64]) -> Descriptor<f64> {
        Descriptor::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&d(&[3.0, 4.0])).unwrap().values(), &[0.6, 0.8]);
        let e = d(&[0.0, 1.0, 0.0]);
        assert_eq!(l2_normalize(&e).unwrap(), e);
        assert!(matches!(l2_normalize(&d(&[0.0; 4])), Err(Error::ZeroVector)));
    }

    #[test]
    fn identical_points_one_cluster() {
        let pts = vec![vec![0.0, 1.0f64]; 7];
        let a = mean_shift(&pts, 0.3, 1e-3, 300).unwrap();
        assert_eq!(a.num_clusters(), 1);
        assert!(a.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn orthogonal_groups_separate() {
        let mut pts = vec![vec![1.0, 0.0f64]; 4];
        pts.extend(vec![vec![0.0, 1.0]; 3]);
        let a = mean_shift(&pts, 0.5, 1e-3, 300).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 0, 1, 1, 1]);
        assert_eq!(a.modes, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    /// Same partition up to renaming of ids.
    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        let mut fwd = std::collections::HashMap::new();
        let mut back = std::collections::HashMap::new();
        a.iter().zip(b).all(|(x, y)| {
            *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x
        })
    }

    #[test]
    fn recovers_planted_blobs() {
        let (pts, truth) = planted_blobs(42, 3, 20, 3, 0.02, 0.8);
        let a = mean_shift(&pts, 0.3, 1e-3, 300).unwrap();
        assert_eq!(a.num_clusters(), 3);
        assert!(same_partition(&a.labels, &truth));
    }

    #[test]
    fn works_in_f32() {
        let (pts, truth) = planted_blobs(9, 3, 10, 3, 0.02, 0.8);
        let pts32: Vec<Vec<f32>> = pts
            .iter()
            .map(|p| p.iter().map(|&v| v as f32).collect())
            .collect();
        let a = mean_shift(&pts32, 0.3f32, 1e-3, 300).unwrap();
        assert!(same_partition(&a.labels, &truth));
    }

    #[test]
    fn median_distance_even_and_odd() {
        // pairwise distances 1, 2, 3
        let pts = vec![vec![0.0f64], vec![1.0], vec![3.0]];
        assert_eq!(median_pairwise_distance(&pts), 2.0);
        // 1, 2, 3, 1, 2, 1 -> sorted 1,1,1,2,2,3
        let four = vec![vec![0.0f64], vec![1.0], vec![2.0], vec![3.0]];
        assert_eq!(median_pairwise_distance(&four), 1.5);
    }

    fn record(frame: usize) -> SegmentRecord<f64> {
        SegmentRecord {
            frame_index: frame,
            proposal_index: 0,
            mask: BinaryMask::from_box(4, 4, &BoundingBox { x: 0, y: 0, w: 1, h: 1 }),
            descriptor: d(&[1.0]),
            cluster_label: None,
        }
    }

    fn assignment(labels: Vec<usize>) -> ClusterAssignment<f64> {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        ClusterAssignment {
            labels,
            modes: vec![vec![0.0]; k],
            bandwidth: 1.0,
        }
    }

    #[test]
    fn spanning_cluster_wins() {
        let n = 10;
        let mut recs: Vec<_> = (0..n).map(record).collect();
        let mut labels = vec![1; n];
        for f in 0..3 {
            recs.push(record(f));
            labels.push(f + 2);
        }
        // cluster 0 is a single stray record
        recs.push(record(4));
        labels.push(0);
        let a = assignment(labels);
        assert_eq!(select_foreground(&a, &recs, n, 0.6, ClusterSizeRule::Frames), Some(1));
    }

    #[test]
    fn no_cluster_reaches_threshold() {
        let n = 10;
        let recs: Vec<_> = (0..n).map(record).collect();
        let labels = (0..n).map(|f| f / 5).collect();
        let a = assignment(labels);
        assert_eq!(select_foreground(&a, &recs, n, 0.6, ClusterSizeRule::Frames), None);
    }

    #[test]
    fn larger_of_two_candidates() {
        let n = 50;
        let mut recs = Vec::new();
        let mut labels = Vec::new();
        // both span 40 frames; cluster 0 has 37 members, cluster 1 has 40
        for f in 0..40 {
            recs.push(record(f));
            labels.push(1);
        }
        for f in 10..47 {
            recs.push(record(f));
            labels.push(0);
        }
        let a = assignment(labels);
        assert_eq!(select_foreground(&a, &recs, n, 0.6, ClusterSizeRule::Frames), Some(1));
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let recs: Vec<_> = (0..4).chain(0..4).map(record).collect();
        let a = assignment(vec![1, 1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(select_foreground(&a, &recs, 4, 0.6, ClusterSizeRule::Frames), Some(0));
    }

    #[test]
    fn record_fraction_rule() {
        // 6 of 10 records in cluster 0, all in one frame
        let recs: Vec<_> = (0..10).map(|i| record(if i < 6 { 0 } else { i })).collect();
        let a = assignment(vec![0, 0, 0, 0, 0, 0, 1, 2, 3, 4]);
        assert_eq!(select_foreground(&a, &recs, 10, 0.6, ClusterSizeRule::Frames), None);
        assert_eq!(select_foreground(&a, &recs, 10, 0.6, ClusterSizeRule::Records), Some(0));
    }

    #[test]
    fn masks_union_per_frame() {
        let mut a = record(0);
        a.mask = BinaryMask::from_box(4, 4, &BoundingBox { x: 0, y: 0, w: 2, h: 1 });
        a.cluster_label = Some(3);
        let mut b = record(0);
        b.mask = BinaryMask::from_box(4, 4, &BoundingBox { x: 0, y: 2, w: 2, h: 1 });
        b.cluster_label = Some(3);
        let mut c = record(1);
        c.cluster_label = Some(1);
        let mut single = record(2);
        single.mask = BinaryMask::from_box(4, 4, &BoundingBox { x: 0, y: 0, w: 4, h: 3 });
        single.cluster_label = Some(3);
        let masks = cluster_masks(&[a, b, c, single.clone()], 3, 3).unwrap();
        assert_eq!(masks[0].as_ref().unwrap().area(), 4);
        assert!(masks[1].is_none());
        assert_eq!(masks[2].as_ref(), Some(&single.mask));
    }

    proptest! {
        #[test]
        fn normalized_has_unit_norm(v in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            prop_assume!(v.iter().any(|&x| x.abs() > 1e-6));
            let n = l2_normalize(&d(&v)).unwrap().norm();
            prop_assert!((n - 1.0).abs() < 1e-6);
        }

        #[test]
        fn labels_partition_points(seed in 0u64..200, h in 0.05f64..2.0) {
            let (pts, _) = planted_blobs(seed, 3, 6, 3, 0.1, 0.8);
            let a = mean_shift(&pts, h, 1e-3, 300).unwrap();
            prop_assert_eq!(a.labels.len(), pts.len());
            prop_assert!(a.labels.iter().all(|&l| l < a.num_clusters()));
            prop_assert_eq!(a.sizes().iter().filter(|&&s| s > 0).count(), a.num_clusters());
        }

        #[test]
        fn wide_kernel_gives_one_cluster(seed in 0u64..200) {
            let (pts, _) = planted_blobs(seed, 3, 5, 3, 0.05, 0.8);
            // unit vectors are at most 2 apart
            let a = mean_shift(&pts, 2.0, 1e-3, 300).unwrap();
            prop_assert_eq!(a.num_clusters(), 1);
        }

        #[test]
        fn positive_rescaling_is_invisible(seed in 0u64..100, scale in 0.01f64..100.0) {
            let (pts, _) = planted_blobs(seed, 3, 6, 4, 0.03, 0.8);
            let run = |s: f64| {
                let ds: Vec<Descriptor<f64>> = pts
                    .iter()
                    .map(|p| l2_normalize(&d(&p.iter().map(|v| v * s).collect::<Vec<_>>())).unwrap())
                    .collect();
                mean_shift(&ds, 0.3, 1e-3, 300).unwrap().labels
            };
            prop_assert_eq!(run(1.0), run(scale));
        }

        #[test]
        fn selection_ignores_record_order(seed in 0u64..500) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // cluster 0: 9 frames, cluster 1: 7 frames, cluster 2: 2 frames
            let mut pairs: Vec<(usize, usize)> = (0..9).map(|f| (f, 0)).collect();
            pairs.extend((0..7).map(|f| (f, 1)));
            pairs.extend((3..5).map(|f| (f, 2)));
            let pick = |pairs: &[(usize, usize)]| {
                let recs: Vec<_> = pairs.iter().map(|&(f, _)| record(f)).collect();
                let a = assignment(pairs.iter().map(|&(_, l)| l).collect());
                select_foreground(&a, &recs, 10, 0.6, ClusterSizeRule::Frames)
            };
            let before = pick(&pairs);
            pairs.shuffle(&mut rng);
            prop_assert_eq!(before, Some(0));
            prop_assert_eq!(pick(&pairs), before);
        }
    }
}
