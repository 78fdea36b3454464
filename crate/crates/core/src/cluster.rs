//! k-means over the rows of a connectivity matrix, elbow selection of k and
//! block reordering of the matrix by cluster.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_LLOYD_ITER: usize = 300;

/// Partition of the points into `k` clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    /// Cluster id per point, in `0..k`.
    pub labels: Vec<usize>,
    pub wcss: f64,
    /// WCSS of the best solution for `k = 1, 2, …`, when a curve was run.
    pub wcss_curve: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rows_of(points: &DMatrix<f64>) -> Vec<Vec<f64>> {
    points
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect()
}

/// Nearest centroid (lowest index on ties) and its squared distance.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = sq_dist(p, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

#[derive(Debug, Clone)]
struct Solution {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    wcss: f64,
}

/// Lloyd iterations from the given centroids until assignments are stable.
///
/// An emptied cluster is moved onto the point farthest from its centroid,
/// which strictly lowers the objective, so WCSS never increases between
/// iterations.
fn lloyd(pts: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Solution {
    let k = centroids.len();
    let dim = pts[0].len();
    let mut labels = vec![usize::MAX; pts.len()];
    for _ in 0..MAX_LLOYD_ITER {
        let mut changed = false;
        for (i, p) in pts.iter().enumerate() {
            let (c, _) = nearest(p, &centroids);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in pts.iter().zip(&labels) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = farthest_point(pts, &labels, &centroids);
                centroids[c] = pts[far].clone();
                labels[far] = c;
            }
        }
    }
    let wcss = pts
        .iter()
        .zip(&labels)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum();
    Solution {
        centroids,
        labels,
        wcss,
    }
}

/// Point with the largest distance to its assigned centroid (lowest index
/// on ties).
fn farthest_point(pts: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, -1.0);
    for (i, p) in pts.iter().enumerate() {
        let d = match labels[i] {
            usize::MAX => nearest(p, centroids).1,
            c => sq_dist(p, &centroids[c]),
        };
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// k-means++ seeding: first centroid uniform, then proportional to the
/// squared distance to the nearest chosen centroid.
fn seed_plus_plus(pts: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = pts.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, &pts[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            // all remaining points coincide with a centroid
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        for (d, p) in d2.iter_mut().zip(pts) {
            *d = d.min(sq_dist(p, &pts[pick]));
        }
    }
    chosen.into_iter().map(|i| pts[i].clone()).collect()
}

fn best_of(pts: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, n_init: usize) -> Solution {
    let mut best: Option<Solution> = None;
    for _ in 0..n_init.max(1) {
        let s = lloyd(pts, seed_plus_plus(pts, k, rng));
        if best.as_ref().is_none_or(|b| s.wcss < b.wcss) {
            best = Some(s);
        }
    }
    best.expect("at least one restart")
}

fn check_k(n_points: usize, k: usize) -> Result<()> {
    if n_points == 0 {
        return Err(Error::EmptyInput("no points to cluster".into()));
    }
    if k == 0 {
        return Err(Error::range("k", "must be >= 1"));
    }
    if k > n_points {
        return Err(Error::KExceedsPoints { k, n_points });
    }
    Ok(())
}

/// Best of `n_init` seeded k-means runs on the rows of `points`.
pub fn kmeans(
    points: &DMatrix<f64>,
    k: usize,
    seed: u64,
    n_init: usize,
) -> Result<ClusterAssignment> {
    check_k(points.nrows(), k)?;
    let pts = rows_of(points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = best_of(&pts, k, &mut rng, n_init);
    Ok(ClusterAssignment {
        k,
        labels: s.labels,
        wcss: s.wcss,
        wcss_curve: vec![],
    })
}

/// Best solutions for `k = 1..=k_max`.
///
/// Besides the `n_init` random restarts, each `k` also tries the `k - 1`
/// solution with the farthest point added as a centroid. That candidate
/// never scores worse than `k - 1`, so the returned WCSS values are
/// non-increasing in `k`.
pub fn wcss_curve(
    points: &DMatrix<f64>,
    k_max: usize,
    seed: u64,
    n_init: usize,
) -> Result<Vec<ClusterAssignment>> {
    check_k(points.nrows(), k_max)?;
    let pts = rows_of(points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<ClusterAssignment> = Vec::with_capacity(k_max);
    let mut prev: Option<Solution> = None;
    for k in 1..=k_max {
        let mut best = best_of(&pts, k, &mut rng, n_init);
        if let Some(p) = &prev {
            let far = farthest_point(&pts, &p.labels, &p.centroids);
            let mut c = p.centroids.clone();
            c.push(pts[far].clone());
            let warm = lloyd(&pts, c);
            if warm.wcss < best.wcss {
                best = warm;
            }
        }
        out.push(ClusterAssignment {
            k,
            labels: best.labels.clone(),
            wcss: best.wcss,
            wcss_curve: vec![],
        });
        prev = Some(best);
    }
    let curve: Vec<f64> = out.iter().map(|a| a.wcss).collect();
    for a in &mut out {
        a.wcss_curve = curve.clone();
    }
    Ok(out)
}

/// Elbow of a WCSS curve (`curve[0]` is `k = 1`).
///
/// Picks the interior `k` farthest from the chord joining the first and last
/// points; near-ties (relative 1e-9) go to the smaller `k`. The perpendicular
/// distance is proportional to the vertical gap to the chord, so the choice
/// does not depend on the axis scales.
pub fn elbow_select(curve: &[f64]) -> Result<usize> {
    let k_max = curve.len();
    if k_max < 3 {
        return Err(Error::CurveTooShort(k_max));
    }
    let (w1, wn) = (curve[0], curve[k_max - 1]);
    let dx = (k_max - 1) as f64;
    let dy = wn - w1;
    let len = (dx * dx + dy * dy).sqrt();
    let dist = |k: usize| {
        let x = (k - 1) as f64;
        ((dy * x - dx * (curve[k - 1] - w1)) / len).abs()
    };
    let tol = 1e-9 * (w1.abs().max(wn.abs()).max(1.0));
    let mut best = 2;
    for k in 3..k_max {
        if dist(k) > dist(best) + tol {
            best = k;
        }
    }
    Ok(best)
}

/// Runs the curve up to `k_max` and returns the elbow solution with the
/// curve attached.
pub fn cluster_elbow(
    points: &DMatrix<f64>,
    k_max: usize,
    seed: u64,
    n_init: usize,
) -> Result<ClusterAssignment> {
    let k_max = k_max.min(points.nrows());
    let solutions = wcss_curve(points, k_max, seed, n_init)?;
    let k = elbow_select(&solutions[0].wcss_curve)?;
    Ok(solutions.into_iter().nth(k - 1).expect("k within curve"))
}

/// Symmetric permutation putting cluster members next to each other.
///
/// Clusters appear in id order, members in original order. Returns the
/// permuted matrix and `perm`, where new position `i` holds old index
/// `perm[i]`.
pub fn reorder_adjacency(
    m: &DMatrix<f64>,
    ca: &ClusterAssignment,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let n = m.nrows();
    if m.ncols() != n || ca.labels.len() != n {
        return Err(Error::SizeMismatch(format!(
            "{}x{} matrix with {} labels",
            m.nrows(),
            m.ncols(),
            ca.labels.len()
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by_key(|&i| (ca.labels[i], i));
    Ok((permute(m, &perm), perm))
}

/// `out[i][j] = m[perm[i]][perm[j]]`.
pub fn permute(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(perm.len(), perm.len(), |i, j| m[(perm[i], perm[j])])
}

/// Inverse of a permutation.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(centres: &[(f64, f64)], n_per: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = centres.len() * n_per;
        let mut m = DMatrix::zeros(n, 2);
        let mut truth = Vec::with_capacity(n);
        for (c, &(x, y)) in centres.iter().enumerate() {
            for k in 0..n_per {
                let i = c * n_per + k;
                m[(i, 0)] = x + 0.3 * rng.sample::<f64, _>(StandardNormal);
                m[(i, 1)] = y + 0.3 * rng.sample::<f64, _>(StandardNormal);
                truth.push(c);
            }
        }
        (m, truth)
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
    }

    #[test]
    fn k_equal_to_points_has_zero_wcss() {
        let (m, _) = blobs(&[(0.0, 0.0), (5.0, 5.0)], 4, 1);
        assert_eq!(kmeans(&m, 8, 0, 3).unwrap().wcss, 0.0);
        assert!(matches!(
            kmeans(&m, 9, 0, 3),
            Err(Error::KExceedsPoints { .. })
        ));
    }

    #[test]
    fn identical_points_single_cluster() {
        let m = DMatrix::from_element(6, 3, 2.5);
        let a = kmeans(&m, 1, 0, 1).unwrap();
        assert_eq!(a.wcss, 0.0);
        assert!(a.labels.iter().all(|&l| l == 0));
        // more clusters than distinct points still works
        assert_eq!(kmeans(&m, 3, 0, 1).unwrap().wcss, 0.0);
    }

    #[test]
    fn recovers_three_blobs() {
        let (m, truth) = blobs(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)], 30, 2);
        let a = kmeans(&m, 3, 42, 5).unwrap();
        assert!(same_partition(&a.labels, &truth));
    }

    #[test]
    fn lloyd_never_increases_wcss() {
        let (m, _) = blobs(&[(0.0, 0.0), (3.0, 0.0), (0.0, 3.0), (3.0, 3.0)], 20, 3);
        let pts = rows_of(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut centroids = seed_plus_plus(&pts, 4, &mut rng);
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let s = lloyd_one_step(&pts, &centroids);
            assert!(s.1 <= last + 1e-9);
            last = s.1;
            centroids = s.0;
        }
    }

    // single assignment + update round, for the monotonicity check
    fn lloyd_one_step(pts: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
        let k = centroids.len();
        let labels: Vec<usize> = pts.iter().map(|p| nearest(p, centroids).0).collect();
        let mut next = centroids.to_vec();
        for (c, slot) in next.iter_mut().enumerate().take(k) {
            let members: Vec<&Vec<f64>> = pts
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p)
                .collect();
            if !members.is_empty() {
                *slot = (0..pts[0].len())
                    .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
                    .collect();
            }
        }
        let wcss = pts
            .iter()
            .zip(&labels)
            .map(|(p, &c)| sq_dist(p, &next[c]))
            .sum();
        (next, wcss)
    }

    #[test]
    fn curve_is_non_increasing() {
        let (m, _) = blobs(&[(0.0, 0.0), (4.0, 1.0), (1.0, 5.0), (6.0, 6.0)], 15, 4);
        let curve = &wcss_curve(&m, 10, 7, 3).unwrap()[0].wcss_curve;
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn elbow_examples() {
        let (m, truth) = blobs(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)], 30, 6);
        let a = cluster_elbow(&m, 10, 42, 5).unwrap();
        assert_eq!(a.k, 3);
        assert!(same_partition(&a.labels, &truth));
        // straight line: every interior distance is zero, smallest k wins
        let line: Vec<f64> = (0..10).map(|k| 100.0 - 10.0 * k as f64).collect();
        assert_eq!(elbow_select(&line).unwrap(), 2);
        assert!(matches!(
            elbow_select(&[3.0, 1.0]),
            Err(Error::CurveTooShort(2))
        ));
    }

    #[test]
    fn elbow_hand_worked() {
        // chord from (1, 100) to (5, 0): gaps 75-10, 50-5, 25-2 → k = 2
        assert_eq!(elbow_select(&[100.0, 10.0, 5.0, 2.0, 0.0]).unwrap(), 2);
        assert_eq!(elbow_select(&[100.0, 80.0, 10.0, 5.0, 0.0]).unwrap(), 3);
    }

    #[test]
    fn reorder_recovers_blocks() {
        let labels = [1, 0, 1, 0, 0, 1];
        let m = DMatrix::from_fn(6, 6, |i, j| f64::from(labels[i] == labels[j]));
        let ca = ClusterAssignment {
            k: 2,
            labels: labels.to_vec(),
            wcss: 0.0,
            wcss_curve: vec![],
        };
        let (r, perm) = reorder_adjacency(&m, &ca).unwrap();
        assert_eq!(perm, vec![1, 3, 4, 0, 2, 5]);
        let expected = DMatrix::from_fn(6, 6, |i, j| f64::from((i < 3) == (j < 3)));
        assert_eq!(r, expected);
        assert_eq!(permute(&r, &invert_permutation(&perm)), m);
    }

    #[test]
    fn reorder_identity_and_size_check() {
        let m = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64);
        let ca = ClusterAssignment {
            k: 2,
            labels: vec![0, 0, 1, 1],
            wcss: 0.0,
            wcss_curve: vec![],
        };
        let (r, perm) = reorder_adjacency(&m, &ca).unwrap();
        assert_eq!(r, m);
        assert_eq!(perm, vec![0, 1, 2, 3]);
        let bad = ClusterAssignment {
            labels: vec![0; 3],
            ..ca
        };
        assert!(matches!(
            reorder_adjacency(&m, &bad),
            Err(Error::SizeMismatch(_))
        ));
    }
}
