//! K-means with k-means++ seeding, silhouette scoring, and silhouette-based
//! selection of the number of clusters.
//!
//! All routines are deterministic for a given seed. Ties always go to the
//! smaller centroid index or the smaller k.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_K_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusteringError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the number of points ({n})")]
    TooManyClusters { k: usize, n: usize },
    #[error("point {index} has dimension {actual}, expected {expected}")]
    MixedDimensions {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("silhouette needs at least 2 clusters, got {0}")]
    SilhouetteNeedsTwo(usize),
    #[error("assignment has {labels} labels for {points} points")]
    LabelCount { labels: usize, points: usize },
    #[error("label {label} out of range for k = {k}")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("invalid k range [{k_min}, {k_max}] for {n} points (need 2 <= k_min <= k_max <= n - 1)")]
    InvalidRange { k_min: usize, k_max: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

/// Result of a k-means run. `labels[i]` is the cluster of the i-th input point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub seed: u64,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration.
    #[serde(default, skip_serializing)]
    pub inertia_history: Vec<f64>,
    #[serde(default, skip_serializing)]
    pub iterations: usize,
}

impl ClusterAssignment {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

fn check_dimensions<P: AsRef<[f64]>>(points: &[P]) -> Result<usize, ClusteringError> {
    let expected = points.first().map_or(0, |p| p.as_ref().len());
    for (index, p) in points.iter().enumerate() {
        let actual = p.as_ref().len();
        if actual != expected {
            return Err(ClusteringError::MixedDimensions {
                index,
                expected,
                actual,
            });
        }
    }
    Ok(expected)
}

/// Index of the nearest centroid; ties go to the smaller index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_plus_plus<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.push(points[first].as_ref().to_vec());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // Rounding can exhaust the loop; fall back to the last positive weight.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // Every remaining point coincides with a centroid.
            let unchosen: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            unchosen[rng.random_range(0..unchosen.len())]
        };
        chosen[next] = true;
        let c = points[next].as_ref().to_vec();
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p.as_ref(), &c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
        centroids.push(c);
    }
    centroids
}

fn inertia_of<P: AsRef<[f64]>>(points: &[P], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| squared_distance(p.as_ref(), &centroids[l]))
        .sum()
}

/// Moves a point into each empty cluster: the point farthest from its current
/// centroid, taken from a cluster that keeps at least one member.
fn reseed_empty<P: AsRef<[f64]>>(points: &[P], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = squared_distance(p.as_ref(), &centroids[labels[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("k <= n guarantees a cluster with two members");
        labels[i] = empty;
        centroids[empty] = points[i].as_ref().to_vec();
    }
}

fn update_centroids<P: AsRef<[f64]>>(points: &[P], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    // Fixed summation order keeps results bit-reproducible.
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p.as_ref()) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        let c = c as f64;
        s.iter_mut().for_each(|v| *v /= c);
    }
    sums
}

/// Lloyd's algorithm from a k-means++ start.
pub fn kmeans<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    seed: u64,
    params: KMeansParams,
) -> Result<ClusterAssignment, ClusteringError> {
    let n = points.len();
    if k == 0 {
        return Err(ClusteringError::ZeroK);
    }
    if k > n {
        return Err(ClusteringError::TooManyClusters { k, n });
    }
    let dim = check_dimensions(points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..params.max_iter {
        iterations += 1;
        for (i, p) in points.iter().enumerate() {
            labels[i] = nearest(p.as_ref(), &centroids).0;
        }
        reseed_empty(points, &mut labels, &mut centroids);
        let updated = update_centroids(points, &labels, k, dim);
        let movement = centroids
            .iter()
            .zip(&updated)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        centroids = updated;
        history.push(inertia_of(points, &labels, &centroids));
        if movement < params.tol {
            break;
        }
    }

    // Final assignment against the final centroids, unless it would empty a cluster.
    let mut final_labels = labels.clone();
    for (i, p) in points.iter().enumerate() {
        final_labels[i] = nearest(p.as_ref(), &centroids).0;
    }
    let mut sizes = vec![0usize; k];
    for &l in &final_labels {
        sizes[l] += 1;
    }
    if sizes.iter().all(|&s| s > 0) {
        labels = final_labels;
    }
    let inertia = inertia_of(points, &labels, &centroids);

    Ok(ClusterAssignment {
        k,
        seed,
        labels,
        centroids,
        inertia,
        inertia_history: history,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteScore {
    pub score: f64,
    /// Set when every cluster is a singleton (score is 0 by convention).
    pub degenerate: bool,
}

/// Per-point silhouette values. Singletons score 0.
pub fn silhouette_samples<P: AsRef<[f64]> + Sync>(
    points: &[P],
    labels: &[usize],
    k: usize,
) -> Result<Vec<f64>, ClusteringError> {
    if k < 2 {
        return Err(ClusteringError::SilhouetteNeedsTwo(k));
    }
    if labels.len() != points.len() {
        return Err(ClusteringError::LabelCount {
            labels: labels.len(),
            points: points.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(ClusteringError::LabelOutOfRange { label, k });
    }
    check_dimensions(points)?;
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let samples = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, q) in points.iter().enumerate() {
                if j != i {
                    sums[labels[j]] += euclidean(points[i].as_ref(), q.as_ref());
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    Ok(samples)
}

pub fn silhouette<P: AsRef<[f64]> + Sync>(
    points: &[P],
    labels: &[usize],
    k: usize,
) -> Result<SilhouetteScore, ClusteringError> {
    let samples = silhouette_samples(points, labels, k)?;
    let degenerate = !points.is_empty() && k >= points.len();
    let score = if samples.is_empty() {
        0.0
    } else {
        samples.iter().sum::<f64>() / samples.len() as f64
    };
    Ok(SilhouetteScore { score, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionReport {
    pub evaluated: BTreeMap<usize, f64>,
    pub chosen_k: usize,
    pub seed: u64,
}

/// Seed used for a given k within a sweep.
pub fn seed_for_k(seed: u64, k: usize) -> u64 {
    seed ^ k as u64
}

/// The k with the highest score; equal scores go to the smaller k.
pub fn best_k(scores: &BTreeMap<usize, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&k, &s) in scores {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((k, s)),
        }
    }
    best.map(|(k, _)| k)
}

pub fn default_k_max(n: usize) -> usize {
    DEFAULT_K_CAP.min(n.saturating_sub(1))
}

/// Runs k-means for each k in `[k_min, k_max]` and keeps the assignment with
/// the best silhouette. k values are evaluated in parallel; each uses its own
/// seed so results do not depend on scheduling.
pub fn select_k<P: AsRef<[f64]> + Sync>(
    points: &[P],
    k_min: usize,
    k_max: usize,
    seed: u64,
    params: KMeansParams,
) -> Result<(KSelectionReport, ClusterAssignment), ClusteringError> {
    let n = points.len();
    if k_min < 2 || k_min > k_max || k_max + 1 > n {
        return Err(ClusteringError::InvalidRange { k_min, k_max, n });
    }
    check_dimensions(points)?;
    let runs: Vec<(ClusterAssignment, f64)> = (k_min..=k_max)
        .into_par_iter()
        .map(|k| {
            let fit = kmeans(points, k, seed_for_k(seed, k), params)?;
            let s = silhouette(points, &fit.labels, k)?.score;
            Ok((fit, s))
        })
        .collect::<Result<_, ClusteringError>>()?;
    let evaluated: BTreeMap<usize, f64> = runs.iter().map(|(a, s)| (a.k, *s)).collect();
    let chosen_k = best_k(&evaluated).expect("range is nonempty");
    let best = runs
        .into_iter()
        .find(|(a, _)| a.k == chosen_k)
        .map(|(a, _)| a)
        .expect("chosen k was evaluated");
    Ok((
        KSelectionReport {
            evaluated,
            chosen_k,
            seed,
        },
        best,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn blobs(centers: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for c in centers {
            for _ in 0..per {
                pts.push(vec![
                    c[0] + spread * (rng.random::<f64>() - 0.5),
                    c[1] + spread * (rng.random::<f64>() - 0.5),
                ]);
            }
        }
        pts
    }

    #[test]
    fn k1_is_the_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let fit = kmeans(&pts, 1, 7, KMeansParams::default()).unwrap();
        assert_eq!(fit.centroids[0], vec![1.0, 1.0]);
        // Σ‖x − mean‖² = 2 + 2 + 4
        assert!((fit.inertia - 8.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let pts = blobs(&[[0.0, 0.0], [5.0, 5.0]], 3, 1.0, 1);
        let fit = kmeans(&pts, pts.len(), 3, KMeansParams::default()).unwrap();
        assert_eq!(fit.inertia, 0.0);
        assert!(fit.cluster_sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let fit = kmeans(&pts, 3, 0, KMeansParams::default()).unwrap();
        assert!(fit.cluster_sizes().iter().all(|&s| s >= 1));
        assert_eq!(fit.inertia, 0.0);
    }

    #[test]
    fn argument_errors() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(kmeans(&pts, 0, 0, KMeansParams::default()), Err(ClusteringError::ZeroK));
        assert_eq!(
            kmeans(&pts, 3, 0, KMeansParams::default()),
            Err(ClusteringError::TooManyClusters { k: 3, n: 2 })
        );
        let mixed = vec![vec![0.0, 0.0], vec![1.0]];
        assert!(matches!(
            kmeans(&mixed, 1, 0, KMeansParams::default()),
            Err(ClusteringError::MixedDimensions { index: 1, .. })
        ));
    }

    #[test]
    fn silhouette_conventions() {
        let pts = vec![vec![0.0], vec![1.0], vec![5.0]];
        let all_single = silhouette(&pts, &[0, 1, 2], 3).unwrap();
        assert_eq!(all_single.score, 0.0);
        assert!(all_single.degenerate);
        assert_eq!(silhouette(&pts, &[0, 0, 0], 1), Err(ClusteringError::SilhouetteNeedsTwo(1)));
    }

    #[test]
    fn tight_blobs_score_high() {
        let pts = blobs(&[[0.0, 0.0], [100.0, 0.0]], 10, 1.0, 4);
        let labels: Vec<usize> = (0..20).map(|i| i / 10).collect();
        assert!(silhouette(&pts, &labels, 2).unwrap().score > 0.9);
    }

    #[test]
    fn tie_break_prefers_smaller_k() {
        let scores: BTreeMap<usize, f64> = [(2, 0.5), (3, 0.5), (4, 0.4)].into_iter().collect();
        assert_eq!(best_k(&scores), Some(2));
        let scores: BTreeMap<usize, f64> = [(2, 0.5), (3, 0.6), (4, 0.6)].into_iter().collect();
        assert_eq!(best_k(&scores), Some(3));
    }

    #[test]
    fn single_k_range() {
        let pts = blobs(&[[0.0, 0.0], [10.0, 0.0]], 5, 1.0, 2);
        let (report, fit) = select_k(&pts, 2, 2, 11, KMeansParams::default()).unwrap();
        assert_eq!(report.evaluated.len(), 1);
        assert_eq!(report.chosen_k, 2);
        assert_eq!(fit.k, 2);
        assert!(select_k(&pts, 2, 10, 11, KMeansParams::default()).is_err());
        assert!(select_k(&pts, 1, 3, 11, KMeansParams::default()).is_err());
    }

    #[test]
    fn reproducible_bit_for_bit() {
        let pts = blobs(&[[0.0, 0.0], [3.0, 1.0], [1.0, 4.0]], 15, 3.0, 9);
        let a = kmeans(&pts, 4, 123, KMeansParams::default()).unwrap();
        let b = kmeans(&pts, 4, 123, KMeansParams::default()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn lloyd_invariants(seed in any::<u64>(), k in 1usize..6, n in 6usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random::<f64>() * 4.0).collect()).collect();
            let fit = kmeans(&pts, k, seed, KMeansParams::default()).unwrap();
            for w in fit.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
            }
            prop_assert!(fit.inertia >= 0.0);
            prop_assert!(fit.cluster_sizes().iter().all(|&s| s >= 1));
            if fit.iterations < DEFAULT_MAX_ITER {
                for (p, &l) in pts.iter().zip(&fit.labels) {
                    let d = squared_distance(p, &fit.centroids[l]);
                    for c in &fit.centroids {
                        prop_assert!(d <= squared_distance(p, c) + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn silhouette_bounds(seed in any::<u64>(), k in 2usize..5, n in 5usize..25) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            for s in silhouette_samples(&pts, &labels, k).unwrap() {
                prop_assert!((-1.0..=1.0).contains(&s));
            }
        }
    }
}
