//! K-means over instance embeddings with an adaptive cluster count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Table;
use crate::embed::{squared_distance, Embedding};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ClusterError {
    #[error("cannot cluster zero instances")]
    NoInstances,
    #[error("k = {k} is invalid for {n} vectors")]
    InvalidK { k: usize, n: usize },
    #[error("vector {index} has dimension {actual}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("table `{table_id}` has {rows} rows but {embeddings} embeddings were given")]
    LengthMismatch {
        table_id: String,
        rows: usize,
        embeddings: usize,
    },
    #[error("invalid clustering config: {0}")]
    Config(String),
}

fn default_r() -> usize {
    10
}
fn default_k_max() -> usize {
    5
}
fn default_max_iters() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-6
}
fn default_n_init() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Rows per cluster used to size `k`.
    #[serde(default = "default_r")]
    pub r: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Convergence threshold on the largest Euclidean centroid shift.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Independent k-means++ starts; the run with the lowest inertia is kept.
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            r: default_r(),
            k_max: default_k_max(),
            max_iters: default_max_iters(),
            tol: default_tol(),
            n_init: default_n_init(),
            seed: 0,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.r == 0 {
            return Err(ClusterError::Config("r must be at least 1".into()));
        }
        if self.k_max == 0 {
            return Err(ClusterError::Config("k_max must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(ClusterError::Config("max_iters must be at least 1".into()));
        }
        if self.n_init == 0 {
            return Err(ClusterError::Config("n_init must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(ClusterError::Config("tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// Result of a K-means run. Cluster `j` is `{i : labels[i] == j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment<T> {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: T,
    pub iterations_run: usize,
    /// Inertia after each assignment step, followed by the final inertia.
    pub inertia_history: Vec<T>,
}

impl<T: Scalar> ClusterAssignment<T> {
    /// Row positions of cluster `j`, ascending.
    pub fn members(&self, j: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == j)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// `k = min(ceil(m / r), k_max)`.
pub fn adaptive_k(m: usize, cfg: &ClusteringConfig) -> Result<usize, ClusterError> {
    if m == 0 {
        return Err(ClusterError::NoInstances);
    }
    cfg.validate()?;
    Ok(m.div_ceil(cfg.r).min(cfg.k_max))
}

fn nearest<T: Scalar>(point: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, squared_distance(point, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(point, c);
        // Strict comparison keeps the lowest index on ties.
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp_init<T: Scalar>(points: &[&[T]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, points[first]).as_f64())
        .collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // Every remaining point coincides with a chosen center.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.push(points[next].to_vec());
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p, points[next]).as_f64();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

fn means<T: Scalar>(points: &[&[T]], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<T>> {
    let mut sums = vec![vec![T::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, &x) in sums[l].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        let c = T::of(c as f64);
        for v in s.iter_mut() {
            *v /= c;
        }
    }
    sums
}

/// Moves the farthest point (from a cluster with at least two members) into each empty cluster.
fn repair_empty<T: Scalar>(points: &[&[T]], labels: &mut [usize], centroids: &mut [Vec<T>]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut best: Option<(usize, T)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[labels[i]]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("k <= n leaves a cluster with two or more members");
        counts[labels[i]] -= 1;
        labels[i] = j;
        counts[j] = 1;
        centroids[j] = points[i].to_vec();
    }
}

fn inertia<T: Scalar>(points: &[&[T]], labels: &[usize], centroids: &[Vec<T>]) -> T {
    points
        .iter()
        .zip(labels)
        .fold(T::zero(), |acc, (p, &l)| acc + squared_distance(p, &centroids[l]))
}

/// Lloyd's algorithm from `cfg.n_init` seeded k-means++ starts, keeping the lowest final inertia.
///
/// Each run stops once no centroid moves more than `cfg.tol` or after `cfg.max_iters` iterations.
/// Returned centroids are the means of their members and every cluster is non-empty. All starts
/// draw from one RNG seeded by `cfg.seed`; ties go to the earliest run.
pub fn kmeans<T: Scalar>(
    vectors: &[Embedding<T>],
    k: usize,
    cfg: &ClusteringConfig,
) -> Result<ClusterAssignment<T>, ClusterError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(ClusterError::InvalidK { k, n });
    }
    let dim = vectors[0].dim();
    for (index, v) in vectors.iter().enumerate() {
        if v.dim() != dim {
            return Err(ClusterError::DimensionMismatch {
                index,
                expected: dim,
                actual: v.dim(),
            });
        }
    }
    let points: Vec<&[T]> = vectors.iter().map(|v| v.values()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = lloyd(&points, k, dim, cfg, &mut rng);
    for _ in 1..cfg.n_init {
        let run = lloyd(&points, k, dim, cfg, &mut rng);
        if run.inertia < best.inertia {
            best = run;
        }
    }
    Ok(best)
}

fn lloyd<T: Scalar>(
    points: &[&[T]],
    k: usize,
    dim: usize,
    cfg: &ClusteringConfig,
    rng: &mut ChaCha8Rng,
) -> ClusterAssignment<T> {
    let mut centroids = kmeans_pp_init(points, k, rng);
    let mut labels = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations_run = 0;
    let tol = T::of(cfg.tol);

    for _ in 0..cfg.max_iters.max(1) {
        for (l, p) in labels.iter_mut().zip(points) {
            *l = nearest(p, &centroids).0;
        }
        repair_empty(points, &mut labels, &mut centroids);
        history.push(inertia(points, &labels, &centroids));

        let updated = means(points, &labels, k, dim);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(T::zero(), T::max);
        centroids = updated;
        iterations_run += 1;
        if shift <= tol {
            break;
        }
    }

    let final_inertia = inertia(points, &labels, &centroids);
    history.push(final_inertia);
    ClusterAssignment {
        k,
        labels,
        centroids,
        inertia: final_inertia,
        iterations_run,
        inertia_history: history,
    }
}

/// Clusters a table's instance embeddings with `k` from [`adaptive_k`].
pub fn cluster_table<T: Scalar>(
    table: &Table,
    embeddings: &[Embedding<T>],
    cfg: &ClusteringConfig,
) -> Result<ClusterAssignment<T>, ClusterError> {
    let m = table.len();
    if embeddings.len() != m {
        return Err(ClusterError::LengthMismatch {
            table_id: table.table_id.clone(),
            rows: m,
            embeddings: embeddings.len(),
        });
    }
    let k = adaptive_k(m, cfg)?;
    if m == 1 {
        let centroid = embeddings[0].values().to_vec();
        return Ok(ClusterAssignment {
            k: 1,
            labels: vec![0],
            centroids: vec![centroid],
            inertia: T::zero(),
            iterations_run: 0,
            inertia_history: vec![T::zero()],
        });
    }
    kmeans(embeddings, k, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ClusteringConfig {
        ClusteringConfig::default()
    }

    fn emb(points: &[[f64; 2]]) -> Vec<Embedding<f64>> {
        points.iter().map(|p| Embedding::new(p.to_vec())).collect()
    }

    #[test]
    fn adaptive_k_examples() {
        assert_eq!(adaptive_k(100, &cfg()), Ok(5));
        assert_eq!(adaptive_k(23, &cfg()), Ok(3));
        assert_eq!(adaptive_k(7, &cfg()), Ok(1));
        assert_eq!(adaptive_k(0, &cfg()), Err(ClusterError::NoInstances));
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = emb(&[[0.0, 0.0], [2.0, 0.0], [0.0, 4.0], [2.0, 4.0]]);
        let a = kmeans(&pts, 1, &cfg()).unwrap();
        assert_eq!(a.labels, vec![0; 4]);
        assert_eq!(a.centroids[0], vec![1.0, 2.0]);
        // Each point is at squared distance 1 + 4 from the mean.
        assert!((a.inertia - 20.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let pts = emb(&[[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [-3.0, 2.0]]);
        let a = kmeans(&pts, 4, &cfg()).unwrap();
        assert_eq!(a.inertia, 0.0);
        let mut sorted = a.labels.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn invalid_k_and_dims() {
        let pts = emb(&[[0.0, 0.0]]);
        assert_eq!(kmeans(&pts, 2, &cfg()), Err(ClusterError::InvalidK { k: 2, n: 1 }));
        assert_eq!(kmeans(&pts, 0, &cfg()), Err(ClusterError::InvalidK { k: 0, n: 1 }));
        let mixed = vec![Embedding::new(vec![0.0, 1.0]), Embedding::new(vec![1.0])];
        assert!(matches!(
            kmeans(&mixed, 1, &cfg()),
            Err(ClusterError::DimensionMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn identical_points_keep_both_clusters() {
        let pts: Vec<_> = (0..20).map(|_| Embedding::new(vec![0.6_f64, 0.8])).collect();
        let table = Table::new(
            "t",
            vec!["c".into()],
            (0..20).map(|i| vec![i.to_string()]).collect(),
        )
        .unwrap();
        let a = cluster_table(&table, &pts, &cfg()).unwrap();
        assert_eq!(a.k, 2);
        assert!(a.iterations_run <= 2);
        assert!(a.cluster_sizes().iter().all(|&s| s >= 1));
    }

    #[test]
    fn single_row_table_is_trivial() {
        let table = Table::new("t", vec!["c".into()], vec![vec!["x".into()]]).unwrap();
        let a = cluster_table(&table, &[Embedding::new(vec![1.0_f64, 0.0])], &cfg()).unwrap();
        assert_eq!((a.k, a.labels.clone(), a.iterations_run), (1, vec![0], 0));
    }

    #[test]
    fn length_mismatch() {
        let table = Table::new("t", vec!["c".into()], vec![vec!["x".into()]]).unwrap();
        assert!(matches!(
            cluster_table::<f64>(&table, &[], &cfg()),
            Err(ClusterError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn works_in_f32() {
        let pts: Vec<Embedding<f32>> = [[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]]
            .iter()
            .map(|p| Embedding::new(p.to_vec()))
            .collect();
        let a = kmeans(&pts, 2, &cfg()).unwrap();
        assert_eq!(a.labels[0], a.labels[1]);
        assert_eq!(a.labels[2], a.labels[3]);
        assert_ne!(a.labels[0], a.labels[2]);
    }

    #[test]
    fn restarts_never_raise_inertia() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Embedding<f64>> = (0..40)
            .map(|_| Embedding::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let one = ClusteringConfig { n_init: 1, ..cfg() };
        let single = kmeans(&pts, 4, &one).unwrap();
        let many = kmeans(&pts, 4, &cfg()).unwrap();
        assert!(many.inertia <= single.inertia);
        let zero = ClusteringConfig { n_init: 0, ..cfg() };
        assert!(matches!(zero.validate(), Err(ClusterError::Config(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let pts: Vec<_> = (0..30)
            .map(|i| Embedding::new(vec![(i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()]))
            .collect();
        let a = kmeans(&pts, 4, &cfg()).unwrap();
        let b = kmeans(&pts, 4, &cfg()).unwrap();
        assert_eq!(a, b);
    }
}
