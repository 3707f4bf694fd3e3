//! Per-utterance spherical k-means over quantized targets.
//!
//! Distances are cosine distances `1 − cos(x, μ)`; centroids are kept at unit
//! norm. The resulting assignment decides which negatives share the
//! positive's cluster.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{cosine_eps, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// CF; 1 bypasses clustering.
    pub cluster_factor: usize,
    pub max_iterations: usize,
    /// Cluster the targets of both views of an utterance together.
    pub pooled: bool,
    /// In pooled mode, use the pooled point count in `ceil(n / CF)` rather
    /// than the single-view count.
    pub pooled_count_in_k: bool,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            cluster_factor: 16,
            max_iterations: 100,
            pooled: true,
            pooled_count_in_k: true,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cluster_factor == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "cluster_factor and max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn bypassed(&self) -> bool {
        self.cluster_factor == 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub assignments: Vec<usize>,
    /// `[k, D]`, unit rows.
    pub centroids: Tensor<f64>,
    pub k: usize,
    /// Sum of cosine distances to the assigned centroids.
    pub inertia: f64,
    /// Inertia after every assignment pass.
    pub history: Vec<f64>,
    /// Update steps performed.
    pub iterations: usize,
}

/// `ceil(nf / cf)`, at most `points`. `None` when `cf == 1`.
pub fn num_clusters(nf: usize, cf: usize, points: usize) -> Option<usize> {
    (cf > 1).then(|| nf.div_ceil(cf).clamp(1, points.max(1)))
}

fn normalized(p: &[f64]) -> Vec<f64> {
    let n = p.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-8;
    p.iter().map(|v| v / n).collect()
}

fn distance(x: &[f64], c: &[f64]) -> f64 {
    1.0 - cosine_eps(x, c, 1e-8)
}

/// Nearest centroid; ties keep `current` when it is among the nearest,
/// otherwise the lowest index wins.
fn nearest(x: &[f64], centroids: &[Vec<f64>], current: Option<usize>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = distance(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    if let Some(cur) = current {
        let d = distance(x, &centroids[cur]);
        if d <= best.1 {
            return (cur, d);
        }
    }
    best
}

/// Spherical k-means with k-means++ seeding under cosine distance. Stops
/// when an assignment pass changes nothing or after `max_iterations` update
/// steps; the returned assignment is always the nearest-centroid assignment
/// for the returned centroids.
pub fn kmeans_cosine(points: &[Vec<f64>], k: usize, max_iterations: usize, rng: &mut impl Rng) -> Result<ClusterAssignment> {
    let n = points.len();
    if n == 0 || k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k-means needs 1 <= k <= n, got k = {k}, n = {n}")));
    }
    let dim = points[0].len();
    let unit: Vec<Vec<f64>> = points.iter().map(|p| normalized(p)).collect();

    // k-means++: first uniform, then proportional to squared distance
    let mut centroids = vec![unit[rng.gen_range(0..n)].clone()];
    let mut dmin: Vec<f64> = unit.iter().map(|p| distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let weights: Vec<f64> = dmin.iter().map(|d| d.max(0.0).powi(2)).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if t < *w {
                    idx = i;
                    break;
                }
                t -= w;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(unit[pick].clone());
        for (i, p) in unit.iter().enumerate() {
            dmin[i] = dmin[i].min(distance(p, &centroids[centroids.len() - 1]));
        }
    }

    let mut assignments = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    for i in 0..n {
        (assignments[i], dists[i]) = nearest(&points[i], &centroids, None);
    }
    let mut history = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        update(&unit, &mut assignments, &mut dists, &mut centroids, dim);
        let mut changed = false;
        for i in 0..n {
            let (a, d) = nearest(&points[i], &centroids, Some(assignments[i]));
            changed |= a != assignments[i];
            assignments[i] = a;
            dists[i] = d;
        }
        history.push(dists.iter().sum());
        if !changed {
            break;
        }
    }
    Ok(ClusterAssignment {
        inertia: *history.last().unwrap(),
        centroids: Tensor::new(vec![k, dim], centroids.concat())?,
        assignments,
        k,
        history,
        iterations,
    })
}

/// Recomputes each centroid as the normalized mean direction of its
/// members. An empty cluster takes over the member point farthest from its
/// own centroid, as a singleton.
fn update(unit: &[Vec<f64>], assignments: &mut [usize], dists: &mut [f64], centroids: &mut [Vec<f64>], dim: usize) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let far = (0..unit.len())
            .filter(|i| counts[assignments[*i]] > 1)
            .max_by(|a, b| dists[*a].total_cmp(&dists[*b]).then(b.cmp(a)));
        if let Some(i) = far {
            counts[assignments[i]] -= 1;
            assignments[i] = j;
            counts[j] = 1;
            dists[i] = 0.0;
        }
    }
    for (j, c) in centroids.iter_mut().enumerate() {
        let mut sum = vec![0.0f64; dim];
        for (p, _) in unit.iter().zip(assignments.iter()).filter(|(_, a)| **a == j) {
            sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        if sum.iter().any(|v| *v != 0.0) {
            *c = normalized(&sum);
        }
    }
}

/// `flags[i]` is true when `negatives[i]` shares the positive's cluster.
pub fn same_cluster_mask(assignment: &ClusterAssignment, positive: usize, negatives: &[usize]) -> Result<Vec<bool>> {
    let ids = &assignment.assignments;
    let len = ids.len();
    let get = |i: usize| ids.get(i).copied().ok_or(Error::IndexOutOfRange { index: i, len });
    let k = get(positive)?;
    negatives.iter().map(|&i| Ok(get(i)? == k)).collect()
}

/// Cluster ids of an utterance's targets in each view.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceClusters {
    /// Cluster id of each step's target in the original view.
    pub original: Vec<usize>,
    /// Cluster id of each step's target in the augmented view.
    pub augmented: Vec<usize>,
    pub k: usize,
    pub detail: Vec<ClusterAssignment>,
}

/// Clusters the targets `q_t` and `q_t_prime` (rows, one per masked step) of
/// one utterance. In pooled mode both views form one point set; otherwise
/// each view is clustered on its own. `None` when clustering is bypassed.
pub fn cluster_utterance(
    config: &ClusterConfig,
    q_t: &[Vec<f64>],
    q_t_prime: &[Vec<f64>],
    nf: usize,
    rng: &mut impl Rng,
) -> Result<Option<UtteranceClusters>> {
    config.validate()?;
    if config.bypassed() {
        return Ok(None);
    }
    let m = q_t.len();
    if config.pooled {
        let points: Vec<Vec<f64>> = q_t.iter().chain(q_t_prime).cloned().collect();
        let count = if config.pooled_count_in_k { 2 * nf } else { nf };
        let k = num_clusters(count, config.cluster_factor, points.len()).expect("not bypassed");
        let a = kmeans_cosine(&points, k, config.max_iterations, rng)?;
        Ok(Some(UtteranceClusters {
            original: a.assignments[..m].to_vec(),
            augmented: a.assignments[m..].to_vec(),
            k,
            detail: vec![a],
        }))
    } else {
        let k = num_clusters(nf, config.cluster_factor, m).expect("not bypassed");
        let a = kmeans_cosine(q_t, k, config.max_iterations, rng)?;
        let b = kmeans_cosine(q_t_prime, k, config.max_iterations, rng)?;
        Ok(Some(UtteranceClusters {
            original: a.assignments.clone(),
            augmented: b.assignments.clone(),
            k,
            detail: vec![a, b],
        }))
    }
}
