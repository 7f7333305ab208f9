//! Lloyd's k-means with k-means++ seeding, deterministic given a seed.

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct KmeansResult {
    /// Cluster id per point, in `0..k`.
    pub labels: Vec<usize>,
    /// Final centroids, `[k, d]`.
    pub centroids: Tensor,
    /// Sum of squared distances to assigned centroids.
    pub objective: f64,
    /// Objective after each Lloyd iteration; non-increasing.
    pub objective_trace: Vec<f64>,
}

/// Cluster `points` (`[n, d]`) into `k` groups.
///
/// k-means++ initialization from the seeded stream, Lloyd iterations until
/// the assignment stops changing or `max_iters` is hit. Clusters that empty
/// out are reseeded to the point farthest from its assigned centroid.
pub fn kmeans(points: &Tensor, k: usize, seed: u64, max_iters: usize) -> Result<KmeansResult> {
    let n = points.rows();
    let d = points.cols();
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Config(format!("cannot form {k} clusters from {n} points")));
    }

    let mut rng = stream(seed, "kmeans", n as u64, k as u64);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut trace = Vec::new();

    for _ in 0..max_iters.max(1) {
        // Assignment step; ties break to the lowest cluster id.
        let mut changed = false;
        let mut objective = 0.0;
        for i in 0..n {
            let (best, dist) = nearest(points.row(i), &centroids);
            objective += dist;
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        trace.push(objective);

        // Update step.
        let mut sums = Tensor::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed to the point currently worst-served.
                let far = farthest_point(points, &labels, &centroids);
                centroids.row_mut(c).copy_from_slice(points.row(far));
                labels[far] = c;
                changed = true;
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }

        if !changed {
            break;
        }
    }

    // Final assignment against the last centroids.
    let mut objective = 0.0;
    for i in 0..n {
        let (best, dist) = nearest(points.row(i), &centroids);
        labels[i] = best;
        objective += dist;
    }
    trace.push(objective);

    Ok(KmeansResult { labels, centroids, objective, objective_trace: trace })
}

fn plus_plus_init(points: &Tensor, k: usize, rng: &mut impl Rng) -> Tensor {
    let n = points.rows();
    let d = points.cols();
    let mut centroids = Tensor::zeros(k, d);
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));

    let mut dists: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = dists.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in dists.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All remaining points coincide with chosen centroids.
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, dist) in dists.iter_mut().enumerate() {
            *dist = dist.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn nearest(point: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for c in 0..centroids.rows() {
        let dist = sq_dist(point, centroids.row(c));
        if dist < best_dist {
            best = c;
            best_dist = dist;
        }
    }
    (best, best_dist)
}

fn farthest_point(points: &Tensor, labels: &[usize], centroids: &Tensor) -> usize {
    let mut far = 0;
    let mut far_dist = -1.0;
    for i in 0..points.rows() {
        let dist = sq_dist(points.row(i), centroids.row(labels[i]));
        if dist > far_dist {
            far = i;
            far_dist = dist;
        }
    }
    far
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
