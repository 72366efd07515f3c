//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KMeansFit {
    /// `k × dim`, row-major.
    pub centroids: Vec<f32>,
    pub dim: usize,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after seeding, then after every Lloyd iteration.
    pub history: Vec<f64>,
}

impl KMeansFit {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }
}

pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lower index.
pub(crate) fn nearest(x: &[f32], centroids: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[f32], centroids: &[f32], dim: usize) -> Vec<(usize, f64)> {
    points
        .par_chunks_exact(dim)
        .map(|x| nearest(x, centroids, dim))
        .collect()
}

fn kmeans_plus_plus(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    if target < w {
                        chosen = Some(i);
                        break;
                    }
                    target -= w;
                }
            }
            // Rounding can exhaust the loop; fall back to the last positive weight.
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Clusters the rows of `points` (`n × dim`, row-major) into `k` centroids.
///
/// Deterministic for a fixed seed. Clusters that lose all their points are
/// re-seeded at the point farthest from its current centroid.
pub fn kmeans_fit(points: &[f32], dim: usize, k: usize, seed: u64) -> Result<KMeansFit> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::invalid("points do not form whole rows"));
    }
    let n = points.len() / dim;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} frames cannot fill {k} clusters")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, dim, k, &mut rng);

    let mut nearest_now = assign(points, &centroids, dim);
    let mut inertia: f64 = nearest_now.iter().map(|p| p.1).sum();
    let mut history = vec![inertia];

    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (x, &(j, _)) in points.chunks_exact(dim).zip(&nearest_now) {
            counts[j] += 1;
            for (s, &v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(x) {
                *s += v as f64;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                for d in 0..dim {
                    centroids[j * dim + d] = (sums[j * dim + d] * inv) as f32;
                }
            }
        }
        // Re-seed empty clusters, each at the currently worst-served point.
        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        if !empty.is_empty() {
            let mut dists: Vec<f64> = points
                .chunks_exact(dim)
                .zip(&nearest_now)
                .map(|(x, &(j, _))| sq_dist(x, &centroids[j * dim..(j + 1) * dim]))
                .collect();
            for j in empty {
                let far = dists
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &d)| if d > dists[best] { i } else { best });
                log::debug!("k-means: re-seeding empty cluster {j} at point {far}");
                centroids[j * dim..(j + 1) * dim].copy_from_slice(&points[far * dim..(far + 1) * dim]);
                dists[far] = 0.0;
            }
        }

        nearest_now = assign(points, &centroids, dim);
        let next: f64 = nearest_now.iter().map(|p| p.1).sum();
        history.push(next);
        let improvement = inertia - next;
        inertia = next;
        if improvement <= RELATIVE_TOLERANCE * inertia.max(f64::MIN_POSITIVE) {
            break;
        }
    }

    Ok(KMeansFit {
        centroids,
        dim,
        assignment: nearest_now.iter().map(|p| p.0).collect(),
        inertia,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn distinct_points_each_get_a_centroid() {
        let points: Vec<f32> = (0..100).flat_map(|i| [i as f32, (i * i % 17) as f32]).collect();
        let fit = kmeans_fit(&points, 2, 100, 3).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut used = fit.assignment.clone();
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), 100);
    }

    #[test]
    fn recovers_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let centers = [[0.0f32, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..200 {
                points.push(center[0] + noise.sample(&mut rng) as f32);
                points.push(center[1] + noise.sample(&mut rng) as f32);
                truth.push(c);
            }
        }
        // Oracle: the empirical blob means.
        let mut means = [[0.0f64; 2]; 3];
        for (i, &c) in truth.iter().enumerate() {
            means[c][0] += points[2 * i] as f64 / 200.0;
            means[c][1] += points[2 * i + 1] as f64 / 200.0;
        }
        let fit = kmeans_fit(&points, 2, 3, 5).unwrap();
        for m in &means {
            let best = (0..3)
                .map(|j| {
                    let c = fit.centroid(j);
                    ((c[0] as f64 - m[0]).powi(2) + (c[1] as f64 - m[1]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "blob mean {m:?} off by {best}");
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points: Vec<f32> = (0..3000).map(|_| rng.random::<f32>()).collect();
        let a = kmeans_fit(&points, 3, 100, 42).unwrap();
        let b = kmeans_fit(&points, 3, 100, 42).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignment, b.assignment);
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points: Vec<f32> = (0..2000).map(|_| rng.random::<f32>()).collect();
        let fit = kmeans_fit(&points, 4, 20, 0).unwrap();
        for w in fit.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
        assert!(fit.inertia <= fit.history[0]);
    }

    #[test]
    fn too_few_frames() {
        assert!(kmeans_fit(&[0.0, 1.0], 1, 3, 0).is_err());
        assert!(kmeans_fit(&[0.0, 1.0], 1, 0, 0).is_err());
    }

    #[test]
    fn duplicate_points_leave_no_empty_cluster_behind() {
        // Five copies of each of two points but k = 4: some clusters must share.
        let mut points = vec![0.0f32; 5];
        points.extend([1.0f32; 5]);
        points.extend([0.5f32, 0.25]);
        let fit = kmeans_fit(&points, 1, 4, 1).unwrap();
        assert_eq!(fit.assignment.len(), 12);
        assert!(fit.inertia.is_finite());
    }
}
