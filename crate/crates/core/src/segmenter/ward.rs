//! Agglomerative clustering under Ward's minimum-variance criterion.

use crate::error::{Error, Result};

struct Cluster {
    mean: Vec<f64>,
    size: usize,
}

/// Increase in within-cluster sum of squares caused by merging `a` and `b`.
fn ward_cost(a: &Cluster, b: &Cluster) -> f64 {
    let sq: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    (a.size * b.size) as f64 / (a.size + b.size) as f64 * sq
}

/// Groups the rows of `points` into `n_groups` clusters.
///
/// Clusters are merged pairwise by smallest Ward cost; equal costs resolve to
/// the lexicographically lowest `(i, j)` pair, where a cluster's index is the
/// lowest row it contains. Returned labels are numbered in order of first
/// appearance.
pub fn ward_cluster(points: &[f32], dim: usize, n_groups: usize) -> Result<Vec<usize>> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::invalid("points do not form whole rows"));
    }
    let n = points.len() / dim;
    if n_groups == 0 || n < n_groups {
        return Err(Error::invalid(format!(
            "cannot form {n_groups} groups from {n} centroids"
        )));
    }
    let mut clusters: Vec<Cluster> = points
        .chunks_exact(dim)
        .map(|row| Cluster {
            mean: row.iter().map(|&v| v as f64).collect(),
            size: 1,
        })
        .collect();
    // Slot `i` always holds the cluster whose lowest member is row `i`.
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active = vec![true; n];
    let mut cost = vec![f64::INFINITY; n * n];
    for i in 0..n {
        for j in i + 1..n {
            cost[i * n + j] = ward_cost(&clusters[i], &clusters[j]);
        }
    }

    for _ in 0..n - n_groups {
        let mut best = (0, 0, f64::INFINITY);
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                if cost[i * n + j] < best.2 {
                    best = (i, j, cost[i * n + j]);
                }
            }
        }
        let (i, j, _) = best;
        let (a_size, b_size) = (clusters[i].size, clusters[j].size);
        let total = (a_size + b_size) as f64;
        let b_mean = std::mem::take(&mut clusters[j].mean);
        for (m, bm) in clusters[i].mean.iter_mut().zip(&b_mean) {
            *m = (*m * a_size as f64 + bm * b_size as f64) / total;
        }
        clusters[i].size += b_size;
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        active[j] = false;
        for o in (0..n).filter(|&o| active[o] && o != i) {
            let (lo, hi) = if o < i { (o, i) } else { (i, o) };
            cost[lo * n + hi] = ward_cost(&clusters[lo], &clusters[hi]);
        }
    }

    let mut labels = vec![0; n];
    for (g, slot) in (0..n).filter(|&i| active[i]).enumerate() {
        for &m in &members[slot] {
            labels[m] = g;
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separated_bundles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let centers = [[0.0f32, 0.0, 0.0], [20.0, 0.0, 0.0], [0.0, 0.0, 20.0]];
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for i in 0..30 {
            let c = (i * 7) % 3;
            for &v in &centers[c] {
                points.push(v + rng.random_range(-0.5f32..0.5));
            }
            truth.push(c);
        }
        let labels = ward_cluster(&points, 3, 3).unwrap();
        for a in 0..30 {
            for b in 0..30 {
                assert_eq!(truth[a] == truth[b], labels[a] == labels[b]);
            }
        }
    }

    #[test]
    fn three_points_three_groups() {
        let labels = ward_cluster(&[0.0, 5.0, 1.0], 1, 3).unwrap();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn duplicates_share_group() {
        let points = [0.0f32, 0.0, 3.0, 3.0, 0.0, 0.0, 9.0, 1.0, 3.0, 3.0, 5.0, 5.0];
        let labels = ward_cluster(&points, 2, 3).unwrap();
        assert_eq!(labels[0], labels[2]);
        assert_eq!(labels[1], labels[4]);
    }

    #[test]
    fn ties_break_to_lowest_pair() {
        // Four equally spaced points: (0,1), (1,2), (2,3) tie; (0,1) merges first.
        let labels = ward_cluster(&[0.0, 1.0, 2.0, 3.0], 1, 3).unwrap();
        assert_eq!(labels, vec![0, 0, 1, 2]);
    }

    #[test]
    fn too_few_centroids() {
        assert!(ward_cluster(&[0.0, 1.0], 1, 3).is_err());
    }
}
