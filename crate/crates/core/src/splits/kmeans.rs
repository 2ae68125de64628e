//! Lloyd's algorithm with k-means++ seeding.

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::rng::{stage_rng, StageRng};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    /// `false` when `max_iters` was reached before the centroid shift fell below `tol`.
    pub converged: bool,
    /// Sum of squared distances after every iteration.
    pub objective: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut StageRng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point already coincides with a centroid
            Err(_) => rng.random_range(0..points.len()),
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().unwrap()));
        }
    }
    centroids
}

/// Moves the point farthest from its own centroid (taken from a cluster with
/// at least two members) into every empty cluster.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &[Vec<f64>], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[labels[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        match far {
            Some(i) => labels[i] = empty,
            None => return,
        }
    }
}

fn means(points: &[Vec<f64>], labels: &[usize], k: usize, previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((s, n), prev)| {
            if n == 0 {
                prev.clone()
            } else {
                s.into_iter().map(|v| v / n as f64).collect()
            }
        })
        .collect()
}

pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::config("clusters", format!("k = {k} with {} points", points.len())));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut rng = stage_rng(seed, "kmeans");
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut labels = vec![0; points.len()];
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        for (l, p) in labels.iter_mut().zip(points) {
            *l = nearest(p, &centroids).0;
        }
        repair_empty(points, &mut labels, &centroids, k);
        let next = means(points, &labels, k, &centroids);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        objective.push(
            points
                .iter()
                .zip(&labels)
                .map(|(p, &l)| sq_dist(p, &centroids[l]))
                .sum(),
        );
        if shift < tol {
            converged = true;
            break;
        }
    }
    for (l, p) in labels.iter_mut().zip(points) {
        *l = nearest(p, &centroids).0;
    }
    Ok(KMeans {
        labels,
        centroids,
        iterations,
        converged,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cloud(center: &[f64], n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + sigma * Distribution::<f64>::sample(&StandardNormal, rng))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let km = kmeans(&pts, 1, 0, 50, 1e-9).unwrap();
        assert!((km.centroids[0][0] - 2.0).abs() < 1e-12);
        assert!((km.centroids[0][1] - 1.0).abs() < 1e-12);
        assert!(km.converged);
    }

    #[test]
    fn one_point_per_cluster() {
        let pts = vec![vec![0.0], vec![5.0], vec![9.0], vec![-3.0]];
        let km = kmeans(&pts, 4, 1, 50, 1e-9).unwrap();
        let sse: f64 = pts.iter().zip(&km.labels).map(|(p, &l)| sq_dist(p, &km.centroids[l])).sum();
        assert_eq!(sse, 0.0);
    }

    #[test]
    fn separated_clouds_match_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = cloud(&[0.0, 0.0, 0.0], 10, 1.0, &mut rng);
        pts.extend(cloud(&[100.0, 0.0, 0.0], 10, 1.0, &mut rng));
        let truth: Vec<usize> = (0..20).map(|i| i / 10).collect();
        let km = kmeans(&pts, 2, 3, 100, 1e-9).unwrap();
        // brute force: the partition equals ground truth up to label swap
        let same = km.labels.iter().zip(&truth).all(|(a, b)| a == b);
        let swapped = km.labels.iter().zip(&truth).all(|(a, b)| *a == 1 - b);
        assert!(same || swapped);
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut pts = Vec::new();
        for c in 0..5 {
            pts.extend(cloud(&[c as f64 * 2.0, (c % 2) as f64], 40, 0.8, &mut rng));
        }
        let km = kmeans(&pts, 5, 11, 200, 1e-12).unwrap();
        assert!(km.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn reports_nonconvergence_and_bad_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = cloud(&[0.0, 0.0], 200, 1.0, &mut rng);
        let km = kmeans(&pts, 8, 0, 1, 0.0).unwrap();
        assert!(!km.converged);
        assert!(kmeans(&pts[..3], 4, 0, 10, 1e-6).is_err());
    }

    #[test]
    fn duplicate_points_do_not_leave_empty_clusters() {
        let pts = vec![vec![1.0, 1.0]; 6];
        let km = kmeans(&pts, 3, 0, 20, 1e-9).unwrap();
        assert_eq!(km.centroids.len(), 3);
        assert!(km.centroids.iter().flatten().all(|v| *v == 1.0));
    }
}
