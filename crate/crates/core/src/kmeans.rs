//! Seeded k-means (k-means++ initialization, Lloyd iterations).
//!
//! Shared by the k-means baseline classifier and the `kmeans` emission
//! initialization of the HMM.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster of each input point.
    pub labels: Vec<usize>,
    /// Sum of squared distances after every assignment step.
    pub objective_trace: Vec<f64>,
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest_centroid(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn kmeans_pp_init(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    centroids.push(data[first].clone());
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &data[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(data[pick].clone());
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &data[pick]));
        }
    }
    centroids
}

pub fn kmeans(data: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if data.len() < k {
        return Err(Error::invalid(format!(
            "k-means with k = {k} needs at least {k} points, got {}",
            data.len()
        )));
    }
    let dim = data[0].len();
    if let Some(bad) = data.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionError {
            expected: dim,
            found: bad.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(data, k, &mut rng);
    let mut labels = vec![usize::MAX; data.len()];
    let mut objective_trace = Vec::new();

    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut objective = 0.0;
        for (label, x) in labels.iter_mut().zip(data) {
            let c = nearest_centroid(&centroids, x);
            objective += sq_dist(&centroids[c], x);
            if *label != c {
                *label = c;
                changed = true;
            }
        }
        objective_trace.push(objective);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&label, x) in labels.iter().zip(data) {
            counts[label] += 1;
            for (s, v) in sums[label].iter_mut().zip(x) {
                *s += v;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            // empty clusters keep their previous centroid
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }

    Ok(KMeansFit {
        centroids,
        labels,
        objective_trace,
    })
}
