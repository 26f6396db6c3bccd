//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_dimension, squared_distance};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 2,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Index of the nearest centroid; ties go to the lower index.
pub(crate) fn nearest(centroids: &[Vec<f64>], row: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(row, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng>(x: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.gen_range(0..x.len())];
    let mut d2: Vec<f64> = x.iter().map(|r| squared_distance(r, &x[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = x.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // guard against landing on a zero-weight tail after rounding
            while d2[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            pick
        } else {
            (0..x.len()).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (d, r) in d2.iter_mut().zip(x) {
            *d = d.min(squared_distance(r, &x[next]));
        }
    }
    chosen.into_iter().map(|i| x[i].clone()).collect()
}

pub fn kmeans_fit(x: &[Vec<f64>], params: &KMeansParams, seed: u64) -> Result<KMeansModel> {
    if params.k == 0 || x.len() < params.k {
        return Err(Error::InsufficientData(format!(
            "k-means with k={} on {} rows",
            params.k,
            x.len()
        )));
    }
    let dim = x[0].len();
    let mut rng = seed::rng(seed);
    let mut centroids = plus_plus_init(x, params.k, &mut rng);
    let mut assignment = vec![0usize; x.len()];
    let mut inertia_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iter {
        iterations += 1;
        let mut inertia = 0.0;
        for (a, row) in assignment.iter_mut().zip(x) {
            let (c, d) = nearest(&centroids, row);
            *a = c;
            inertia += d;
        }
        inertia_history.push(inertia);

        let mut sums = vec![vec![0.0; dim]; params.k];
        let mut counts = vec![0usize; params.k];
        for (&a, row) in assignment.iter().zip(x) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(row) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for ((centroid, sum), &count) in centroids.iter_mut().zip(sums).zip(&counts) {
            if count == 0 {
                continue;
            }
            let updated: Vec<f64> = sum.into_iter().map(|s| s / count as f64).collect();
            shift = shift.max(squared_distance(centroid, &updated).sqrt());
            *centroid = updated;
        }
        if shift < params.tol {
            converged = true;
            break;
        }
    }
    Ok(KMeansModel {
        centroids,
        inertia_history,
        iterations,
        converged,
    })
}

impl KMeansModel {
    pub fn dimension(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        check_dimension(x, self.dimension())?;
        Ok(x.iter().map(|r| nearest(&self.centroids, r).0).collect())
    }

    pub fn inertia(&self, x: &[Vec<f64>]) -> f64 {
        x.iter().map(|r| nearest(&self.centroids, r).1).sum()
    }
}
