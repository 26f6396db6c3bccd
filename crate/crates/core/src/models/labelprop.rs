//! Graph label spreading over a symmetric k-nearest-neighbour graph.
//!
//! Edge weights use a heat kernel `exp(-d² / (2σ²))` with σ the median
//! k-NN distance. The normalized affinity `S = D^{-1/2} W D^{-1/2}` drives
//! `F ← α S F + (1 - α) Y`, with labeled rows reset to their one-hot label
//! after every step. New rows are labeled from their k nearest training
//! rows' propagated distributions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dimension, squared_distance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelPropParams {
    pub k_graph: usize,
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Fraction of training labels kept visible by the evaluation harness.
    pub labeled_fraction: f64,
}

impl Default for LabelPropParams {
    fn default() -> Self {
        Self {
            k_graph: 10,
            alpha: 0.99,
            max_iter: 1000,
            tol: 1e-6,
            labeled_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelPropModel {
    pub nodes: Vec<Vec<f64>>,
    /// Propagated class scores per node, `[trustworthy, untrustworthy]`.
    pub scores: Vec<[f64; 2]>,
    pub bandwidth: f64,
    pub k_graph: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Indices and squared distances of the `k` nearest rows of `data` to
/// `query`, ascending, ties by index; `skip` excludes one row.
fn k_nearest(data: &[Vec<f64>], query: &[f64], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = data
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, r)| (i, squared_distance(query, r)))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    let k = k.min(d.len());
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d
}

fn heat(d2: f64, bandwidth: f64) -> f64 {
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

fn argmax(s: &[f64; 2]) -> u8 {
    u8::from(s[1] >= s[0])
}

/// Fits on all rows; `labels[i] = None` marks an unlabeled row.
pub fn labelprop_fit(x: &[Vec<f64>], labels: &[Option<u8>], params: &LabelPropParams) -> Result<LabelPropModel> {
    if x.len() != labels.len() || x.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: labels.len(),
        });
    }
    for class in [0u8, 1] {
        if !labels.contains(&Some(class)) {
            return Err(Error::SingleClass(format!(
                "label propagation has no labeled rows of class {class}"
            )));
        }
    }
    if !(0.0..1.0).contains(&params.alpha) || params.k_graph == 0 {
        return Err(Error::Config("label propagation needs 0 <= alpha < 1 and k >= 1".into()));
    }
    check_dimension(x, x[0].len())?;
    let n = x.len();

    let knn: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| k_nearest(x, &x[i], params.k_graph, Some(i)))
        .collect();
    let mut dists: Vec<f64> = knn.iter().flatten().map(|(_, d2)| d2.sqrt()).collect();
    dists.sort_by(f64::total_cmp);
    let median = if dists.is_empty() { 0.0 } else { dists[dists.len() / 2] };
    let bandwidth = if median > 0.0 { median } else { 1.0 };

    // symmetric adjacency: edge if either endpoint lists the other
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, list) in knn.iter().enumerate() {
        for &(j, d2) in list {
            let w = heat(d2, bandwidth);
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
    }
    for list in &mut adj {
        list.sort_by_key(|a| a.0);
        list.dedup_by_key(|e| e.0);
    }
    let degree: Vec<f64> = adj.iter().map(|l| l.iter().map(|e| e.1).sum()).collect();
    let norm: Vec<Vec<(usize, f64)>> = adj
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.iter()
                .map(|&(j, w)| (j, w / (degree[i] * degree[j]).sqrt()))
                .collect()
        })
        .collect();

    let y: Vec<[f64; 2]> = labels
        .iter()
        .map(|l| match l {
            Some(0) => [1.0, 0.0],
            Some(_) => [0.0, 1.0],
            None => [0.0, 0.0],
        })
        .collect();
    let mut f = y.clone();
    let mut next = vec![[0.0; 2]; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        iterations += 1;
        let mut change = 0.0f64;
        for i in 0..n {
            let v = if labels[i].is_some() {
                y[i]
            } else {
                let mut acc = [0.0; 2];
                for &(j, s) in &norm[i] {
                    acc[0] += s * f[j][0];
                    acc[1] += s * f[j][1];
                }
                [
                    params.alpha * acc[0] + (1.0 - params.alpha) * y[i][0],
                    params.alpha * acc[1] + (1.0 - params.alpha) * y[i][1],
                ]
            };
            change = change.max((v[0] - f[i][0]).abs()).max((v[1] - f[i][1]).abs());
            next[i] = v;
        }
        std::mem::swap(&mut f, &mut next);
        if change < params.tol {
            converged = true;
            break;
        }
    }
    Ok(LabelPropModel {
        nodes: x.to_vec(),
        scores: f,
        bandwidth,
        k_graph: params.k_graph,
        iterations,
        converged,
    })
}

impl LabelPropModel {
    pub fn dimension(&self) -> usize {
        self.nodes[0].len()
    }

    /// Labels of the training rows (ties and unreached nodes go to class 1).
    pub fn transductive_labels(&self) -> Vec<u8> {
        self.scores.iter().map(argmax).collect()
    }

    pub fn classify(&self, x: &[Vec<f64>]) -> Result<Vec<u8>> {
        check_dimension(x, self.dimension())?;
        Ok(x.par_iter()
            .map(|row| {
                let mut acc = [0.0; 2];
                for (j, d2) in k_nearest(&self.nodes, row, self.k_graph, None) {
                    let w = heat(d2, self.bandwidth);
                    acc[0] += w * self.scores[j][0];
                    acc[1] += w * self.scores[j][1];
                }
                argmax(&acc)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn fully_labeled_keeps_labels() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i % 3 == 0)).collect();
        let labels: Vec<Option<u8>> = y.iter().map(|&v| Some(v)).collect();
        let m = labelprop_fit(&x, &labels, &LabelPropParams::default()).unwrap();
        assert_eq!(m.transductive_labels(), y);
        assert!(m.converged);
    }

    #[test]
    fn blobs_take_their_seed_label() {
        let mut rng = seed::rng(4);
        let mut x = Vec::new();
        let mut truth = Vec::new();
        for i in 0..60 {
            let c = if i < 30 { 0.0 } else { 100.0 };
            x.push(vec![c + rng.gen::<f64>(), c + rng.gen::<f64>()]);
            truth.push(u8::from(i >= 30));
        }
        let mut labels = vec![None; 60];
        labels[3] = Some(0);
        labels[41] = Some(1);
        let params = LabelPropParams { k_graph: 5, ..Default::default() };
        let m = labelprop_fit(&x, &labels, &params).unwrap();
        assert_eq!(m.transductive_labels(), truth);
        // clamped rows never move
        assert_eq!(m.scores[3], [1.0, 0.0]);
        assert_eq!(m.scores[41], [0.0, 1.0]);
        assert_eq!(m.classify(&[vec![0.5, 0.5], vec![100.5, 100.2]]).unwrap(), vec![0, 1]);
    }

    #[test]
    fn needs_labels_of_both_classes() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(labelprop_fit(&x, &[None, None], &LabelPropParams::default()).is_err());
        assert!(labelprop_fit(&x, &[Some(1), None], &LabelPropParams::default()).is_err());
    }

    #[test]
    fn contraction_reaches_tolerance() {
        let mut rng = seed::rng(8);
        let x: Vec<Vec<f64>> = (0..150).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let labels: Vec<Option<u8>> = (0..150)
            .map(|i| if i % 10 == 0 { Some(u8::from(x[i][0] > 0.5)) } else { None })
            .collect();
        let params = LabelPropParams { alpha: 0.9, ..Default::default() };
        let m = labelprop_fit(&x, &labels, &params).unwrap();
        assert!(m.converged, "{} iterations", m.iterations);
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = l {
                assert_eq!(m.transductive_labels()[i], *c);
            }
        }
    }
}
