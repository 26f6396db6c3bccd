//! Linear SVM trained by Pegasos-style stochastic subgradient descent.
//!
//! Minimizes `λ/2 (‖w‖² + b²) + mean_i max(0, 1 - y_i (w·x_i + b))` with
//! `λ = 1 / (C n)`. The bias is handled as a weight on a constant feature.
//! The returned parameters are the average of the iterates visited during
//! the final epoch.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_dimension, dot};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, epochs: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub initial_objective: f64,
    pub objective: f64,
    pub epochs: usize,
}

fn signed(label: u8) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Regularized hinge objective at `(w, b)`.
pub fn svm_objective(x: &[Vec<f64>], y: &[u8], w: &[f64], b: f64, lambda: f64) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &l)| (1.0 - signed(l) * (dot(w, row) + b)).max(0.0))
        .sum::<f64>()
        / x.len() as f64;
    0.5 * lambda * (dot(w, w) + b * b) + hinge
}

pub fn svm_fit(x: &[Vec<f64>], y: &[u8], params: &SvmParams, seed_value: u64) -> Result<LinearSvm> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::SingleClass("linear SVM".into()));
    }
    if !(params.c > 0.0) || params.epochs == 0 {
        return Err(Error::Config("SVM needs C > 0 and at least one epoch".into()));
    }
    let n = x.len();
    let dim = x[0].len();
    check_dimension(x, dim)?;
    let lambda = 1.0 / (params.c * n as f64);
    let radius = 1.0 / lambda.sqrt();

    // w[dim] is the bias weight on a constant 1 feature
    let mut w = vec![0.0; dim + 1];
    let mut avg = vec![0.0; dim + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed_value);
    let mut t = 0u64;
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let last = epoch + 1 == params.epochs;
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let yi = signed(y[i]);
            let margin = yi * (dot(&w[..dim], &x[i]) + w[dim]);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for (wj, xj) in w.iter_mut().zip(&x[i]) {
                    *wj += eta * yi * xj;
                }
                w[dim] += eta * yi;
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
            if last {
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += v;
                }
            }
        }
    }
    avg.iter_mut().for_each(|a| *a /= n as f64);
    let bias = avg.pop().expect("bias slot");
    Ok(LinearSvm {
        objective: svm_objective(x, y, &avg, bias, lambda),
        initial_objective: svm_objective(x, y, &vec![0.0; dim], 0.0, lambda),
        weights: avg,
        bias,
        lambda,
        epochs: params.epochs,
    })
}

impl LinearSvm {
    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        dot(&self.weights, row) + self.bias
    }

    /// Class 1 when the decision value is `>= 0`.
    pub fn classify(&self, x: &[Vec<f64>]) -> Result<Vec<u8>> {
        check_dimension(x, self.dimension())?;
        Ok(x.iter().map(|r| u8::from(self.decision(r) >= 0.0)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn one_dimensional_separation() {
        let x = vec![vec![-1.0], vec![1.0]];
        let m = svm_fit(&x, &[0, 1], &SvmParams::default(), 0).unwrap();
        assert!(m.decision(&[-1.0]) < 0.0 && m.decision(&[1.0]) > 0.0);
    }

    fn blobs(seed_value: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = seed::rng(seed_value);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let c = if i % 2 == 0 { -3.0 } else { 3.0 };
            x.push(vec![c + rng.gen_range(-1.0..1.0), c + rng.gen_range(-1.0..1.0)]);
            y.push((i % 2) as u8);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_are_fit_exactly() {
        let (x, y) = blobs(3);
        // the line x0 + x1 = 0 separates them with margin ≥ 2√2
        assert!(x.iter().zip(&y).all(|(r, &l)| signed(l) * (r[0] + r[1]) >= 4.0 - 1e-12));
        let m = svm_fit(&x, &y, &SvmParams::default(), 11).unwrap();
        assert_eq!(m.classify(&x).unwrap(), y);
        assert!(m.objective <= m.initial_objective);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (x, y) = blobs(8);
        let a = svm_fit(&x, &y, &SvmParams::default(), 5).unwrap();
        let b = svm_fit(&x, &y, &SvmParams::default(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn boundary_goes_to_class_one() {
        let m = LinearSvm {
            weights: vec![1.0],
            bias: 0.0,
            lambda: 1.0,
            initial_objective: 1.0,
            objective: 1.0,
            epochs: 1,
        };
        assert_eq!(m.classify(&[vec![0.0], vec![-0.5]]).unwrap(), vec![1, 0]);
        assert!(m.classify(&[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            svm_fit(&[vec![1.0], vec![2.0]], &[1, 1], &SvmParams::default(), 0),
            Err(Error::SingleClass(_))
        ));
    }
}
