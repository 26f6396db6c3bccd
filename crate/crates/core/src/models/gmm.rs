//! Full-covariance Gaussian mixture fitted by expectation maximization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::check_dimension;
use super::kmeans::{kmeans_fit, KMeansParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub k: usize,
    pub max_iter: usize,
    /// Stop when the mean per-sample log-likelihood gains less than this.
    pub tol: f64,
    /// Added to every covariance diagonal.
    pub ridge: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self {
            k: 2,
            max_iter: 200,
            tol: 1e-4,
            ridge: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `D × D` covariance per component.
    pub covariances: Vec<Vec<f64>>,
    /// Mean per-sample log-likelihood after each E-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Cached Cholesky factor and normalizer of one component.
struct Component {
    log_weight: f64,
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: &[f64], cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        let chol = DMatrix::from_row_slice(d, d, cov)
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            log_weight: weight.ln(),
            mean: DVector::from_column_slice(mean),
            chol_l: l,
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.mean;
        let z = self
            .chol_l
            .solve_lower_triangular(&diff)
            .expect("triangular factor has a positive diagonal");
        self.log_weight + self.log_norm - 0.5 * z.norm_squared()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn weighted_covariance(x: &[Vec<f64>], resp: &[f64], mean: &[f64], total: f64, ridge: f64) -> Vec<f64> {
    let d = mean.len();
    let mut cov = vec![0.0; d * d];
    for (row, &r) in x.iter().zip(resp) {
        if r == 0.0 {
            continue;
        }
        for i in 0..d {
            let di = r * (row[i] - mean[i]);
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / total;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
        cov[i * d + i] += ridge;
    }
    cov
}

impl GmmModel {
    fn components(&self) -> Result<Vec<Component>> {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.covariances)
            .map(|((&w, m), c)| Component::new(w, m, c))
            .collect()
    }

    pub fn dimension(&self) -> usize {
        self.means[0].len()
    }

    /// Posterior component probabilities per row.
    pub fn responsibilities(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_dimension(x, self.dimension())?;
        let comps = self.components()?;
        Ok(x.iter().map(|row| e_step_row(&comps, row).0).collect())
    }

    /// Most probable component per row; ties go to the lower index.
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        Ok(self
            .responsibilities(x)?
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn mean_log_likelihood(&self, x: &[Vec<f64>]) -> Result<f64> {
        check_dimension(x, self.dimension())?;
        let comps = self.components()?;
        Ok(x.iter().map(|row| e_step_row(&comps, row).1).sum::<f64>() / x.len() as f64)
    }
}

fn e_step_row(comps: &[Component], row: &[f64]) -> (Vec<f64>, f64) {
    let logs: Vec<f64> = comps.iter().map(|c| c.log_density(row)).collect();
    let total = log_sum_exp(&logs);
    (logs.iter().map(|l| (l - total).exp()).collect(), total)
}

pub fn gmm_fit(x: &[Vec<f64>], params: &GmmParams, seed: u64) -> Result<GmmModel> {
    let km = kmeans_fit(
        x,
        &KMeansParams {
            k: params.k,
            ..KMeansParams::default()
        },
        seed,
    )?;
    let n = x.len();
    let d = x[0].len();
    let assignment = km.predict(x)?;

    let all = vec![1.0; n];
    let global_mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let global_cov = weighted_covariance(x, &all, &global_mean, n as f64, params.ridge);

    let mut model = GmmModel {
        weights: Vec::with_capacity(params.k),
        means: Vec::with_capacity(params.k),
        covariances: Vec::with_capacity(params.k),
        log_likelihood: Vec::new(),
        iterations: 0,
        converged: false,
    };
    for c in 0..params.k {
        let resp: Vec<f64> = assignment.iter().map(|&a| f64::from(u8::from(a == c))).collect();
        let count: f64 = resp.iter().sum();
        let mean = km.centroids[c].clone();
        let cov = if count > 1.0 {
            weighted_covariance(x, &resp, &mean, count, params.ridge)
        } else {
            global_cov.clone()
        };
        model.weights.push(count.max(1.0) / n as f64);
        model.means.push(mean);
        model.covariances.push(cov);
    }
    let wsum: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= wsum);

    while model.iterations < params.max_iter {
        model.iterations += 1;
        let comps = model.components()?;
        let mut resp = vec![vec![0.0; n]; params.k];
        let mut ll = 0.0;
        for (i, row) in x.iter().enumerate() {
            let (r, l) = e_step_row(&comps, row);
            ll += l;
            for (c, v) in r.into_iter().enumerate() {
                resp[c][i] = v;
            }
        }
        let ll = ll / n as f64;
        if !ll.is_finite() {
            return Err(Error::Numerical("non-finite log-likelihood".into()));
        }
        let gain = model.log_likelihood.last().map(|prev| ll - prev);
        model.log_likelihood.push(ll);
        if gain.is_some_and(|g| g < params.tol) {
            model.converged = true;
            break;
        }

        for (c, r) in resp.iter().enumerate() {
            let total: f64 = r.iter().sum();
            if total < 1e-10 {
                continue;
            }
            let mean: Vec<f64> = (0..d)
                .map(|j| x.iter().zip(r).map(|(row, w)| w * row[j]).sum::<f64>() / total)
                .collect();
            model.covariances[c] = weighted_covariance(x, r, &mean, total, params.ridge);
            model.means[c] = mean;
            model.weights[c] = total / n as f64;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, centers: &[[f64; 2]], spread: f64, seed_value: u64) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(seed_value);
        let noise = Normal::new(0.0, spread).unwrap();
        (0..n)
            .map(|i| {
                let c = centers[i % centers.len()];
                vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]
            })
            .collect()
    }

    #[test]
    fn separated_blobs_recover_sample_means() {
        let centers = [[0.0, 0.0], [6.0, 3.0]];
        let x = blobs(400, &centers, 0.5, 1);
        let m = gmm_fit(&x, &GmmParams::default(), 2).unwrap();
        for (c, center) in centers.iter().enumerate() {
            let members: Vec<&Vec<f64>> = x.iter().skip(c).step_by(2).collect();
            let sample_mean: Vec<f64> = (0..2)
                .map(|j| members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64)
                .collect();
            let comp = m
                .means
                .iter()
                .min_by(|a, b| {
                    super::super::squared_distance(a, center)
                        .total_cmp(&super::super::squared_distance(b, center))
                })
                .unwrap();
            assert!((comp[0] - sample_mean[0]).abs() < 0.1 && (comp[1] - sample_mean[1]).abs() < 0.1);
        }
    }

    #[test]
    fn log_likelihood_is_monotone() {
        let x = blobs(300, &[[0.0, 0.0], [1.5, 0.5], [3.0, -1.0]], 0.8, 4);
        let m = gmm_fit(&x, &GmmParams::default(), 7).unwrap();
        assert!(m.log_likelihood.len() >= 2);
        for w in m.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{:?}", m.log_likelihood);
        }
    }

    #[test]
    fn single_component_matches_sample_statistics() {
        let x = blobs(100, &[[2.0, -1.0]], 1.0, 9);
        let m = gmm_fit(&x, &GmmParams { k: 1, ..Default::default() }, 0).unwrap();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..2).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let cxy = x.iter().map(|r| (r[0] - mean[0]) * (r[1] - mean[1])).sum::<f64>() / n;
        let cxx = x.iter().map(|r| (r[0] - mean[0]).powi(2)).sum::<f64>() / n;
        assert!((m.means[0][0] - mean[0]).abs() < 1e-9);
        assert!((m.covariances[0][1] - cxy).abs() < 1e-9);
        assert!((m.covariances[0][0] - cxx - 1e-6).abs() < 1e-9);
        assert_eq!(m.weights, vec![1.0]);
    }
}
