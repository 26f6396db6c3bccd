//! Single-hidden-layer perceptron: ReLU hidden units, logistic output,
//! binary cross-entropy, mini-batch gradient descent with momentum and
//! early stopping on a held-out validation split.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::check_dimension;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of rows held out for early stopping; 0 trains on everything
    /// for `max_epochs`.
    pub validation_fraction: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    /// `hidden × inputs`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    /// Mean training loss after each epoch.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Mlp {
    pub fn new<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let he = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("finite std");
        let xavier = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("finite std");
        Self {
            inputs,
            hidden,
            w1: (0..hidden * inputs).map(|_| he.sample(rng)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| xavier.sample(rng)).collect(),
            b2: 0.0,
            train_loss: Vec::new(),
            validation_loss: Vec::new(),
            best_epoch: 0,
            stopped_early: false,
        }
    }

    fn hidden_activations(&self, row: &[f64], out: &mut [f64]) {
        for (h, a) in out.iter_mut().enumerate() {
            let w = &self.w1[h * self.inputs..(h + 1) * self.inputs];
            let z = self.b1[h] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            *a = z.max(0.0);
        }
    }

    fn logit(&self, row: &[f64], hidden: &mut [f64]) -> f64 {
        self.hidden_activations(row, hidden);
        self.b2 + self.w2.iter().zip(hidden.iter()).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn probability(&self, row: &[f64]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        sigmoid(self.logit(row, &mut h))
    }

    /// Class 1 when the output probability is `>= 0.5`.
    pub fn classify(&self, x: &[Vec<f64>]) -> Result<Vec<u8>> {
        check_dimension(x, self.inputs)?;
        Ok(x.iter().map(|r| u8::from(self.probability(r) >= 0.5)).collect())
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Parameters flattened as `w1 ‖ b1 ‖ w2 ‖ b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params(), "parameter vector length");
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = d[0];
    }

    /// Mean cross-entropy over `rows` and its gradient in [`Mlp::params`] order.
    pub fn loss_and_gradient(&self, x: &[Vec<f64>], y: &[u8], rows: &[usize]) -> (f64, Vec<f64>) {
        let (nh, ni) = (self.hidden, self.inputs);
        let mut grad = vec![0.0; self.num_params()];
        let (gw1, rest) = grad.split_at_mut(nh * ni);
        let (gb1, rest) = rest.split_at_mut(nh);
        let (gw2, gb2) = rest.split_at_mut(nh);
        let mut h = vec![0.0; nh];
        let mut loss = 0.0;
        for &i in rows {
            let row = &x[i];
            let target = f64::from(y[i]);
            let z = self.logit(row, &mut h);
            loss += softplus(z) - target * z;
            let dz = sigmoid(z) - target;
            gb2[0] += dz;
            for k in 0..nh {
                gw2[k] += dz * h[k];
                if h[k] > 0.0 {
                    let dh = dz * self.w2[k];
                    gb1[k] += dh;
                    for (g, v) in gw1[k * ni..(k + 1) * ni].iter_mut().zip(row) {
                        *g += dh * v;
                    }
                }
            }
        }
        let scale = 1.0 / rows.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        (loss * scale, grad)
    }

    pub fn loss(&self, x: &[Vec<f64>], y: &[u8], rows: &[usize]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        rows.iter()
            .map(|&i| {
                let z = self.logit(&x[i], &mut h);
                softplus(z) - f64::from(y[i]) * z
            })
            .sum::<f64>()
            / rows.len() as f64
    }
}

/// Splits indices into (train, validation), stratified by label.
fn validation_split<R: Rng>(y: &[u8], fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(rng);
        let take = (idx.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&idx[..take]);
        train.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

pub fn mlp_fit(x: &[Vec<f64>], y: &[u8], params: &MlpParams, seed_value: u64) -> Result<Mlp> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::SingleClass("MLP".into()));
    }
    if params.hidden == 0 || params.batch_size == 0 || !(0.0..1.0).contains(&params.validation_fraction) {
        return Err(Error::Config("invalid MLP hyperparameters".into()));
    }
    let dim = x[0].len();
    check_dimension(x, dim)?;
    let mut rng = seed::rng(seed_value);
    let mut net = Mlp::new(dim, params.hidden, &mut rng);

    let (mut train, val) = if params.validation_fraction > 0.0 {
        validation_split(y, params.validation_fraction, &mut rng)
    } else {
        ((0..x.len()).collect(), Vec::new())
    };
    let early_stopping = !val.is_empty() && !train.is_empty();
    if train.is_empty() {
        train = (0..x.len()).collect();
    }

    let mut velocity = vec![0.0; net.num_params()];
    let mut params_now = net.params();
    let mut best = (f64::INFINITY, params_now.clone(), 0usize);
    let mut since_best = 0;
    for epoch in 0..params.max_epochs {
        train.shuffle(&mut rng);
        for batch in train.chunks(params.batch_size) {
            let (_, grad) = net.loss_and_gradient(x, y, batch);
            for ((p, v), g) in params_now.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = params.momentum * *v - params.learning_rate * g;
                *p += *v;
            }
            net.set_params(&params_now);
        }
        let tl = net.loss(x, y, &train);
        if !tl.is_finite() {
            return Err(Error::Numerical("MLP training loss diverged".into()));
        }
        net.train_loss.push(tl);
        if early_stopping {
            let vl = net.loss(x, y, &val);
            net.validation_loss.push(vl);
            if vl < best.0 {
                best = (vl, params_now.clone(), epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= params.patience {
                    net.stopped_early = true;
                    break;
                }
            }
        }
    }
    if early_stopping {
        net.set_params(&best.1);
        net.best_epoch = best.2;
    } else {
        net.best_epoch = net.train_loss.len().saturating_sub(1);
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_xor() {
        let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let y = [0, 1, 1, 0];
        let params = MlpParams {
            hidden: 4,
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 4,
            max_epochs: 2000,
            patience: 10,
            validation_fraction: 0.0,
        };
        let net = mlp_fit(&x, &y, &params, 1).unwrap();
        assert_eq!(net.classify(&x).unwrap(), y.to_vec());
        assert_eq!(net.train_loss.len(), 2000);
    }

    #[test]
    fn constant_labels_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            mlp_fit(&x, &[0, 0], &MlpParams::default(), 0),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn loss_decreases_on_separable_blobs() {
        let mut rng = seed::rng(2);
        let noise = Normal::new(0.0, 0.7).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..400 {
            let c = if i % 2 == 0 { -1.5 } else { 1.5 };
            x.push((0..5).map(|_| c + noise.sample(&mut rng)).collect::<Vec<_>>());
            y.push((i % 2) as u8);
        }
        let params = MlpParams { max_epochs: 10, patience: 100, ..Default::default() };
        let net = mlp_fit(&x, &y, &params, 3).unwrap();
        assert_eq!(net.train_loss.len(), 10);
        assert!(net.train_loss[9] < net.train_loss[0]);
        let first = net.train_loss[0];
        assert!(net.train_loss.iter().skip(1).all(|&l| l < first + 1e-12));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = seed::rng(17);
        for trial in 0..20 {
            let d = 1 + trial % 5;
            let h = 1 + trial % 4;
            let mut net = Mlp::new(d, h, &mut rng);
            let mut p = net.params();
            p.iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
            net.set_params(&p);
            let x: Vec<Vec<f64>> = (0..6).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let y: Vec<u8> = (0..6).map(|i| (i % 2) as u8).collect();
            let rows: Vec<usize> = (0..6).collect();
            let (_, grad) = net.loss_and_gradient(&x, &y, &rows);
            let eps = 1e-6;
            for k in 0..p.len() {
                let mut probe = net.clone();
                let mut q = p.clone();
                q[k] += eps;
                probe.set_params(&q);
                let up = probe.loss(&x, &y, &rows);
                q[k] -= 2.0 * eps;
                probe.set_params(&q);
                let down = probe.loss(&x, &y, &rows);
                let numeric = (up - down) / (2.0 * eps);
                let rel = (numeric - grad[k]).abs() / numeric.abs().max(grad[k].abs()).max(1e-4);
                assert!(rel <= 1e-5, "trial {trial} param {k}: {numeric} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn output_threshold() {
        let mut net = Mlp::new(1, 1, &mut seed::rng(0));
        net.set_params(&[0.0, 0.0, 0.0, 0.7f64.ln() - 0.3f64.ln()]);
        assert!((net.probability(&[3.0]) - 0.7).abs() < 1e-12);
        assert_eq!(net.classify(&[vec![3.0]]).unwrap(), vec![1]);
        net.set_params(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(net.classify(&[vec![3.0]]).unwrap(), vec![1]);
        assert!(net.classify(&[vec![3.0, 1.0]]).is_err());
    }
}
