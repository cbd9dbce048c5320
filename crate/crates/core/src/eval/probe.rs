//! Multinomial logistic regression on frozen features.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::math::softmax;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 20,
            batch_size: 100,
            learning_rate: 0.1,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearProbe {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Vec<u8>> {
        check_len(
            "probe feature dimension",
            self.weights.nrows(),
            features.ncols(),
        )?;
        let scores = features.dot(&self.weights) + &self.bias;
        Ok(scores
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &s) in row.iter().enumerate() {
                    if s > row[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect())
    }

    pub fn accuracy(&self, features: ArrayView2<f64>, labels: &[u8]) -> Result<f64> {
        check_len("probe label count", features.nrows(), labels.len())?;
        if labels.is_empty() {
            return Err(Error::Parameter("accuracy of an empty set".into()));
        }
        let hits = self
            .predict(features)?
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

/// Fits a softmax classifier with minibatch SGD.
pub fn train_linear_probe(
    features: ArrayView2<f64>,
    labels: &[u8],
    config: &ProbeConfig,
) -> Result<LinearProbe> {
    check_len("probe label count", features.nrows(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::Parameter(
            "cannot fit a probe on zero examples".into(),
        ));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Parameter(
            "probe needs a positive batch size and learning rate".into(),
        ));
    }
    let classes = *labels.iter().max().unwrap_or(&0) as usize + 1;
    let d = features.ncols();
    let mut probe = LinearProbe {
        weights: Array2::zeros((d, classes)),
        bias: Array1::zeros(classes),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let x = features.select(Axis(0), chunk);
            let mut residual = x.dot(&probe.weights) + &probe.bias;
            for (mut row, &idx) in residual.outer_iter_mut().zip(chunk) {
                let p = softmax(row.view());
                row.assign(&p);
                row[labels[idx] as usize] -= 1.0;
            }
            let n = chunk.len() as f64;
            let grad_w = x.t().dot(&residual) / n + &probe.weights * config.l2;
            let grad_b = residual.sum_axis(Axis(0)) / n;
            probe.weights.scaled_add(-config.learning_rate, &grad_w);
            probe.bias.scaled_add(-config.learning_rate, &grad_b);
        }
    }
    Ok(probe)
}

/// Fits on the training split and reports test accuracy.
pub fn linear_probe(
    train: ArrayView2<f64>,
    train_labels: &[u8],
    test: ArrayView2<f64>,
    test_labels: &[u8],
    config: &ProbeConfig,
) -> Result<f64> {
    check_len("probe feature dimension", train.ncols(), test.ncols())?;
    train_linear_probe(train, train_labels, config)?.accuracy(test, test_labels)
}
