//! Plaintext reference trainer.
//!
//! Trains the same architecture (dense layers with square activations, MSE,
//! batched SGD) with ordinary dense arithmetic. It shares the parameter
//! initialization and the per-epoch shuffles with the packed trainer but
//! none of its computation path, so agreement between the two is evidence
//! that the packed pipeline preserves semantics end to end.

use crate::engine::CounterSnapshot;
use crate::error::{Error, Result};
use crate::metrics::{EpochRecord, TrainingMetrics};
use crate::nn::{epoch_permutation, DataSplit, DenseInit, Hyperparams};

/// Dense model state for the reference trainer.
#[derive(Clone, Debug)]
pub struct PlainNetwork {
    pub layers: Vec<DenseInit>,
    pub hyper: Hyperparams,
    pub seed: u64,
}

impl PlainNetwork {
    pub fn new(layers: Vec<DenseInit>, hyper: Hyperparams, seed: u64) -> Self {
        Self {
            layers,
            hyper,
            seed,
        }
    }

    /// Forward pass returning pre-activations and activations per layer.
    fn forward(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let z: Vec<f64> = (0..layer.out_dim)
                .map(|o| {
                    layer.weights[o]
                        .iter()
                        .zip(&cur)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
                        + layer.bias[o]
                })
                .collect();
            let a: Vec<f64> = z.iter().map(|v| v * v).collect();
            preacts.push(z);
            acts.push(a.clone());
            cur = a;
        }
        (preacts, acts)
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let (_, acts) = self.forward(x);
        acts.last().cloned().unwrap_or_default()
    }

    fn loss(&self, pred: &[f64], label: &[f64]) -> f64 {
        pred.iter()
            .zip(label)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / label.len() as f64
    }

    /// Backward pass; returns per-layer weight and bias gradients.
    fn backward(
        &self,
        x: &[f64],
        preacts: &[Vec<f64>],
        acts: &[Vec<f64>],
        label: &[f64],
    ) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let depth = self.layers.len();
        let mut weight_grads = vec![Vec::new(); depth];
        let mut bias_grads = vec![Vec::new(); depth];
        // gradient of the loss w.r.t. the final activation, factor one
        let mut delta_a: Vec<f64> = acts[depth - 1]
            .iter()
            .zip(label)
            .map(|(p, y)| p - y)
            .collect();
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            let delta_z: Vec<f64> = delta_a
                .iter()
                .zip(&preacts[l])
                .map(|(d, z)| d * 2.0 * z)
                .collect();
            let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
            weight_grads[l] = (0..layer.out_dim)
                .map(|o| input.iter().map(|v| delta_z[o] * v).collect())
                .collect();
            bias_grads[l] = delta_z.clone();
            if l > 0 {
                delta_a = (0..layer.in_dim)
                    .map(|i| {
                        (0..layer.out_dim)
                            .map(|o| layer.weights[o][i] * delta_z[o])
                            .sum()
                    })
                    .collect();
            }
        }
        (weight_grads, bias_grads)
    }

    fn evaluate(&self, features: &[Vec<f64>], labels: &[Vec<f64>]) -> (f64, f64) {
        if features.is_empty() {
            return (0.0, 0.0);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (x, y) in features.iter().zip(labels) {
            let pred = self.predict(x);
            loss_sum += self.loss(&pred, y);
            if argmax(&pred) == argmax(y) {
                correct += 1;
            }
        }
        (
            loss_sum / features.len() as f64,
            correct as f64 / features.len() as f64,
        )
    }

    /// Batched SGD with the shared epoch shuffles.
    pub fn train(
        &mut self,
        data: &DataSplit,
        epochs: usize,
        start_epoch: usize,
    ) -> Result<TrainingMetrics> {
        if data.train_features.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let n_train = data.train_features.len();
        let batch_size = self.hyper.batch_size.max(1);
        let mut records = Vec::with_capacity(epochs);
        for epoch in start_epoch..start_epoch + epochs {
            let order = epoch_permutation(self.seed, epoch, n_train);
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for chunk in order.chunks(batch_size) {
                let scale = self.hyper.learning_rate / chunk.len() as f64;
                let mut weight_sums: Vec<Vec<Vec<f64>>> = self
                    .layers
                    .iter()
                    .map(|l| vec![vec![0.0; l.in_dim]; l.out_dim])
                    .collect();
                let mut bias_sums: Vec<Vec<f64>> =
                    self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
                for &i in chunk {
                    let x = &data.train_features[i];
                    let y = &data.train_labels[i];
                    let (preacts, acts) = self.forward(x);
                    let pred = acts.last().unwrap();
                    loss_sum += self.loss(pred, y);
                    if argmax(pred) == argmax(y) {
                        correct += 1;
                    }
                    let (wg, bg) = self.backward(x, &preacts, &acts, y);
                    for (acc, g) in weight_sums.iter_mut().zip(wg) {
                        for (row_acc, row_g) in acc.iter_mut().zip(g) {
                            for (a, v) in row_acc.iter_mut().zip(row_g) {
                                *a += v;
                            }
                        }
                    }
                    for (acc, g) in bias_sums.iter_mut().zip(bg) {
                        for (a, v) in acc.iter_mut().zip(g) {
                            *a += v;
                        }
                    }
                }
                for (layer, (wg, bg)) in self
                    .layers
                    .iter_mut()
                    .zip(weight_sums.into_iter().zip(bias_sums))
                {
                    for (row, grow) in layer.weights.iter_mut().zip(wg) {
                        for (w, g) in row.iter_mut().zip(grow) {
                            *w -= scale * g;
                        }
                    }
                    for (b, g) in layer.bias.iter_mut().zip(bg) {
                        *b -= scale * g;
                    }
                }
            }
            let (test_loss, test_acc) = self.evaluate(&data.test_features, &data.test_labels);
            records.push(EpochRecord {
                epoch,
                train_loss: loss_sum / n_train as f64,
                test_loss,
                train_acc: correct as f64 / n_train as f64,
                test_acc,
                cum_mults: 0,
                cum_rotations: 0,
                min_level: 0,
            });
        }
        Ok(TrainingMetrics::new(records, CounterSnapshot::default(), 0))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
