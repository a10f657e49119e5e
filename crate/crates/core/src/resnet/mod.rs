//! A small residual feed-forward network for per-layer energy prediction,
//! written from scratch: explicit forward pass, reverse-mode gradients and
//! plain stochastic gradient descent.
//!
//! Topology: dense input layer with ReLU, a stack of residual blocks, and a
//! linear scalar head. Each block holds one dense layer and computes
//!
//! ```text
//! H_out = relu(relu(W H_in + b) + H_in)
//! ```
//!
//! so a zero-weight block is the identity on nonnegative activations.
//! The loss is L = (1/2k) sum_j w_j (prediction_j - label_j)^2, where w_j
//! down-weights pseudo-labeled samples.

pub mod data;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{
    augment_and_label, feature_names, label_single_mesh, log_total_kj, measured_layer_energies,
    AugmentParams, Dataset, Sample, FEATURE_COUNT,
};

pub type ResnetResult<T> = Result<T, ResnetError>;

#[derive(Debug, Error)]
pub enum ResnetError {
    #[error("{layer} expects {expected} inputs, got {got}")]
    DimensionMismatch {
        layer: String,
        expected: usize,
        got: usize,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("predictions and targets differ in length: {predictions} vs {targets}")]
    LengthMismatch { predictions: usize, targets: usize },

    #[error("checkpoint is inconsistent: {0}")]
    BadCheckpoint(String),

    #[error("dataset row {row}: {message}")]
    DatasetParse { row: usize, message: String },

    #[error("failed to read dataset: {0}")]
    DatasetIo(#[from] csv::Error),

    #[error("augmentation failed for schedule {schedule}: {source}")]
    Augment {
        schedule: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

/// One dense layer: weights (out x in) and biases (out).
#[derive(Debug, Clone)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
}

impl Dense {
    fn he_uniform(outputs: usize, inputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let weights = DMatrix::from_fn(outputs, inputs, |_, _| rng.gen_range(-limit..limit));
        Dense {
            weights,
            biases: DVector::zeros(outputs),
        }
    }

    fn apply(&self, input: &DVector<f64>) -> DVector<f64> {
        &self.weights * input + &self.biases
    }
}

fn relu(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(0.0))
}

/// Residual regressor: input dense + ReLU, residual blocks, linear head.
#[derive(Debug, Clone)]
pub struct ResidualNet {
    pub input: Dense,
    pub blocks: Vec<Dense>,
    pub output: Dense,
}

/// Intermediate activations of one forward pass, kept for backprop.
struct ForwardTrace {
    x: DVector<f64>,
    /// Pre-activation of the input layer.
    z0: DVector<f64>,
    /// Per block: pre-activation u, inner activation a, skip sum s, output h.
    blocks: Vec<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)>,
    /// Activation entering the head.
    h_last: DVector<f64>,
    y: f64,
}

/// Gradients with the same shape as the network.
pub struct Gradients {
    pub input: Dense,
    pub blocks: Vec<Dense>,
    pub output: Dense,
}

impl Gradients {
    fn zeros_like(net: &ResidualNet) -> Self {
        let zero = |d: &Dense| Dense {
            weights: DMatrix::zeros(d.weights.nrows(), d.weights.ncols()),
            biases: DVector::zeros(d.biases.len()),
        };
        Gradients {
            input: zero(&net.input),
            blocks: net.blocks.iter().map(zero).collect(),
            output: zero(&net.output),
        }
    }
}

impl ResidualNet {
    /// He-uniform initialized network with the given sizes.
    pub fn new(inputs: usize, hidden: usize, block_count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ResidualNet {
            input: Dense::he_uniform(hidden, inputs, &mut rng),
            blocks: (0..block_count)
                .map(|_| Dense::he_uniform(hidden, hidden, &mut rng))
                .collect(),
            output: Dense::he_uniform(1, hidden, &mut rng),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input.weights.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.input.weights.nrows()
    }

    fn trace(&self, features: &[f64]) -> ResnetResult<ForwardTrace> {
        if features.len() != self.input_size() {
            return Err(ResnetError::DimensionMismatch {
                layer: "input layer".to_string(),
                expected: self.input_size(),
                got: features.len(),
            });
        }
        let x = DVector::from_column_slice(features);
        let z0 = self.input.apply(&x);
        let mut h = relu(&z0);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let u = block.apply(&h);
            let a = relu(&u);
            let s = &a + &h;
            let h_out = relu(&s);
            blocks.push((u, a, s, h_out.clone()));
            h = h_out;
        }
        let y = self.output.apply(&h)[0];
        Ok(ForwardTrace {
            x,
            z0,
            blocks,
            h_last: h,
            y,
        })
    }

    /// Predicts the scalar output for one feature vector.
    pub fn forward(&self, features: &[f64]) -> ResnetResult<f64> {
        Ok(self.trace(features)?.y)
    }

    /// Accumulates loss and parameter gradients over a weighted batch:
    /// L = (1/2k) sum w_j (y_hat_j - y_j)^2.
    pub fn batch_gradients(
        &self,
        batch: &[(&[f64], f64, f64)],
    ) -> ResnetResult<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(ResnetError::EmptyBatch);
        }
        let k = batch.len() as f64;
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        for &(features, label, weight) in batch {
            let trace = self.trace(features)?;
            let err = trace.y - label;
            loss += weight * err * err;
            let dy = weight * err / k;
            self.backprop(&trace, dy, &mut grads);
        }
        Ok((loss / (2.0 * k), grads))
    }

    /// Reverse-mode pass for one sample; gradient of the scalar output times
    /// `dy` is accumulated into `grads`.
    fn backprop(&self, trace: &ForwardTrace, dy: f64, grads: &mut Gradients) {
        // Head: y = W_out h + b_out.
        for c in 0..self.output.weights.ncols() {
            grads.output.weights[(0, c)] += dy * trace.h_last[c];
        }
        grads.output.biases[0] += dy;
        let mut dh = self.output.weights.row(0).transpose() * dy;

        // Blocks in reverse: h_out = relu(s), s = a + h_in, a = relu(u),
        // u = W h_in + b.
        for (idx, block) in self.blocks.iter().enumerate().rev() {
            let (u, _a, s, _h_out) = &trace.blocks[idx];
            let h_in = if idx == 0 {
                relu(&trace.z0)
            } else {
                trace.blocks[idx - 1].3.clone()
            };
            let ds = DVector::from_fn(dh.len(), |i, _| {
                if s[i] > 0.0 {
                    dh[i]
                } else {
                    0.0
                }
            });
            let du = DVector::from_fn(ds.len(), |i, _| if u[i] > 0.0 { ds[i] } else { 0.0 });
            let g = &mut grads.blocks[idx];
            for r in 0..block.weights.nrows() {
                if du[r] == 0.0 {
                    continue;
                }
                for c in 0..block.weights.ncols() {
                    g.weights[(r, c)] += du[r] * h_in[c];
                }
                g.biases[r] += du[r];
            }
            dh = block.weights.transpose() * &du + ds;
        }

        // Input layer: h0 = relu(z0), z0 = W x + b.
        let dz = DVector::from_fn(dh.len(), |i, _| if trace.z0[i] > 0.0 { dh[i] } else { 0.0 });
        for r in 0..self.input.weights.nrows() {
            if dz[r] == 0.0 {
                continue;
            }
            for c in 0..self.input.weights.ncols() {
                grads.input.weights[(r, c)] += dz[r] * trace.x[c];
            }
            grads.input.biases[r] += dz[r];
        }
    }

    fn step(&mut self, grads: &Gradients, learning_rate: f64) {
        let update = |layer: &mut Dense, g: &Dense| {
            layer.weights -= &g.weights * learning_rate;
            layer.biases -= &g.biases * learning_rate;
        };
        update(&mut self.input, &grads.input);
        for (block, g) in self.blocks.iter_mut().zip(&grads.blocks) {
            update(block, g);
        }
        update(&mut self.output, &grads.output);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            input: DenseCheckpoint::from(&self.input),
            blocks: self.blocks.iter().map(DenseCheckpoint::from).collect(),
            output: DenseCheckpoint::from(&self.output),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> ResnetResult<Self> {
        let input = cp.input.to_dense()?;
        let hidden = input.weights.nrows();
        let mut blocks = Vec::with_capacity(cp.blocks.len());
        for (i, b) in cp.blocks.iter().enumerate() {
            let dense = b.to_dense()?;
            if dense.weights.nrows() != hidden || dense.weights.ncols() != hidden {
                return Err(ResnetError::BadCheckpoint(format!(
                    "block {i} is {}x{}, expected {hidden}x{hidden}",
                    dense.weights.nrows(),
                    dense.weights.ncols()
                )));
            }
            blocks.push(dense);
        }
        let output = cp.output.to_dense()?;
        if output.weights.ncols() != hidden || output.weights.nrows() != 1 {
            return Err(ResnetError::BadCheckpoint(format!(
                "output head is {}x{}, expected 1x{hidden}",
                output.weights.nrows(),
                output.weights.ncols()
            )));
        }
        Ok(ResidualNet {
            input,
            blocks,
            output,
        })
    }
}

/// JSON-friendly layer dump: dimensions plus row-major weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseCheckpoint {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseCheckpoint {
    fn from(dense: &Dense) -> Self {
        let mut weights = Vec::with_capacity(dense.weights.len());
        for r in 0..dense.weights.nrows() {
            for c in 0..dense.weights.ncols() {
                weights.push(dense.weights[(r, c)]);
            }
        }
        DenseCheckpoint {
            rows: dense.weights.nrows(),
            cols: dense.weights.ncols(),
            weights,
            biases: dense.biases.iter().cloned().collect(),
        }
    }

    fn to_dense(&self) -> ResnetResult<Dense> {
        if self.weights.len() != self.rows * self.cols || self.biases.len() != self.rows {
            return Err(ResnetError::BadCheckpoint(format!(
                "layer claims {}x{} but carries {} weights and {} biases",
                self.rows,
                self.cols,
                self.weights.len(),
                self.biases.len()
            )));
        }
        let weights =
            DMatrix::from_row_slice(self.rows, self.cols, &self.weights);
        Ok(Dense {
            weights,
            biases: DVector::from_column_slice(&self.biases),
        })
    }
}

/// Whole-network checkpoint; serialize with serde_json.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub input: DenseCheckpoint,
    pub blocks: Vec<DenseCheckpoint>,
    pub output: DenseCheckpoint,
}

/// Mean square error with the 1/(2k) convention.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> ResnetResult<f64> {
    if predictions.len() != targets.len() {
        return Err(ResnetError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(ResnetError::EmptyBatch);
    }
    let k = predictions.len() as f64;
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / (2.0 * k))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Loss weight of pseudo-labeled samples; measured samples weigh 1.
    pub pseudo_weight: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 200,
            pseudo_weight: 0.5,
            seed: 42,
        }
    }
}

/// Loss curve and divergence marker of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-dataset weighted loss after each epoch.
    pub loss_history: Vec<f64>,
    /// Epoch index at which the loss stopped being finite, if any; the net
    /// keeps the last finite parameters.
    pub diverged_at: Option<usize>,
}

/// Full-dataset weighted loss of the net on a dataset.
pub fn dataset_loss(net: &ResidualNet, data: &Dataset, pseudo_weight: f64) -> ResnetResult<f64> {
    if data.samples.is_empty() {
        return Err(ResnetError::EmptyBatch);
    }
    let k = data.samples.len() as f64;
    let mut sum = 0.0;
    for sample in &data.samples {
        let prediction = net.forward(&sample.features)?;
        let weight = if sample.is_pseudo { pseudo_weight } else { 1.0 };
        let err = prediction - sample.label;
        sum += weight * err * err;
    }
    Ok(sum / (2.0 * k))
}

/// Minibatch SGD. Epoch order is shuffled with the seeded generator; if the
/// loss stops being finite, the epoch is rolled back and training aborts
/// with the divergence epoch recorded.
pub fn train(
    net: &mut ResidualNet,
    data: &Dataset,
    params: &TrainParams,
) -> ResnetResult<TrainReport> {
    if data.samples.is_empty() {
        return Err(ResnetError::EmptyBatch);
    }
    let batch_size = params.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..data.samples.len()).collect();
    let mut history = Vec::with_capacity(params.epochs);
    let mut diverged_at = None;
    for epoch in 0..params.epochs {
        let snapshot = net.clone();
        // Fisher-Yates with the run's generator keeps epochs reproducible.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(batch_size) {
            let batch: Vec<(&[f64], f64, f64)> = chunk
                .iter()
                .map(|&i| {
                    let s = &data.samples[i];
                    let weight = if s.is_pseudo { params.pseudo_weight } else { 1.0 };
                    (s.features.as_slice(), s.label, weight)
                })
                .collect();
            let (_, grads) = net.batch_gradients(&batch)?;
            net.step(&grads, params.learning_rate);
        }
        let loss = dataset_loss(net, data, params.pseudo_weight)?;
        if !loss.is_finite() {
            *net = snapshot;
            diverged_at = Some(epoch);
            break;
        }
        history.push(loss);
    }
    Ok(TrainReport {
        loss_history: history,
        diverged_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let v = DVector::from_column_slice(&[-3.0, 5.0, 0.0]);
        let r = relu(&v);
        assert_eq!(r.as_slice(), &[0.0, 5.0, 0.0]);
    }

    #[test]
    fn zero_weight_blocks_are_identity_on_nonnegative_activations() {
        let mut net = ResidualNet::new(3, 3, 2, 1);
        // Input layer: identity; blocks: zero; head: sum of activations.
        net.input.weights = DMatrix::identity(3, 3);
        net.input.biases = DVector::zeros(3);
        for block in &mut net.blocks {
            block.weights.fill(0.0);
            block.biases.fill(0.0);
        }
        net.output.weights = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        net.output.biases = DVector::zeros(1);

        let x = [0.5, 1.5, 2.0];
        let y = net.forward(&x).unwrap();
        assert!((y - 4.0).abs() < 1e-15, "y = {y}");
    }

    #[test]
    fn forward_matches_a_hand_computed_oracle() {
        // 4-2-1 with one block, all parameters written out; the oracle below
        // re-evaluates the arithmetic with plain scalar operations.
        let mut net = ResidualNet::new(4, 2, 1, 7);
        net.input.weights =
            DMatrix::from_row_slice(2, 4, &[0.1, -0.2, 0.3, 0.0, 0.5, 0.1, -0.4, 0.2]);
        net.input.biases = DVector::from_column_slice(&[0.05, -0.1]);
        net.blocks[0].weights = DMatrix::from_row_slice(2, 2, &[0.2, -0.3, 0.4, 0.1]);
        net.blocks[0].biases = DVector::from_column_slice(&[0.01, 0.02]);
        net.output.weights = DMatrix::from_row_slice(1, 2, &[1.5, -0.7]);
        net.output.biases = DVector::from_column_slice(&[0.3]);

        let x = [1.0, 2.0, 3.0, 0.5];
        let relu_s = |v: f64| v.max(0.0);
        let z0 = [
            0.1 * 1.0 - 0.2 * 2.0 + 0.3 * 3.0 + 0.0 * 0.5 + 0.05,
            0.5 * 1.0 + 0.1 * 2.0 - 0.4 * 3.0 + 0.2 * 0.5 - 0.1,
        ];
        let h0 = [relu_s(z0[0]), relu_s(z0[1])];
        let u = [
            0.2 * h0[0] - 0.3 * h0[1] + 0.01,
            0.4 * h0[0] + 0.1 * h0[1] + 0.02,
        ];
        let s = [relu_s(u[0]) + h0[0], relu_s(u[1]) + h0[1]];
        let h1 = [relu_s(s[0]), relu_s(s[1])];
        let expected = 1.5 * h1[0] - 0.7 * h1[1] + 0.3;

        let y = net.forward(&x).unwrap();
        assert!((y - expected).abs() < 1e-12, "net {y} vs oracle {expected}");
    }

    #[test]
    fn dimension_mismatch_names_the_layer() {
        let net = ResidualNet::new(5, 8, 1, 3);
        match net.forward(&[1.0, 2.0]) {
            Err(ResnetError::DimensionMismatch { layer, expected: 5, got: 2 }) => {
                assert_eq!(layer, "input layer");
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn mse_loss_follows_the_half_k_convention() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        // errors (1, -1): (1/4) * (1 + 1) = 0.5.
        let loss = mse_loss(&[2.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);
        assert!(matches!(mse_loss(&[], &[]), Err(ResnetError::EmptyBatch)));
        assert!(matches!(
            mse_loss(&[1.0], &[1.0, 2.0]),
            Err(ResnetError::LengthMismatch { .. })
        ));
    }

    // Central finite differences over every parameter of the net.
    fn finite_difference_gradients(
        net: &ResidualNet,
        batch: &[(&[f64], f64, f64)],
        h: f64,
    ) -> Gradients {
        let mut fd = Gradients::zeros_like(net);
        let mut probe = net.clone();
        let loss_of = |n: &ResidualNet| n.batch_gradients(batch).unwrap().0;
        // Walk every parameter location of every layer.
        let layer_count = 2 + net.blocks.len();
        for layer_idx in 0..layer_count {
            let (rows, cols) = {
                let layer = select_layer(net, layer_idx);
                (layer.weights.nrows(), layer.weights.ncols())
            };
            for r in 0..rows {
                for c in 0..cols {
                    let original = select_layer(net, layer_idx).weights[(r, c)];
                    select_layer_mut(&mut probe, layer_idx).weights[(r, c)] = original + h;
                    let up = loss_of(&probe);
                    select_layer_mut(&mut probe, layer_idx).weights[(r, c)] = original - h;
                    let down = loss_of(&probe);
                    select_layer_mut(&mut probe, layer_idx).weights[(r, c)] = original;
                    select_layer_mut(&mut fd, layer_idx).weights[(r, c)] =
                        (up - down) / (2.0 * h);
                }
                let original = select_layer(net, layer_idx).biases[r];
                select_layer_mut(&mut probe, layer_idx).biases[r] = original + h;
                let up = loss_of(&probe);
                select_layer_mut(&mut probe, layer_idx).biases[r] = original - h;
                let down = loss_of(&probe);
                select_layer_mut(&mut probe, layer_idx).biases[r] = original;
                select_layer_mut(&mut fd, layer_idx).biases[r] = (up - down) / (2.0 * h);
            }
        }
        fd
    }

    fn select_layer(net: &ResidualNet, idx: usize) -> &Dense {
        if idx == 0 {
            &net.input
        } else if idx <= net.blocks.len() {
            &net.blocks[idx - 1]
        } else {
            &net.output
        }
    }

    trait HasLayers {
        fn layer_mut(&mut self, idx: usize) -> &mut Dense;
    }
    impl HasLayers for ResidualNet {
        fn layer_mut(&mut self, idx: usize) -> &mut Dense {
            let blocks = self.blocks.len();
            if idx == 0 {
                &mut self.input
            } else if idx <= blocks {
                &mut self.blocks[idx - 1]
            } else {
                &mut self.output
            }
        }
    }
    impl HasLayers for Gradients {
        fn layer_mut(&mut self, idx: usize) -> &mut Dense {
            let blocks = self.blocks.len();
            if idx == 0 {
                &mut self.input
            } else if idx <= blocks {
                &mut self.blocks[idx - 1]
            } else {
                &mut self.output
            }
        }
    }
    fn select_layer_mut<T: HasLayers>(t: &mut T, idx: usize) -> &mut Dense {
        t.layer_mut(idx)
    }

    #[test]
    fn analytic_gradients_match_finite_differences_on_random_nets() {
        let mut worst = 0.0f64;
        for seed in 0..10u64 {
            let net = ResidualNet::new(4, 6, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let inputs: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let batch: Vec<(&[f64], f64, f64)> = inputs
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    (
                        x.as_slice(),
                        rng.gen_range(-1.0..1.0),
                        if i == 2 { 0.5 } else { 1.0 },
                    )
                })
                .collect();
            let (_, analytic) = net.batch_gradients(&batch).unwrap();
            let fd = finite_difference_gradients(&net, &batch, 1e-5);
            let layer_count = 2 + net.blocks.len();
            for idx in 0..layer_count {
                let a = select_layer_grad(&analytic, idx);
                let f = select_layer_grad_fd(&fd, idx);
                for (ga, gf) in a
                    .weights
                    .iter()
                    .chain(a.biases.iter())
                    .zip(f.weights.iter().chain(f.biases.iter()))
                {
                    let rel = (ga - gf).abs() / gf.abs().max(1.0);
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst <= 1e-4, "worst relative gradient error {worst:.3e}");
    }

    fn select_layer_grad(g: &Gradients, idx: usize) -> &Dense {
        if idx == 0 {
            &g.input
        } else if idx <= g.blocks.len() {
            &g.blocks[idx - 1]
        } else {
            &g.output
        }
    }
    fn select_layer_grad_fd(g: &Gradients, idx: usize) -> &Dense {
        select_layer_grad(g, idx)
    }

    fn linear_target_dataset(n: usize, inputs: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let features: Vec<f64> = (0..inputs).map(|_| rng.gen_range(0.0..1.0)).collect();
                let label = features.iter().sum();
                Sample {
                    features,
                    label,
                    is_pseudo: false,
                }
            })
            .collect();
        Dataset::new(samples, (0..inputs).map(|i| format!("x{i}")).collect())
    }

    #[test]
    fn sgd_learns_a_linear_target() {
        let data = linear_target_dataset(1000, 8, 3);
        let mut net = ResidualNet::new(8, 32, 2, 9);
        let params = TrainParams {
            epochs: 200,
            ..Default::default()
        };
        let initial = dataset_loss(&net, &data, params.pseudo_weight).unwrap();
        let report = train(&mut net, &data, &params).unwrap();
        assert!(report.diverged_at.is_none());
        let final_loss = *report.loss_history.last().unwrap();
        assert!(
            final_loss <= 0.1 * initial,
            "loss only went {initial} -> {final_loss}"
        );
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let data = linear_target_dataset(64, 4, 5);
        let mut net = ResidualNet::new(4, 8, 1, 11);
        let before = net.to_checkpoint();
        let report = train(
            &mut net,
            &data,
            &TrainParams {
                learning_rate: 0.0,
                epochs: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let after = net.to_checkpoint();
        assert_eq!(before.input.weights, after.input.weights);
        assert_eq!(before.output.weights, after.output.weights);
        let first = report.loss_history[0];
        assert!(report.loss_history.iter().all(|&l| l == first));
    }

    #[test]
    fn duplicated_full_batch_training_follows_the_same_trajectory() {
        let data = linear_target_dataset(32, 4, 13);
        let doubled = Dataset::new(
            data.samples
                .iter()
                .cloned()
                .chain(data.samples.iter().cloned())
                .collect(),
            data.feature_names.clone(),
        );
        let params_single = TrainParams {
            batch_size: 32,
            epochs: 5,
            ..Default::default()
        };
        let params_double = TrainParams {
            batch_size: 64,
            epochs: 5,
            ..Default::default()
        };
        let mut net_a = ResidualNet::new(4, 8, 1, 21);
        let mut net_b = net_a.clone();
        train(&mut net_a, &data, &params_single).unwrap();
        train(&mut net_b, &doubled, &params_double).unwrap();
        // Gradient averaging over the duplicated set equals the original
        // average; only float summation order differs.
        let a = net_a.to_checkpoint();
        let b = net_b.to_checkpoint();
        for (wa, wb) in a.input.weights.iter().zip(&b.input.weights) {
            assert!((wa - wb).abs() < 1e-9, "{wa} vs {wb}");
        }
        for (wa, wb) in a.output.weights.iter().zip(&b.output.weights) {
            assert!((wa - wb).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoints_round_trip_through_json() {
        let net = ResidualNet::new(6, 10, 3, 17);
        let json = serde_json::to_string(&net.to_checkpoint()).unwrap();
        let restored =
            ResidualNet::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        let x = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        assert_eq!(net.forward(&x).unwrap(), restored.forward(&x).unwrap());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let net = ResidualNet::new(4, 6, 1, 19);
        let mut cp = net.to_checkpoint();
        cp.blocks[0].weights.pop();
        assert!(matches!(
            ResidualNet::from_checkpoint(&cp),
            Err(ResnetError::BadCheckpoint(_))
        ));

        let mut wrong_dims = net.to_checkpoint();
        wrong_dims.output.cols = 5;
        wrong_dims.output.weights = vec![0.0; 5];
        assert!(matches!(
            ResidualNet::from_checkpoint(&wrong_dims),
            Err(ResnetError::BadCheckpoint(_))
        ));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = ResidualNet::new(5, 12, 2, 23);
        let x = [0.3, 0.1, -0.4, 0.9, 0.0];
        let y1 = net.forward(&x).unwrap();
        let y2 = net.forward(&x).unwrap();
        assert_eq!(y1.to_bits(), y2.to_bits());
    }
}
