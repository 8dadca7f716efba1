//! Small differentiable classifiers trained by SGD with momentum.
//!
//! Two architectures: a linear softmax model `f = xW + b` and a one-hidden-layer
//! ReLU network `f = ReLU(xW₁ + b₁)W₂ + b₂`. Gradients are computed by hand.

use std::io::{Read, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::{loss_and_gradient, GeneralizedLossSpec};
use crate::seed::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_in × fan_out`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub class_count: usize,
    pub layers: Vec<Layer>,
}

/// Parameter gradients, laid out like [`ModelParams::layers`].
pub type Gradients = Vec<Layer>;

impl ModelParams {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(architecture: Architecture, input_dim: usize, class_count: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || class_count < 2 {
            return Err(Error::invalid("model needs a positive input dimension and at least two classes"));
        }
        let mut rng = seed::rng(seed, tags::INIT, 0);
        let mut layer = |fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            Layer {
                weights: Matrix::from_vec(fan_in, fan_out, w).expect("shape by construction"),
                bias: vec![0.0; fan_out],
            }
        };
        let layers = match architecture {
            Architecture::Linear => vec![layer(input_dim, class_count)],
            Architecture::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::invalid("hidden width must be positive"));
                }
                vec![layer(input_dim, hidden), layer(hidden, class_count)]
            }
        };
        Ok(ModelParams {
            architecture,
            input_dim,
            class_count,
            layers,
        })
    }

    pub fn zeros(architecture: Architecture, input_dim: usize, class_count: usize) -> Result<Self> {
        let mut p = ModelParams::init(architecture, input_dim, class_count, 0)?;
        for l in p.layers.iter_mut() {
            *l = l.zeros_like();
        }
        Ok(p)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// All parameters flattened layer by layer, weights before bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            v.extend_from_slice(l.weights.as_slice());
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                context: "flat parameters",
                expected: self.parameter_count(),
                found: flat.len(),
            });
        }
        let mut off = 0;
        for l in self.layers.iter_mut() {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

fn check_input(params: &ModelParams, instances: &Matrix) -> Result<()> {
    if instances.cols() != params.input_dim {
        return Err(Error::DimensionMismatch {
            context: "instance dimension",
            expected: params.input_dim,
            found: instances.cols(),
        });
    }
    Ok(())
}

fn affine(x: &Matrix, layer: &Layer) -> Matrix {
    let mut out = x.matmul(&layer.weights);
    for i in 0..out.rows() {
        out.row_mut(i).iter_mut().zip(&layer.bias).for_each(|(o, b)| *o += b);
    }
    out
}

fn relu(mut m: Matrix) -> Matrix {
    m.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    m
}

/// `N × K` logits.
pub fn forward_logits(params: &ModelParams, instances: &Matrix) -> Result<Matrix> {
    check_input(params, instances)?;
    Ok(match params.architecture {
        Architecture::Linear => affine(instances, &params.layers[0]),
        Architecture::Mlp { .. } => {
            let h = relu(affine(instances, &params.layers[0]));
            affine(&h, &params.layers[1])
        }
    })
}

/// Penultimate activations: hidden ReLU units for the MLP, raw inputs for the
/// linear model.
pub fn extract_features(params: &ModelParams, instances: &Matrix) -> Result<Matrix> {
    check_input(params, instances)?;
    Ok(match params.architecture {
        Architecture::Linear => instances.clone(),
        Architecture::Mlp { .. } => relu(affine(instances, &params.layers[0])),
    })
}

/// Argmax with the smallest index winning ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn predict(params: &ModelParams, instances: &Matrix) -> Result<Vec<usize>> {
    let logits = forward_logits(params, instances)?;
    Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
}

/// Chain rule from `∂L/∂logits` to parameter gradients, plus `2·λ·W` on the
/// weight matrices (biases are not decayed).
pub fn backward(params: &ModelParams, instances: &Matrix, upstream: &Matrix, weight_decay: f64) -> Result<Gradients> {
    check_input(params, instances)?;
    if upstream.rows() != instances.rows() || upstream.cols() != params.class_count {
        return Err(Error::DimensionMismatch {
            context: "upstream gradient",
            expected: instances.rows() * params.class_count,
            found: upstream.rows() * upstream.cols(),
        });
    }
    let mut grads = match params.architecture {
        Architecture::Linear => vec![Layer {
            weights: instances.t_matmul(upstream),
            bias: upstream.column_sums(),
        }],
        Architecture::Mlp { .. } => {
            let pre = affine(instances, &params.layers[0]);
            let h = relu(pre.clone());
            let out = Layer {
                weights: h.t_matmul(upstream),
                bias: upstream.column_sums(),
            };
            let mut dh = upstream.matmul_t(&params.layers[1].weights);
            dh.as_mut_slice()
                .iter_mut()
                .zip(pre.as_slice())
                .for_each(|(g, &p)| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
            let hidden = Layer {
                weights: instances.t_matmul(&dh),
                bias: dh.column_sums(),
            };
            vec![hidden, out]
        }
    };
    if weight_decay != 0.0 {
        for (g, p) in grads.iter_mut().zip(&params.layers) {
            g.weights
                .as_mut_slice()
                .iter_mut()
                .zip(p.weights.as_slice())
                .for_each(|(gw, w)| *gw += 2.0 * weight_decay * w);
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Epochs (1-based) at which the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 2e-4,
            batch_size: 128,
            epochs: 120,
            warmup_epochs: 5,
            decay_epochs: vec![60, 110],
            decay_factor: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("model.learning_rate", "must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("model.momentum", "must lie in [0, 1)"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("model.decay_factor", "must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("model.batch_size", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("model.weight_decay", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch: linear ramp over the warmup epochs, then
/// piecewise constant with a multiplicative drop at each decay epoch.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let epoch = epoch.max(1);
    if epoch <= config.warmup_epochs {
        return config.learning_rate * epoch as f64 / config.warmup_epochs as f64;
    }
    let drops = config.decay_epochs.iter().filter(|&&e| epoch >= e).count();
    config.learning_rate * config.decay_factor.powi(drops as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub velocity: Gradients,
    pub epoch: usize,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            velocity: params.layers.iter().map(Layer::zeros_like).collect(),
            epoch: 0,
        }
    }
}

/// `v ← μ v + g`, `θ ← θ − η v`.
pub fn sgd_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    grads: &Gradients,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if grads.len() != params.layers.len() {
        return Err(Error::DimensionMismatch {
            context: "gradient layers",
            expected: params.layers.len(),
            found: grads.len(),
        });
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.weights.is_finite() {
            return Err(Error::NonFinite(format!("gradient of layer {i} weights")));
        }
        if !g.bias.iter().all(|b| b.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of layer {i} bias")));
        }
    }
    for ((p, v), g) in params.layers.iter_mut().zip(state.velocity.iter_mut()).zip(grads) {
        for ((pw, vw), gw) in p
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(v.weights.as_mut_slice())
            .zip(g.weights.as_slice())
        {
            *vw = momentum * *vw + gw;
            *pw -= learning_rate * *vw;
        }
        for ((pb, vb), gb) in p.bias.iter_mut().zip(v.bias.iter_mut()).zip(&g.bias) {
            *vb = momentum * *vb + gb;
            *pb -= learning_rate * *vb;
        }
    }
    Ok(())
}

/// Mean loss of `spec` over the whole dataset evaluated as one batch.
pub fn evaluate_loss(params: &ModelParams, data: &LabeledDataset, spec: &GeneralizedLossSpec) -> Result<f64> {
    let logits = forward_logits(params, data.features())?;
    Ok(loss_and_gradient(spec, &logits, data.labels(), false)?.0)
}

/// One seeded pass over shuffled mini-batches; returns the sample-weighted mean
/// of the batch losses. `epoch` is 1-based and drives the schedule and shuffle.
pub fn train_epoch(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    data: &LabeledDataset,
    spec: &GeneralizedLossSpec,
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("training data".into()));
    }
    let lr = lr_schedule(epoch, config);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seed::rng(config.seed, tags::SHUFFLE, epoch as u64));
    let mut weighted = 0.0;
    for (b, chunk) in order.chunks(config.batch_size).enumerate() {
        let x = data.features().select_rows(chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
        let logits = forward_logits(params, &x)?;
        let (loss, grad) = loss_and_gradient(spec, &logits, &labels, true).map_err(|e| {
            Error::NonFinite(format!("epoch {epoch}, batch {}: {e}", b + 1))
        })?;
        let grads = backward(params, &x, &grad.expect("gradient requested"), config.weight_decay)?;
        sgd_step(params, state, &grads, lr, config.momentum)
            .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {}: {e}", b + 1)))?;
        weighted += loss * chunk.len() as f64;
    }
    state.epoch = epoch;
    Ok(weighted / data.len() as f64)
}

/// Plain training for `config.epochs` epochs with a fixed loss.
pub fn train(
    params: &mut ModelParams,
    data: &LabeledDataset,
    spec: &GeneralizedLossSpec,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut state = OptimizerState::new(params);
    (1..=config.epochs)
        .map(|e| train_epoch(params, &mut state, data, spec, config, e))
        .collect()
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned on-disk model: architecture, parameters as base64 little-endian
/// f64 tensors, the hash of the producing config, and its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub architecture: Architecture,
    pub input_dim: usize,
    pub class_count: usize,
    pub config_hash: String,
    pub seed: u64,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data_le_f64: String,
}

fn encode_tensor(name: String, shape: Vec<usize>, values: &[f64]) -> TensorRecord {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    TensorRecord {
        name,
        shape,
        data_le_f64: B64.encode(bytes),
    }
}

fn decode_tensor(t: &TensorRecord) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(&t.data_le_f64)
        .map_err(|e| Error::invalid(format!("tensor {}: {e}", t.name)))?;
    let expected: usize = t.shape.iter().product();
    if bytes.len() != expected * 8 {
        return Err(Error::DimensionMismatch {
            context: "checkpoint tensor bytes",
            expected: expected * 8,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Hex SHA-256 of a config's canonical text.
pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, config_hash: String, seed: u64) -> Self {
        let mut tensors = Vec::new();
        for (i, l) in params.layers.iter().enumerate() {
            tensors.push(encode_tensor(
                format!("layer{i}.weights"),
                vec![l.weights.rows(), l.weights.cols()],
                l.weights.as_slice(),
            ));
            tensors.push(encode_tensor(format!("layer{i}.bias"), vec![l.bias.len()], &l.bias));
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            architecture: params.architecture,
            input_dim: params.input_dim,
            class_count: params.class_count,
            config_hash,
            seed,
            tensors,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut params = ModelParams::zeros(self.architecture, self.input_dim, self.class_count)?;
        if self.tensors.len() != 2 * params.layers.len() {
            return Err(Error::DimensionMismatch {
                context: "checkpoint tensors",
                expected: 2 * params.layers.len(),
                found: self.tensors.len(),
            });
        }
        for (l, pair) in params.layers.iter_mut().zip(self.tensors.chunks(2)) {
            let w = decode_tensor(&pair[0])?;
            if pair[0].shape != [l.weights.rows(), l.weights.cols()] {
                return Err(Error::invalid(format!("tensor {} has wrong shape", pair[0].name)));
            }
            l.weights.as_mut_slice().copy_from_slice(&w);
            let b = decode_tensor(&pair[1])?;
            if b.len() != l.bias.len() {
                return Err(Error::invalid(format!("tensor {} has wrong shape", pair[1].name)));
            }
            l.bias.copy_from_slice(&b);
        }
        Ok(params)
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_mixture, MixtureSpec};
    use crate::losses::{batch_loss, batch_loss_gradient};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let p = ModelParams::zeros(Architecture::Mlp { hidden: 4 }, 3, 5).unwrap();
        let f = forward_logits(&p, &mat(&[vec![1.0, -2.0, 3.0]])).unwrap();
        assert!(f.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_forward_by_hand() {
        let mut p = ModelParams::zeros(Architecture::Linear, 1, 2).unwrap();
        p.layers[0].weights = mat(&[vec![2.0, -2.0]]);
        let f = forward_logits(&p, &mat(&[vec![1.0]])).unwrap();
        assert_eq!(f.row(0), &[2.0, -2.0]);
        assert_eq!(predict(&p, &mat(&[vec![1.0]])).unwrap(), vec![0]);
        assert!(forward_logits(&p, &mat(&[vec![1.0, 2.0]])).is_err());
    }

    #[test]
    fn forward_is_row_independent() {
        let p = ModelParams::init(Architecture::Mlp { hidden: 8 }, 2, 3, 1).unwrap();
        let a = mat(&[vec![0.1, 0.2], vec![-1.0, 0.5]]);
        let b = mat(&[vec![2.0, -0.3]]);
        let ab = mat(&[vec![0.1, 0.2], vec![-1.0, 0.5], vec![2.0, -0.3]]);
        let fa = forward_logits(&p, &a).unwrap();
        let fb = forward_logits(&p, &b).unwrap();
        let fab = forward_logits(&p, &ab).unwrap();
        assert_eq!(&fab.as_slice()[..6], fa.as_slice());
        assert_eq!(&fab.as_slice()[6..], fb.as_slice());
    }

    #[test]
    fn argmax_ties_pick_smallest_index() {
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        assert_eq!(argmax(&[2.0, -2.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    fn fd_rel_error(arch: Architecture, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::init(arch, 3, 4, seed).unwrap();
        for l in p.layers.iter_mut() {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let x = mat(&rows);
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
        let spec = GeneralizedLossSpec::cross_entropy(4);
        let lambda = 1e-2;
        let objective = |p: &ModelParams| {
            let f = forward_logits(p, &x).unwrap();
            let wsq: f64 = p.layers.iter().flat_map(|l| l.weights.as_slice()).map(|w| w * w).sum();
            batch_loss(&spec, &f, &labels).unwrap() + lambda * wsq
        };
        let up = batch_loss_gradient(&spec, &forward_logits(&p, &x).unwrap(), &labels).unwrap();
        let g: Vec<f64> = backward(&p, &x, &up, lambda)
            .unwrap()
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias).copied().collect::<Vec<_>>())
            .collect();
        let theta = p.flatten();
        let h = 1e-5;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..theta.len() {
            let mut q = p.clone();
            let mut t = theta.clone();
            t[i] += h;
            q.set_flat(&t).unwrap();
            let up_v = objective(&q);
            t[i] -= 2.0 * h;
            q.set_flat(&t).unwrap();
            let dn_v = objective(&q);
            let fd = (up_v - dn_v) / (2.0 * h);
            num += (fd - g[i]).powi(2);
            den += fd.powi(2).max(g[i].powi(2));
        }
        num.sqrt() / den.sqrt()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20 {
            assert!(fd_rel_error(Architecture::Linear, seed) < 1e-6);
            assert!(fd_rel_error(Architecture::Mlp { hidden: 6 }, seed) < 1e-4);
        }
    }

    #[test]
    fn zero_upstream_gives_only_decay() {
        let p = ModelParams::init(Architecture::Mlp { hidden: 3 }, 2, 2, 4).unwrap();
        let x = mat(&[vec![1.0, 2.0]]);
        let g = backward(&p, &x, &Matrix::zeros(1, 2), 0.0).unwrap();
        assert!(g.iter().all(|l| l.weights.as_slice().iter().chain(&l.bias).all(|&v| v == 0.0)));
        let g = backward(&p, &x, &Matrix::zeros(1, 2), 0.5).unwrap();
        assert_eq!(g[1].weights.as_slice()[0], p.layers[1].weights.as_slice()[0]);
        assert!(backward(&p, &x, &Matrix::zeros(2, 2), 0.0).is_err());
    }

    #[test]
    fn dead_relu_blocks_first_layer_gradient() {
        let mut p = ModelParams::init(Architecture::Mlp { hidden: 3 }, 2, 2, 4).unwrap();
        p.layers[0].bias = vec![-100.0; 3];
        let x = mat(&[vec![1.0, 2.0], vec![-0.5, 0.3]]);
        let up = mat(&[vec![0.3, -0.3], vec![-1.0, 1.0]]);
        let g = backward(&p, &x, &up, 0.0).unwrap();
        assert!(g[0].weights.as_slice().iter().chain(&g[0].bias).all(|&v| v == 0.0));
    }

    fn unit_grads(p: &ModelParams, v: f64) -> Gradients {
        p.layers
            .iter()
            .map(|l| Layer {
                weights: Matrix::from_vec(l.weights.rows(), l.weights.cols(), vec![v; l.weights.as_slice().len()]).unwrap(),
                bias: vec![v; l.bias.len()],
            })
            .collect()
    }

    #[test]
    fn sgd_vanilla_and_momentum_steps() {
        let p0 = ModelParams::init(Architecture::Linear, 2, 3, 2).unwrap();
        let mut p = p0.clone();
        let mut s = OptimizerState::new(&p);
        sgd_step(&mut p, &mut s, &unit_grads(&p0, 1.0), 1.0, 0.0).unwrap();
        for (a, b) in p.flatten().iter().zip(p0.flatten()) {
            assert!((b - a - 1.0).abs() < 1e-15);
        }

        // two steps, momentum 0.9, constant g: displacement η g (1 + 1.9)
        let mut p = p0.clone();
        let mut s = OptimizerState::new(&p);
        let g = unit_grads(&p0, 0.5);
        sgd_step(&mut p, &mut s, &g, 0.1, 0.9).unwrap();
        sgd_step(&mut p, &mut s, &g, 0.1, 0.9).unwrap();
        for (a, b) in p.flatten().iter().zip(p0.flatten()) {
            assert!((b - a - 0.1 * 0.5 * 2.9).abs() < 1e-15);
        }

        let mut p = p0.clone();
        let mut s = OptimizerState::new(&p);
        sgd_step(&mut p, &mut s, &unit_grads(&p0, 3.0), 0.0, 0.9).unwrap();
        assert_eq!(p, p0);

        let mut bad = unit_grads(&p0, 1.0);
        bad[0].bias[1] = f64::NAN;
        let err = sgd_step(&mut p, &mut s, &bad, 0.1, 0.9).unwrap_err();
        assert!(err.to_string().contains("layer 0 bias"));
    }

    #[test]
    fn schedule_points() {
        let c = TrainConfig {
            learning_rate: 0.1,
            warmup_epochs: 5,
            decay_epochs: vec![200, 320],
            decay_factor: 0.01,
            ..TrainConfig::default()
        };
        assert!((lr_schedule(1, &c) - 0.02).abs() < 1e-15);
        assert!((lr_schedule(5, &c) - 0.1).abs() < 1e-15);
        assert!((lr_schedule(199, &c) - 0.1).abs() < 1e-15);
        assert!((lr_schedule(250, &c) - 0.001).abs() < 1e-15);
        assert!((lr_schedule(330, &c) - 1e-5).abs() < 1e-18);
    }

    fn toy() -> LabeledDataset {
        let spec = MixtureSpec::circle(3, 2.0).unwrap();
        sample_mixture(&spec, &[60, 40, 20], 3).unwrap()
    }

    #[test]
    fn zero_lr_epoch_is_a_no_op() {
        let ds = toy();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let spec = GeneralizedLossSpec::cross_entropy(3);
        let mut p = ModelParams::init(Architecture::Mlp { hidden: 5 }, 2, 3, 1).unwrap();
        let p0 = p.clone();
        let mut s = OptimizerState::new(&p);
        let loss = train_epoch(&mut p, &mut s, &ds, &spec, &cfg, 7).unwrap();
        assert_eq!(p, p0);
        let eval = evaluate_loss(&p, &ds, &spec).unwrap();
        assert!((loss - eval).abs() < 1e-12);
    }

    #[test]
    fn epochs_are_deterministic() {
        let ds = toy();
        let cfg = TrainConfig {
            batch_size: 16,
            seed: 9,
            ..TrainConfig::default()
        };
        let spec = GeneralizedLossSpec::cross_entropy(3);
        let run = || {
            let mut p = ModelParams::init(Architecture::Linear, 2, 3, 1).unwrap();
            let mut s = OptimizerState::new(&p);
            for e in 1..=3 {
                train_epoch(&mut p, &mut s, &ds, &spec, &cfg, e).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn separable_data_reaches_zero_training_error() {
        let spec = MixtureSpec::isotropic(vec![vec![-3.0, 0.0], vec![3.0, 0.0]], 0.25).unwrap();
        let ds = sample_mixture(&spec, &[200, 200], 2).unwrap();
        // confirm separability by the x = 0 line before training
        assert!((0..ds.len()).all(|i| (ds.features().get(i, 0) > 0.0) == (ds.labels()[i] == 1)));
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 32,
            decay_epochs: vec![],
            ..TrainConfig::default()
        };
        let mut p = ModelParams::init(Architecture::Linear, 2, 2, 3).unwrap();
        train(&mut p, &ds, &GeneralizedLossSpec::cross_entropy(2), &cfg).unwrap();
        let pred = predict(&p, ds.features()).unwrap();
        assert_eq!(pred, ds.labels());
    }

    #[test]
    fn full_batch_small_lr_loss_is_non_increasing() {
        let ds = toy();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: ds.len(),
            warmup_epochs: 0,
            decay_epochs: vec![],
            ..TrainConfig::default()
        };
        let spec = GeneralizedLossSpec::cross_entropy(3);
        let mut p = ModelParams::init(Architecture::Mlp { hidden: 8 }, 2, 3, 5).unwrap();
        let mut s = OptimizerState::new(&p);
        let mut prev = evaluate_loss(&p, &ds, &spec).unwrap();
        for e in 1..=10 {
            train_epoch(&mut p, &mut s, &ds, &spec, &cfg, e).unwrap();
            let now = evaluate_loss(&p, &ds, &spec).unwrap();
            assert!(now <= prev, "epoch {e}: {now} > {prev}");
            prev = now;
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = ModelParams::init(Architecture::Mlp { hidden: 7 }, 2, 3, 11).unwrap();
        let ck = Checkpoint::from_params(&p, config_hash("x"), 11);
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let back = Checkpoint::read(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_params().unwrap(), p);
    }

    #[test]
    fn features_are_hidden_units_or_inputs() {
        let x = mat(&[vec![0.5, -1.0]]);
        let lin = ModelParams::init(Architecture::Linear, 2, 3, 1).unwrap();
        assert_eq!(extract_features(&lin, &x).unwrap(), x);
        let mlp = ModelParams::init(Architecture::Mlp { hidden: 4 }, 2, 3, 1).unwrap();
        let h = extract_features(&mlp, &x).unwrap();
        assert_eq!(h.cols(), 4);
        assert!(h.as_slice().iter().all(|&v| v >= 0.0));
    }
}
