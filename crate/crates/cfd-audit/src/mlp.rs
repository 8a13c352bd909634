//! Bias-free feedforward ReLU binary classifiers.
//!
//! Networks here carry no bias vectors, which makes them exactly linear on
//! the activation region of any input: masking each weight matrix by the
//! input's activation pattern and multiplying across layers yields a weight
//! vector θ with `θᵀx == logit(x)` ([`MlpModel::linearize`]). Training is
//! deterministic full-batch Adam on binary cross-entropy with early stopping
//! on validation loss, so identical (architecture, dataset, config, seed)
//! yields bit-identical models and retraining loops are reproducible.

use crate::dataset::Dataset;
use crate::linalg::{Matrix, Vector};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Layer widths: `input_dim → hidden[0] → … → 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        Self { input_dim, hidden }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden layer widths must be at least 1".into()));
        }
        Ok(())
    }

    /// `(out_dim, in_dim)` of each weight matrix, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            shapes.push((h, prev));
            prev = h;
        }
        shapes.push((1, prev));
        shapes
    }
}

/// Training hyperparameters. Full-batch Adam; loss is binary cross-entropy
/// on `sigmoid(logit)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Weight-initialization seed; retraining reuses it so label edits are
    /// the only difference between runs.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            max_epochs: 100,
            patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "learning rate, max_epochs, and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// A trained (or initialized) network: weight matrices only, no biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub arch: Architecture,
    pub seed: u64,
    /// `weights[ℓ]` maps layer ℓ activations to layer ℓ+1 pre-activations,
    /// shaped `(out, in)`.
    pub weights: Vec<Matrix>,
    pub train_meta: Option<TrainMeta>,
}

/// Per-hidden-layer binary activation vectors (`true` = pre-activation > 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    pub layers: Vec<Vec<bool>>,
}

impl ActivationPattern {
    /// Total hidden neuron count.
    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded initialization: uniform in `±1/√fan_in`, drawn layer by layer in
/// row-major order.
pub fn init(arch: &Architecture, seed: u64) -> MlpModel {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let weights = arch
        .layer_shapes()
        .into_iter()
        .map(|(out, inp)| {
            let scale = 1.0 / (inp as f64).sqrt();
            let data: Vec<f64> = (0..out * inp).map(|_| rng.gen_range(-scale..scale)).collect();
            Matrix::from_vec(out, inp, data).expect("finite init weights")
        })
        .collect();
    MlpModel { arch: arch.clone(), seed, weights, train_meta: None }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable BCE of one logit against a {0,1} label.
fn bce(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Batch forward pass; returns hidden pre-activations, hidden activations,
/// and the logit column.
fn forward_batch(weights: &[Matrix], x: &Matrix) -> Result<(Vec<Matrix>, Vec<Matrix>, Vec<f64>)> {
    let n_hidden = weights.len() - 1;
    let mut pre = Vec::with_capacity(n_hidden);
    let mut act = Vec::with_capacity(n_hidden);
    let mut current = x.clone();
    for w in &weights[..n_hidden] {
        let z = current.matmul_nt(w)?;
        let mut a = z.clone();
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                if a.get(i, j) <= 0.0 {
                    a.set(i, j, 0.0);
                }
            }
        }
        pre.push(z);
        act.push(a.clone());
        current = a;
    }
    let logits_m = current.matmul_nt(&weights[n_hidden])?;
    let logits = (0..logits_m.rows()).map(|i| logits_m.get(i, 0)).collect();
    Ok((pre, act, logits))
}

/// Mean-BCE gradients of every weight matrix on a batch.
fn bce_gradients(
    weights: &[Matrix],
    x: &Matrix,
    y: &Vector,
) -> Result<(f64, Vec<Matrix>)> {
    let n = x.rows();
    let (pre, act, logits) = forward_batch(weights, x)?;
    let loss = logits
        .iter()
        .zip(y.as_slice())
        .map(|(&z, &t)| bce(z, t))
        .sum::<f64>()
        / n as f64;

    let n_hidden = weights.len() - 1;
    // d(loss)/d(logit_i) = (sigmoid(z_i) - y_i) / n
    let mut delta = Matrix::zeros(n, 1);
    for i in 0..n {
        delta.set(i, 0, (sigmoid(logits[i]) - y.get(i)) / n as f64);
    }

    let mut grads = vec![Matrix::zeros(0, 0); weights.len()];
    // Output layer gradient: deltaᵀ · A_last (or X when there are no hidden layers).
    let last_input = if n_hidden == 0 { x } else { &act[n_hidden - 1] };
    grads[n_hidden] = delta.matmul_tn(last_input)?;

    // Backpropagate through hidden layers.
    let mut upstream = delta; // n × (width of layer above)
    for l in (0..n_hidden).rev() {
        // dA_l = upstream · W_{l+1}
        let da = upstream.matmul(&weights[l + 1])?;
        // dZ_l = dA_l ⊙ 1{Z_l > 0}
        let mut dz = da;
        for i in 0..dz.rows() {
            for j in 0..dz.cols() {
                if pre[l].get(i, j) <= 0.0 {
                    dz.set(i, j, 0.0);
                }
            }
        }
        let input = if l == 0 { x } else { &act[l - 1] };
        grads[l] = dz.matmul_tn(input)?;
        upstream = dz;
    }
    Ok((loss, grads))
}

fn batch_loss(weights: &[Matrix], x: &Matrix, y: &Vector) -> Result<f64> {
    let (_, _, logits) = forward_batch(weights, x)?;
    Ok(logits
        .iter()
        .zip(y.as_slice())
        .map(|(&z, &t)| bce(z, t))
        .sum::<f64>()
        / x.rows() as f64)
}

/// Trains with full-batch Adam and early stopping.
///
/// Validation loss is evaluated after every epoch; training stops when it
/// fails to improve for `patience` consecutive epochs or at `max_epochs`.
/// The returned weights are those of the best-validation-loss epoch.
pub fn train(model: MlpModel, d: &Dataset, cfg: &TrainConfig) -> Result<MlpModel> {
    cfg.validate()?;
    let (x_train, y_train, _) = d.train_matrix();
    let (x_val, y_val, _) = d.val_matrix();
    if x_train.rows() == 0 {
        return Err(Error::Config("train split is empty".into()));
    }
    if x_val.rows() == 0 {
        return Err(Error::Config("validation split is empty".into()));
    }
    if x_train.cols() != model.arch.input_dim {
        return Err(Error::Shape {
            op: "train",
            detail: format!(
                "dataset has {} features but the architecture expects {}",
                x_train.cols(),
                model.arch.input_dim
            ),
        });
    }

    let mut weights = model.weights.clone();
    let mut m_state: Vec<Vec<f64>> =
        weights.iter().map(|w| vec![0.0; w.as_slice().len()]).collect();
    let mut v_state = m_state.clone();

    let mut best_weights = weights.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut bad_streak = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let (loss, grads) = bce_gradients(&weights, &x_train, &y_train)?;
        if !loss.is_finite() {
            return Err(Error::Train { epoch, detail: format!("train loss {loss}") });
        }
        let t = epoch as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (l, grad) in grads.iter().enumerate() {
            let g = grad.as_slice();
            let w = &mut weights[l];
            let m = &mut m_state[l];
            let v = &mut v_state[l];
            let cols = w.cols();
            for idx in 0..g.len() {
                m[idx] = cfg.beta1 * m[idx] + (1.0 - cfg.beta1) * g[idx];
                v[idx] = cfg.beta2 * v[idx] + (1.0 - cfg.beta2) * g[idx] * g[idx];
                let m_hat = m[idx] / bc1;
                let v_hat = v[idx] / bc2;
                let step = cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                let (i, j) = (idx / cols, idx % cols);
                w.set(i, j, w.get(i, j) - step);
            }
        }

        let val_loss = batch_loss(&weights, &x_val, &y_val)?;
        if !val_loss.is_finite() {
            return Err(Error::Train { epoch, detail: format!("val loss {val_loss}") });
        }
        // Strict improvement with a small absolute tolerance so float noise
        // cannot reset the patience counter.
        if val_loss < best_val - 1e-12 {
            best_val = val_loss;
            best_epoch = epoch;
            best_weights = weights.clone();
            bad_streak = 0;
        } else {
            bad_streak += 1;
            if bad_streak >= cfg.patience {
                break;
            }
        }
    }

    Ok(MlpModel {
        arch: model.arch,
        seed: model.seed,
        weights: best_weights,
        train_meta: Some(TrainMeta { epochs_run, best_epoch, best_val_loss: best_val }),
    })
}

/// The learning procedure 𝓛: seeded initialization followed by [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub arch: Architecture,
    pub cfg: TrainConfig,
}

impl Learner {
    pub fn new(arch: Architecture, cfg: TrainConfig) -> Self {
        Self { arch, cfg }
    }

    pub fn fit(&self, d: &Dataset) -> Result<MlpModel> {
        self.arch.validate()?;
        train(init(&self.arch, self.cfg.seed), d, &self.cfg)
    }
}

impl MlpModel {
    /// Pre-sigmoid output for one input.
    pub fn logit(&self, x: &Vector) -> Result<f64> {
        if x.len() != self.arch.input_dim {
            return Err(Error::Shape {
                op: "logit",
                detail: format!("input has {} entries, expected {}", x.len(), self.arch.input_dim),
            });
        }
        let mut v = x.clone();
        let n_hidden = self.weights.len() - 1;
        for w in &self.weights[..n_hidden] {
            let mut z = w.matvec(&v)?;
            for i in 0..z.len() {
                if z.get(i) <= 0.0 {
                    z.set(i, 0.0);
                }
            }
            v = z;
        }
        self.weights[n_hidden].matvec(&v).map(|out| out.get(0))
    }

    /// Predicted label: 1 iff the logit is strictly positive.
    pub fn predict(&self, x: &Vector) -> Result<u8> {
        Ok(if self.logit(x)? > 0.0 { 1 } else { 0 })
    }

    /// Binary active/inactive state of every hidden neuron for `x`.
    pub fn activation_pattern(&self, x: &Vector) -> Result<ActivationPattern> {
        if x.len() != self.arch.input_dim {
            return Err(Error::Shape {
                op: "activation_pattern",
                detail: format!("input has {} entries, expected {}", x.len(), self.arch.input_dim),
            });
        }
        let mut v = x.clone();
        let n_hidden = self.weights.len() - 1;
        let mut layers = Vec::with_capacity(n_hidden);
        for w in &self.weights[..n_hidden] {
            let mut z = w.matvec(&v)?;
            layers.push((0..z.len()).map(|i| z.get(i) > 0.0).collect());
            for i in 0..z.len() {
                if z.get(i) <= 0.0 {
                    z.set(i, 0.0);
                }
            }
            v = z;
        }
        Ok(ActivationPattern { layers })
    }

    /// Exact local linear weights: masks each weight matrix by the activation
    /// pattern of `x` and multiplies across layers, so `θᵀx` equals the logit.
    pub fn linearize(&self, x: &Vector) -> Result<Vector> {
        let pattern = self.activation_pattern(x)?;
        let n_hidden = self.weights.len() - 1;
        // Row vector, starting from the output layer.
        let mut theta: Vec<f64> = self.weights[n_hidden].row(0).to_vec();
        for l in (0..n_hidden).rev() {
            let w = &self.weights[l];
            let mask = &pattern.layers[l];
            let mut next = vec![0.0; w.cols()];
            for (i, &active) in mask.iter().enumerate() {
                if !active || theta[i] == 0.0 {
                    continue;
                }
                let coeff = theta[i];
                let row = w.row(i);
                for j in 0..w.cols() {
                    next[j] += coeff * row[j];
                }
            }
            theta = next;
        }
        Vector::from_vec(theta)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Report(format!("model parse: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
