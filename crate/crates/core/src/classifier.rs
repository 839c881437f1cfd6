//! Continually trained softmax classifier and the FGSM boundary probe.
//!
//! The output head covers every class in the scenario from the start; there
//! is no head expansion. Restricted-set readouts mask logits to a candidate
//! class set without renormalizing the others.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Reduction};
use crate::nn::{harvest_grads, Activation, Mlp, ParamSet, Parameter};
use crate::optim::Optimizer;
use crate::tensor::{softmax_lane, Tensor};

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub mlp: Mlp,
    pub num_classes: usize,
    pub data_dim: usize,
}

impl ClassifierModel {
    pub fn new(data_dim: usize, num_classes: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![data_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        ClassifierModel {
            mlp: Mlp::new(&dims, Activation::Relu, "classifier", rng),
            num_classes,
            data_dim,
        }
    }

    /// Logits for a batch, no tape.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.mlp.infer(x)
    }

    /// Logits plus penultimate-layer activations, no tape.
    pub fn logits_with_features(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.mlp.infer_with_features(x)
    }

    /// Softmax probabilities per row.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        let logits = self.logits(x)?;
        let mut values = vec![0.0; logits.len()];
        let c = logits.row_len();
        let mut lane = vec![0.0; c];
        for r in 0..logits.rows() {
            softmax_lane(logits.row(r), &mut lane);
            values[r * c..(r + 1) * c].copy_from_slice(&lane);
        }
        Tensor::new(logits.shape().to_vec(), values)
    }

    /// Predicted class per row (argmax over all classes, lowest id on ties).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows())
            .map(|r| argmax(logits.row(r)))
            .collect())
    }

    /// Softmax probability of `class` per row.
    pub fn confidence(&self, x: &Tensor, class: usize) -> Result<Vec<f64>> {
        if class >= self.num_classes {
            return Err(Error::contract(format!(
                "confidence: class {class} out of range ({})",
                self.num_classes
            )));
        }
        let probs = self.probabilities(x)?;
        Ok((0..probs.rows()).map(|r| probs.row(r)[class]).collect())
    }

    /// Argmax restricted to `allowed` per row; ties break to the lowest id.
    pub fn predict_restricted(&self, x: &Tensor, allowed: &[usize]) -> Result<Vec<usize>> {
        if allowed.is_empty() {
            return Err(Error::contract("predict_restricted: empty class set"));
        }
        if let Some(&bad) = allowed.iter().find(|&&c| c >= self.num_classes) {
            return Err(Error::contract(format!(
                "predict_restricted: class {bad} out of range ({})",
                self.num_classes
            )));
        }
        let logits = self.logits(x)?;
        Ok((0..logits.rows())
            .map(|r| restricted_argmax(logits.row(r), allowed))
            .collect())
    }
}

impl ParamSet for ClassifierModel {
    fn params(&self) -> Vec<&Parameter> {
        self.mlp.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.mlp.params_mut()
    }
}

fn argmax(lane: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in lane.iter().enumerate() {
        if v > lane[best] {
            best = i;
        }
    }
    best
}

/// Highest-logit class among `allowed`, lowest class id on exact ties.
pub fn restricted_argmax(lane: &[f64], allowed: &[usize]) -> usize {
    let mut sorted: Vec<usize> = allowed.to_vec();
    sorted.sort_unstable();
    let mut best = sorted[0];
    for &c in &sorted[1..] {
        if lane[c] > lane[best] {
            best = c;
        }
    }
    best
}

/// One cross-entropy optimizer step. Returns the batch loss.
pub fn classifier_train_step(
    model: &mut ClassifierModel,
    x: &Tensor,
    labels: &[usize],
    optimizer: &mut Optimizer,
) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let (logits, binding) = model.mlp.forward_train(&mut g, xv)?;
    let loss = g.cross_entropy(logits, labels)?;
    let loss_value = g.value(loss)[0];
    if !loss_value.is_finite() {
        return Err(Error::Training(format!(
            "classifier loss is not finite: {loss_value}"
        )));
    }
    g.backward(loss)?;
    harvest_grads(&mut model.mlp, &g, &binding)?;
    optimizer.step(&mut model.mlp)?;
    Ok(loss_value)
}

/// Gradient of the summed cross-entropy w.r.t. the input batch; each row's
/// gradient is independent of the other rows.
pub fn input_gradient(
    model: &ClassifierModel,
    x: &Tensor,
    targets: &[usize],
) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let logits = model.mlp.forward_frozen(&mut g, xv)?;
    let loss = g.cross_entropy_with(logits, targets, Reduction::Sum)?;
    g.backward(loss)?;
    let grad = g.grad(xv).expect("input grad populated").to_vec();
    Tensor::new(x.shape().to_vec(), grad)
}

/// FGSM probe magnitude. ε must be strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epsilon: f64,
}

impl ProbeConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(Error::contract(format!(
                "probe epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(ProbeConfig { epsilon })
    }
}

/// Fast gradient sign step toward the restricted-argmax current-task class:
/// x* = x̂ − ε·sign(∇_x̂ ℓ(f(x̂), y_i)). sign(0) is 0: that coordinate stays.
pub fn fgsm_perturb(
    model: &ClassifierModel,
    x_hat: &Tensor,
    probe: &ProbeConfig,
    current_task_classes: &[usize],
) -> Result<Tensor> {
    let targets = model.predict_restricted(x_hat, current_task_classes)?;
    let grad = input_gradient(model, x_hat, &targets)?;
    x_hat.zip(&grad, "fgsm_perturb", |x, g| {
        let s = if g > 0.0 {
            1.0
        } else if g < 0.0 {
            -1.0
        } else {
            0.0
        };
        x - probe.epsilon * s
    })
}

/// Statistics of the boundary probe over a batch of rehearsal samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStats {
    /// Fraction of samples whose prediction changed after the perturbation.
    pub flip_rate: f64,
    /// Mean previous-classifier confidence on the source labels.
    pub mean_conf_prev: f64,
    /// Mean current-classifier confidence on the source labels.
    pub mean_conf_curr: f64,
}

/// Perturb every sample and measure flips under the current classifier plus
/// mean source-label confidences under both classifier snapshots.
pub fn boundary_flip_rate(
    curr: &ClassifierModel,
    prev: &ClassifierModel,
    samples: &Tensor,
    source_labels: &[usize],
    probe: &ProbeConfig,
    current_task_classes: &[usize],
) -> Result<BoundaryStats> {
    let n = samples.rows();
    if n == 0 || source_labels.len() != n {
        return Err(Error::contract(format!(
            "boundary_flip_rate: got {n} samples and {} labels",
            source_labels.len()
        )));
    }
    let before = curr.predict(samples)?;
    let perturbed = fgsm_perturb(curr, samples, probe, current_task_classes)?;
    let after = curr.predict(&perturbed)?;
    let flips = before
        .iter()
        .zip(&after)
        .filter(|(b, a)| b != a)
        .count();

    let probs_prev = prev.probabilities(samples)?;
    let probs_curr = curr.probabilities(samples)?;
    let mut conf_prev = 0.0;
    let mut conf_curr = 0.0;
    for (r, &y) in source_labels.iter().enumerate() {
        conf_prev += probs_prev.row(r)[y];
        conf_curr += probs_curr.row(r)[y];
    }
    Ok(BoundaryStats {
        flip_rate: flips as f64 / n as f64,
        mean_conf_prev: conf_prev / n as f64,
        mean_conf_curr: conf_curr / n as f64,
    })
}
