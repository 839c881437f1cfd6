//! Parameters and MLP building blocks.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{matmul_raw, relu_raw, silu_raw, Tensor};

/// Named trainable tensor. Names are unique within one model and key the
/// checkpoint format.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Parameter {
            name: name.into(),
            tensor: tensor.with_grad(),
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensor.grad = None;
    }
}

/// Anything exposing an ordered flat list of parameters.
pub trait ParamSet {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;
}

/// Copy gradients from graph leaves back onto model parameters, accumulating.
/// `binding` must align with `params_mut()` order.
pub fn harvest_grads(model: &mut impl ParamSet, g: &Graph, binding: &[Var]) -> Result<()> {
    let mut params = model.params_mut();
    if params.len() != binding.len() {
        return Err(Error::contract(format!(
            "harvest_grads: binding length {} != parameter count {}",
            binding.len(),
            params.len()
        )));
    }
    for (p, &v) in params.iter_mut().zip(binding) {
        let src = g
            .grad(v)
            .ok_or_else(|| Error::contract(format!("missing grad for parameter {}", p.name)))?;
        match &mut p.tensor.grad {
            Some(acc) => {
                for (a, &s) in acc.iter_mut().zip(src) {
                    *a += s;
                }
            }
            None => p.tensor.grad = Some(src.to_vec()),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    fn raw(self, x: f64) -> f64 {
        match self {
            Activation::Relu => relu_raw(x),
            Activation::Silu => silu_raw(x),
        }
    }

    fn apply(self, g: &mut Graph, v: Var) -> Var {
        match self {
            Activation::Relu => g.relu(v),
            Activation::Silu => g.silu(v),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter, // [in, out]
    pub bias: Parameter,   // [out]
}

impl Linear {
    pub fn new(prefix: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        // He initialization; suits both ReLU and SiLU stacks.
        let std = (2.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * std)
            .collect();
        Linear {
            weight: Parameter::new(
                format!("{prefix}.weight"),
                Tensor::new(vec![fan_in, fan_out], w).expect("valid shape"),
            ),
            bias: Parameter::new(format!("{prefix}.bias"), Tensor::zeros(vec![fan_out])),
        }
    }
}

/// Multi-layer perceptron: Linear → activation per hidden layer, linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims` = [input, hidden..., output].
    pub fn new(dims: &[usize], activation: Activation, prefix: &str, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{prefix}.layer{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.tensor.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.tensor.shape()[1]
    }

    /// Forward on the tape with parameters bound as trainable leaves.
    /// Returns the output var and the leaf binding in `params()` order.
    pub fn forward_train(&self, g: &mut Graph, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut binding = Vec::with_capacity(self.layers.len() * 2);
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.input(layer.weight.tensor.clone());
            let b = g.input(layer.bias.tensor.clone());
            binding.push(w);
            binding.push(b);
            let z = g.matmul(h, w)?;
            h = g.add(z, b)?;
            if i != last {
                h = self.activation.apply(g, h);
            }
        }
        Ok((h, binding))
    }

    /// Forward on the tape with parameters bound as constants; only the
    /// input can receive gradients.
    pub fn forward_frozen(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.constant(layer.weight.tensor.clone());
            let b = g.constant(layer.bias.tensor.clone());
            let z = g.matmul(h, w)?;
            h = g.add(z, b)?;
            if i != last {
                h = self.activation.apply(g, h);
            }
        }
        Ok(h)
    }

    /// Plain forward without the tape. Uses the same kernels as the graph,
    /// so values agree bit-for-bit with the tape forward.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.infer_with_features(x)?.0)
    }

    /// Plain forward returning (output, penultimate activations).
    pub fn infer_with_features(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let rows = x.rows();
        if x.row_len() != self.input_dim() {
            return Err(Error::Dimension {
                op: "mlp::infer",
                lhs: x.shape().to_vec(),
                rhs: vec![self.input_dim()],
            });
        }
        let mut h = x.values().to_vec();
        let mut width = x.row_len();
        let mut features = h.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let wshape = layer.weight.tensor.shape();
            let (fan_in, fan_out) = (wshape[0], wshape[1]);
            let mut z = matmul_raw(&h, layer.weight.tensor.values(), rows, fan_in, fan_out);
            let bias = layer.bias.tensor.values();
            for (j, v) in z.iter_mut().enumerate() {
                *v += bias[j % fan_out];
            }
            if i != last {
                for v in z.iter_mut() {
                    *v = self.activation.raw(*v);
                }
                features = z.clone();
            }
            h = z;
            width = fan_out;
        }
        let feat_width = if self.layers.len() == 1 {
            x.row_len()
        } else {
            self.layers[last - 1].weight.tensor.shape()[1]
        };
        Ok((
            Tensor::new(vec![rows, width], h)?,
            Tensor::new(vec![rows, feat_width], features)?,
        ))
    }
}

impl ParamSet for Mlp {
    fn params(&self) -> Vec<&Parameter> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}
