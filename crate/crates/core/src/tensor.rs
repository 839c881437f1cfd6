//! Dense 64-bit float tensors.
//!
//! A [`Tensor`] is a flat value buffer plus a shape. Gradients live on the
//! tensor itself so that graph leaves, parameters and plain values share one
//! representation. Everything is f64: at desk scale speed is irrelevant and
//! finite-difference tests get much tighter.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        if n != values.len() {
            return Err(Error::Dimension {
                op: "tensor::new",
                lhs: shape,
                rhs: vec![values.len()],
            });
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of rows when interpreted as a batch: first dimension for 2-D,
    /// one row for 1-D.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Row width: last dimension.
    pub fn row_len(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.row_len();
        &self.values[r * w..(r + 1) * w]
    }

    /// Extract one row as a 1-D tensor.
    pub fn row_tensor(&self, r: usize) -> Tensor {
        Tensor::from_vec(self.row(r).to_vec())
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            requires_grad: false,
            grad: None,
        })
    }

    /// Stack 1-D rows of equal width into a 2-D tensor.
    pub fn stack_rows(rows: &[Tensor]) -> Result<Tensor> {
        let w = rows
            .first()
            .map(|t| t.row_len())
            .ok_or_else(|| Error::contract("stack_rows: empty row list"))?;
        let mut values = Vec::with_capacity(rows.len() * w);
        for r in rows {
            if r.row_len() != w || r.rows() != 1 {
                return Err(Error::Dimension {
                    op: "stack_rows",
                    lhs: vec![w],
                    rhs: r.shape.clone(),
                });
            }
            values.extend_from_slice(r.values());
        }
        Tensor::new(vec![rows.len(), w], values)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Raw 2-D matrix multiply used by both the graph and plain inference:
/// a[m,k] · b[k,n] -> c[m,n], cache-friendly ikj order.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

pub fn relu_raw(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid_raw(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu_raw(x: f64) -> f64 {
    x * sigmoid_raw(x)
}

/// Numerically stable softmax of one lane, written into `out`.
pub fn softmax_lane(lane: &[f64], out: &mut [f64]) {
    let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(lane) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// log(sum(exp(lane))) with the usual max shift.
pub fn log_sum_exp(lane: &[f64]) -> f64 {
    let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + lane.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}
