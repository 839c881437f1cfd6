//! Noise schedules, forward noising, ε-prediction training and deterministic
//! DDIM sampling for a class-conditional MLP denoiser.
//!
//! Sampling is η=0 DDIM only: each step predicts the clean sample from the
//! current ε estimate and takes the deterministic update
//! x_{t_prev} = √ᾱ_{t_prev}·ẑ0 + √(1−ᾱ_{t_prev})·ε̂, with ᾱ_0 = 1.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{harvest_grads, Activation, Mlp, ParamSet, Parameter};
use crate::optim::Optimizer;
use crate::rng;
use crate::tensor::Tensor;

/// β/α/ᾱ sequences over diffusion time indices 1..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` to `beta_end` over `num_steps`.
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::config("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "invalid beta range: need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas = if num_steps == 1 {
            vec![beta_start]
        } else {
            (0..num_steps)
                .map(|i| {
                    beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
                })
                .collect()
        };
        Self::from_betas(betas)
    }

    /// Build the derived arrays from an explicit beta sequence.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("schedule needs at least one step"));
        }
        if betas.iter().any(|&b| !(0.0..1.0).contains(&b) || b == 0.0) {
            return Err(Error::config("all betas must lie in (0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|&b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Standard DDPM default: T=1000, betas from 1e-4 to 0.02.
    pub fn default_ddpm() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid default")
    }

    /// Desk-scale preset: T=200 with the beta range widened so the terminal
    /// signal-to-noise ratio matches the 1000-step default.
    pub fn desk() -> Self {
        Self::linear(200, 1e-4, 0.1).expect("valid preset")
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::Index(format!(
                "time index {t} outside [1, {}]",
                self.num_steps()
            )));
        }
        Ok(())
    }

    /// β_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// α_t for t in 1..=T.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t for t in 0..=T, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// Forward noising: x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε.
pub fn q_sample(x0: &Tensor, t: usize, epsilon: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    schedule.check_t(t)?;
    if x0.shape() != epsilon.shape() {
        return Err(Error::Dimension {
            op: "q_sample",
            lhs: x0.shape().to_vec(),
            rhs: epsilon.shape().to_vec(),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (c0, ce) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip(epsilon, "q_sample", |x, e| c0 * x + ce * e)
}

/// Rowwise forward noising with a per-row time index.
pub fn q_sample_rows(
    x0: &Tensor,
    ts: &[usize],
    epsilon: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    if x0.shape() != epsilon.shape() || x0.rows() != ts.len() {
        return Err(Error::Dimension {
            op: "q_sample_rows",
            lhs: x0.shape().to_vec(),
            rhs: vec![ts.len()],
        });
    }
    let width = x0.row_len();
    let mut values = Vec::with_capacity(x0.len());
    for (r, &t) in ts.iter().enumerate() {
        schedule.check_t(t)?;
        let ab = schedule.alpha_bar(t);
        let (c0, ce) = (ab.sqrt(), (1.0 - ab).sqrt());
        for j in 0..width {
            values.push(c0 * x0.row(r)[j] + ce * epsilon.row(r)[j]);
        }
    }
    Tensor::new(x0.shape().to_vec(), values)
}

/// Clean-sample prediction: ẑ0 = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t.
pub fn predict_z0(
    x_t: &Tensor,
    t: usize,
    eps_pred: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    schedule.check_t(t)?;
    if x_t.shape() != eps_pred.shape() {
        return Err(Error::Dimension {
            op: "predict_z0",
            lhs: x_t.shape().to_vec(),
            rhs: eps_pred.shape().to_vec(),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (ce, inv) = ((1.0 - ab).sqrt(), 1.0 / ab.sqrt());
    x_t.zip(eps_pred, "predict_z0", |x, e| (x - ce * e) * inv)
}

/// Deterministic DDIM update from t to t_prev (< t), recomputing ẑ0 from the
/// supplied (possibly guided) ε̂.
pub fn ddim_step(
    x_t: &Tensor,
    t: usize,
    t_prev: usize,
    eps_hat: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    if t_prev >= t {
        return Err(Error::contract(format!(
            "ddim_step: time pair must decrease, got {t} -> {t_prev}"
        )));
    }
    let z0 = predict_z0(x_t, t, eps_hat, schedule)?;
    let ab_prev = schedule.alpha_bar(t_prev);
    let (c0, ce) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    z0.zip(eps_hat, "ddim_step", |z, e| c0 * z + ce * e)
}

/// DDIM time subsequence: `ddim_steps` evenly spaced indices from T down to 1
/// (inclusive), then the final hop to 0. Strictly decreasing.
pub fn ddim_times(t_diff: usize, ddim_steps: usize) -> Vec<usize> {
    let mut times = Vec::with_capacity(ddim_steps + 1);
    if ddim_steps <= 1 {
        times.push(t_diff);
    } else {
        let span = (t_diff - 1) as f64;
        let denom = (ddim_steps - 1) as f64;
        for i in 0..ddim_steps {
            let t = (t_diff as f64 - span * i as f64 / denom).round() as usize;
            if times.last() != Some(&t) {
                times.push(t);
            }
        }
    }
    times.push(0);
    times
}

/// Deterministic sampler configuration. η is fixed at 0: only the initial
/// x_T draw is random, governed by `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub ddim_steps: usize,
    pub eta: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(ddim_steps: usize, seed: u64) -> Self {
        SamplerConfig {
            ddim_steps,
            eta: 0.0,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.ddim_steps == 0 || self.ddim_steps > schedule.num_steps() {
            return Err(Error::config(format!(
                "ddim_steps must lie in [1, {}], got {}",
                schedule.num_steps(),
                self.ddim_steps
            )));
        }
        if self.eta != 0.0 {
            return Err(Error::config("eta is fixed at 0 (deterministic DDIM)"));
        }
        Ok(())
    }
}

/// MLP ε-predictor with sinusoidal time conditioning and a learned class
/// embedding table carrying one extra unconditional row.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    pub mlp: Mlp,
    pub class_table: Parameter, // [num_classes + 1, class_dim]
    pub data_dim: usize,
    pub num_classes: usize,
    pub time_dim: usize,
    pub class_dim: usize,
}

impl DenoiserModel {
    pub fn new(
        data_dim: usize,
        num_classes: usize,
        hidden: &[usize],
        time_dim: usize,
        class_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(time_dim % 2 == 0, "time embedding dimension must be even");
        let mut dims = vec![data_dim + time_dim + class_dim];
        dims.extend_from_slice(hidden);
        dims.push(data_dim);
        let mlp = Mlp::new(&dims, Activation::Silu, "denoiser", rng);
        let table: Vec<f64> = (0..(num_classes + 1) * class_dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * 0.2)
            .collect();
        DenoiserModel {
            mlp,
            class_table: Parameter::new(
                "denoiser.class_table",
                Tensor::new(vec![num_classes + 1, class_dim], table).expect("valid shape"),
            ),
            data_dim,
            num_classes,
            time_dim,
            class_dim,
        }
    }

    /// Row index into the embedding table for an optional class label.
    fn table_row(&self, label: Option<usize>) -> Result<usize> {
        match label {
            Some(c) if c < self.num_classes => Ok(c),
            Some(c) => Err(Error::contract(format!(
                "class label {c} out of range (num classes {})",
                self.num_classes
            ))),
            None => Ok(self.num_classes),
        }
    }

    fn time_embedding_row(&self, t: usize, out: &mut Vec<f64>) {
        let half = self.time_dim / 2;
        for j in 0..half {
            let freq = (-(10_000f64.ln()) * j as f64 / half as f64).exp();
            let v = t as f64 * freq;
            out.push(v.sin());
            out.push(v.cos());
        }
    }

    fn assemble_input(
        &self,
        x_t: &Tensor,
        ts: &[usize],
        labels: Option<&[usize]>,
    ) -> Result<(Tensor, Vec<usize>)> {
        let rows = x_t.rows();
        if x_t.row_len() != self.data_dim || ts.len() != rows {
            return Err(Error::Dimension {
                op: "denoiser::forward",
                lhs: x_t.shape().to_vec(),
                rhs: vec![self.data_dim, ts.len()],
            });
        }
        let mut time_values = Vec::with_capacity(rows * self.time_dim);
        for &t in ts {
            self.time_embedding_row(t, &mut time_values);
        }
        let mut table_rows = Vec::with_capacity(rows);
        match labels {
            Some(ls) => {
                if ls.len() != rows {
                    return Err(Error::Dimension {
                        op: "denoiser::forward",
                        lhs: vec![rows],
                        rhs: vec![ls.len()],
                    });
                }
                for &l in ls {
                    table_rows.push(self.table_row(Some(l))?);
                }
            }
            None => table_rows.resize(rows, self.num_classes),
        }
        Ok((
            Tensor::new(vec![rows, self.time_dim], time_values)?,
            table_rows,
        ))
    }

    /// Tape forward with trainable parameters. Binding order matches
    /// `params()`: MLP layers then the class table.
    pub fn forward_train(
        &self,
        g: &mut Graph,
        x_t: &Tensor,
        ts: &[usize],
        labels: Option<&[usize]>,
    ) -> Result<(Var, Vec<Var>)> {
        let (time_emb, table_rows) = self.assemble_input(x_t, ts, labels)?;
        let x = g.constant(x_t.clone());
        let temb = g.constant(time_emb);
        let table = g.input(self.class_table.tensor.clone());
        let cemb = g.embedding(table, &table_rows)?;
        let xt = g.concat(x, temb)?;
        let inp = g.concat(xt, cemb)?;
        let (out, mut binding) = self.mlp.forward_train(g, inp)?;
        binding.push(table);
        Ok((out, binding))
    }

    /// Tape forward with frozen parameters and `x_var` already on the tape
    /// (used by the full-backprop guidance escape hatch).
    pub fn forward_frozen_var(
        &self,
        g: &mut Graph,
        x_var: Var,
        t: usize,
        labels: Option<&[usize]>,
    ) -> Result<Var> {
        let rows = g.tensor(x_var).rows();
        let ts = vec![t; rows];
        let x_shape = g.tensor(x_var).shape().to_vec();
        if *x_shape.last().unwrap() != self.data_dim {
            return Err(Error::Dimension {
                op: "denoiser::forward",
                lhs: x_shape,
                rhs: vec![self.data_dim],
            });
        }
        let mut time_values = Vec::with_capacity(rows * self.time_dim);
        for &t in &ts {
            self.time_embedding_row(t, &mut time_values);
        }
        let mut table_rows = Vec::with_capacity(rows);
        match labels {
            Some(ls) => {
                for &l in ls {
                    table_rows.push(self.table_row(Some(l))?);
                }
            }
            None => table_rows.resize(rows, self.num_classes),
        }
        let temb = g.constant(Tensor::new(vec![rows, self.time_dim], time_values)?);
        let table = g.constant(self.class_table.tensor.clone());
        let cemb = g.embedding(table, &table_rows)?;
        let xt = g.concat(x_var, temb)?;
        let inp = g.concat(xt, cemb)?;
        self.mlp.forward_frozen(g, inp)
    }

    /// Plain ε prediction for a batch sharing one time index.
    pub fn infer_eps(&self, x_t: &Tensor, t: usize, labels: Option<&[usize]>) -> Result<Tensor> {
        let ts = vec![t; x_t.rows()];
        self.infer_eps_rows(x_t, &ts, labels)
    }

    /// Plain ε prediction with per-row time indices.
    pub fn infer_eps_rows(
        &self,
        x_t: &Tensor,
        ts: &[usize],
        labels: Option<&[usize]>,
    ) -> Result<Tensor> {
        let (time_emb, table_rows) = self.assemble_input(x_t, ts, labels)?;
        let rows = x_t.rows();
        let width = self.data_dim + self.time_dim + self.class_dim;
        let mut values = Vec::with_capacity(rows * width);
        for r in 0..rows {
            values.extend_from_slice(x_t.row(r));
            values.extend_from_slice(time_emb.row(r));
            values.extend_from_slice(self.class_table.tensor.row(table_rows[r]));
        }
        self.mlp.infer(&Tensor::new(vec![rows, width], values)?)
    }
}

impl ParamSet for DenoiserModel {
    fn params(&self) -> Vec<&Parameter> {
        let mut p = self.mlp.params();
        p.push(&self.class_table);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p: Vec<&mut Parameter> = self
            .mlp
            .layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        p.push(&mut self.class_table);
        p
    }
}

/// Per-step hook for modifying the ε prediction: (eps, x_t, t, ẑ0) → ε̂.
pub type GuidanceHook<'a> = dyn FnMut(&Tensor, &Tensor, usize, &Tensor) -> Result<Tensor> + 'a;

/// Draw a standard-normal tensor from a dedicated stream.
pub fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let values: Vec<f64> = (0..rows * cols)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::new(vec![rows, cols], values).expect("valid shape")
}

fn run_ddim(
    model: &DenoiserModel,
    labels: Option<&[usize]>,
    num: usize,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    mut hook: Option<&mut GuidanceHook>,
) -> Result<Tensor> {
    config.validate(schedule)?;
    if let Some(ls) = labels {
        if ls.len() != num {
            return Err(Error::contract(format!(
                "sample: {num} samples requested but {} labels given",
                ls.len()
            )));
        }
    }
    let mut stream = rng::from_seed(config.seed);
    let mut x = randn(num, model.data_dim, &mut stream);
    let times = ddim_times(schedule.num_steps(), config.ddim_steps);
    for w in times.windows(2) {
        let (t, t_prev) = (w[0], w[1]);
        let eps = model.infer_eps(&x, t, labels)?;
        let z0 = predict_z0(&x, t, &eps, schedule)?;
        let eps_hat = match hook.as_mut() {
            Some(h) => h(&eps, &x, t, &z0)?,
            None => eps,
        };
        x = ddim_step(&x, t, t_prev, &eps_hat, schedule)?;
    }
    Ok(x)
}

/// Class-conditional DDIM sampling; deterministic in (parameters, labels,
/// config). The optional hook modifies ε at every step.
pub fn sample(
    model: &DenoiserModel,
    labels: &[usize],
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    hook: Option<&mut GuidanceHook>,
) -> Result<Tensor> {
    run_ddim(model, Some(labels), labels.len(), config, schedule, hook)
}

/// Unconditional DDIM sampling through the extra embedding row.
pub fn sample_unconditional(
    model: &DenoiserModel,
    num: usize,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    hook: Option<&mut GuidanceHook>,
) -> Result<Tensor> {
    run_ddim(model, None, num, config, schedule, hook)
}

/// One ε-MSE optimizer step on a batch of clean samples. Labels `None`
/// trains the unconditional embedding row.
pub fn diffusion_train_step(
    model: &mut DenoiserModel,
    x0: &Tensor,
    labels: Option<&[usize]>,
    schedule: &NoiseSchedule,
    optimizer: &mut Optimizer,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let rows = x0.rows();
    let ts: Vec<usize> = (0..rows)
        .map(|_| rng.gen_range(1..=schedule.num_steps()))
        .collect();
    let eps = randn(rows, x0.row_len(), rng);
    let x_t = q_sample_rows(x0, &ts, &eps, schedule)?;
    let mut g = Graph::new();
    let (eps_pred, binding) = model.forward_train(&mut g, &x_t, &ts, labels)?;
    let target = g.constant(eps);
    let loss = g.mse(eps_pred, target)?;
    let loss_value = g.value(loss)[0];
    if !loss_value.is_finite() {
        return Err(Error::Training(format!(
            "diffusion loss is not finite: {loss_value}"
        )));
    }
    g.backward(loss)?;
    harvest_grads(model, &g, &binding)?;
    optimizer.step(model)?;
    Ok(loss_value)
}
