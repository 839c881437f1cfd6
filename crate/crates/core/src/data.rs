//! Synthetic low-dimensional datasets and class-incremental task streams.
//!
//! Generators are pure functions of their spec: the same seed always yields
//! identical bytes. Features live in the [−1, 1] box. The Gaussian grid lays
//! consecutive class ids on neighboring anchors (snake order) so that some
//! previous/current class pairs are always adjacent — without that, boundary
//! guidance has nothing to push against.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, phase};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generator {
    GaussianGrid,
    Rings,
    Moons,
}

impl Generator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Generator::GaussianGrid => "gaussian_grid",
            Generator::Rings => "rings",
            Generator::Moons => "moons",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian_grid" => Ok(Generator::GaussianGrid),
            "rings" => Ok(Generator::Rings),
            "moons" => Ok(Generator::Moons),
            other => Err(Error::config(format!(
                "unknown generator `{other}` (expected gaussian_grid, rings or moons)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub dimension: usize,
    pub classes: usize,
    pub samples_per_class: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("dataset needs at least 2 classes"));
        }
        if self.samples_per_class < 1 {
            return Err(Error::config("samples_per_class must be at least 1"));
        }
        if !(2..=16).contains(&self.dimension) {
            return Err(Error::config(format!(
                "dimension must lie in [2, 16], got {}",
                self.dimension
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::config("noise_std must be nonnegative"));
        }
        if self.generator == Generator::Moons && self.classes != 2 {
            return Err(Error::config(
                "the moons generator is two-class; set classes = 2",
            ));
        }
        Ok(())
    }
}

/// Labeled feature matrix; labels[i] belongs to features row i.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.features.row_len()
    }

    /// Row indices per class id, ascending.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.dimension();
        let mut values = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features: Tensor::new(vec![indices.len(), d], values).expect("valid shape"),
            labels,
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dimension() != other.dimension() {
            return Err(Error::Dimension {
                op: "dataset::concat",
                lhs: self.features.shape().to_vec(),
                rhs: other.features.shape().to_vec(),
            });
        }
        let mut values = self.features.values().to_vec();
        values.extend_from_slice(other.features.values());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Dataset {
            features: Tensor::new(vec![self.len() + other.len(), self.dimension()], values)?,
            labels,
        })
    }
}

/// Grid anchor positions for `classes` ids: snake order over a near-square
/// grid spanning [-0.8, 0.8] in the first two dimensions.
pub fn grid_anchors(classes: usize, dimension: usize) -> Vec<Vec<f64>> {
    let cols = (classes as f64).sqrt().ceil() as usize;
    let rows = classes.div_ceil(cols);
    let coord = |idx: usize, count: usize| -> f64 {
        if count <= 1 {
            0.0
        } else {
            -0.8 + 1.6 * idx as f64 / (count - 1) as f64
        }
    };
    (0..classes)
        .map(|c| {
            let row = c / cols;
            let col_in_row = c % cols;
            let col = if row % 2 == 0 {
                col_in_row
            } else {
                cols - 1 - col_in_row
            };
            let mut anchor = vec![0.0; dimension];
            anchor[0] = coord(col, cols);
            anchor[1] = coord(row, rows);
            anchor
        })
        .collect()
}

/// Generate a labeled dataset. Deterministic in the spec; all features are
/// clamped to [−1, 1].
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, &[phase::DATA_GEN]);
    let d = spec.dimension;
    let n = spec.classes * spec.samples_per_class;
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);

    let push_point = |base: &[f64], r: &mut rand_chacha::ChaCha8Rng, out: &mut Vec<f64>| {
        for &b in base {
            let noise: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, r);
            out.push((b + spec.noise_std * noise).clamp(-1.0, 1.0));
        }
    };

    match spec.generator {
        Generator::GaussianGrid => {
            let anchors = grid_anchors(spec.classes, d);
            for (c, anchor) in anchors.iter().enumerate() {
                for _ in 0..spec.samples_per_class {
                    push_point(anchor, &mut r, &mut values);
                    labels.push(c);
                }
            }
        }
        Generator::Rings => {
            for c in 0..spec.classes {
                let radius = 0.15 + 0.75 * c as f64 / (spec.classes - 1) as f64;
                for _ in 0..spec.samples_per_class {
                    let theta = r.gen::<f64>() * std::f64::consts::TAU;
                    let mut base = vec![0.0; d];
                    base[0] = radius * theta.cos();
                    base[1] = radius * theta.sin();
                    push_point(&base, &mut r, &mut values);
                    labels.push(c);
                }
            }
        }
        Generator::Moons => {
            for c in 0..2usize {
                for _ in 0..spec.samples_per_class {
                    let theta = r.gen::<f64>() * std::f64::consts::PI;
                    let mut base = vec![0.0; d];
                    if c == 0 {
                        base[0] = 0.8 * theta.cos();
                        base[1] = 0.8 * theta.sin() - 0.3;
                    } else {
                        base[0] = 0.8 - 0.8 * theta.cos();
                        base[1] = 0.3 - 0.8 * theta.sin();
                    }
                    push_point(&base, &mut r, &mut values);
                    labels.push(c);
                }
            }
        }
    }

    Ok(Dataset {
        features: Tensor::new(vec![n, d], values)?,
        labels,
    })
}

/// One task of a class-incremental stream.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub classes: Vec<usize>,
    pub train: Dataset,
    pub test: Dataset,
}

/// Ordered task stream with disjoint class sets.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub tasks: Vec<TaskData>,
    pub total_classes: usize,
    pub dimension: usize,
}

impl Scenario {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Classes of tasks 1..=i (1-based), ascending.
    pub fn classes_through(&self, i: usize) -> Vec<usize> {
        let mut cs: Vec<usize> = self.tasks[..i]
            .iter()
            .flat_map(|t| t.classes.iter().copied())
            .collect();
        cs.sort_unstable();
        cs
    }

    /// Classes of tasks 1..i (all tasks before the 1-based task i).
    pub fn previous_classes(&self, i: usize) -> Vec<usize> {
        self.classes_through(i.saturating_sub(1))
    }
}

/// Split a dataset into an ordered task stream: consecutive class groups of
/// `classes_per_task`, with a seeded 80/20 train/test split per class.
pub fn split_tasks(dataset: &Dataset, classes_per_task: usize, seed: u64) -> Result<Scenario> {
    let mut all_classes: Vec<usize> = dataset.labels.clone();
    all_classes.sort_unstable();
    all_classes.dedup();
    let total = all_classes.len();
    if classes_per_task == 0 || total % classes_per_task != 0 {
        return Err(Error::config(format!(
            "{total} classes are not divisible into tasks of {classes_per_task}"
        )));
    }
    if all_classes.iter().enumerate().any(|(i, &c)| i != c) {
        return Err(Error::config("class ids must be contiguous from 0"));
    }

    let mut tasks = Vec::new();
    for group in all_classes.chunks(classes_per_task) {
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for &class in group {
            let mut idx = dataset.indices_of(class);
            if idx.is_empty() {
                return Err(Error::config(format!("class {class} has no samples")));
            }
            let mut r = rng::stream(seed, &[phase::SPLIT, class as u64]);
            idx.shuffle(&mut r);
            let n_test = (idx.len() / 5).max(1);
            test_idx.extend_from_slice(&idx[..n_test]);
            train_idx.extend_from_slice(&idx[n_test..]);
        }
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        tasks.push(TaskData {
            classes: group.to_vec(),
            train: dataset.subset(&train_idx),
            test: dataset.subset(&test_idx),
        });
    }
    Ok(Scenario {
        tasks,
        total_classes: total,
        dimension: dataset.dimension(),
    })
}

/// Write a dataset as `x_0,…,x_{d−1},label` CSV plus a JSON sidecar with the
/// generating spec.
pub fn save_dataset(dataset: &Dataset, spec: &DatasetSpec, csv_path: &Path) -> Result<()> {
    let mut out = String::new();
    let d = dataset.dimension();
    for j in 0..d {
        let _ = write!(out, "x_{j},");
    }
    out.push_str("label\n");
    for (i, &label) in dataset.labels.iter().enumerate() {
        for v in dataset.features.row(i) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{label}");
    }
    std::fs::write(csv_path, out)?;
    let sidecar = csv_path.with_extension("spec.json");
    std::fs::write(sidecar, serde_json::to_vec_pretty(spec)?)?;
    Ok(())
}

/// Load a dataset written by [`save_dataset`].
pub fn load_dataset(csv_path: &Path) -> Result<(Dataset, DatasetSpec)> {
    let text = std::fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::config("empty dataset file"))?;
    let d = header.split(',').count() - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::config(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                d + 1,
                fields.len()
            )));
        }
        for f in &fields[..d] {
            values.push(f.parse::<f64>().map_err(|e| {
                Error::config(format!("line {}: bad float `{f}`: {e}", lineno + 2))
            })?);
        }
        labels.push(fields[d].parse::<usize>().map_err(|e| {
            Error::config(format!("line {}: bad label: {e}", lineno + 2))
        })?);
    }
    let n = labels.len();
    let spec_text = std::fs::read_to_string(csv_path.with_extension("spec.json"))?;
    let spec: DatasetSpec = serde_json::from_str(&spec_text)?;
    Ok((
        Dataset {
            features: Tensor::new(vec![n, d], values)?,
            labels,
        },
        spec,
    ))
}
