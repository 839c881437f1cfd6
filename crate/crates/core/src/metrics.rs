//! Continual-learning metrics and a data-space k-NN precision/recall
//! estimator for generated sets.

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower-triangular task-accuracy record: entry (j, i) is the accuracy on
/// task j's test split after training through task i, for j ≤ i. Stored as
/// one column per completed training task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    columns: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        AccuracyMatrix::default()
    }

    /// Record the evaluations after finishing the next task. Column `i` must
    /// hold accuracies on tasks 1..=i.
    pub fn push_column(&mut self, accs: Vec<f64>) -> Result<()> {
        if accs.len() != self.columns.len() + 1 {
            return Err(Error::contract(format!(
                "accuracy column {} must have {} entries, got {}",
                self.columns.len() + 1,
                self.columns.len() + 1,
                accs.len()
            )));
        }
        if accs.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::contract("accuracies must lie in [0, 1]"));
        }
        self.columns.push(accs);
        Ok(())
    }

    /// Number of completed training tasks.
    pub fn completed(&self) -> usize {
        self.columns.len()
    }

    /// A_j^i with 1-based j ≤ i.
    pub fn entry(&self, j: usize, i: usize) -> Result<f64> {
        if i == 0 || i > self.completed() || j == 0 || j > i {
            return Err(Error::contract(format!(
                "entry ({j}, {i}) outside the lower triangle (completed {})",
                self.completed()
            )));
        }
        Ok(self.columns[i - 1][j - 1])
    }

    pub fn column(&self, i: usize) -> Result<&[f64]> {
        if i == 0 || i > self.completed() {
            return Err(Error::contract(format!(
                "column {i} not recorded (completed {})",
                self.completed()
            )));
        }
        Ok(&self.columns[i - 1])
    }

    /// Flat rows `(task_trained, task_evaluated, accuracy)`.
    pub fn flat_rows(&self) -> Vec<(usize, usize, f64)> {
        let mut rows = Vec::new();
        for (i, col) in self.columns.iter().enumerate() {
            for (j, &a) in col.iter().enumerate() {
                rows.push((i + 1, j + 1, a));
            }
        }
        rows
    }
}

/// Average accuracy after task i: mean of A_j^i over j = 1..=i.
pub fn avg_accuracy(matrix: &AccuracyMatrix, i: usize) -> Result<f64> {
    let col = matrix.column(i)?;
    Ok(col.iter().sum::<f64>() / col.len() as f64)
}

/// Average forgetting after task i:
/// (1/(i−1)) Σ_{j=1}^{i−1} max_{1≤k≤i} (A_j^k − A_j^i). Requires i ≥ 2.
pub fn avg_forgetting(matrix: &AccuracyMatrix, i: usize) -> Result<f64> {
    if i < 2 {
        return Err(Error::contract(
            "average forgetting needs at least two completed tasks",
        ));
    }
    matrix.column(i)?;
    let mut total = 0.0;
    for j in 1..i {
        let final_acc = matrix.entry(j, i)?;
        let mut max_drop = f64::NEG_INFINITY;
        for k in j..=i {
            let drop = matrix.entry(j, k)? - final_acc;
            if drop > max_drop {
                max_drop = drop;
            }
        }
        total += max_drop;
    }
    Ok(total / (i - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Squared distance from each point of `set` to its k-th nearest neighbor
/// within `set` (self excluded).
fn knn_radii_sq(set: &Tensor, k: usize) -> Vec<f64> {
    let n = set.rows();
    let mut radii = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        for j in 0..n {
            if i != j {
                dists.push(sq_dist(set.row(i), set.row(j)));
            }
        }
        let (_, kth, _) = dists.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
        radii.push(*kth);
    }
    radii
}

fn coverage(points: &Tensor, manifold: &Tensor, radii_sq: &[f64]) -> f64 {
    let mut inside = 0usize;
    for i in 0..points.rows() {
        let p = points.row(i);
        let covered = (0..manifold.rows())
            .any(|j| sq_dist(p, manifold.row(j)) <= radii_sq[j]);
        if covered {
            inside += 1;
        }
    }
    inside as f64 / points.rows() as f64
}

/// Manifold-membership precision/recall via k-NN radius balls in raw feature
/// space: precision is the fraction of generated points inside the real
/// manifold estimate; recall the fraction of real points inside the
/// generated manifold estimate.
pub fn knn_precision_recall(
    real: &Tensor,
    generated: &Tensor,
    k: usize,
) -> Result<PrecisionRecall> {
    if real.rows() == 0 || generated.rows() == 0 {
        return Err(Error::contract("knn_precision_recall: empty set"));
    }
    if k == 0 || k >= real.rows() || k >= generated.rows() {
        return Err(Error::contract(format!(
            "knn_precision_recall: k={k} must satisfy 1 <= k < set sizes ({}, {})",
            real.rows(),
            generated.rows()
        )));
    }
    if real.row_len() != generated.row_len() {
        return Err(Error::Dimension {
            op: "knn_precision_recall",
            lhs: real.shape().to_vec(),
            rhs: generated.shape().to_vec(),
        });
    }
    let real_radii = knn_radii_sq(real, k);
    let gen_radii = knn_radii_sq(generated, k);
    Ok(PrecisionRecall {
        precision: coverage(generated, real, &real_radii),
        recall: coverage(real, generated, &gen_radii),
    })
}

/// One exported embedding row: penultimate-layer features plus provenance.
#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingRow {
    pub features: Vec<f64>,
    pub label: usize,
    pub source: String,
}

/// Penultimate-layer features of `samples` under the classifier, tagged with
/// labels and a source marker (real / generated / variant name).
pub fn export_embeddings(
    classifier: &ClassifierModel,
    samples: &Tensor,
    labels: &[usize],
    source: &str,
) -> Result<Vec<EmbeddingRow>> {
    if samples.rows() != labels.len() {
        return Err(Error::contract(format!(
            "export_embeddings: {} samples vs {} labels",
            samples.rows(),
            labels.len()
        )));
    }
    let (_, features) = classifier.logits_with_features(samples)?;
    Ok((0..samples.rows())
        .map(|r| EmbeddingRow {
            features: features.row(r).to_vec(),
            label: labels[r],
            source: source.to_string(),
        })
        .collect())
}
