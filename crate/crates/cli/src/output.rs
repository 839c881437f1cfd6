//! Deterministic output files for runs, sweeps and probes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use guidelab_core::continual::RunRecord;
use guidelab_core::metrics::EmbeddingRow;
use guidelab_core::tensor::Tensor;

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("cannot create directory {}", path.display()))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// `record_<seed>.json`: the run record, pretty-printed with a trailing
/// newline. Field order is fixed, so identical runs emit identical bytes.
pub fn write_record(out: &Path, record: &RunRecord) -> Result<PathBuf> {
    let path = out.join(format!("record_{}.json", record.seed));
    let mut bytes = serde_json::to_vec_pretty(record)?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes)?;
    Ok(path)
}

/// `accuracy_matrix_<seed>.csv`: flat `task_trained,task_evaluated,accuracy`.
pub fn write_accuracy_matrix(out: &Path, record: &RunRecord) -> Result<PathBuf> {
    let path = out.join(format!("accuracy_matrix_{}.csv", record.seed));
    let mut text = String::from("task_trained,task_evaluated,accuracy\n");
    for (trained, evaluated, acc) in record.accuracy.flat_rows() {
        let _ = writeln!(text, "{trained},{evaluated},{acc}");
    }
    std::fs::write(&path, text)?;
    Ok(path)
}

/// `samples_<variant>.csv`: one row per sample, features then source label.
pub fn write_samples(
    dir: &Path,
    variant: &str,
    samples: &Tensor,
    labels: &[usize],
) -> Result<PathBuf> {
    let path = dir.join(format!("samples_{variant}.csv"));
    let d = samples.row_len();
    let mut text = String::new();
    for j in 0..d {
        let _ = write!(text, "x_{j},");
    }
    text.push_str("label\n");
    for (r, &label) in labels.iter().enumerate() {
        for v in samples.row(r) {
            let _ = write!(text, "{v},");
        }
        let _ = writeln!(text, "{label}");
    }
    std::fs::write(&path, text)?;
    Ok(path)
}

/// `embeddings.csv`: penultimate features, label, source tag.
pub fn write_embeddings(dir: &Path, rows: &[EmbeddingRow]) -> Result<PathBuf> {
    let path = dir.join("embeddings.csv");
    let mut text = String::new();
    if let Some(first) = rows.first() {
        for j in 0..first.features.len() {
            let _ = write!(text, "f_{j},");
        }
        text.push_str("label,source\n");
    }
    for row in rows {
        for v in &row.features {
            let _ = write!(text, "{v},");
        }
        let _ = writeln!(text, "{},{}", row.label, row.source);
    }
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `summary.csv`: per-config mean ± std of final average accuracy and
/// forgetting across seeds.
pub fn write_summary(out: &Path, records: &[RunRecord]) -> Result<PathBuf> {
    let path = out.join("summary.csv");
    let accs: Vec<f64> = records.iter().map(|r| r.avg_accuracy_final).collect();
    let forgets: Vec<f64> = records
        .iter()
        .filter_map(|r| r.avg_forgetting_final)
        .collect();
    let (a_mean, a_std) = mean_std(&accs);
    let mut text = String::from(
        "variant,scale,num_seeds,avg_accuracy_mean,avg_accuracy_std,avg_forgetting_mean,avg_forgetting_std\n",
    );
    let (f_mean, f_std) = if forgets.is_empty() {
        (String::from(""), String::from(""))
    } else {
        let (m, s) = mean_std(&forgets);
        (m.to_string(), s.to_string())
    };
    let _ = writeln!(
        text,
        "{},{},{},{},{},{},{}",
        records[0].variant,
        records[0].scale,
        records.len(),
        a_mean,
        a_std,
        f_mean,
        f_std
    );
    std::fs::write(&path, text)?;
    Ok(path)
}
