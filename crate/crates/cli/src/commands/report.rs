//! `report`: re-summarize the records of a completed run directory.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

use crate::output::mean_std;

pub fn execute(out_dir: &Path) -> Result<()> {
    let mut records = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(out_dir)
        .with_context(|| format!("cannot read {}", out_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("record_") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    for path in &entries {
        let value: Value = serde_json::from_str(&std::fs::read_to_string(path)?)
            .with_context(|| format!("bad record {}", path.display()))?;
        records.push(value);
    }
    if records.is_empty() {
        bail!("no record_<seed>.json files in {}", out_dir.display());
    }

    println!("seed       variant      scale   avg_accuracy  avg_forgetting");
    let mut accs = Vec::new();
    let mut forgets = Vec::new();
    for rec in &records {
        let seed = rec["seed"].as_u64().unwrap_or(0);
        let variant = rec["variant"].as_str().unwrap_or("?");
        let scale = rec["scale"].as_f64().unwrap_or(0.0);
        let acc = rec["avg_accuracy_final"].as_f64().unwrap_or(f64::NAN);
        let forget = rec["avg_forgetting_final"].as_f64();
        accs.push(acc);
        if let Some(f) = forget {
            forgets.push(f);
        }
        println!(
            "{seed:<10} {variant:<12} {scale:<7} {acc:<13.4} {}",
            forget.map(|f| format!("{f:.4}")).unwrap_or_else(|| "n/a".into())
        );
    }
    let (am, astd) = mean_std(&accs);
    print!("mean ± std over {} seeds: accuracy {am:.4} ± {astd:.4}", accs.len());
    if !forgets.is_empty() {
        let (fm, fstd) = mean_std(&forgets);
        print!(", forgetting {fm:.4} ± {fstd:.4}");
    }
    println!();
    Ok(())
}
