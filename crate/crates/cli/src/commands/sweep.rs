//! `sweep`: repeat the configured experiment along one axis (gradient scale,
//! DDIM steps or rehearsal generation interval), one summary row per value,
//! with wall-clock recorded for the speed/accuracy trade-off.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Result};
use guidelab_core::metrics::avg_forgetting;

use crate::commands::run::{run_one_seed, scenario_of};
use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, mean_std};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Scale,
    DdimSteps,
    Interval,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scale" => Ok(SweepAxis::Scale),
            "ddim_steps" => Ok(SweepAxis::DdimSteps),
            "interval" => Ok(SweepAxis::Interval),
            other => bail!("unknown sweep axis `{other}` (expected scale, ddim_steps or interval)"),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            SweepAxis::Scale => "scale",
            SweepAxis::DdimSteps => "ddim_steps",
            SweepAxis::Interval => "interval",
        }
    }
}

pub struct SweepRow {
    pub value: String,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub forget_mean: f64,
    pub prev_acc_mean: f64,
    pub curr_acc_mean: f64,
    pub wall_secs: f64,
}

fn apply(cfg: &mut ExperimentConfig, axis: SweepAxis, value: &str) -> Result<()> {
    match axis {
        SweepAxis::Scale => {
            cfg.training.guidance.scale = value.parse()?;
        }
        SweepAxis::DdimSteps => {
            cfg.training.sampler.ddim_steps = value.parse()?;
        }
        SweepAxis::Interval => {
            cfg.training.generation_interval = if value == "inf" {
                usize::MAX
            } else {
                value.parse()?
            };
        }
    }
    Ok(())
}

pub fn sweep_rows(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let scenario = scenario_of(base)?;
    let t = scenario.num_tasks();
    let mut rows = Vec::new();
    for value in values {
        let mut cfg = base.clone();
        apply(&mut cfg, axis, value)?;
        cfg.output_dir = base
            .output_dir
            .join(format!("{}_{}", axis.label(), value.replace('.', "_")));
        ensure_dir(&cfg.output_dir)?;

        let start = Instant::now();
        let mut accs = Vec::new();
        let mut forgets = Vec::new();
        let mut prev_accs = Vec::new();
        let mut curr_accs = Vec::new();
        for &seed in &cfg.seeds {
            let record = run_one_seed(&cfg, &scenario, seed)?;
            accs.push(record.avg_accuracy_final);
            if t >= 2 {
                forgets.push(avg_forgetting(&record.accuracy, t)?);
                let col = record.accuracy.column(t)?;
                prev_accs
                    .push(col[..t - 1].iter().sum::<f64>() / (t - 1) as f64);
            }
            curr_accs.push(record.accuracy.entry(t, t)?);
        }
        let wall_secs = start.elapsed().as_secs_f64();
        let (acc_mean, acc_std) = mean_std(&accs);
        let (forget_mean, _) = mean_std(&forgets);
        let (prev_acc_mean, _) = mean_std(&prev_accs);
        let (curr_acc_mean, _) = mean_std(&curr_accs);
        eprintln!(
            "{} = {value}: acc {acc_mean:.4} ± {acc_std:.4}, prev acc {prev_acc_mean:.4}, {wall_secs:.1}s",
            axis.label()
        );
        rows.push(SweepRow {
            value: value.clone(),
            acc_mean,
            acc_std,
            forget_mean,
            prev_acc_mean,
            curr_acc_mean,
            wall_secs,
        });
    }
    Ok(rows)
}

pub fn execute(config_path: &Path, axis: &str, values: &[String]) -> Result<()> {
    let axis = SweepAxis::parse(axis)?;
    let base = ExperimentConfig::from_file(config_path)?;
    ensure_dir(&base.output_dir)?;
    let rows = sweep_rows(&base, axis, values)?;

    let mut text = String::from(
        "axis,value,avg_accuracy_mean,avg_accuracy_std,avg_forgetting_mean,prev_task_accuracy_mean,current_task_accuracy_mean,wall_secs\n",
    );
    for r in &rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            axis.label(),
            r.value,
            r.acc_mean,
            r.acc_std,
            r.forget_mean,
            r.prev_acc_mean,
            r.curr_acc_mean,
            r.wall_secs
        );
    }
    let path = base.output_dir.join("sweep_summary.csv");
    std::fs::write(&path, text)?;
    println!("sweep summary written to {}", path.display());
    Ok(())
}
