//! `probe`: FGSM boundary statistics on rehearsal samples regenerated from a
//! completed run's checkpoints, one table row per guidance variant.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use guidelab_core::checkpoint;
use guidelab_core::classifier::{boundary_flip_rate, BoundaryStats, ProbeConfig};
use guidelab_core::guidance::{GuidanceConfig, GuidanceVariant, RehearsalSetup};
use guidelab_core::rng::{self, phase};

use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, mean_std, seed_dir, write_samples};

const VARIANTS: [GuidanceVariant; 5] = [
    GuidanceVariant::None,
    GuidanceVariant::Guide,
    GuidanceVariant::PrevPlus,
    GuidanceVariant::PrevMinus,
    GuidanceVariant::CurrMinus,
];

pub struct ProbeRow {
    pub seed: u64,
    pub variant: &'static str,
    pub stats: BoundaryStats,
}

/// Balanced previous-class source labels for `n` probe samples.
fn probe_labels(previous_classes: &[usize], n: usize) -> Vec<usize> {
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        labels.push(previous_classes[i % previous_classes.len()]);
    }
    labels.sort_unstable();
    labels
}

/// Regenerate rehearsal samples per variant from the final-task boundary of
/// one seed's checkpoints and measure the FGSM statistics.
pub fn probe_seed(cfg: &ExperimentConfig, run_dir: &Path, seed: u64) -> Result<Vec<ProbeRow>> {
    let classes: Vec<usize> = (0..cfg.dataset.classes).collect();
    let t = cfg.dataset.classes / cfg.classes_per_task;
    if t < 2 {
        bail!("probe needs a scenario with at least two tasks");
    }
    let current_classes: Vec<usize> = classes[(t - 1) * cfg.classes_per_task..].to_vec();
    let previous_classes: Vec<usize> = classes[..(t - 1) * cfg.classes_per_task].to_vec();

    let ckpt = seed_dir(run_dir, seed).join("checkpoints");
    let (prev_diffusion, schedule) =
        checkpoint::load_denoiser(&ckpt.join(format!("diffusion_task{}.json", t - 1)))
            .with_context(|| format!("seed {seed}: missing previous diffusion checkpoint"))?;
    let prev_classifier =
        checkpoint::load_classifier(&ckpt.join(format!("classifier_task{}.json", t - 1)))?;
    let curr_classifier =
        checkpoint::load_classifier(&ckpt.join(format!("classifier_task{t}.json")))?;

    let setup = RehearsalSetup {
        prev_diffusion: &prev_diffusion,
        prev_classifier: &prev_classifier,
        curr_classifier: &curr_classifier,
        current_task_classes: &current_classes,
        schedule: &schedule,
    };
    let probe = ProbeConfig::new(cfg.probe_epsilon)?;
    let labels = probe_labels(&previous_classes, cfg.probe_samples);

    let probe_dir = seed_dir(run_dir, seed).join("probe");
    ensure_dir(&probe_dir)?;

    let mut rows = Vec::new();
    for variant in VARIANTS {
        let guidance = GuidanceConfig {
            variant,
            scale: cfg.training.guidance.scale,
            backprop_through_denoiser: cfg.training.guidance.backprop_through_denoiser,
        };
        let sampler = cfg
            .training
            .sampler
            .with_seed(rng::derive_seed(seed, &[phase::PROBE, variant as u64]));
        let samples =
            guidelab_core::guidance::sample_rehearsal(&setup, &labels, &guidance, &sampler)?;
        write_samples(&probe_dir, variant.as_str(), &samples, &labels)?;
        let stats = boundary_flip_rate(
            &curr_classifier,
            &prev_classifier,
            &samples,
            &labels,
            &probe,
            &current_classes,
        )?;
        rows.push(ProbeRow {
            seed,
            variant: variant.as_str(),
            stats,
        });
    }
    Ok(rows)
}

pub fn execute(run_dir: &Path) -> Result<()> {
    let config_path = run_dir.join("config.txt");
    if !config_path.exists() {
        bail!(
            "{} does not look like a completed run (no config.txt)",
            run_dir.display()
        );
    }
    let cfg = ExperimentConfig::from_file(&config_path)?;

    let mut all_rows = Vec::new();
    for &seed in &cfg.seeds {
        all_rows.extend(probe_seed(&cfg, run_dir, seed)?);
    }

    let mut table = String::from("seed,variant,flip_rate,mean_conf_prev,mean_conf_curr\n");
    for row in &all_rows {
        let _ = writeln!(
            table,
            "{},{},{},{},{}",
            row.seed,
            row.variant,
            row.stats.flip_rate,
            row.stats.mean_conf_prev,
            row.stats.mean_conf_curr
        );
    }
    std::fs::write(run_dir.join("probe_table.csv"), &table)?;

    let mut summary = String::from(
        "variant,flip_rate_mean,flip_rate_std,conf_prev_mean,conf_curr_mean\n",
    );
    println!("variant      flip_rate  conf_prev  conf_curr   (epsilon {})", cfg.probe_epsilon);
    for variant in VARIANTS {
        let flips: Vec<f64> = all_rows
            .iter()
            .filter(|r| r.variant == variant.as_str())
            .map(|r| r.stats.flip_rate)
            .collect();
        let prevs: Vec<f64> = all_rows
            .iter()
            .filter(|r| r.variant == variant.as_str())
            .map(|r| r.stats.mean_conf_prev)
            .collect();
        let currs: Vec<f64> = all_rows
            .iter()
            .filter(|r| r.variant == variant.as_str())
            .map(|r| r.stats.mean_conf_curr)
            .collect();
        let (fm, fs) = mean_std(&flips);
        let (pm, _) = mean_std(&prevs);
        let (cm, _) = mean_std(&currs);
        let _ = writeln!(summary, "{},{},{},{},{}", variant.as_str(), fm, fs, pm, cm);
        println!(
            "{:<12} {:>8.4}  {:>8.4}  {:>8.4}",
            variant.as_str(),
            fm,
            pm,
            cm
        );
    }
    std::fs::write(run_dir.join("probe_summary.csv"), summary)?;
    println!("probe tables written to {}", run_dir.display());
    Ok(())
}
