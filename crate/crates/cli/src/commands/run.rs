//! `run`: execute the scenario once per seed and emit records, matrices,
//! checkpoints, sample archives, embeddings and the cross-seed summary.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use guidelab_core::checkpoint;
use guidelab_core::classifier::ClassifierModel;
use guidelab_core::continual::{run_scenario_with, RunRecord, TaskObserver};
use guidelab_core::data::{generate, split_tasks, Scenario};
use guidelab_core::diffusion::{DenoiserModel, NoiseSchedule};
use guidelab_core::metrics::export_embeddings;

use crate::config::ExperimentConfig;
use crate::output;

struct CheckpointWriter {
    dir: PathBuf,
    final_classifier: Option<ClassifierModel>,
}

impl TaskObserver for CheckpointWriter {
    fn on_task_complete(
        &mut self,
        task: usize,
        classifier: &ClassifierModel,
        diffusion: &DenoiserModel,
        schedule: &NoiseSchedule,
    ) -> guidelab_core::Result<()> {
        checkpoint::save_classifier(
            classifier,
            &self.dir.join(format!("classifier_task{task}.json")),
        )?;
        checkpoint::save_denoiser(
            diffusion,
            schedule,
            &self.dir.join(format!("diffusion_task{task}.json")),
        )?;
        self.final_classifier = Some(classifier.clone());
        Ok(())
    }
}

pub fn scenario_of(cfg: &ExperimentConfig) -> Result<Scenario> {
    let dataset = generate(&cfg.dataset)?;
    Ok(split_tasks(&dataset, cfg.classes_per_task, cfg.split_seed)?)
}

/// Execute one seed, writing everything under the run directory. Returns the
/// run record.
pub fn run_one_seed(cfg: &ExperimentConfig, scenario: &Scenario, seed: u64) -> Result<RunRecord> {
    let seed_dir = output::seed_dir(&cfg.output_dir, seed);
    let ckpt_dir = seed_dir.join("checkpoints");
    output::ensure_dir(&ckpt_dir)?;

    let mut training = cfg.training.clone();
    training.seed = seed;

    let mut observer = CheckpointWriter {
        dir: ckpt_dir,
        final_classifier: None,
    };
    let record = run_scenario_with(scenario, &cfg.model, &training, Some(&mut observer))?;

    output::write_record(&cfg.output_dir, &record)?;
    output::write_accuracy_matrix(&cfg.output_dir, &record)?;

    // Archived rehearsal samples of the final task, tagged by variant.
    if let Some(archived) = record.sample_archive.last() {
        output::write_samples(&seed_dir, &record.variant, &archived.samples, &archived.labels)?;
    }

    // Embedding export: real test samples of every task plus archived
    // rehearsal samples, through the final classifier.
    if let Some(classifier) = &observer.final_classifier {
        let mut rows = Vec::new();
        for task in &scenario.tasks {
            rows.extend(export_embeddings(
                classifier,
                &task.test.features,
                &task.test.labels,
                "real",
            )?);
        }
        for archived in &record.sample_archive {
            rows.extend(export_embeddings(
                classifier,
                &archived.samples,
                &archived.labels,
                &record.variant,
            )?);
        }
        output::write_embeddings(&seed_dir, &rows)?;
    }

    Ok(record)
}

pub fn execute(config_path: &Path) -> Result<Vec<RunRecord>> {
    let cfg = ExperimentConfig::from_file(config_path)?;
    output::ensure_dir(&cfg.output_dir)?;
    std::fs::copy(config_path, cfg.output_dir.join("config.txt"))
        .with_context(|| format!("cannot copy config into {}", cfg.output_dir.display()))?;

    let scenario = scenario_of(&cfg)?;
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        eprintln!("running seed {seed} ...");
        let record = run_one_seed(&cfg, &scenario, seed)?;
        eprintln!(
            "  seed {seed}: avg accuracy {:.4}, avg forgetting {}",
            record.avg_accuracy_final,
            record
                .avg_forgetting_final
                .map(|f| format!("{f:.4}"))
                .unwrap_or_else(|| "n/a".into())
        );
        records.push(record);
    }
    output::write_summary(&cfg.output_dir, &records)?;

    let accs: Vec<f64> = records.iter().map(|r| r.avg_accuracy_final).collect();
    let (mean, std) = output::mean_std(&accs);
    println!(
        "{} seeds | {} (scale {}) | avg accuracy {:.4} ± {:.4}",
        records.len(),
        records[0].variant,
        records[0].scale,
        mean,
        std
    );
    Ok(records)
}
