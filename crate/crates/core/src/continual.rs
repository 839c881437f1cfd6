//! End-to-end class-incremental protocol: per-task classifier training with
//! interval-regenerated guided rehearsal, then diffusion self-rehearsal.
//!
//! Each task freezes the previous diffusion model and classifier, trains the
//! live classifier on balanced real+rehearsal batches (regenerating the
//! rehearsal cache every `generation_interval` batches against the *live*
//! classifier), evaluates on every test split seen so far, then extends the
//! diffusion model on real data plus unguided synthetic samples of all
//! previous classes. The rehearsal cache is regenerated, never accumulated.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classifier::{classifier_train_step, ClassifierModel};
use crate::data::{Dataset, Scenario};
use crate::diffusion::{
    diffusion_train_step, sample, DenoiserModel, NoiseSchedule, SamplerConfig,
};
use crate::error::{Error, Result};
use crate::guidance::{sample_rehearsal, GuidanceConfig, RehearsalSetup};
use crate::metrics::{avg_accuracy, avg_forgetting, AccuracyMatrix};
use crate::optim::Optimizer;
use crate::rng::{self, phase};
use crate::tensor::Tensor;

/// Model architecture and schedule hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub t_diff: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub denoiser_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub class_embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t_diff: 200,
            beta_start: 1e-4,
            beta_end: 0.1,
            denoiser_hidden: vec![128, 128],
            classifier_hidden: vec![64, 64],
            time_embed_dim: 16,
            class_embed_dim: 8,
        }
    }
}

impl ModelConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_diff, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingConfig {
    /// Classifier steps per task (N_c).
    pub classifier_steps: usize,
    /// Diffusion steps per task (N_d).
    pub diffusion_steps: usize,
    /// Rehearsal generation interval in batches (N_g); values above
    /// `classifier_steps` degenerate to build-once-per-task.
    pub generation_interval: usize,
    /// Batch size (B).
    pub batch_size: usize,
    pub classifier_lr_first: f64,
    pub classifier_lr: f64,
    /// L2 decay on the classifier; keeps logit margins (and thus guidance
    /// gradient magnitudes) bounded during long training.
    pub classifier_weight_decay: f64,
    pub diffusion_lr: f64,
    pub diffusion_batch: usize,
    /// false = fine-tuning: no rehearsal, no generator at all.
    pub replay: bool,
    pub guidance: GuidanceConfig,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub archive_samples: bool,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classifier_steps == 0
            || self.diffusion_steps == 0
            || self.generation_interval == 0
            || self.batch_size == 0
            || self.diffusion_batch == 0
        {
            return Err(Error::config("all training counts must be positive"));
        }
        self.guidance.validate()?;
        Ok(())
    }
}

/// Regenerated pool of guided rehearsal samples, grouped by source class.
#[derive(Debug, Clone)]
pub struct RehearsalCache {
    pub samples: Tensor,
    pub labels: Vec<usize>,
}

/// Per-class counts for one task's share of a batch; remainder lands on the
/// lowest class ids.
fn allocate_within(share: usize, classes: &[usize]) -> Vec<(usize, usize)> {
    let mut sorted = classes.to_vec();
    sorted.sort_unstable();
    let k = sorted.len();
    let base = share / k;
    let rem = share % k;
    sorted
        .into_iter()
        .enumerate()
        .map(|(idx, c)| (c, base + usize::from(idx < rem)))
        .collect()
}

/// Balanced allocation for a batch during task i: each task gets the share
/// ⌊B/i⌋ split equally over its classes; the global remainder goes to the
/// current task's classes, lowest id first. Returns (previous, current)
/// per-class counts.
pub fn batch_allocation(
    scenario: &Scenario,
    i: usize,
    batch: usize,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let share = batch / i;
    let remainder = batch - share * i;
    let mut prev = Vec::new();
    for task in &scenario.tasks[..i - 1] {
        prev.extend(allocate_within(share, &task.classes));
    }
    let curr = allocate_within(share + remainder, &scenario.tasks[i - 1].classes);
    (prev, curr)
}

/// Expected rehearsal cache size during task i: ⌊B/i⌋·(i−1).
pub fn rehearsal_cache_size(i: usize, batch: usize) -> usize {
    (batch / i) * (i - 1)
}

fn draw_rows(
    data: &Dataset,
    counts: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
    values: &mut Vec<f64>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    for &(class, count) in counts {
        if count == 0 {
            continue;
        }
        let pool = data.indices_of(class);
        if pool.is_empty() {
            return Err(Error::Protocol(format!(
                "no samples of class {class} available for batching"
            )));
        }
        for _ in 0..count {
            let idx = pool[rng.gen_range(0..pool.len())];
            values.extend_from_slice(data.features.row(idx));
            labels.push(data.labels[idx]);
        }
    }
    Ok(())
}

/// Assemble one classifier batch: the whole rehearsal cache plus freshly
/// drawn real rows of the current task, balanced per class. Task 1 (or
/// fine-tuning) uses real data only.
pub fn build_balanced_batch(
    scenario: &Scenario,
    i: usize,
    cache: Option<&RehearsalCache>,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Vec<usize>)> {
    let d = scenario.dimension;
    let mut values = Vec::with_capacity(batch * d);
    let mut labels = Vec::with_capacity(batch);
    let task = &scenario.tasks[i - 1];

    if i == 1 {
        let counts = allocate_within(batch, &task.classes);
        draw_rows(&task.train, &counts, rng, &mut values, &mut labels)?;
    } else {
        let cache = cache.filter(|c| !c.labels.is_empty()).ok_or_else(|| {
            Error::Protocol(format!(
                "task {i}: rehearsal cache is empty but previous classes must be replayed"
            ))
        })?;
        values.extend_from_slice(cache.samples.values());
        labels.extend_from_slice(&cache.labels);
        let (_, curr_counts) = batch_allocation(scenario, i, batch);
        draw_rows(&task.train, &curr_counts, rng, &mut values, &mut labels)?;
    }
    let n = labels.len();
    Ok((Tensor::new(vec![n, d], values)?, labels))
}

/// All-real batch of the current task (fine-tuning path).
fn build_real_batch(
    scenario: &Scenario,
    i: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Vec<usize>)> {
    let task = &scenario.tasks[i - 1];
    let counts = allocate_within(batch, &task.classes);
    let mut values = Vec::with_capacity(batch * scenario.dimension);
    let mut labels = Vec::with_capacity(batch);
    draw_rows(&task.train, &counts, rng, &mut values, &mut labels)?;
    Ok((
        Tensor::new(vec![labels.len(), scenario.dimension], values)?,
        labels,
    ))
}

/// Regenerate the rehearsal cache: ⌊B/i⌋·(i−1) guided samples whose source
/// classes cover all previous classes with balanced counts; seeds derive
/// from (run seed, task, step).
pub fn refresh_rehearsal_cache(
    setup: &RehearsalSetup,
    scenario: &Scenario,
    i: usize,
    config: &TrainingConfig,
    step: usize,
) -> Result<RehearsalCache> {
    if i < 2 {
        return Err(Error::contract("rehearsal cache only exists from task 2 on"));
    }
    let (prev_counts, _) = batch_allocation(scenario, i, config.batch_size);
    let mut labels = Vec::new();
    for (class, count) in prev_counts {
        labels.extend(std::iter::repeat(class).take(count));
    }
    let seed = rng::derive_seed(config.seed, &[phase::REHEARSAL, i as u64, step as u64]);
    let sampler = config.sampler.with_seed(seed);
    let samples = sample_rehearsal(setup, &labels, &config.guidance, &sampler)?;
    Ok(RehearsalCache { samples, labels })
}

/// Outcome of one task's classifier phase.
pub struct ClassifierPhase {
    pub losses: Vec<f64>,
    pub last_cache: Option<RehearsalCache>,
    pub rehearsal_refreshes: usize,
}

/// Train the live classifier for task i. For i>1 with replay enabled the
/// frozen previous diffusion model and classifier supply guided rehearsal.
pub fn train_task_classifier(
    scenario: &Scenario,
    i: usize,
    classifier: &mut ClassifierModel,
    prev: Option<(&DenoiserModel, &ClassifierModel)>,
    schedule: &NoiseSchedule,
    config: &TrainingConfig,
    optimizer: &mut Optimizer,
) -> Result<ClassifierPhase> {
    let rehearse = config.replay && i > 1;
    if rehearse && prev.is_none() {
        return Err(Error::Protocol(format!(
            "task {i}: rehearsal requires frozen previous-task models"
        )));
    }
    let current_classes = scenario.tasks[i - 1].classes.clone();
    let mut cache: Option<RehearsalCache> = None;
    let mut losses = Vec::with_capacity(config.classifier_steps);
    let mut refreshes = 0usize;

    for n in 1..=config.classifier_steps {
        if rehearse && (n == 1 || n % config.generation_interval == 0) {
            let (prev_diffusion, prev_classifier) = prev.unwrap();
            let setup = RehearsalSetup {
                prev_diffusion,
                prev_classifier,
                curr_classifier: classifier,
                current_task_classes: &current_classes,
                schedule,
            };
            cache = Some(refresh_rehearsal_cache(&setup, scenario, i, config, n)?);
            refreshes += 1;
        }
        let mut batch_rng = rng::stream(
            config.seed,
            &[phase::CLASSIFIER_BATCH, i as u64, n as u64],
        );
        let (x, y) = if rehearse {
            build_balanced_batch(scenario, i, cache.as_ref(), config.batch_size, &mut batch_rng)?
        } else {
            build_real_batch(scenario, i, config.batch_size, &mut batch_rng)?
        };
        let loss = classifier_train_step(classifier, &x, &y, optimizer).map_err(|e| {
            Error::Training(format!("task {i}, classifier step {n}: {e}"))
        })?;
        losses.push(loss);
    }
    Ok(ClassifierPhase {
        losses,
        last_cache: cache,
        rehearsal_refreshes: refreshes,
    })
}

/// Dataset for the diffusion phase of task i: unguided conditional samples
/// matching the cumulative size of all previous task datasets (labels
/// balanced over previous classes), concatenated with the current real data.
pub fn build_diffusion_dataset(
    prev_diffusion: Option<&DenoiserModel>,
    scenario: &Scenario,
    i: usize,
    schedule: &NoiseSchedule,
    config: &TrainingConfig,
) -> Result<Dataset> {
    let current = scenario.tasks[i - 1].train.clone();
    if i == 1 {
        return Ok(current);
    }
    let prev_diffusion = prev_diffusion.ok_or_else(|| {
        Error::Protocol(format!("task {i}: diffusion dataset needs the previous generator"))
    })?;
    let total: usize = scenario.tasks[..i - 1].iter().map(|t| t.train.len()).sum();
    let prev_classes = scenario.previous_classes(i);
    let counts = allocate_within(total, &prev_classes);
    let mut labels = Vec::with_capacity(total);
    for (class, count) in counts {
        labels.extend(std::iter::repeat(class).take(count));
    }
    let seed = rng::derive_seed(config.seed, &[phase::DIFFUSION_DATASET, i as u64]);
    let sampler = config.sampler.with_seed(seed);
    let samples = sample(prev_diffusion, &labels, &sampler, schedule, None)?;
    let synthetic = Dataset {
        features: samples,
        labels,
    };
    synthetic.concat(&current)
}

fn draw_batch_from(
    data: &Dataset,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Vec<usize>)> {
    let d = data.dimension();
    let mut values = Vec::with_capacity(batch * d);
    let mut labels = Vec::with_capacity(batch);
    for _ in 0..batch {
        let idx = rng.gen_range(0..data.len());
        values.extend_from_slice(data.features.row(idx));
        labels.push(data.labels[idx]);
    }
    Ok((Tensor::new(vec![batch, d], values)?, labels))
}

/// Accuracy of the classifier on a test split (full-head prediction).
pub fn evaluate_accuracy(classifier: &ClassifierModel, test: &Dataset) -> Result<f64> {
    let preds = classifier.predict(&test.features)?;
    let correct = preds
        .iter()
        .zip(&test.labels)
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskSummary {
    pub task: usize,
    /// Mean classifier loss over the final quarter of the task's steps.
    pub classifier_loss: f64,
    /// Same for the diffusion phase; absent when no diffusion training ran.
    pub diffusion_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PhaseSeconds {
    pub task: usize,
    pub classifier_secs: f64,
    pub diffusion_secs: f64,
}

/// Rehearsal samples archived from the last cache of a task.
#[derive(Debug, Clone)]
pub struct ArchivedSamples {
    pub task: usize,
    pub samples: Tensor,
    pub labels: Vec<usize>,
}

/// Full record of one scenario run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub variant: String,
    pub scale: f64,
    pub accuracy: AccuracyMatrix,
    pub avg_accuracy_final: f64,
    /// Absent for single-task scenarios.
    pub avg_forgetting_final: Option<f64>,
    pub task_summaries: Vec<TaskSummary>,
    /// Wall-clock per phase; kept out of the serialized record so that runs
    /// with identical configs emit identical bytes.
    #[serde(skip)]
    pub phase_seconds: Vec<PhaseSeconds>,
    #[serde(skip)]
    pub sample_archive: Vec<ArchivedSamples>,
}

fn tail_mean(losses: &[f64]) -> f64 {
    if losses.is_empty() {
        return 0.0;
    }
    let tail = (losses.len() / 4).max(1);
    let slice = &losses[losses.len() - tail..];
    slice.iter().sum::<f64>() / slice.len() as f64
}

/// Callback invoked after each task completes (classifier and diffusion
/// phases both done). Used by the driver to archive checkpoints.
pub trait TaskObserver {
    fn on_task_complete(
        &mut self,
        task: usize,
        classifier: &ClassifierModel,
        diffusion: &DenoiserModel,
        schedule: &NoiseSchedule,
    ) -> Result<()>;
}

/// Run the whole class-incremental protocol and return the record.
pub fn run_scenario(
    scenario: &Scenario,
    model_cfg: &ModelConfig,
    config: &TrainingConfig,
) -> Result<RunRecord> {
    run_scenario_with(scenario, model_cfg, config, None)
}

/// [`run_scenario`] with an observer receiving per-task model snapshots.
pub fn run_scenario_with(
    scenario: &Scenario,
    model_cfg: &ModelConfig,
    config: &TrainingConfig,
    mut observer: Option<&mut dyn TaskObserver>,
) -> Result<RunRecord> {
    config.validate()?;
    if scenario.tasks.is_empty() {
        return Err(Error::config("scenario has no tasks"));
    }
    let max_cpt = scenario.tasks.iter().map(|t| t.classes.len()).max().unwrap();
    if config.replay && config.batch_size / scenario.num_tasks() < max_cpt {
        return Err(Error::config(format!(
            "batch size {} cannot cover every class of {} tasks with {} classes per task",
            config.batch_size,
            scenario.num_tasks(),
            max_cpt
        )));
    }
    let schedule = model_cfg.schedule()?;
    config.sampler.validate(&schedule)?;

    let mut classifier = ClassifierModel::new(
        scenario.dimension,
        scenario.total_classes,
        &model_cfg.classifier_hidden,
        &mut rng::stream(config.seed, &[phase::INIT_CLASSIFIER]),
    );
    let mut diffusion = DenoiserModel::new(
        scenario.dimension,
        scenario.total_classes,
        &model_cfg.denoiser_hidden,
        model_cfg.time_embed_dim,
        model_cfg.class_embed_dim,
        &mut rng::stream(config.seed, &[phase::INIT_DENOISER]),
    );

    let mut accuracy = AccuracyMatrix::new();
    let mut task_summaries = Vec::new();
    let mut phase_seconds = Vec::new();
    let mut sample_archive = Vec::new();

    for i in 1..=scenario.num_tasks() {
        let prev: Option<(DenoiserModel, ClassifierModel)> = if i > 1 && config.replay {
            Some((diffusion.clone(), classifier.clone()))
        } else {
            None
        };

        // Classifier phase.
        let clf_start = Instant::now();
        let lr = if i == 1 {
            config.classifier_lr_first
        } else {
            config.classifier_lr
        };
        let mut optimizer = Optimizer::sgd(lr);
        optimizer.weight_decay = config.classifier_weight_decay;
        let phase_out = train_task_classifier(
            scenario,
            i,
            &mut classifier,
            prev.as_ref().map(|(d, c)| (d, c)),
            &schedule,
            config,
            &mut optimizer,
        )?;
        let classifier_secs = clf_start.elapsed().as_secs_f64();

        if config.archive_samples {
            if let Some(cache) = &phase_out.last_cache {
                sample_archive.push(ArchivedSamples {
                    task: i,
                    samples: cache.samples.clone(),
                    labels: cache.labels.clone(),
                });
            }
        }

        // Evaluation on every split seen so far.
        let mut col = Vec::with_capacity(i);
        for j in 1..=i {
            col.push(evaluate_accuracy(&classifier, &scenario.tasks[j - 1].test)?);
        }
        accuracy.push_column(col)?;

        // Diffusion phase (skipped entirely when fine-tuning).
        let mut diffusion_loss = None;
        let diff_start = Instant::now();
        if config.replay {
            let dataset =
                build_diffusion_dataset(prev.as_ref().map(|(d, _)| d), scenario, i, &schedule, config)?;
            let mut opt = Optimizer::adamw(config.diffusion_lr, 0.0);
            let mut step_rng = rng::stream(config.seed, &[phase::DIFFUSION_STEP, i as u64]);
            let mut losses = Vec::with_capacity(config.diffusion_steps);
            for n in 1..=config.diffusion_steps {
                let (x0, y) = draw_batch_from(&dataset, config.diffusion_batch, &mut step_rng)?;
                let loss = diffusion_train_step(
                    &mut diffusion,
                    &x0,
                    Some(&y),
                    &schedule,
                    &mut opt,
                    &mut step_rng,
                )
                .map_err(|e| Error::Training(format!("task {i}, diffusion step {n}: {e}")))?;
                losses.push(loss);
            }
            diffusion_loss = Some(tail_mean(&losses));
        }
        let diffusion_secs = diff_start.elapsed().as_secs_f64();

        task_summaries.push(TaskSummary {
            task: i,
            classifier_loss: tail_mean(&phase_out.losses),
            diffusion_loss,
        });
        phase_seconds.push(PhaseSeconds {
            task: i,
            classifier_secs,
            diffusion_secs,
        });
        if let Some(obs) = observer.as_deref_mut() {
            obs.on_task_complete(i, &classifier, &diffusion, &schedule)?;
        }
    }

    let t = scenario.num_tasks();
    let avg_accuracy_final = avg_accuracy(&accuracy, t)?;
    let avg_forgetting_final = if t >= 2 {
        Some(avg_forgetting(&accuracy, t)?)
    } else {
        None
    };

    Ok(RunRecord {
        seed: config.seed,
        variant: config.guidance.variant.as_str().to_string(),
        scale: config.guidance.scale,
        accuracy,
        avg_accuracy_final,
        avg_forgetting_final,
        task_summaries,
        phase_seconds,
        sample_archive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, split_tasks, DatasetSpec, Generator};
    use crate::guidance::GuidanceVariant;

    fn toy_scenario(classes: usize, classes_per_task: usize) -> Scenario {
        let spec = DatasetSpec {
            generator: Generator::GaussianGrid,
            dimension: 2,
            classes,
            samples_per_class: 40,
            noise_std: 0.05,
            seed: 101,
        };
        let ds = generate(&spec).unwrap();
        split_tasks(&ds, classes_per_task, 102).unwrap()
    }

    fn fast_config(seed: u64) -> (ModelConfig, TrainingConfig) {
        let model = ModelConfig {
            t_diff: 50,
            beta_start: 1e-3,
            beta_end: 0.2,
            denoiser_hidden: vec![32],
            classifier_hidden: vec![16],
            time_embed_dim: 8,
            class_embed_dim: 4,
        };
        let training = TrainingConfig {
            classifier_steps: 20,
            diffusion_steps: 15,
            generation_interval: 5,
            batch_size: 12,
            classifier_lr_first: 0.1,
            classifier_lr: 0.05,
            classifier_weight_decay: 1e-3,
            diffusion_lr: 2e-3,
            diffusion_batch: 16,
            replay: true,
            guidance: GuidanceConfig::new(GuidanceVariant::Guide, 0.2),
            sampler: SamplerConfig::new(5, 0),
            seed,
            archive_samples: true,
        };
        (model, training)
    }

    #[test]
    fn allocation_examples() {
        // B=12, i=3, 2 classes/task -> 2 per class across all 6 seen classes.
        let sc = toy_scenario(6, 2);
        let (prev, curr) = batch_allocation(&sc, 3, 12);
        for &(_, count) in prev.iter().chain(&curr) {
            assert_eq!(count, 2);
        }
        assert_eq!(prev.len(), 4);
        assert_eq!(curr.len(), 2);

        // B=10, i=3: previous tasks get ⌊10/3⌋=3 each, the global remainder
        // goes to the current task, spread lowest-id first.
        let (prev, curr) = batch_allocation(&sc, 3, 10);
        let prev_total: usize = prev.iter().map(|&(_, c)| c).sum();
        let curr_total: usize = curr.iter().map(|&(_, c)| c).sum();
        assert_eq!(prev_total, 6);
        assert_eq!(curr_total, 4);
        // within a task, remainder to lowest class id first
        assert_eq!(prev[0].1, 2);
        assert_eq!(prev[1].1, 1);
        assert!(curr[0].1 >= curr[1].1);
    }

    #[test]
    fn cache_size_rule() {
        assert_eq!(rehearsal_cache_size(3, 12), 8);
        assert_eq!(rehearsal_cache_size(2, 10), 5);
        assert_eq!(rehearsal_cache_size(5, 60), 48);
    }

    #[test]
    fn first_task_batch_is_all_real() {
        let sc = toy_scenario(4, 2);
        let mut r = rng::from_seed(1);
        let (x, y) = build_balanced_batch(&sc, 1, None, 12, &mut r).unwrap();
        assert_eq!(x.rows(), 12);
        assert!(y.iter().all(|l| sc.tasks[0].classes.contains(l)));
    }

    #[test]
    fn missing_cache_is_protocol_error() {
        let sc = toy_scenario(4, 2);
        let mut r = rng::from_seed(2);
        let err = build_balanced_batch(&sc, 2, None, 12, &mut r).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn batches_cover_every_seen_class() {
        let sc = toy_scenario(6, 2);
        // Fake cache with the expected allocation.
        let (prev_counts, _) = batch_allocation(&sc, 3, 12);
        let mut labels = Vec::new();
        for (class, count) in &prev_counts {
            labels.extend(std::iter::repeat(*class).take(*count));
        }
        let n = labels.len();
        let cache = RehearsalCache {
            samples: Tensor::zeros(vec![n, 2]),
            labels,
        };
        let mut r = rng::from_seed(3);
        let (_, y) = build_balanced_batch(&sc, 3, Some(&cache), 12, &mut r).unwrap();
        for class in 0..6 {
            assert!(y.contains(&class), "class {class} missing from batch");
        }
    }

    #[test]
    fn diffusion_dataset_sizes_and_histogram() {
        let sc = toy_scenario(4, 2);
        let (model_cfg, config) = fast_config(7);
        let schedule = model_cfg.schedule().unwrap();
        let mut r = rng::from_seed(4);
        let den = DenoiserModel::new(2, 4, &[16], 8, 4, &mut r);

        // i=1: unchanged current dataset.
        let d1 = build_diffusion_dataset(None, &sc, 1, &schedule, &config).unwrap();
        assert_eq!(d1.len(), sc.tasks[0].train.len());

        // i=2: |D_1| synthetic + |D_2| real, balanced labels over previous classes.
        let d2 = build_diffusion_dataset(Some(&den), &sc, 2, &schedule, &config).unwrap();
        assert_eq!(d2.len(), sc.tasks[0].train.len() + sc.tasks[1].train.len());
        let synth = sc.tasks[0].train.len();
        let hist0 = d2.labels[..synth].iter().filter(|&&l| l == 0).count();
        let hist1 = d2.labels[..synth].iter().filter(|&&l| l == 1).count();
        assert!((hist0 as i64 - hist1 as i64).abs() <= 1);
    }

    #[test]
    fn single_task_scenario_record() {
        let sc = toy_scenario(2, 2);
        let (model_cfg, config) = fast_config(11);
        let record = run_scenario(&sc, &model_cfg, &config).unwrap();
        assert_eq!(record.accuracy.completed(), 1);
        assert!(record.avg_forgetting_final.is_none());
        assert!(
            (record.avg_accuracy_final - record.accuracy.entry(1, 1).unwrap()).abs() < 1e-15
        );
    }

    #[test]
    fn equal_seeds_reproduce_the_record() {
        let sc = toy_scenario(4, 2);
        let (model_cfg, config) = fast_config(13);
        let a = run_scenario(&sc, &model_cfg, &config).unwrap();
        let b = run_scenario(&sc, &model_cfg, &config).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }

    #[test]
    fn frozen_snapshots_unchanged_by_classifier_phase() {
        let sc = toy_scenario(4, 2);
        let (model_cfg, config) = fast_config(17);
        let schedule = model_cfg.schedule().unwrap();
        let mut prev_den = DenoiserModel::new(
            2,
            4,
            &model_cfg.denoiser_hidden,
            model_cfg.time_embed_dim,
            model_cfg.class_embed_dim,
            &mut rng::stream(17, &[phase::INIT_DENOISER]),
        );
        let mut opt = Optimizer::adamw(2e-3, 0.0);
        let mut r = rng::from_seed(5);
        let (x0, y) = draw_batch_from(&sc.tasks[0].train, 16, &mut r).unwrap();
        diffusion_train_step(&mut prev_den, &x0, Some(&y), &schedule, &mut opt, &mut r).unwrap();
        let prev_clf = ClassifierModel::new(2, 4, &[16], &mut r);

        let before_den = crate::checkpoint::denoiser_bytes(&prev_den, &schedule).unwrap();
        let before_clf = crate::checkpoint::classifier_bytes(&prev_clf).unwrap();

        let mut live = prev_clf.clone();
        let mut optimizer = Optimizer::sgd(0.05);
        train_task_classifier(
            &sc,
            2,
            &mut live,
            Some((&prev_den, &prev_clf)),
            &schedule,
            &config,
            &mut optimizer,
        )
        .unwrap();

        assert_eq!(
            crate::checkpoint::denoiser_bytes(&prev_den, &schedule).unwrap(),
            before_den
        );
        assert_eq!(crate::checkpoint::classifier_bytes(&prev_clf).unwrap(), before_clf);
    }

    #[test]
    fn generation_interval_counts_refreshes() {
        let sc = toy_scenario(4, 2);
        let (model_cfg, mut config) = fast_config(19);
        let schedule = model_cfg.schedule().unwrap();
        let mut r = rng::from_seed(6);
        let prev_den = DenoiserModel::new(2, 4, &[16], 8, 4, &mut r);
        let prev_clf = ClassifierModel::new(2, 4, &[16], &mut r);

        // Interval beyond N_c: cache built exactly once.
        config.generation_interval = 10_000;
        let mut live = prev_clf.clone();
        let mut opt = Optimizer::sgd(0.05);
        let out = train_task_classifier(
            &sc,
            2,
            &mut live,
            Some((&prev_den, &prev_clf)),
            &schedule,
            &config,
            &mut opt,
        )
        .unwrap();
        assert_eq!(out.rehearsal_refreshes, 1);

        // Interval 1: regenerated every batch.
        config.generation_interval = 1;
        config.classifier_steps = 6;
        let mut live = prev_clf.clone();
        let mut opt = Optimizer::sgd(0.05);
        let out = train_task_classifier(
            &sc,
            2,
            &mut live,
            Some((&prev_den, &prev_clf)),
            &schedule,
            &config,
            &mut opt,
        )
        .unwrap();
        assert_eq!(out.rehearsal_refreshes, 6);
    }

    #[test]
    fn cache_histogram_uniform_over_previous_classes() {
        let sc = toy_scenario(6, 2);
        let (model_cfg, config) = fast_config(23);
        let schedule = model_cfg.schedule().unwrap();
        let mut r = rng::from_seed(7);
        let prev_den = DenoiserModel::new(2, 6, &[16], 8, 4, &mut r);
        let prev_clf = ClassifierModel::new(2, 6, &[16], &mut r);
        let setup = RehearsalSetup {
            prev_diffusion: &prev_den,
            prev_classifier: &prev_clf,
            curr_classifier: &prev_clf,
            current_task_classes: &sc.tasks[2].classes,
            schedule: &schedule,
        };
        let cache = refresh_rehearsal_cache(&setup, &sc, 3, &config, 1).unwrap();
        assert_eq!(cache.labels.len(), rehearsal_cache_size(3, config.batch_size));
        let mut counts = [0usize; 4];
        for &l in &cache.labels {
            counts[l] += 1;
        }
        let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(max - min <= 1, "histogram {counts:?}");
    }
}
