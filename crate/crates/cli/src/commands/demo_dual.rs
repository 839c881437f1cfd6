//! `demo-dual`: train an unconditional diffusion model on a class subset and
//! a classifier on everything, then emit dual-guided samples (and the s2=0
//! reference) with per-sample classifier logits.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Result};
use guidelab_core::classifier::{classifier_train_step, ClassifierModel};
use guidelab_core::data::{generate, Dataset};
use guidelab_core::diffusion::{diffusion_train_step, DenoiserModel, SamplerConfig};
use guidelab_core::guidance::{dual_guided_sample, DualGuidanceConfig};
use guidelab_core::optim::Optimizer;
use guidelab_core::rng::{self, phase};
use guidelab_core::tensor::Tensor;
use rand::Rng;

use crate::config::ExperimentConfig;
use crate::output::ensure_dir;

fn draw(
    data: &Dataset,
    size: usize,
    r: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Tensor, Vec<usize>)> {
    let d = data.dimension();
    let mut values = Vec::with_capacity(size * d);
    let mut labels = Vec::with_capacity(size);
    for _ in 0..size {
        let i = r.gen_range(0..data.len());
        values.extend_from_slice(data.features.row(i));
        labels.push(data.labels[i]);
    }
    Ok((Tensor::new(vec![size, d], values)?, labels))
}

fn write_samples_with_logits(
    path: &Path,
    samples: &Tensor,
    classifier: &ClassifierModel,
) -> Result<()> {
    let logits = classifier.logits(samples)?;
    let mut text = String::new();
    for j in 0..samples.row_len() {
        let _ = write!(text, "x_{j},");
    }
    for c in 0..classifier.num_classes {
        let _ = write!(text, "logit_{c}");
        if c + 1 < classifier.num_classes {
            text.push(',');
        }
    }
    text.push('\n');
    for r in 0..samples.rows() {
        for v in samples.row(r) {
            let _ = write!(text, "{v},");
        }
        let row = logits.row(r);
        for (c, v) in row.iter().enumerate() {
            let _ = write!(text, "{v}");
            if c + 1 < row.len() {
                text.push(',');
            }
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn execute(config_path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::from_file(config_path)?;
    let dual = cfg
        .dual
        .clone()
        .ok_or_else(|| anyhow!("config has no [dual] section"))?;
    ensure_dir(&cfg.output_dir)?;

    let dataset = generate(&cfg.dataset)?;
    let schedule = cfg.model.schedule()?;
    let seed = cfg.seeds[0];

    // Classifier over every class.
    let mut clf_rng = rng::stream(seed, &[phase::INIT_CLASSIFIER]);
    let mut classifier = ClassifierModel::new(
        cfg.dataset.dimension,
        cfg.dataset.classes,
        &cfg.model.classifier_hidden,
        &mut clf_rng,
    );
    let mut clf_opt = Optimizer::sgd(cfg.training.classifier_lr_first);
    clf_opt.weight_decay = cfg.training.classifier_weight_decay;
    for _ in 0..dual.classifier_steps {
        let (x, y) = draw(&dataset, cfg.training.batch_size, &mut clf_rng)?;
        classifier_train_step(&mut classifier, &x, &y, &mut clf_opt)?;
    }

    // Unconditional diffusion on the subset only.
    let subset = {
        let mut idx = Vec::new();
        for &c in &dual.train_classes {
            idx.extend(dataset.indices_of(c));
        }
        if idx.is_empty() {
            return Err(anyhow!("dual.train_classes selected no samples"));
        }
        dataset.subset(&idx)
    };
    let mut den_rng = rng::stream(seed, &[phase::INIT_DENOISER]);
    let mut denoiser = DenoiserModel::new(
        cfg.dataset.dimension,
        cfg.dataset.classes,
        &cfg.model.denoiser_hidden,
        cfg.model.time_embed_dim,
        cfg.model.class_embed_dim,
        &mut den_rng,
    );
    let mut den_opt = Optimizer::adamw(cfg.training.diffusion_lr, 0.0);
    for _ in 0..dual.diffusion_steps {
        let (x0, _) = draw(&subset, cfg.training.diffusion_batch, &mut den_rng)?;
        diffusion_train_step(&mut denoiser, &x0, None, &schedule, &mut den_opt, &mut den_rng)?;
    }

    let sampler = SamplerConfig::new(
        cfg.training.sampler.ddim_steps,
        rng::derive_seed(seed, &[phase::SAMPLER]),
    );

    // Reference preset: s2 = 0 (guidance toward c1 only).
    let reference_cfg = DualGuidanceConfig {
        s2: 0.0,
        ..dual.guidance
    };
    let reference = dual_guided_sample(
        &denoiser,
        &classifier,
        &reference_cfg,
        dual.samples,
        &sampler,
        &schedule,
    )?;
    write_samples_with_logits(
        &cfg.output_dir.join("samples_dual_reference.csv"),
        &reference,
        &classifier,
    )?;

    // Full dual guidance toward (c1, c2).
    let guided = dual_guided_sample(
        &denoiser,
        &classifier,
        &dual.guidance,
        dual.samples,
        &sampler,
        &schedule,
    )?;
    write_samples_with_logits(&cfg.output_dir.join("samples_dual.csv"), &guided, &classifier)?;

    println!(
        "dual demo: {} samples toward (c1={}, c2={}) at (s1={}, s2={}), reference at s2=0 -> {}",
        dual.samples,
        dual.guidance.c1,
        dual.guidance.c2,
        dual.guidance.s1,
        dual.guidance.s2,
        cfg.output_dir.display()
    );
    Ok(())
}
