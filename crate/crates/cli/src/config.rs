//! Flat `key = value` experiment configs with one section per module.
//!
//! Syntax: `[section]` headers, `key = value` pairs, `#` comments, blank
//! lines ignored. Values are bare words (no quoting); lists are
//! comma-separated. Unknown sections or keys are usage errors naming the
//! offending key. See `configs/` for complete examples and the README for
//! the full schema.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use guidelab_core::continual::{ModelConfig, TrainingConfig};
use guidelab_core::data::{DatasetSpec, Generator};
use guidelab_core::diffusion::SamplerConfig;
use guidelab_core::guidance::{DualGuidanceConfig, GuidanceConfig, GuidanceVariant};

/// Raw parsed sections: section -> key -> (value, line number).
#[derive(Debug, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
    consumed: std::cell::RefCell<Vec<(String, String)>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut sections: BTreeMap<String, BTreeMap<String, (String, usize)>> = BTreeMap::new();
        let mut current = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("line {lineno}: malformed section header `{line}`"))?;
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {lineno}: expected `key = value`, got `{line}`"))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if current.is_empty() {
                bail!("line {lineno}: key `{key}` appears before any [section]");
            }
            let section = sections.get_mut(&current).unwrap();
            if section.insert(key.clone(), (value, lineno)).is_some() {
                bail!("line {lineno}: duplicate key `{current}.{key}`");
            }
        }
        Ok(RawConfig {
            sections,
            consumed: Default::default(),
        })
    }

    pub fn load(path: &Path) -> Result<RawConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text)
    }

    fn lookup(&self, section: &str, key: &str) -> Option<&str> {
        let v = self
            .sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|(v, _)| v.as_str());
        if v.is_some() {
            self.consumed
                .borrow_mut()
                .push((section.to_string(), key.to_string()));
        }
        v
    }

    pub fn get<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.lookup(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("bad value for `{section}.{key}`: `{v}` ({e})")),
        }
    }

    pub fn require<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key)?
            .ok_or_else(|| anyhow!("missing required key `{section}.{key}`"))
    }

    pub fn get_or<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    pub fn get_str(&self, section: &str, key: &str) -> Option<String> {
        self.lookup(section, key).map(|s| s.to_string())
    }

    pub fn get_list<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.lookup(section, key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|item| {
                    let item = item.trim();
                    item.parse::<T>()
                        .map_err(|e| anyhow!("bad value for `{section}.{key}`: `{item}` ({e})"))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Error out on any key that was never consumed by the schema.
    pub fn reject_unknown(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        for (section, keys) in &self.sections {
            for (key, (_, lineno)) in keys {
                let used = consumed
                    .iter()
                    .any(|(s, k)| s == section && k == key);
                if !used {
                    bail!("line {lineno}: unknown key `{section}.{key}`");
                }
            }
        }
        Ok(())
    }
}

/// Everything a run needs, resolved from one config file.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub classes_per_task: usize,
    pub split_seed: u64,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub probe_epsilon: f64,
    pub probe_samples: usize,
    pub dual: Option<DualDemoConfig>,
}

/// Settings for the dual-guidance demonstration.
#[derive(Debug, Clone)]
pub struct DualDemoConfig {
    pub train_classes: Vec<usize>,
    pub guidance: DualGuidanceConfig,
    pub samples: usize,
    pub classifier_steps: usize,
    pub diffusion_steps: usize,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let raw = RawConfig::load(path)?;
        Self::from_raw(&raw)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<ExperimentConfig> {
        let generator = match raw.get_str("dataset", "generator") {
            Some(g) => Generator::parse(&g)?,
            None => Generator::GaussianGrid,
        };
        let dataset = DatasetSpec {
            generator,
            dimension: raw.get_or("dataset", "dimension", 2)?,
            classes: raw.require("dataset", "classes")?,
            samples_per_class: raw.get_or("dataset", "samples_per_class", 200)?,
            noise_std: raw.get_or("dataset", "noise_std", 0.1)?,
            seed: raw.get_or("dataset", "seed", 7)?,
        };
        dataset.validate()?;

        let classes_per_task = raw.require("scenario", "classes_per_task")?;
        let split_seed = raw.get_or("scenario", "split_seed", dataset.seed ^ 0x5eed)?;

        let defaults = ModelConfig::default();
        let model = ModelConfig {
            t_diff: raw.get_or("model", "t_diff", defaults.t_diff)?,
            beta_start: raw.get_or("model", "beta_start", defaults.beta_start)?,
            beta_end: raw.get_or("model", "beta_end", defaults.beta_end)?,
            denoiser_hidden: raw
                .get_list("model", "denoiser_hidden")?
                .unwrap_or(defaults.denoiser_hidden),
            classifier_hidden: raw
                .get_list("model", "classifier_hidden")?
                .unwrap_or(defaults.classifier_hidden),
            time_embed_dim: raw.get_or("model", "time_embed_dim", defaults.time_embed_dim)?,
            class_embed_dim: raw.get_or("model", "class_embed_dim", defaults.class_embed_dim)?,
        };
        model.schedule()?;

        let variant = match raw.get_str("guidance", "variant") {
            Some(v) => GuidanceVariant::parse(&v)?,
            None => GuidanceVariant::None,
        };
        let mut guidance = GuidanceConfig::new(variant, raw.get_or("guidance", "scale", 0.0)?);
        guidance.backprop_through_denoiser =
            raw.get_or("guidance", "backprop_through_denoiser", false)?;
        guidance.validate()?;

        let interval_raw = raw
            .get_str("training", "generation_interval")
            .unwrap_or_else(|| "10".to_string());
        let generation_interval = parse_interval(&interval_raw)?;

        let training = TrainingConfig {
            classifier_steps: raw.get_or("training", "classifier_steps", 400)?,
            diffusion_steps: raw.get_or("training", "diffusion_steps", 2000)?,
            generation_interval,
            batch_size: raw.get_or("training", "batch_size", 60)?,
            classifier_lr_first: raw.get_or("training", "classifier_lr_first", 0.1)?,
            classifier_lr: raw.get_or("training", "classifier_lr", 0.02)?,
            classifier_weight_decay: raw.get_or("training", "classifier_weight_decay", 2e-3)?,
            diffusion_lr: raw.get_or("training", "diffusion_lr", 2e-3)?,
            diffusion_batch: raw.get_or("training", "diffusion_batch", 64)?,
            replay: raw.get_or("training", "replay", true)?,
            guidance,
            sampler: SamplerConfig::new(raw.get_or("sampler", "ddim_steps", 20)?, 0),
            seed: 0, // per-seed runs overwrite this
            archive_samples: raw.get_or("run", "archive_samples", true)?,
        };
        training.validate()?;

        let seeds: Vec<u64> = raw
            .get_list("run", "seeds")?
            .ok_or_else(|| anyhow!("missing required key `run.seeds`"))?;
        if seeds.is_empty() {
            bail!("`run.seeds` must name at least one seed");
        }
        let output_dir = PathBuf::from(
            raw.get_str("run", "output_dir")
                .ok_or_else(|| anyhow!("missing required key `run.output_dir`"))?,
        );

        let probe_epsilon = raw.get_or("probe", "epsilon", 0.1)?;
        let probe_samples = raw.get_or("probe", "samples", 256)?;

        let dual = if raw.sections.contains_key("dual") {
            let train_classes: Vec<usize> = raw
                .get_list("dual", "train_classes")?
                .ok_or_else(|| anyhow!("missing required key `dual.train_classes`"))?;
            let guidance = DualGuidanceConfig {
                c1: raw.require("dual", "c1")?,
                c2: raw.require("dual", "c2")?,
                s1: raw.get_or("dual", "s1", 10.0)?,
                s2: raw.get_or("dual", "s2", 10.0)?,
            };
            guidance.validate()?;
            Some(DualDemoConfig {
                train_classes,
                guidance,
                samples: raw.get_or("dual", "samples", 64)?,
                classifier_steps: raw.get_or("dual", "classifier_steps", 800)?,
                diffusion_steps: raw.get_or("dual", "diffusion_steps", 3000)?,
            })
        } else {
            None
        };

        raw.reject_unknown()?;

        Ok(ExperimentConfig {
            dataset,
            classes_per_task,
            split_seed,
            model,
            training,
            seeds,
            output_dir,
            probe_epsilon,
            probe_samples,
            dual,
        })
    }
}

/// `inf` (or anything ≥ N_c) degenerates to build-once-per-task.
fn parse_interval(raw: &str) -> Result<usize> {
    if raw == "inf" {
        return Ok(usize::MAX);
    }
    raw.parse::<usize>()
        .map_err(|e| anyhow!("bad value for `training.generation_interval`: `{raw}` ({e})"))
}
