//! Versioned JSON model checkpoints.
//!
//! A checkpoint is a flat, self-describing document: a format tag, the model
//! hyperparameters, the noise schedule for denoisers, and the named parameter
//! tensors. Serialization is deterministic (fixed field order, ordered
//! parameter list), so identical models produce identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::diffusion::{DenoiserModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::rng;
use crate::tensor::Tensor;

pub const FORMAT_TAG: &str = "guidelab-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelHeader {
    Classifier {
        data_dim: usize,
        num_classes: usize,
        hidden: Vec<usize>,
    },
    Denoiser {
        data_dim: usize,
        num_classes: usize,
        hidden: Vec<usize>,
        time_dim: usize,
        class_dim: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    #[serde(flatten)]
    pub header: ModelHeader,
    /// Betas of the training schedule; denoiser checkpoints only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule_betas: Option<Vec<f64>>,
    pub params: Vec<ParamRecord>,
}

fn records_of(model: &impl ParamSet) -> Vec<ParamRecord> {
    model
        .params()
        .iter()
        .map(|p| ParamRecord {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            values: p.tensor.values().to_vec(),
        })
        .collect()
}

fn restore_params(model: &mut impl ParamSet, records: &[ParamRecord]) -> Result<()> {
    let mut params = model.params_mut();
    if params.len() != records.len() {
        return Err(Error::config(format!(
            "checkpoint has {} parameters, model expects {}",
            records.len(),
            params.len()
        )));
    }
    for (p, rec) in params.iter_mut().zip(records) {
        if p.name != rec.name {
            return Err(Error::config(format!(
                "checkpoint parameter `{}` does not match model parameter `{}`",
                rec.name, p.name
            )));
        }
        let tensor = Tensor::new(rec.shape.clone(), rec.values.clone())?;
        if tensor.shape() != p.tensor.shape() {
            return Err(Error::config(format!(
                "parameter `{}`: checkpoint shape {:?} vs model shape {:?}",
                rec.name,
                tensor.shape(),
                p.tensor.shape()
            )));
        }
        p.tensor = tensor.with_grad();
    }
    Ok(())
}

fn hidden_dims(mlp: &crate::nn::Mlp) -> Vec<usize> {
    mlp.layers[..mlp.layers.len() - 1]
        .iter()
        .map(|l| l.weight.tensor.shape()[1])
        .collect()
}

pub fn classifier_checkpoint(model: &ClassifierModel) -> Checkpoint {
    Checkpoint {
        format: FORMAT_TAG.to_string(),
        header: ModelHeader::Classifier {
            data_dim: model.data_dim,
            num_classes: model.num_classes,
            hidden: hidden_dims(&model.mlp),
        },
        schedule_betas: None,
        params: records_of(model),
    }
}

pub fn denoiser_checkpoint(model: &DenoiserModel, schedule: &NoiseSchedule) -> Checkpoint {
    Checkpoint {
        format: FORMAT_TAG.to_string(),
        header: ModelHeader::Denoiser {
            data_dim: model.data_dim,
            num_classes: model.num_classes,
            hidden: hidden_dims(&model.mlp),
            time_dim: model.time_dim,
            class_dim: model.class_dim,
        },
        schedule_betas: Some(schedule.betas().to_vec()),
        params: records_of(model),
    }
}

/// Deterministic serialized form of a checkpoint.
pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(ckpt)?)
}

pub fn classifier_bytes(model: &ClassifierModel) -> Result<Vec<u8>> {
    to_bytes(&classifier_checkpoint(model))
}

pub fn save_classifier(model: &ClassifierModel, path: &Path) -> Result<()> {
    std::fs::write(path, classifier_bytes(model)?)?;
    Ok(())
}

pub fn denoiser_bytes(model: &DenoiserModel, schedule: &NoiseSchedule) -> Result<Vec<u8>> {
    to_bytes(&denoiser_checkpoint(model, schedule))
}

pub fn save_denoiser(model: &DenoiserModel, schedule: &NoiseSchedule, path: &Path) -> Result<()> {
    std::fs::write(path, denoiser_bytes(model, schedule)?)?;
    Ok(())
}

fn parse(bytes: &[u8]) -> Result<Checkpoint> {
    let ckpt: Checkpoint = serde_json::from_slice(bytes)?;
    if ckpt.format != FORMAT_TAG {
        return Err(Error::config(format!(
            "unsupported checkpoint format `{}` (expected `{FORMAT_TAG}`)",
            ckpt.format
        )));
    }
    Ok(ckpt)
}

pub fn load_classifier(path: &Path) -> Result<ClassifierModel> {
    let ckpt = parse(&std::fs::read(path)?)?;
    match &ckpt.header {
        ModelHeader::Classifier {
            data_dim,
            num_classes,
            hidden,
        } => {
            let mut model =
                ClassifierModel::new(*data_dim, *num_classes, hidden, &mut rng::from_seed(0));
            restore_params(&mut model, &ckpt.params)?;
            Ok(model)
        }
        ModelHeader::Denoiser { .. } => {
            Err(Error::config("checkpoint holds a denoiser, not a classifier"))
        }
    }
}

pub fn load_denoiser(path: &Path) -> Result<(DenoiserModel, NoiseSchedule)> {
    let ckpt = parse(&std::fs::read(path)?)?;
    match &ckpt.header {
        ModelHeader::Denoiser {
            data_dim,
            num_classes,
            hidden,
            time_dim,
            class_dim,
        } => {
            let mut model = DenoiserModel::new(
                *data_dim,
                *num_classes,
                hidden,
                *time_dim,
                *class_dim,
                &mut rng::from_seed(0),
            );
            restore_params(&mut model, &ckpt.params)?;
            let betas = ckpt
                .schedule_betas
                .ok_or_else(|| Error::config("denoiser checkpoint lacks a schedule"))?;
            Ok((model, NoiseSchedule::from_betas(betas)?))
        }
        ModelHeader::Classifier { .. } => {
            Err(Error::config("checkpoint holds a classifier, not a denoiser"))
        }
    }
}
