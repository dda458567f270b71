//! Saving and restoring trained toy models.
//!
//! A checkpoint is a directory with `checkpoint.json` (labels, prompt,
//! ablations, distance, encoder spec, vocabulary, prototypes) next to the
//! encoder parameters in `encoder.bin` and `encoder.manifest.json`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabelSpace;
use crate::encoder::{EncoderError, EncoderSpec, MaskedLm, ToyEncoder, ToyParams, Vocab};
use crate::model::{Ablations, Distance, Model, PrototypeSpace};
use crate::promptkit::PromptConfig;

pub const CHECKPOINT_FORMAT: &str = "fsed-checkpoint/1";
const META: &str = "checkpoint.json";
const ENCODER_STEM: &str = "encoder";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("unsupported checkpoint format {0:?}")]
    Format(String),
    #[error("checkpoint is inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format: String,
    seed: u64,
    labels: Vec<String>,
    prompt: PromptConfig,
    ablations: Ablations,
    distance: Distance,
    encoder: EncoderSpec,
    vocab: Vocab,
    prototype_seed: u64,
    prototypes: Vec<Vec<f64>>,
}

/// Writes `model` into `dir`, creating it if needed.
pub fn save(model: &Model<ToyEncoder>, seed: u64, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let meta = Meta {
        format: CHECKPOINT_FORMAT.to_string(),
        seed,
        labels: model.labels.labels().to_vec(),
        prompt: model.prompt.clone(),
        ablations: model.ablations,
        distance: model.distance,
        encoder: model.encoder.spec().clone(),
        vocab: model.encoder.vocab().clone(),
        prototype_seed: model.prototypes.seed,
        prototypes: model.prototypes.vectors.rows().into_iter().map(|r| r.to_vec()).collect(),
    };
    model.encoder.params().save(dir, ENCODER_STEM)?;
    fs::write(dir.join(META), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Restores a model saved by [`save`] together with its run seed.
pub fn load(dir: &Path) -> Result<(Model<ToyEncoder>, u64), CheckpointError> {
    let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join(META))?)?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Format(meta.format));
    }
    let d = meta.encoder.dim;
    if meta.prototypes.len() != meta.labels.len() || meta.prototypes.iter().any(|r| r.len() != d) {
        return Err(CheckpointError::Inconsistent(
            "prototype table does not match labels and dimension".into(),
        ));
    }
    let flat: Vec<f64> = meta.prototypes.concat();
    let vectors = Array2::from_shape_vec((meta.labels.len(), d), flat)
        .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
    let params = ToyParams::load(dir, ENCODER_STEM)?;
    let encoder = ToyEncoder::from_parts(meta.encoder, meta.vocab, params)?;
    let model = Model::from_parts(
        encoder,
        PrototypeSpace {
            vectors,
            seed: meta.prototype_seed,
        },
        LabelSpace::new(meta.labels),
        meta.prompt,
        meta.ablations,
        meta.distance,
    );
    Ok((model, meta.seed))
}
