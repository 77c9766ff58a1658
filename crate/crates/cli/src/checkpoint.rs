//! Single-file binary containers for model state.
//!
//! Two formats share one envelope — magic bytes, `u32` format version,
//! `u64` header length, a JSON header, then a raw little-endian `f64`
//! payload:
//!
//! * **Checkpoints** (`GZCP`): the full training state — experiment
//!   config, epoch/step counters, a tensor directory, and a payload of
//!   `theta ‖ m ‖ v` (parameters plus both optimizer moment vectors, so a
//!   resumed run is bit-identical to an uninterrupted one).
//! * **Weight archives** (`GZWT`): named tensors only, for initializing a
//!   model from externally produced weights (the `GAZECLIP_WEIGHTS`
//!   hook). Header lists the tensors; payload is their values in listed
//!   order.
//!
//! Every load validates magic, version, header shape and payload length,
//! and checkpoint loads additionally validate the tensor directory
//! against the rebuilt model's layout, so a truncated or mislabeled file
//! fails loudly instead of producing a silently wrong model.

use crate::error::CliError;
use gazeclip_core::model::GazeClipModel;
use gazeclip_core::optim::Adam;
use gazeclip_core::train::ExperimentConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

const CHECKPOINT_MAGIC: &[u8; 4] = b"GZCP";
const WEIGHTS_MAGIC: &[u8; 4] = b"GZWT";
const FORMAT_VERSION: u32 = 1;

/// One named tensor region inside the payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    /// Parameter name (`image.w`, `fusion.wq`, …).
    pub name: String,
    /// Matrix rows (vector length for biases).
    pub rows: usize,
    /// Matrix cols (1 for biases).
    pub cols: usize,
    /// Scalar offset inside the payload section it indexes.
    pub offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamHeader {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    steps: u64,
    beta1_power: f64,
    beta2_power: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ExperimentConfig,
    config_hash: String,
    epoch: u32,
    steps: u64,
    epoch_mean_loss: f64,
    theta_len: usize,
    adam: AdamHeader,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsHeader {
    tensors: Vec<TensorEntry>,
}

/// A checkpoint restored from disk.
pub struct Checkpoint {
    /// The experiment that produced it.
    pub config: ExperimentConfig,
    /// Hash of `config` recorded at save time.
    pub config_hash: String,
    /// Epochs completed when saved.
    pub epoch: u32,
    /// Optimizer steps taken when saved.
    pub steps: u64,
    /// Mean training loss of the saved epoch.
    pub epoch_mean_loss: f64,
    /// Model with the saved parameters installed.
    pub model: GazeClipModel,
    /// Optimizer state ready for bit-exact resumption.
    pub adam: Adam,
}

impl std::fmt::Debug for Checkpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Checkpoint")
            .field("config_hash", &self.config_hash)
            .field("epoch", &self.epoch)
            .field("steps", &self.steps)
            .field("params", &self.model.param_count())
            .finish()
    }
}

fn tensor_directory(model: &GazeClipModel) -> Vec<TensorEntry> {
    model
        .layout()
        .specs()
        .iter()
        .map(|spec| TensorEntry {
            name: spec.name.clone(),
            rows: spec.rows,
            cols: spec.cols,
            offset: spec.offset,
        })
        .collect()
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn envelope(magic: &[u8; 4], header_json: Vec<u8>, payload: Vec<u8>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(16 + header_json.len() + payload.len());
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&payload);
    bytes
}

struct Envelope {
    header: Vec<u8>,
    payload: Vec<u8>,
}

fn open_envelope(path: &Path, magic: &[u8; 4], kind: &str) -> Result<Envelope, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(&format!("read {kind}"), path, e))?;
    let bad = |why: String| CliError::Contract(format!("`{}` is not a valid {kind}: {why}", path.display()));
    if bytes.len() < 16 {
        return Err(bad(String::from("file shorter than the fixed envelope")));
    }
    if &bytes[0..4] != magic {
        return Err(bad(format!(
            "wrong magic bytes (expected {:?})",
            std::str::from_utf8(magic).unwrap_or("?")
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(bad(String::from("truncated header")));
    }
    Ok(Envelope {
        header: bytes[16..16 + header_len].to_vec(),
        payload: bytes[16 + header_len..].to_vec(),
    })
}

fn payload_f64s(payload: &[u8], expected: usize, path: &Path, kind: &str) -> Result<Vec<f64>, CliError> {
    if payload.len() != expected * 8 {
        return Err(CliError::Contract(format!(
            "`{}` is not a valid {kind}: payload holds {} bytes, header promises {} values",
            path.display(),
            payload.len(),
            expected
        )));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().unwrap()))
        .collect())
}

/// Write a training checkpoint.
pub fn save_checkpoint(
    path: &Path,
    config: &ExperimentConfig,
    model: &GazeClipModel,
    adam: &Adam,
    epoch: u32,
    steps: u64,
    epoch_mean_loss: f64,
) -> Result<(), CliError> {
    let (beta1, beta2, epsilon) = adam.hyperparams();
    let (beta1_power, beta2_power) = adam.beta_powers();
    let header = CheckpointHeader {
        config: config.clone(),
        config_hash: config.hash(),
        epoch,
        steps,
        epoch_mean_loss,
        theta_len: model.theta().len(),
        adam: AdamHeader { beta1, beta2, epsilon, steps: adam.steps(), beta1_power, beta2_power },
        tensors: tensor_directory(model),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CliError::Contract(format!("cannot encode checkpoint header: {e}")))?;
    let mut payload = Vec::new();
    push_f64s(&mut payload, model.theta());
    push_f64s(&mut payload, adam.first_moments());
    push_f64s(&mut payload, adam.second_moments());
    crate::error::write_file(path, &envelope(CHECKPOINT_MAGIC, header_json, payload))
}

/// Read a checkpoint and rebuild its model and optimizer.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let envelope = open_envelope(path, CHECKPOINT_MAGIC, "checkpoint")?;
    let header: CheckpointHeader = serde_json::from_slice(&envelope.header).map_err(|e| {
        CliError::Contract(format!("`{}` has a malformed checkpoint header: {e}", path.display()))
    })?;
    let values = payload_f64s(&envelope.payload, header.theta_len * 3, path, "checkpoint")?;

    let mut model = header.config.build_model();
    if model.param_count() != header.theta_len {
        return Err(CliError::Contract(format!(
            "`{}`: parameter count {} does not match the config's model ({})",
            path.display(),
            header.theta_len,
            model.param_count()
        )));
    }
    if tensor_directory(&model) != header.tensors {
        return Err(CliError::Contract(format!(
            "`{}`: tensor directory does not match the config's parameter layout",
            path.display()
        )));
    }
    let n = header.theta_len;
    model.set_theta(values[..n].to_vec())?;
    let adam = Adam::restore(
        values[n..2 * n].to_vec(),
        values[2 * n..].to_vec(),
        header.adam.steps,
        header.adam.beta1,
        header.adam.beta2,
        header.adam.epsilon,
        header.adam.beta1_power,
        header.adam.beta2_power,
    );
    Ok(Checkpoint {
        config: header.config,
        config_hash: header.config_hash,
        epoch: header.epoch,
        steps: header.steps,
        epoch_mean_loss: header.epoch_mean_loss,
        model,
        adam,
    })
}

/// Export a model's parameters as a named-tensor weight archive.
pub fn save_weights(path: &Path, model: &GazeClipModel) -> Result<(), CliError> {
    let header = WeightsHeader { tensors: tensor_directory(model) };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CliError::Contract(format!("cannot encode weights header: {e}")))?;
    let mut payload = Vec::new();
    push_f64s(&mut payload, model.theta());
    crate::error::write_file(path, &envelope(WEIGHTS_MAGIC, header_json, payload))
}

/// Load a weight archive into `model`.
///
/// Every tensor in the archive must name a parameter of the model with
/// the same shape; parameters absent from the archive keep their current
/// values, so partial archives (say, towers only) are valid.
pub fn load_weights(model: &mut GazeClipModel, path: &Path) -> Result<(), CliError> {
    let envelope = open_envelope(path, WEIGHTS_MAGIC, "weight archive")?;
    let header: WeightsHeader = serde_json::from_slice(&envelope.header).map_err(|e| {
        CliError::Contract(format!("`{}` has a malformed weights header: {e}", path.display()))
    })?;
    let total: usize = header.tensors.iter().map(|t| t.rows * t.cols).sum();
    let values = payload_f64s(&envelope.payload, total, path, "weight archive")?;
    for tensor in &header.tensors {
        let len = tensor.rows * tensor.cols;
        if tensor.offset + len > values.len() {
            return Err(CliError::Contract(format!(
                "`{}`: tensor `{}` overruns the payload",
                path.display(),
                tensor.name
            )));
        }
        model
            .load_param(&tensor.name, &values[tensor.offset..tensor.offset + len])
            .map_err(|e| CliError::Contract(format!("`{}`: {e}", path.display())))?;
    }
    Ok(())
}
