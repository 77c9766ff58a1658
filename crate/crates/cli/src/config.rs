//! Flat `key=value` experiment-config files.
//!
//! One assignment per line, `#` comments and blank lines ignored. Keys use
//! the same spellings as the config's canonical hash pre-image
//! ([`ExperimentConfig::canonical_kv`]); any field left out keeps its
//! default, so a minimal file needs only `manifest=...`. One extra key,
//! `groups`, names a subject-grouping file for the 3-fold protocol and is
//! not part of the experiment identity.
//!
//! ```text
//! # 3-fold run on provided groups
//! manifest = faces.csv
//! protocol = kfold3
//! groups = groups.txt
//! seed = 7
//! ```

use crate::error::CliError;
use gazeclip_core::model::LossKind;
use gazeclip_core::train::ExperimentConfig;

/// A parsed config file: the experiment plus CLI-side extras.
#[derive(Debug, Clone, PartialEq)]
pub struct FileConfig {
    /// The experiment description (hashing identity).
    pub experiment: ExperimentConfig,
    /// Optional subject-groups file for `kfold3`, as written (resolved
    /// against the config file's directory by the caller).
    pub groups: Option<String>,
}

fn parse_key<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| CliError::Contract(format!("config line {line}: {key}: {e}")))
}

/// Parse config text. `source_name` labels error messages.
pub fn parse_config(text: &str, source_name: &str) -> Result<FileConfig, CliError> {
    let mut cfg = ExperimentConfig::default();
    let mut groups = None;
    let mut seen: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Contract(format!(
                "{source_name} line {line_no}: expected `key = value`, got `{line}`"
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            return Err(CliError::Contract(format!(
                "{source_name} line {line_no}: duplicate key `{key}`"
            )));
        }
        seen.push(key.to_string());
        match key {
            "backbone" => cfg.backbone = parse_key(key, value, line_no)?,
            "fusion_mode" => cfg.fusion_mode = parse_key(key, value, line_no)?,
            "token_layout" => cfg.token_layout = parse_key(key, value, line_no)?,
            "prompt_mode" => cfg.prompt_mode = parse_key(key, value, line_no)?,
            "protocol" => cfg.protocol = parse_key(key, value, line_no)?,
            "loss" => {
                cfg.loss = Some(parse_key::<LossKind>(key, value, line_no)?);
            }
            "freeze.image_trainable" => cfg.freeze.image_trainable = parse_bool(key, value, line_no)?,
            "freeze.text_trainable" => cfg.freeze.text_trainable = parse_bool(key, value, line_no)?,
            "batch_size" => cfg.batch_size = parse_key(key, value, line_no)?,
            "epochs" => cfg.epochs = parse_key(key, value, line_no)?,
            "initial_lr" => cfg.initial_lr = parse_key(key, value, line_no)?,
            "lr_gamma" => cfg.lr_gamma = parse_key(key, value, line_no)?,
            "lr_milestones" => {
                cfg.lr_milestones = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|part| parse_key(key, part.trim(), line_no))
                        .collect::<Result<Vec<u32>, _>>()?
                };
            }
            "seed" => cfg.seed = parse_key(key, value, line_no)?,
            "max_steps" => {
                cfg.max_steps =
                    if value == "none" { None } else { Some(parse_key(key, value, line_no)?) };
            }
            "manifest" => cfg.manifest = value.to_string(),
            "groups" => groups = Some(value.to_string()),
            other => {
                return Err(CliError::Contract(format!(
                    "{source_name} line {line_no}: unknown key `{other}`"
                )));
            }
        }
    }
    if cfg.manifest.is_empty() {
        return Err(CliError::Contract(format!(
            "{source_name}: required key `manifest` is missing"
        )));
    }
    cfg.validate().map_err(|e| CliError::Contract(format!("{source_name}: {e}")))?;
    Ok(FileConfig { experiment: cfg, groups })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool, CliError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(CliError::Contract(format!(
            "config line {line}: {key}: expected true or false, got `{other}`"
        ))),
    }
}
