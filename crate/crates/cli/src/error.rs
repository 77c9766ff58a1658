//! Process-level error taxonomy.
//!
//! Every failure surfaces as one of three exit codes:
//!
//! * `1` — contract errors: bad CLI arguments, malformed config files or
//!   manifests, schedule/protocol violations, shape mismatches.
//! * `2` — I/O errors: missing or unreadable files, undecodable images,
//!   unwritable outputs.
//! * `3` — numerical aborts: training stopped on a non-finite loss.

use gazeclip_core::encoder::EncoderError;
use gazeclip_core::manifest::ManifestError;
use gazeclip_core::model::ModelError;
use gazeclip_core::prompt::PromptError;
use gazeclip_core::split::SplitError;
use gazeclip_core::train::TrainError;
use std::path::PathBuf;

/// Exit code for contract violations.
pub const EXIT_CONTRACT: i32 = 1;
/// Exit code for I/O failures.
pub const EXIT_IO: i32 = 2;
/// Exit code for numerical aborts.
pub const EXIT_NUMERIC: i32 = 3;

/// Anything a subcommand can fail with.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A precondition on inputs was violated.
    #[error("{0}")]
    Contract(String),
    /// The filesystem or a codec failed.
    #[error("{message}")]
    Io {
        /// Human-readable description including the offending path.
        message: String,
        /// Underlying cause, when one exists.
        #[source]
        source: Option<std::io::Error>,
    },
    /// Training aborted on a non-finite loss.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    /// The process exit code this error maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Contract(_) => EXIT_CONTRACT,
            CliError::Io { .. } => EXIT_IO,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    /// Contract error from anything displayable.
    pub fn contract(msg: impl std::fmt::Display) -> Self {
        CliError::Contract(msg.to_string())
    }

    /// I/O error tagged with the path that failed.
    pub fn io(action: &str, path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            message: format!("cannot {action} `{}`: {source}", path.display()),
            source: Some(source),
        }
    }

    /// I/O-class error without an `io::Error` cause (e.g. codec failures).
    pub fn io_msg(message: impl std::fmt::Display) -> Self {
        CliError::Io { message: message.to_string(), source: None }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            // Observers only fail while writing checkpoints.
            TrainError::Observer(msg) => CliError::io_msg(msg),
            other => CliError::contract(other),
        }
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        CliError::contract(e)
    }
}

impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        CliError::contract(e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::contract(e)
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        CliError::contract(e)
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        CliError::contract(e)
    }
}

/// Read a file to a string with a path-tagged I/O error.
pub fn read_file(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io("read", path, e))
}

/// Write bytes with a path-tagged I/O error, creating parent directories.
pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io("create directory", parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io("write", path, e))
}

/// Resolve `relative` against the directory containing `anchor`.
///
/// Absolute paths pass through unchanged; relative ones are taken as
/// relative to the anchor file's parent, so configs and manifests can
/// reference their neighbors regardless of the invocation directory.
pub fn resolve_near(anchor: &std::path::Path, relative: &str) -> PathBuf {
    let candidate = PathBuf::from(relative);
    if candidate.is_absolute() {
        return candidate;
    }
    match anchor.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent.join(candidate),
        _ => candidate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_taxonomy() {
        assert_eq!(CliError::contract("x").exit_code(), 1);
        assert_eq!(CliError::io_msg("x").exit_code(), 2);
        assert_eq!(CliError::Numeric(String::from("x")).exit_code(), 3);
    }

    #[test]
    fn train_errors_split_by_kind() {
        let numeric: CliError = TrainError::NonFiniteLoss { epoch: 2, step: 7 }.into();
        assert_eq!(numeric.exit_code(), 3);
        let contract: CliError = TrainError::EmptyTrainFold.into();
        assert_eq!(contract.exit_code(), 1);
        let io: CliError = TrainError::Observer(String::from("disk full")).into();
        assert_eq!(io.exit_code(), 2);
    }

    #[test]
    fn paths_resolve_against_the_anchor_file() {
        let anchor = std::path::Path::new("/data/runs/exp.cfg");
        assert_eq!(resolve_near(anchor, "faces.csv"), PathBuf::from("/data/runs/faces.csv"));
        assert_eq!(resolve_near(anchor, "/abs/faces.csv"), PathBuf::from("/abs/faces.csv"));
        let bare = std::path::Path::new("exp.cfg");
        assert_eq!(resolve_near(bare, "faces.csv"), PathBuf::from("faces.csv"));
    }
}
