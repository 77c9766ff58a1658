//! Command-line companion to `gazeclip-core`: everything that touches the
//! filesystem — config files, manifests with images, checkpoints, weight
//! archives, gaze-ray overlays and run reports — plus the subcommand
//! implementations the `gazeclip` binary dispatches to.

#![forbid(unsafe_code)]
#![warn(missing_docs)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod imagefile;
pub mod overlay;
pub mod report;
