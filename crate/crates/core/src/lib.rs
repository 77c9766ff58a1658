//! Text-guided 3-D gaze estimation core.
//!
//! This crate implements the full model and training stack for a gaze
//! estimator that conditions an image encoder on natural-language gaze
//! descriptions:
//!
//! 1. **Zero-shot direction assignment** ([`prompt`]): every face image is
//!    tagged with one of four coarse gaze directions (`front`, `down`,
//!    `left`, `right`) by cosine similarity between its image embedding and
//!    the embeddings of four fixed prompt sentences.
//! 2. **Encoding** ([`encoder`]): image and prompt towers map a normalized
//!    224x224x3 face crop and the assigned prompt to 1024-dimensional
//!    embeddings.
//! 3. **Fusion** ([`fusion`]): single-head cross-attention (text queries,
//!    image keys/values) refines the image embedding through a residual
//!    connection; concatenation and elementwise-sum baselines are available
//!    for ablation.
//! 4. **Regression** ([`model`]): a three-layer MLP head maps the fused
//!    embedding to pitch and yaw in radians.
//! 5. **Training and evaluation** ([`train`], [`optim`], [`split`]):
//!    Adam with a milestone learning-rate schedule, leave-one-subject-out or
//!    grouped k-fold protocols, and a 3-D angular-error metric in degrees
//!    ([`geometry`]).
//! 6. **Ablation** ([`ablation`]): prompt-content, tower-freezing,
//!    fusion-strategy and backbone sweeps with per-row deltas.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature
//! (default) enables platform float intrinsics, and `parallel` scores
//! evaluation batches across threads with input-order results, so both
//! builds produce identical output.
#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
#![warn(missing_docs)]

extern crate alloc;

pub mod ablation;
pub mod encoder;
pub mod fusion;
pub mod geometry;
pub mod linalg;
pub mod manifest;
pub mod math;
pub mod model;
pub mod optim;
pub mod params;
pub mod prompt;
pub mod split;
pub mod synthetic;
pub mod train;
