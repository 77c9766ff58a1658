//! Image and text encoder towers.
//!
//! The shipped towers are deterministic, trainable stand-ins with the same
//! shape contract as the pretrained vision-language backbones they model:
//! a normalized `224x224x3` face crop and a prompt sentence each map to a
//! 1024-dimensional embedding. Published-scale accuracy requires loading
//! real pretrained weights (see the `weights` support in the model module
//! and the CLI); everything else in the pipeline — assignment, fusion,
//! training, evaluation, ablation — is exercised for real on the stubs.
//!
//! Stub architecture:
//! - **Image tower**: 32x average pooling per channel (224 -> 7, giving
//!   `7*7*3 = 147` features), then `tanh(W x + b)` into 1024 dimensions.
//! - **Text tower**: lowercase whitespace tokens hashed into 512 buckets,
//!   mean-pooled 64-dim bucket embeddings, then `tanh(W x + b)` into 1024
//!   dimensions. The empty prompt pools to the zero vector and embeds to
//!   `tanh(b)`.
//!
//! Backbone identifiers carry published metadata (embedding width,
//! downsampling ratio, parameter count) and seed the stub initialization,
//! so different backbones give genuinely different stub models.

use alloc::string::String;
use alloc::vec::Vec;

use crate::linalg::MatRef;
use crate::math;
use crate::params::{LayoutBuilder, ParamGroup, ParamId, ParamLayout};

/// Input image side length in pixels.
pub const INPUT_SIZE: usize = 224;
/// Input image channels (RGB).
pub const CHANNELS: usize = 3;
/// Total scalars in one input image tensor.
pub const IMAGE_LEN: usize = INPUT_SIZE * INPUT_SIZE * CHANNELS;
/// Joint embedding dimension of both towers.
pub const EMBED_DIM: usize = 1024;
/// Pooling ratio of the stub image tower (224 -> 7).
pub const POOL_RATIO: usize = 32;
/// Pooled grid side (`INPUT_SIZE / POOL_RATIO`).
pub const POOLED_SIDE: usize = INPUT_SIZE / POOL_RATIO;
/// Pooled feature count (`7 * 7 * 3`).
pub const POOLED_FEATURES: usize = POOLED_SIDE * POOLED_SIDE * CHANNELS;
/// Hash-bucket vocabulary of the stub text tower.
pub const TEXT_BUCKETS: usize = 512;
/// Per-bucket embedding width of the stub text tower.
pub const TEXT_TOKEN_DIM: usize = 64;

/// Errors from encoder inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncoderError {
    /// Image tensor is not `224 * 224 * 3` scalars.
    BadImageShape {
        /// Scalars supplied.
        got: usize,
    },
    /// Image tensor contains NaN or infinite values.
    NonFiniteImage,
    /// Unrecognized backbone identifier.
    UnknownBackbone,
}

impl core::fmt::Display for EncoderError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EncoderError::BadImageShape { got } => {
                write!(f, "image tensor must hold {IMAGE_LEN} scalars (224x224x3), got {got}")
            }
            EncoderError::NonFiniteImage => write!(f, "image tensor contains non-finite values"),
            EncoderError::UnknownBackbone => {
                write!(f, "unknown backbone (expected rn50, rn101 or vit-b32)")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EncoderError {}

/// Supported backbone identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BackboneId {
    /// ResNet-50 image encoder.
    #[cfg_attr(feature = "serde", serde(rename = "rn50"))]
    Rn50,
    /// ResNet-101 image encoder.
    #[cfg_attr(feature = "serde", serde(rename = "rn101"))]
    Rn101,
    /// ViT-B/32 image encoder.
    #[cfg_attr(feature = "serde", serde(rename = "vit-b32"))]
    VitB32,
}

impl BackboneId {
    /// All supported backbones, in ablation-table order.
    pub const ALL: [BackboneId; 3] = [BackboneId::Rn50, BackboneId::Rn101, BackboneId::VitB32];

    /// Config-file / CLI spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneId::Rn50 => "rn50",
            BackboneId::Rn101 => "rn101",
            BackboneId::VitB32 => "vit-b32",
        }
    }

    /// Human-readable label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            BackboneId::Rn50 => "RN50",
            BackboneId::Rn101 => "RN101",
            BackboneId::VitB32 => "ViT/B-32",
        }
    }
}

impl core::fmt::Display for BackboneId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for BackboneId {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rn50" => Ok(BackboneId::Rn50),
            "rn101" => Ok(BackboneId::Rn101),
            "vit-b32" => Ok(BackboneId::VitB32),
            _ => Err(EncoderError::UnknownBackbone),
        }
    }
}

/// Published metadata for one backbone choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneSpec {
    /// Which backbone.
    pub id: BackboneId,
    /// Joint embedding dimension.
    pub embed_dim: usize,
    /// Expected input side length.
    pub input_size: usize,
    /// Spatial downsampling ratio of the image encoder.
    pub downsample_ratio: usize,
    /// Total parameter count of the full published model, in millions.
    pub param_count_millions: f64,
}

impl BackboneSpec {
    /// Metadata for `id`.
    pub fn for_id(id: BackboneId) -> Self {
        let param_count_millions = match id {
            BackboneId::Rn50 => 105.810,
            BackboneId::Rn101 => 120.869,
            BackboneId::VitB32 => 152.458,
        };
        BackboneSpec {
            id,
            embed_dim: EMBED_DIM,
            input_size: INPUT_SIZE,
            downsample_ratio: POOL_RATIO,
            param_count_millions,
        }
    }

    /// Seed material mixed into stub initialization so each backbone id
    /// yields a distinct deterministic model.
    pub fn seed_tag(&self) -> u64 {
        fnv1a64(self.id.as_str().as_bytes())
    }
}

/// Which towers receive gradient updates.
///
/// The default fine-tunes the image tower and freezes the text tower.
/// Fusion and head parameters always train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FreezePolicy {
    /// Whether image-tower parameters receive updates.
    pub image_trainable: bool,
    /// Whether text-tower parameters receive updates.
    pub text_trainable: bool,
}

impl Default for FreezePolicy {
    fn default() -> Self {
        FreezePolicy { image_trainable: true, text_trainable: false }
    }
}

impl FreezePolicy {
    /// Whether parameters in `group` train under this policy.
    pub fn group_trainable(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::ImageTower => self.image_trainable,
            ParamGroup::TextTower => self.text_trainable,
            ParamGroup::Fusion | ParamGroup::Head => true,
        }
    }

    /// Human-readable label used in ablation tables.
    pub fn label(&self) -> &'static str {
        match (self.image_trainable, self.text_trainable) {
            (false, false) => "image fixed, text fixed",
            (false, true) => "image fixed, text fine-tuned",
            (true, false) => "image fine-tuned, text fixed",
            (true, true) => "image fine-tuned, text fine-tuned",
        }
    }
}

/// A validated `224x224x3` image tensor (row-major HWC).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Vec<f64>,
}

impl ImageTensor {
    /// Validate length and finiteness.
    pub fn new(data: Vec<f64>) -> Result<Self, EncoderError> {
        if data.len() != IMAGE_LEN {
            return Err(EncoderError::BadImageShape { got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFiniteImage);
        }
        Ok(ImageTensor { data })
    }

    /// Build entrywise from `f(y, x, channel)`.
    pub fn from_fn(mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self, EncoderError> {
        let mut data = Vec::with_capacity(IMAGE_LEN);
        for y in 0..INPUT_SIZE {
            for x in 0..INPUT_SIZE {
                for c in 0..CHANNELS {
                    data.push(f(y, x, c));
                }
            }
        }
        ImageTensor::new(data)
    }

    /// Value at `(y, x, channel)`.
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * INPUT_SIZE + x) * CHANNELS + c]
    }

    /// Flat HWC data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Average-pool an image into the stub tower's 147 input features.
///
/// Feature index `(by * 7 + bx) * 3 + c` holds the mean of channel `c`
/// over the 32x32 block at grid cell `(by, bx)`. Pooling is parameter-free,
/// so callers may cache the result per image across training steps.
pub fn pool_image(image: &ImageTensor) -> Vec<f64> {
    let mut pooled = alloc::vec![0.0; POOLED_FEATURES];
    for by in 0..POOLED_SIDE {
        for bx in 0..POOLED_SIDE {
            let mut sums = [0.0f64; CHANNELS];
            for dy in 0..POOL_RATIO {
                for dx in 0..POOL_RATIO {
                    let y = by * POOL_RATIO + dy;
                    let x = bx * POOL_RATIO + dx;
                    let base = (y * INPUT_SIZE + x) * CHANNELS;
                    for (c, s) in sums.iter_mut().enumerate() {
                        *s += image.data[base + c];
                    }
                }
            }
            let denom = (POOL_RATIO * POOL_RATIO) as f64;
            for (c, s) in sums.iter().enumerate() {
                pooled[(by * POOLED_SIDE + bx) * CHANNELS + c] = s / denom;
            }
        }
    }
    pooled
}

/// Parameter regions of the image tower.
#[derive(Debug, Clone, Copy)]
pub struct ImageTowerWiring {
    /// `1024 x 147` projection.
    pub w: ParamId,
    /// `1024` bias.
    pub b: ParamId,
}

/// Register the image tower's parameter regions.
pub fn register_image_tower(builder: &mut LayoutBuilder) -> ImageTowerWiring {
    ImageTowerWiring {
        w: builder.add("image.w", ParamGroup::ImageTower, EMBED_DIM, POOLED_FEATURES),
        b: builder.add_vector("image.b", ParamGroup::ImageTower, EMBED_DIM),
    }
}

/// Image tower forward: `tanh(W pooled + b)`.
pub fn image_tower_forward(
    theta: &[f64],
    layout: &ParamLayout,
    wiring: &ImageTowerWiring,
    pooled: &[f64],
) -> Vec<f64> {
    let w = layout.spec(wiring.w);
    let wv = MatRef::new(w.rows, w.cols, &theta[w.range()]);
    let bias = &theta[layout.range(wiring.b)];
    let mut emb = wv.matvec_alloc(pooled);
    for (e, b) in emb.iter_mut().zip(bias.iter()) {
        *e = math::tanh(*e + b);
    }
    emb
}

/// Image tower backward: gradient at the pre-activation,
/// `d_pre = d_emb * (1 - emb^2)`.
///
/// The caller accumulates `dW += d_pre (outer) pooled` and `db += d_pre`.
pub fn tower_backward_pre(emb: &[f64], d_emb: &[f64]) -> Vec<f64> {
    assert_eq!(emb.len(), d_emb.len(), "tower backward length mismatch");
    emb.iter().zip(d_emb.iter()).map(|(&e, &d)| d * (1.0 - e * e)).collect()
}

/// Parameter regions of the text tower.
#[derive(Debug, Clone, Copy)]
pub struct TextTowerWiring {
    /// `512 x 64` bucket embedding table.
    pub embed: ParamId,
    /// `1024 x 64` projection.
    pub w: ParamId,
    /// `1024` bias.
    pub b: ParamId,
}

/// Register the text tower's parameter regions.
pub fn register_text_tower(builder: &mut LayoutBuilder) -> TextTowerWiring {
    TextTowerWiring {
        embed: builder.add("text.embed", ParamGroup::TextTower, TEXT_BUCKETS, TEXT_TOKEN_DIM),
        w: builder.add("text.w", ParamGroup::TextTower, EMBED_DIM, TEXT_TOKEN_DIM),
        b: builder.add_vector("text.b", ParamGroup::TextTower, EMBED_DIM),
    }
}

/// Deterministic tokenization: lowercase whitespace words hashed into
/// [`TEXT_BUCKETS`] buckets.
pub fn tokenize(text: &str) -> Vec<usize> {
    text.split_whitespace()
        .map(|word| {
            let mut lower = String::new();
            for ch in word.chars() {
                for l in ch.to_lowercase() {
                    lower.push(l);
                }
            }
            (fnv1a64(lower.as_bytes()) % TEXT_BUCKETS as u64) as usize
        })
        .collect()
}

/// Trace of a text-tower forward pass (inputs the backward pass needs).
#[derive(Debug, Clone)]
pub struct TextTowerTrace {
    /// Token bucket indices.
    pub tokens: Vec<usize>,
    /// Mean-pooled 64-dim token features.
    pub pooled: Vec<f64>,
    /// Final 1024-dim embedding.
    pub emb: Vec<f64>,
}

/// Text tower forward: mean-pooled bucket embeddings through
/// `tanh(W x + b)`. The empty prompt pools to zeros.
pub fn text_tower_forward(
    theta: &[f64],
    layout: &ParamLayout,
    wiring: &TextTowerWiring,
    text: &str,
) -> TextTowerTrace {
    let tokens = tokenize(text);
    let table = layout.spec(wiring.embed);
    let table_data = &theta[table.range()];
    let mut pooled = alloc::vec![0.0; TEXT_TOKEN_DIM];
    if !tokens.is_empty() {
        for &t in &tokens {
            let row = &table_data[t * TEXT_TOKEN_DIM..(t + 1) * TEXT_TOKEN_DIM];
            for (p, r) in pooled.iter_mut().zip(row.iter()) {
                *p += r;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        for p in pooled.iter_mut() {
            *p *= inv;
        }
    }
    let w = layout.spec(wiring.w);
    let wv = MatRef::new(w.rows, w.cols, &theta[w.range()]);
    let bias = &theta[layout.range(wiring.b)];
    let mut emb = wv.matvec_alloc(&pooled);
    for (e, b) in emb.iter_mut().zip(bias.iter()) {
        *e = math::tanh(*e + b);
    }
    TextTowerTrace { tokens, pooled, emb }
}

/// 64-bit FNV-1a hash (stable across platforms and runs).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
