//! The assembled gaze-regression model.
//!
//! All parameters live in one flat `Vec<f64>` described by a
//! [`ParamLayout`], so the optimizer, checkpointing and freeze policies can
//! address them uniformly. The forward path per sample is:
//!
//! ```text
//! pooled  = 32x average pool of the 224x224x3 image     (parameter-free)
//! I       = tanh(W_img pooled + b_img)                  image tower, 1024-d
//! T       = tanh(W_txt mean(tokens) + b_txt)            text tower, 1024-d
//! fused   = fusion(T, I)                                cross-attention / concat / sum
//! h1      = relu(W1 fused + b1)                         256
//! h2      = relu(W2 h1 + b2)                            128
//! (p, y)  = W3 h2 + b3                                  pitch/yaw in radians
//! ```
//!
//! Samples without a prompt (text-free ablation) skip fusion: the head sees
//! the image embedding unchanged (zero-padded in concat mode so the head
//! width stays fixed).
//!
//! # Batch gradients
//!
//! [`GazeClipModel::batch_loss_and_grad`] runs forward and backward per
//! sample but defers the three 1024x1024 fusion weight gradients: each
//! sample pushes its rank-one factor pair onto a stack and one blocked
//! flush per batch accumulates them, halving memory traffic on the
//! dominant cost. Prompt embeddings and query projections are computed
//! once per distinct prompt per batch, and image pooling happens once per
//! sample at preparation time.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::encoder::{
    image_tower_forward, pool_image, register_image_tower, register_text_tower,
    text_tower_forward, tower_backward_pre, BackboneId, BackboneSpec, FreezePolicy, ImageTensor,
    ImageTowerWiring, TextTowerWiring, EMBED_DIM, TEXT_TOKEN_DIM,
};
use crate::fusion::{
    cross_attention_backward, cross_attention_forward_into, fuse_concat_backward, project_query,
    CrossAttentionTrace, FusionMode, TokenLayout,
};
use crate::geometry::GazeAngles;
use crate::linalg::{axpy, relu_backward_in_place, relu_in_place, MatMut, MatRef};
use crate::params::{LayoutBuilder, ParamGroup, ParamId, ParamLayout};
use crate::prompt::{assign_direction, render_prompt, DirectionClass, PromptError};

/// Regression loss: mean absolute or mean squared deviation over the `2n`
/// pitch/yaw components of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    /// Mean absolute error.
    L1,
    /// Mean squared error.
    L2,
}

impl LossKind {
    /// Config-file / CLI spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        }
    }

    /// One sample's loss contribution and output gradient, with the batch
    /// normalization `1/(2n)` folded in. The L1 subgradient at exactly
    /// zero deviation is taken as zero.
    fn sample_loss_and_grad(self, pred: [f64; 2], target: [f64; 2], batch_size: usize) -> (f64, [f64; 2]) {
        let inv = 1.0 / (2.0 * batch_size as f64);
        let mut loss = 0.0;
        let mut grad = [0.0; 2];
        for j in 0..2 {
            let d = pred[j] - target[j];
            match self {
                LossKind::L1 => {
                    loss += d.abs() * inv;
                    grad[j] = if d > 0.0 {
                        inv
                    } else if d < 0.0 {
                        -inv
                    } else {
                        0.0
                    };
                }
                LossKind::L2 => {
                    loss += d * d * inv;
                    grad[j] = 2.0 * d * inv;
                }
            }
        }
        (loss, grad)
    }
}

impl core::fmt::Display for LossKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for LossKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            _ => Err(ModelError::UnknownLoss),
        }
    }
}

/// Errors from model construction and parameter loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    /// Named parameter not present in this model's layout.
    UnknownParam(String),
    /// Parameter data has the wrong number of elements.
    ShapeMismatch {
        /// Parameter name.
        name: String,
        /// Elements the layout expects.
        expected: usize,
        /// Elements provided.
        got: usize,
    },
    /// Unrecognized loss name (expected `l1` or `l2`).
    UnknownLoss,
    /// Paired batch inputs of different lengths.
    BatchLengthMismatch {
        /// Images supplied.
        images: usize,
        /// Directions supplied.
        directions: usize,
    },
    /// Full parameter vector has the wrong length.
    ThetaLength {
        /// Length the layout expects.
        expected: usize,
        /// Length provided.
        got: usize,
    },
}

impl core::fmt::Display for ModelError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ModelError::UnknownParam(name) => write!(f, "unknown parameter `{name}`"),
            ModelError::ShapeMismatch { name, expected, got } => {
                write!(f, "parameter `{name}` expects {expected} values, got {got}")
            }
            ModelError::UnknownLoss => write!(f, "unknown loss (expected l1 or l2)"),
            ModelError::BatchLengthMismatch { images, directions } => {
                write!(f, "batch length mismatch: {images} images vs {directions} directions")
            }
            ModelError::ThetaLength { expected, got } => {
                write!(f, "parameter vector expects {expected} values, got {got}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ModelError {}

/// Parameter regions of the regression head.
#[derive(Debug, Clone, Copy)]
pub struct HeadWiring {
    /// `256 x head_input` projection.
    pub w1: ParamId,
    /// `256` bias.
    pub b1: ParamId,
    /// `128 x 256` projection.
    pub w2: ParamId,
    /// `128` bias.
    pub b2: ParamId,
    /// `2 x 128` output projection.
    pub w3: ParamId,
    /// `2` bias.
    pub b3: ParamId,
}

const HEAD_H1: usize = 256;
const HEAD_H2: usize = 128;
const HEAD_OUT: usize = 2;

fn register_head(builder: &mut LayoutBuilder, input_dim: usize) -> HeadWiring {
    HeadWiring {
        w1: builder.add("head.w1", ParamGroup::Head, HEAD_H1, input_dim),
        b1: builder.add_vector("head.b1", ParamGroup::Head, HEAD_H1),
        w2: builder.add("head.w2", ParamGroup::Head, HEAD_H2, HEAD_H1),
        b2: builder.add_vector("head.b2", ParamGroup::Head, HEAD_H2),
        w3: builder.add("head.w3", ParamGroup::Head, HEAD_OUT, HEAD_H2),
        b3: builder.add_vector("head.b3", ParamGroup::Head, HEAD_OUT),
    }
}

/// Parameter regions of the fusion projections.
#[derive(Debug, Clone, Copy)]
pub struct FusionWiring {
    /// `1024 x 1024` query projection (applied to the text embedding).
    pub wq: ParamId,
    /// `1024 x 1024` key projection (applied to the image embedding).
    pub wk: ParamId,
    /// `1024 x 1024` value projection (applied to the image embedding).
    pub wv: ParamId,
}

fn register_fusion(builder: &mut LayoutBuilder) -> FusionWiring {
    FusionWiring {
        wq: builder.add("fusion.wq", ParamGroup::Fusion, EMBED_DIM, EMBED_DIM),
        wk: builder.add("fusion.wk", ParamGroup::Fusion, EMBED_DIM, EMBED_DIM),
        wv: builder.add("fusion.wv", ParamGroup::Fusion, EMBED_DIM, EMBED_DIM),
    }
}

/// A training/evaluation sample with the parameter-free image pooling done
/// once up front (pooling never changes across steps).
#[derive(Debug, Clone)]
pub struct PreparedSample {
    /// 147-dim pooled image features.
    pub pooled: Vec<f64>,
    /// Prompt text accompanying the image (`None` = text-free).
    pub prompt: Option<String>,
    /// Ground-truth `[pitch, yaw]` in radians.
    pub target: [f64; 2],
}

impl PreparedSample {
    /// Pool an image and attach its prompt and target.
    pub fn new(image: &ImageTensor, prompt: Option<String>, target: GazeAngles) -> Self {
        PreparedSample {
            pooled: pool_image(image),
            prompt,
            target: [target.pitch, target.yaw],
        }
    }
}

/// One distinct prompt within a batch: its embedding trace, query
/// projection (cross-attention only) and accumulated text gradient.
struct PromptEntry {
    text: String,
    trace: crate::encoder::TextTowerTrace,
    q: Option<Vec<f64>>,
    d_t: Vec<f64>,
}

/// Deferred rank-one gradient accumulation: per-sample factor pairs are
/// stacked and flushed once per batch so each gradient row is loaded and
/// stored once per batch rather than once per sample.
struct RankOneStack {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    count: usize,
}

impl RankOneStack {
    fn new() -> Self {
        RankOneStack { rows: 0, cols: 0, a: Vec::new(), b: Vec::new(), count: 0 }
    }

    fn reset(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.a.clear();
        self.b.clear();
        self.count = 0;
    }

    fn push(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        self.a.extend_from_slice(a);
        self.b.extend_from_slice(b);
        self.count += 1;
    }

    /// `g += sum_s a_s (outer) b_s`, row-blocked.
    fn flush_into(&self, g: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows * self.cols);
        for r in 0..self.rows {
            let row = &mut g[r * self.cols..(r + 1) * self.cols];
            for s in 0..self.count {
                let coeff = self.a[s * self.rows + r];
                axpy(coeff, &self.b[s * self.cols..(s + 1) * self.cols], row);
            }
        }
    }
}

/// Reusable buffers for [`GazeClipModel::batch_loss_and_grad`]; create once
/// and pass to every step to avoid re-allocating the large gradient vector
/// and attention trace.
pub struct BatchGradState {
    grad: Vec<f64>,
    attn: CrossAttentionTrace,
    stack_q: RankOneStack,
    stack_k: RankOneStack,
    stack_v: RankOneStack,
    prompts: Vec<PromptEntry>,
}

impl BatchGradState {
    /// Fresh, lazily-sized state.
    pub fn new() -> Self {
        BatchGradState {
            grad: Vec::new(),
            attn: CrossAttentionTrace::empty(),
            stack_q: RankOneStack::new(),
            stack_k: RankOneStack::new(),
            stack_v: RankOneStack::new(),
            prompts: Vec::new(),
        }
    }

    /// Gradient of the last processed batch (flat, model layout).
    pub fn grad(&self) -> &[f64] {
        &self.grad
    }
}

impl Default for BatchGradState {
    fn default() -> Self {
        Self::new()
    }
}

/// Text-guided gaze regressor with a flat parameter vector.
pub struct GazeClipModel {
    backbone: BackboneSpec,
    fusion_mode: FusionMode,
    token_layout: TokenLayout,
    freeze: FreezePolicy,
    layout: ParamLayout,
    image: ImageTowerWiring,
    text: TextTowerWiring,
    fusion: Option<FusionWiring>,
    head: HeadWiring,
    theta: Vec<f64>,
}

impl GazeClipModel {
    /// Build and deterministically initialize a model.
    ///
    /// Initialization draws fan-in-scaled uniform weights from a ChaCha20
    /// stream seeded by `seed` mixed with a backbone-specific tag, so
    /// different backbones start from different (but reproducible) points.
    /// Biases draw from `U(-0.1, 0.1)` — nonzero, so even an empty prompt
    /// embeds away from the origin. The value projection is scaled by 0.1
    /// so early attention refinements stay small relative to the residual
    /// path.
    pub fn new(
        backbone: BackboneId,
        fusion_mode: FusionMode,
        token_layout: TokenLayout,
        seed: u64,
    ) -> Self {
        let spec = BackboneSpec::for_id(backbone);
        let mut builder = ParamLayout::builder();
        let image = register_image_tower(&mut builder);
        let text = register_text_tower(&mut builder);
        let fusion = match fusion_mode {
            FusionMode::CrossAttention => Some(register_fusion(&mut builder)),
            FusionMode::Concat | FusionMode::Sum => None,
        };
        let head = register_head(&mut builder, fusion_mode.head_input_dim(EMBED_DIM));
        let layout = builder.build();

        let mut theta = vec![0.0; layout.total_len()];
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ spec.seed_tag());
        for param in layout.specs() {
            let scale = if param.cols == 1 {
                0.1
            } else {
                1.0 / crate::math::sqrt(param.cols as f64)
            };
            for slot in theta[param.range()].iter_mut() {
                *slot = rng.gen_range(-scale..scale);
            }
        }
        if let Some(f) = fusion {
            for slot in theta[layout.range(f.wv)].iter_mut() {
                *slot *= 0.1;
            }
        }

        GazeClipModel {
            backbone: spec,
            fusion_mode,
            token_layout,
            freeze: FreezePolicy::default(),
            layout,
            image,
            text,
            fusion,
            head,
            theta,
        }
    }

    /// Backbone metadata.
    pub fn backbone(&self) -> &BackboneSpec {
        &self.backbone
    }

    /// Fusion mode this model was built with.
    pub fn fusion_mode(&self) -> FusionMode {
        self.fusion_mode
    }

    /// Attention token layout.
    pub fn token_layout(&self) -> TokenLayout {
        self.token_layout
    }

    /// Current freeze policy.
    pub fn freeze(&self) -> FreezePolicy {
        self.freeze
    }

    /// Replace the freeze policy.
    pub fn set_freeze(&mut self, freeze: FreezePolicy) {
        self.freeze = freeze;
    }

    /// Parameter layout.
    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Flat parameters.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Mutable flat parameters (the optimizer steps through this).
    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Replace the full parameter vector (checkpoint restore).
    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<(), ModelError> {
        if theta.len() != self.layout.total_len() {
            return Err(ModelError::ThetaLength {
                expected: self.layout.total_len(),
                got: theta.len(),
            });
        }
        self.theta = theta;
        Ok(())
    }

    /// Total number of real parameters in this model.
    pub fn param_count(&self) -> usize {
        self.layout.total_len()
    }

    /// Load one named parameter region (external weight archives).
    pub fn load_param(&mut self, name: &str, values: &[f64]) -> Result<(), ModelError> {
        let id = self
            .layout
            .find(name)
            .ok_or_else(|| ModelError::UnknownParam(String::from(name)))?;
        let range = self.layout.range(id);
        if values.len() != range.len() {
            return Err(ModelError::ShapeMismatch {
                name: String::from(name),
                expected: range.len(),
                got: values.len(),
            });
        }
        self.theta[range].copy_from_slice(values);
        Ok(())
    }

    /// Flat ranges of the parameter groups the freeze policy lets train.
    pub fn trainable_ranges(&self) -> Vec<Range<usize>> {
        let mut ranges = Vec::new();
        for group in [
            ParamGroup::ImageTower,
            ParamGroup::TextTower,
            ParamGroup::Fusion,
            ParamGroup::Head,
        ] {
            if self.freeze.group_trainable(group) {
                ranges.extend(self.layout.group_ranges(group));
            }
        }
        ranges
    }

    fn mat(&self, id: ParamId) -> MatRef<'_> {
        let spec = self.layout.spec(id);
        MatRef::new(spec.rows, spec.cols, &self.theta[spec.range()])
    }

    fn vec_param(&self, id: ParamId) -> &[f64] {
        &self.theta[self.layout.range(id)]
    }

    /// Image embedding of pre-pooled features.
    pub fn encode_pooled(&self, pooled: &[f64]) -> Vec<f64> {
        image_tower_forward(&self.theta, &self.layout, &self.image, pooled)
    }

    /// Image embedding of a full tensor.
    pub fn encode_image(&self, image: &ImageTensor) -> Vec<f64> {
        self.encode_pooled(&pool_image(image))
    }

    /// Text embedding of a prompt.
    pub fn encode_text(&self, text: &str) -> Vec<f64> {
        text_tower_forward(&self.theta, &self.layout, &self.text, text).emb
    }

    /// Embeddings of the four direction prompts, in ordinal order.
    pub fn prompt_embeddings(&self) -> [Vec<f64>; 4] {
        DirectionClass::ALL.map(|class| self.encode_text(&render_prompt(class)))
    }

    /// Zero-shot coarse direction of an image embedding: cosine argmax over
    /// pre-computed direction-prompt embeddings.
    pub fn zero_shot_direction(
        &self,
        image_embedding: &[f64],
        prompt_embeddings: &[Vec<f64>; 4],
    ) -> Result<DirectionClass, PromptError> {
        assign_direction(image_embedding, prompt_embeddings)
    }

    /// Zero-shot direction straight from an image.
    pub fn assign_image(&self, image: &ImageTensor) -> Result<DirectionClass, PromptError> {
        let prompts = self.prompt_embeddings();
        self.zero_shot_direction(&self.encode_image(image), &prompts)
    }

    /// Head input for one sample, given its embeddings. `attn` is reused
    /// scratch; returns the fused vector (always a fresh copy so the trace
    /// can be consumed by the backward pass).
    fn fuse(
        &self,
        t_q: Option<(&[f64], Option<&[f64]>)>,
        i_emb: &[f64],
        attn: &mut CrossAttentionTrace,
    ) -> Vec<f64> {
        match (self.fusion_mode, t_q) {
            (FusionMode::CrossAttention, Some((_, Some(q)))) => {
                let f = self.fusion.expect("cross-attention model has fusion weights");
                cross_attention_forward_into(
                    attn,
                    q,
                    self.mat(f.wk),
                    self.mat(f.wv),
                    i_emb,
                    self.token_layout,
                );
                attn.fused.clone()
            }
            (FusionMode::CrossAttention, None) => i_emb.to_vec(),
            (FusionMode::Sum, Some((t, _))) => crate::fusion::fuse_sum(t, i_emb),
            (FusionMode::Sum, None) => i_emb.to_vec(),
            (FusionMode::Concat, Some((t, _))) => crate::fusion::fuse_concat(t, i_emb),
            (FusionMode::Concat, None) => {
                let mut out = i_emb.to_vec();
                out.resize(2 * EMBED_DIM, 0.0);
                out
            }
            (FusionMode::CrossAttention, Some((_, None))) => {
                unreachable!("cross-attention requires a projected query")
            }
        }
    }

    /// Head forward; returns `(out, h1, h2)` with post-activation hiddens.
    fn head_forward(&self, fused: &[f64]) -> ([f64; 2], Vec<f64>, Vec<f64>) {
        let mut h1 = self.mat(self.head.w1).matvec_alloc(fused);
        for (h, b) in h1.iter_mut().zip(self.vec_param(self.head.b1)) {
            *h += b;
        }
        relu_in_place(&mut h1);
        let mut h2 = self.mat(self.head.w2).matvec_alloc(&h1);
        for (h, b) in h2.iter_mut().zip(self.vec_param(self.head.b2)) {
            *h += b;
        }
        relu_in_place(&mut h2);
        let w3 = self.mat(self.head.w3);
        let b3 = self.vec_param(self.head.b3);
        let out = [
            crate::linalg::dot(w3.row(0), &h2) + b3[0],
            crate::linalg::dot(w3.row(1), &h2) + b3[1],
        ];
        (out, h1, h2)
    }

    /// Predict pitch/yaw for a prepared sample.
    pub fn predict_prepared(&self, sample: &PreparedSample) -> GazeAngles {
        let i_emb = self.encode_pooled(&sample.pooled);
        let mut attn = CrossAttentionTrace::empty();
        let fused = match &sample.prompt {
            None => self.fuse(None, &i_emb, &mut attn),
            Some(text) => {
                let t_emb = self.encode_text(text);
                let q = self
                    .fusion
                    .map(|f| project_query(self.mat(f.wq), &t_emb));
                self.fuse(Some((&t_emb, q.as_deref())), &i_emb, &mut attn)
            }
        };
        let (out, _, _) = self.head_forward(&fused);
        GazeAngles { pitch: out[0], yaw: out[1] }
    }

    /// Predict pitch/yaw for a raw image and optional prompt.
    pub fn predict(&self, image: &ImageTensor, prompt: Option<&str>) -> GazeAngles {
        self.predict_prepared(&PreparedSample {
            pooled: pool_image(image),
            prompt: prompt.map(String::from),
            target: [0.0, 0.0],
        })
    }

    /// Full forward pass for one image with a pre-assigned coarse
    /// direction: renders the direction's prompt, encodes both modalities,
    /// fuses and regresses.
    pub fn forward(&self, image: &ImageTensor, direction: DirectionClass) -> GazeAngles {
        self.predict(image, Some(&render_prompt(direction)))
    }

    /// [`GazeClipModel::forward`] over paired batches.
    ///
    /// Elementwise equal to per-sample `forward`; each prediction depends
    /// only on its own inputs.
    pub fn predict_images(
        &self,
        images: &[ImageTensor],
        directions: &[DirectionClass],
    ) -> Result<Vec<GazeAngles>, ModelError> {
        if images.len() != directions.len() {
            return Err(ModelError::BatchLengthMismatch {
                images: images.len(),
                directions: directions.len(),
            });
        }
        let prepared: Vec<PreparedSample> = images
            .iter()
            .zip(directions.iter())
            .map(|(image, &direction)| PreparedSample {
                pooled: pool_image(image),
                prompt: Some(render_prompt(direction)),
                target: [0.0, 0.0],
            })
            .collect();
        Ok(self.predict_batch(&prepared))
    }

    /// Predictions for a set of prepared samples.
    ///
    /// With the `parallel` feature the samples are scored across threads;
    /// results are ordered by input index either way, so output is
    /// identical in both builds.
    pub fn predict_batch(&self, samples: &[PreparedSample]) -> Vec<GazeAngles> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            samples.par_iter().map(|s| self.predict_prepared(s)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            samples.iter().map(|s| self.predict_prepared(s)).collect()
        }
    }

    /// Average loss over `batch` (indices into `samples`) and its gradient,
    /// accumulated into `state.grad` (zeroed first). Returns the loss.
    ///
    /// Gradients are always accumulated for every group; the freeze policy
    /// is applied by the optimizer via [`GazeClipModel::trainable_ranges`].
    /// The only shortcut: text-embedding gradients are skipped entirely
    /// when the text tower is frozen, since nothing upstream of the prompt
    /// embedding can train.
    pub fn batch_loss_and_grad(
        &self,
        samples: &[PreparedSample],
        batch: &[usize],
        loss: LossKind,
        state: &mut BatchGradState,
    ) -> f64 {
        assert!(!batch.is_empty(), "empty batch");
        let total = self.layout.total_len();
        state.grad.clear();
        state.grad.resize(total, 0.0);
        let need_d_t = self.freeze.text_trainable;
        let head_in = self.fusion_mode.head_input_dim(EMBED_DIM);

        // One text-tower pass per distinct prompt in the batch.
        state.prompts.clear();
        for &idx in batch {
            if let Some(text) = &samples[idx].prompt {
                if !state.prompts.iter().any(|e| &e.text == text) {
                    let trace = text_tower_forward(&self.theta, &self.layout, &self.text, text);
                    let q = self.fusion.map(|f| project_query(self.mat(f.wq), &trace.emb));
                    state.prompts.push(PromptEntry {
                        text: text.clone(),
                        trace,
                        q,
                        d_t: vec![0.0; EMBED_DIM],
                    });
                }
            }
        }

        if self.fusion.is_some() {
            state.stack_q.reset(EMBED_DIM, EMBED_DIM);
            state.stack_k.reset(EMBED_DIM, EMBED_DIM);
            state.stack_v.reset(EMBED_DIM, EMBED_DIM);
        }

        let mut total_loss = 0.0;
        let mut d_h2 = vec![0.0; HEAD_H2];
        let mut d_h1 = vec![0.0; HEAD_H1];
        let mut d_fused = vec![0.0; head_in];

        for &idx in batch {
            let sample = &samples[idx];
            let prompt_slot = sample
                .prompt
                .as_ref()
                .map(|text| state.prompts.iter().position(|e| &e.text == text).unwrap());

            // Forward.
            let i_emb = self.encode_pooled(&sample.pooled);
            let fused = match prompt_slot {
                None => self.fuse(None, &i_emb, &mut state.attn),
                Some(p) => {
                    let entry = &state.prompts[p];
                    self.fuse(
                        Some((&entry.trace.emb, entry.q.as_deref())),
                        &i_emb,
                        &mut state.attn,
                    )
                }
            };
            let (out, h1, h2) = self.head_forward(&fused);
            let (sample_loss, d_out) = loss.sample_loss_and_grad(out, sample.target, batch.len());
            total_loss += sample_loss;

            // Head backward.
            {
                let w3s = self.layout.spec(self.head.w3);
                MatMut::new(w3s.rows, w3s.cols, &mut state.grad[w3s.range()])
                    .outer_add(&d_out, &h2);
                axpy(1.0, &d_out, &mut state.grad[self.layout.range(self.head.b3)]);
            }
            d_h2.iter_mut().for_each(|x| *x = 0.0);
            self.mat(self.head.w3).matvec_t_add(&d_out, &mut d_h2);
            relu_backward_in_place(&h2, &mut d_h2);
            {
                let w2s = self.layout.spec(self.head.w2);
                MatMut::new(w2s.rows, w2s.cols, &mut state.grad[w2s.range()])
                    .outer_add(&d_h2, &h1);
                axpy(1.0, &d_h2, &mut state.grad[self.layout.range(self.head.b2)]);
            }
            d_h1.iter_mut().for_each(|x| *x = 0.0);
            self.mat(self.head.w2).matvec_t_add(&d_h2, &mut d_h1);
            relu_backward_in_place(&h1, &mut d_h1);
            {
                let w1s = self.layout.spec(self.head.w1);
                MatMut::new(w1s.rows, w1s.cols, &mut state.grad[w1s.range()])
                    .outer_add(&d_h1, &fused);
                axpy(1.0, &d_h1, &mut state.grad[self.layout.range(self.head.b1)]);
            }
            d_fused.iter_mut().for_each(|x| *x = 0.0);
            self.mat(self.head.w1).matvec_t_add(&d_h1, &mut d_fused);

            // Fusion backward -> gradient at the image embedding.
            let d_i: Vec<f64> = match (self.fusion_mode, prompt_slot) {
                (FusionMode::CrossAttention, Some(p)) => {
                    let f = self.fusion.expect("cross-attention model has fusion weights");
                    let grads = cross_attention_backward(
                        &state.attn,
                        self.mat(f.wq),
                        self.mat(f.wk),
                        self.mat(f.wv),
                        &d_fused,
                        need_d_t,
                    );
                    let entry = &mut state.prompts[p];
                    state.stack_q.push(&grads.d_q, &entry.trace.emb);
                    state.stack_k.push(&grads.d_k, &i_emb);
                    state.stack_v.push(&grads.d_v, &i_emb);
                    if let Some(d_t) = &grads.d_t {
                        axpy(1.0, d_t, &mut entry.d_t);
                    }
                    grads.d_i
                }
                (FusionMode::Sum, Some(p)) => {
                    if need_d_t {
                        axpy(1.0, &d_fused, &mut state.prompts[p].d_t);
                    }
                    d_fused.clone()
                }
                (FusionMode::Concat, Some(p)) => {
                    let (d_i, d_t) = fuse_concat_backward(&d_fused, EMBED_DIM);
                    if need_d_t {
                        axpy(1.0, &d_t, &mut state.prompts[p].d_t);
                    }
                    d_i
                }
                (FusionMode::Concat, None) => d_fused[..EMBED_DIM].to_vec(),
                (FusionMode::CrossAttention | FusionMode::Sum, None) => d_fused.clone(),
            };

            // Image tower backward.
            let d_pre = tower_backward_pre(&i_emb, &d_i);
            {
                let ws = self.layout.spec(self.image.w);
                MatMut::new(ws.rows, ws.cols, &mut state.grad[ws.range()])
                    .outer_add(&d_pre, &sample.pooled);
                axpy(1.0, &d_pre, &mut state.grad[self.layout.range(self.image.b)]);
            }
        }

        // Blocked flush of the deferred fusion weight gradients.
        if let Some(f) = self.fusion {
            state.stack_q.flush_into(&mut state.grad[self.layout.range(f.wq)]);
            state.stack_k.flush_into(&mut state.grad[self.layout.range(f.wk)]);
            state.stack_v.flush_into(&mut state.grad[self.layout.range(f.wv)]);
        }

        // Text tower backward, once per distinct prompt.
        if need_d_t {
            for entry in &state.prompts {
                // Query projection contributes d_t = Wq^T d_q per sample;
                // those were folded into entry.d_t already. Turn the
                // embedding gradient into parameter gradients.
                let d_pre = tower_backward_pre(&entry.trace.emb, &entry.d_t);
                {
                    let ws = self.layout.spec(self.text.w);
                    MatMut::new(ws.rows, ws.cols, &mut state.grad[ws.range()])
                        .outer_add(&d_pre, &entry.trace.pooled);
                    axpy(1.0, &d_pre, &mut state.grad[self.layout.range(self.text.b)]);
                }
                if !entry.trace.tokens.is_empty() {
                    let mut d_pooled = vec![0.0; TEXT_TOKEN_DIM];
                    self.mat(self.text.w).matvec_t_add(&d_pre, &mut d_pooled);
                    let inv = 1.0 / entry.trace.tokens.len() as f64;
                    let table = self.layout.range(self.text.embed);
                    for &tok in &entry.trace.tokens {
                        let row = &mut state.grad
                            [table.start + tok * TEXT_TOKEN_DIM..table.start + (tok + 1) * TEXT_TOKEN_DIM];
                        axpy(inv, &d_pooled, row);
                    }
                }
            }
        }

        total_loss
    }
}
