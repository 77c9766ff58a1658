//! Visual-linguistic fusion: cross-attention, concatenation and sum.
//!
//! The primary fusion is single-head cross-attention with a residual
//! connection. With text embedding `T` and image embedding `I` (both
//! `D`-dimensional rows):
//!
//! ```text
//! Q = Wq T      K = Wk I      V = Wv I
//! S = Q^T K / sqrt(D)         (outer-product layout: S is D x D)
//! A = row_softmax(S)
//! I~ = A V                    (refined image features)
//! fused = I + I~              (residual)
//! ```
//!
//! # Token layouts
//!
//! The embeddings are single rows, so the score product admits two readings,
//! selectable via [`TokenLayout`]:
//!
//! - [`TokenLayout::OuterProduct`] (default): each of the `D` components is
//!   its own attention position; `S = Q^T K / sqrt(D)` is the `D x D` outer
//!   product of the two rows, row-softmaxed, and `I~ = A V`.
//! - [`TokenLayout::SingleToken`]: each embedding is one token; the score is
//!   the scalar `Q . K / sqrt(D)`, whose softmax is the constant 1, so
//!   `I~ = V` and the attention weight carries no gradient (`Wq`/`Wk`
//!   receive none in this layout).
//!
//! # Numerical notes
//!
//! Row softmax is computed in one pass per row: because row `r`'s logits are
//! `alpha_r * K` with `alpha_r = Q[r] / sqrt(D)`, the exact row maximum is
//! `alpha_r * max(K)` or `alpha_r * min(K)` by sign, with no scan of the
//! row. Unnormalized exponentials and per-row `1/Z` are stored; downstream
//! passes fold the normalization in. Exponentials use 4-lane SIMD (`wide`)
//! and may differ from scalar libm in the last couple of ulps.
//!
//! The backward pass never materializes `dS`: substituting the softmax
//! Jacobian gives `dS[r][c] = A[r][c] * dI~[r] * (V[c] - I~[r])`, which
//! collapses into one fused pass over `A` producing `dQ`, `dK`, `dV`
//! directly. Weight gradients are left to the caller as rank-one products
//! (`dWq = dQ (outer) T`, `dWk = dK (outer) I`, `dWv = dV (outer) I`) so a
//! batch can accumulate them in blocked form.

use alloc::vec;
use alloc::vec::Vec;

use wide::f64x4;

use crate::linalg::{MatMut, MatRef, Matrix};
use crate::math;

/// How text and image features are combined before the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FusionMode {
    /// Residual cross-attention (default).
    CrossAttention,
    /// `[image | text]` concatenation (doubles the head input width).
    Concat,
    /// Elementwise sum.
    Sum,
}

impl FusionMode {
    /// All modes, in ablation-table order.
    pub const ALL: [FusionMode; 3] = [FusionMode::CrossAttention, FusionMode::Concat, FusionMode::Sum];

    /// Config-file / CLI spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::CrossAttention => "cross_attention",
            FusionMode::Concat => "concat",
            FusionMode::Sum => "sum",
        }
    }

    /// Human-readable label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            FusionMode::CrossAttention => "cross-attention",
            FusionMode::Concat => "concatenation",
            FusionMode::Sum => "element-wise sum",
        }
    }

    /// Width of the head input this mode produces from `D`-dim embeddings.
    pub fn head_input_dim(self, embed_dim: usize) -> usize {
        match self {
            FusionMode::Concat => 2 * embed_dim,
            FusionMode::CrossAttention | FusionMode::Sum => embed_dim,
        }
    }
}

impl core::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for FusionMode {
    type Err = FusionConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cross_attention" => Ok(FusionMode::CrossAttention),
            "concat" => Ok(FusionMode::Concat),
            "sum" => Ok(FusionMode::Sum),
            _ => Err(FusionConfigError::UnknownFusionMode),
        }
    }
}

/// Score-matrix reading for two single-row embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TokenLayout {
    /// `D x D` outer-product scores, row-softmaxed (default).
    OuterProduct,
    /// One token per modality: scalar score, constant attention weight.
    SingleToken,
}

impl TokenLayout {
    /// Config-file / CLI spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            TokenLayout::OuterProduct => "outer_product",
            TokenLayout::SingleToken => "single_token",
        }
    }
}

impl core::fmt::Display for TokenLayout {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for TokenLayout {
    type Err = FusionConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "outer_product" => Ok(TokenLayout::OuterProduct),
            "single_token" => Ok(TokenLayout::SingleToken),
            _ => Err(FusionConfigError::UnknownTokenLayout),
        }
    }
}

/// Errors parsing fusion configuration names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionConfigError {
    /// Unrecognized fusion-mode name.
    UnknownFusionMode,
    /// Unrecognized token-layout name.
    UnknownTokenLayout,
}

impl core::fmt::Display for FusionConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FusionConfigError::UnknownFusionMode => {
                write!(f, "unknown fusion mode (expected cross_attention, concat or sum)")
            }
            FusionConfigError::UnknownTokenLayout => {
                write!(f, "unknown token layout (expected outer_product or single_token)")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FusionConfigError {}

/// Raw (pre-softmax) attention scores.
///
/// Outer-product layout: `S[r][c] = q[r] * k[c] / sqrt(D)` as a `D x D`
/// matrix. Single-token layout: the `1 x 1` matrix `[q . k / sqrt(D)]`.
pub fn attention_scores(q: &[f64], k: &[f64], layout: TokenLayout) -> Matrix {
    assert_eq!(q.len(), k.len(), "query/key dimension mismatch");
    let scale = 1.0 / math::sqrt(q.len() as f64);
    match layout {
        TokenLayout::OuterProduct => {
            Matrix::from_fn(q.len(), k.len(), |r, c| q[r] * k[c] * scale)
        }
        TokenLayout::SingleToken => {
            Matrix::from_vec(1, 1, vec![crate::linalg::dot(q, k) * scale])
        }
    }
}

/// Everything the backward pass needs from a cross-attention forward.
#[derive(Debug, Clone)]
pub struct CrossAttentionTrace {
    /// Embedding dimension `D`.
    pub dim: usize,
    /// Layout the forward ran with.
    pub layout: TokenLayout,
    /// Query row (`Wq T`).
    pub q: Vec<f64>,
    /// Key row (`Wk I`).
    pub k: Vec<f64>,
    /// Value row (`Wv I`).
    pub v: Vec<f64>,
    /// Unnormalized row exponentials (`D*D`; empty for single-token).
    pub exp_weights: Vec<f64>,
    /// Per-row `1/Z` (empty for single-token).
    pub inv_z: Vec<f64>,
    /// Refined features `I~`.
    pub i_tilde: Vec<f64>,
    /// `I + I~`.
    pub fused: Vec<f64>,
}

impl CrossAttentionTrace {
    /// An empty trace whose buffers get sized on first use (reusable across
    /// samples to avoid large re-allocations).
    pub fn empty() -> Self {
        CrossAttentionTrace {
            dim: 0,
            layout: TokenLayout::OuterProduct,
            q: Vec::new(),
            k: Vec::new(),
            v: Vec::new(),
            exp_weights: Vec::new(),
            inv_z: Vec::new(),
            i_tilde: Vec::new(),
            fused: Vec::new(),
        }
    }

    /// Normalized attention weights as a matrix (rows sum to 1).
    pub fn attention_weights(&self) -> Matrix {
        match self.layout {
            TokenLayout::SingleToken => Matrix::from_vec(1, 1, vec![1.0]),
            TokenLayout::OuterProduct => Matrix::from_fn(self.dim, self.dim, |r, c| {
                self.exp_weights[r * self.dim + c] * self.inv_z[r]
            }),
        }
    }
}

/// Project the query row: `q = Wq t`.
pub fn project_query(wq: MatRef<'_>, t_emb: &[f64]) -> Vec<f64> {
    wq.matvec_alloc(t_emb)
}

/// Cross-attention forward into a reusable trace.
///
/// `q` must be `project_query(wq, t_emb)` for the same `t_emb` the caller
/// will hand to the backward pass (precomputed so per-direction queries can
/// be cached across a batch).
pub fn cross_attention_forward_into(
    trace: &mut CrossAttentionTrace,
    q: &[f64],
    wk: MatRef<'_>,
    wv: MatRef<'_>,
    i_emb: &[f64],
    layout: TokenLayout,
) {
    let dim = i_emb.len();
    assert_eq!(q.len(), dim, "query/image dimension mismatch");
    assert_eq!(wk.rows, dim, "Wk shape mismatch");
    assert_eq!(wv.rows, dim, "Wv shape mismatch");
    trace.dim = dim;
    trace.layout = layout;
    trace.q.clear();
    trace.q.extend_from_slice(q);
    trace.k.resize(dim, 0.0);
    trace.v.resize(dim, 0.0);
    wk.matvec(i_emb, &mut trace.k);
    wv.matvec(i_emb, &mut trace.v);
    trace.i_tilde.resize(dim, 0.0);
    trace.fused.resize(dim, 0.0);

    match layout {
        TokenLayout::SingleToken => {
            trace.exp_weights.clear();
            trace.inv_z.clear();
            trace.i_tilde.copy_from_slice(&trace.v);
        }
        TokenLayout::OuterProduct => {
            trace.exp_weights.resize(dim * dim, 0.0);
            trace.inv_z.resize(dim, 0.0);
            let scale = 1.0 / math::sqrt(dim as f64);
            let (mut kmin, mut kmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for &x in trace.k.iter() {
                if x < kmin {
                    kmin = x;
                }
                if x > kmax {
                    kmax = x;
                }
            }
            let k = &trace.k;
            let v = &trace.v;
            for r in 0..dim {
                let alpha = trace.q[r] * scale;
                // Exact row max: logits are alpha * K, so the max is at
                // K's max (alpha >= 0) or min (alpha < 0).
                let m = if alpha >= 0.0 { alpha * kmax } else { alpha * kmin };
                let row = &mut trace.exp_weights[r * dim..(r + 1) * dim];
                let av = f64x4::splat(alpha);
                let mv = f64x4::splat(m);
                let mut zv = f64x4::splat(0.0);
                let mut accv = f64x4::splat(0.0);
                let mut c = 0;
                while c + 4 <= dim {
                    let kv = f64x4::from([k[c], k[c + 1], k[c + 2], k[c + 3]]);
                    let vv = f64x4::from([v[c], v[c + 1], v[c + 2], v[c + 3]]);
                    let e = (av * kv - mv).exp();
                    let ea: [f64; 4] = e.into();
                    row[c] = ea[0];
                    row[c + 1] = ea[1];
                    row[c + 2] = ea[2];
                    row[c + 3] = ea[3];
                    zv += e;
                    accv += e * vv;
                    c += 4;
                }
                let za: [f64; 4] = zv.into();
                let aa: [f64; 4] = accv.into();
                let mut z = (za[0] + za[1]) + (za[2] + za[3]);
                let mut acc = (aa[0] + aa[1]) + (aa[2] + aa[3]);
                while c < dim {
                    // Remainder lanes (dim not divisible by 4), padded with
                    // zero-argument lanes that are discarded.
                    let arr: [f64; 4] = [
                        alpha * k[c] - m,
                        if c + 1 < dim { alpha * k[c + 1] - m } else { 0.0 },
                        if c + 2 < dim { alpha * k[c + 2] - m } else { 0.0 },
                        0.0,
                    ];
                    let ea: [f64; 4] = f64x4::from(arr).exp().into();
                    for (lane, &e) in ea.iter().enumerate().take(dim - c) {
                        row[c + lane] = e;
                        z += e;
                        acc += e * v[c + lane];
                    }
                    c = dim;
                }
                trace.inv_z[r] = 1.0 / z;
                trace.i_tilde[r] = acc / z;
            }
        }
    }

    for (j, &ij) in i_emb.iter().enumerate() {
        trace.fused[j] = ij + trace.i_tilde[j];
    }
}

/// Allocating wrapper around [`cross_attention_forward_into`].
pub fn cross_attention_forward(
    q: &[f64],
    wk: MatRef<'_>,
    wv: MatRef<'_>,
    i_emb: &[f64],
    layout: TokenLayout,
) -> CrossAttentionTrace {
    let mut trace = CrossAttentionTrace::empty();
    cross_attention_forward_into(&mut trace, q, wk, wv, i_emb, layout);
    trace
}

/// Gradients out of a cross-attention backward pass.
///
/// `d_q`, `d_k`, `d_v` are gradients at the projection outputs; the weight
/// gradients are the rank-one products `dWq = d_q (outer) T`,
/// `dWk = d_k (outer) I`, `dWv = d_v (outer) I` (see
/// [`accumulate_weight_grads`]). `d_i` includes the residual path and the
/// paths through `K` and `V`. `d_t` is `Wq^T d_q`, computed only on
/// request (the text tower is frozen in the default policy).
#[derive(Debug, Clone)]
pub struct CrossAttentionGrads {
    /// Gradient w.r.t. the text embedding (if requested).
    pub d_t: Option<Vec<f64>>,
    /// Gradient w.r.t. the image embedding.
    pub d_i: Vec<f64>,
    /// Gradient at the query row.
    pub d_q: Vec<f64>,
    /// Gradient at the key row.
    pub d_k: Vec<f64>,
    /// Gradient at the value row.
    pub d_v: Vec<f64>,
}

/// Cross-attention backward from `d_fused` (gradient at `I + I~`).
pub fn cross_attention_backward(
    trace: &CrossAttentionTrace,
    wq: MatRef<'_>,
    wk: MatRef<'_>,
    wv: MatRef<'_>,
    d_fused: &[f64],
    compute_d_t: bool,
) -> CrossAttentionGrads {
    let dim = trace.dim;
    assert_eq!(d_fused.len(), dim, "gradient dimension mismatch");
    let mut d_q = vec![0.0; dim];
    let mut d_k = vec![0.0; dim];
    let mut d_v = vec![0.0; dim];

    match trace.layout {
        TokenLayout::SingleToken => {
            // I~ = V; the constant attention weight carries no gradient.
            d_v.copy_from_slice(d_fused);
        }
        TokenLayout::OuterProduct => {
            let scale = 1.0 / math::sqrt(dim as f64);
            let k = &trace.k;
            let v = &trace.v;
            for r in 0..dim {
                let u = d_fused[r]; // dI~[r]; the residual part is added below.
                let inv = trace.inv_z[r];
                let itr = trace.i_tilde[r];
                let row = &trace.exp_weights[r * dim..(r + 1) * dim];
                let uinv = u * inv;
                let w1 = uinv * trace.q[r] * scale;
                let w2 = w1 * itr;
                let uv4 = f64x4::splat(uinv);
                let w14 = f64x4::splat(w1);
                let w24 = f64x4::splat(w2);
                let mut acc_qv = f64x4::splat(0.0);
                let mut acc_qk = f64x4::splat(0.0);
                let mut c = 0;
                while c + 4 <= dim {
                    let a = f64x4::from([row[c], row[c + 1], row[c + 2], row[c + 3]]);
                    let kv = f64x4::from([k[c], k[c + 1], k[c + 2], k[c + 3]]);
                    let vv = f64x4::from([v[c], v[c + 1], v[c + 2], v[c + 3]]);
                    let av = a * vv;
                    acc_qv += av * kv;
                    acc_qk += a * kv;
                    let dv4 = f64x4::from([d_v[c], d_v[c + 1], d_v[c + 2], d_v[c + 3]]) + a * uv4;
                    let dva: [f64; 4] = dv4.into();
                    d_v[c] = dva[0];
                    d_v[c + 1] = dva[1];
                    d_v[c + 2] = dva[2];
                    d_v[c + 3] = dva[3];
                    let dk4 = f64x4::from([d_k[c], d_k[c + 1], d_k[c + 2], d_k[c + 3]]) + w14 * av
                        - w24 * a;
                    let dka: [f64; 4] = dk4.into();
                    d_k[c] = dka[0];
                    d_k[c + 1] = dka[1];
                    d_k[c + 2] = dka[2];
                    d_k[c + 3] = dka[3];
                    c += 4;
                }
                let qa: [f64; 4] = acc_qv.into();
                let ka: [f64; 4] = acc_qk.into();
                let mut sum_qv = (qa[0] + qa[1]) + (qa[2] + qa[3]);
                let mut sum_qk = (ka[0] + ka[1]) + (ka[2] + ka[3]);
                while c < dim {
                    let a = row[c];
                    let av = a * v[c];
                    sum_qv += av * k[c];
                    sum_qk += a * k[c];
                    d_v[c] += a * uinv;
                    d_k[c] += w1 * av - w2 * a;
                    c += 1;
                }
                d_q[r] = u * scale * inv * (sum_qv - itr * sum_qk);
            }
        }
    }

    // dI = residual + Wk^T dK + Wv^T dV.
    let mut d_i = Vec::with_capacity(dim);
    d_i.extend_from_slice(d_fused);
    wk.matvec_t_add(&d_k, &mut d_i);
    wv.matvec_t_add(&d_v, &mut d_i);

    let d_t = if compute_d_t {
        let mut dt = vec![0.0; wq.cols];
        wq.matvec_t_add(&d_q, &mut dt);
        Some(dt)
    } else {
        None
    };

    CrossAttentionGrads { d_t, d_i, d_q, d_k, d_v }
}

/// Accumulate the rank-one weight gradients of one sample into dense
/// gradient matrices (batch training defers these; see the model module).
pub fn accumulate_weight_grads(
    grads: &CrossAttentionGrads,
    t_emb: &[f64],
    i_emb: &[f64],
    g_wq: &mut MatMut<'_>,
    g_wk: &mut MatMut<'_>,
    g_wv: &mut MatMut<'_>,
) {
    g_wq.outer_add(&grads.d_q, t_emb);
    g_wk.outer_add(&grads.d_k, i_emb);
    g_wv.outer_add(&grads.d_v, i_emb);
}

/// `[image | text]` concatenation.
pub fn fuse_concat(t_emb: &[f64], i_emb: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t_emb.len() + i_emb.len());
    out.extend_from_slice(i_emb);
    out.extend_from_slice(t_emb);
    out
}

/// Backward of [`fuse_concat`]: split into `(d_i, d_t)`.
pub fn fuse_concat_backward(d_fused: &[f64], image_dim: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(d_fused.len() >= image_dim, "concat gradient shorter than image part");
    (d_fused[..image_dim].to_vec(), d_fused[image_dim..].to_vec())
}

/// Elementwise sum fusion.
pub fn fuse_sum(t_emb: &[f64], i_emb: &[f64]) -> Vec<f64> {
    assert_eq!(t_emb.len(), i_emb.len(), "sum fusion dimension mismatch");
    t_emb.iter().zip(i_emb.iter()).map(|(t, i)| t + i).collect()
}
