//! Prompt templates and zero-shot direction assignment.
//!
//! Each face image is tagged with one of four coarse gaze directions by
//! comparing its image embedding against the embeddings of four fixed prompt
//! sentences ("A photo of a face gazing front", ... "right") and taking the
//! cosine argmax. The assigned class then selects the sentence fed to the
//! text tower during training and inference.
//!
//! Ties are broken toward the lowest class ordinal, and the decision is
//! invariant under positive rescaling of any embedding (cosine similarity
//! ignores magnitude).

use alloc::string::String;
use alloc::vec::Vec;

use crate::linalg;

/// The four coarse gaze directions, in fixed ordinal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DirectionClass {
    /// Gazing toward the camera.
    Front,
    /// Gazing downward.
    Down,
    /// Gazing to the left.
    Left,
    /// Gazing to the right.
    Right,
}

impl DirectionClass {
    /// All classes in ordinal order.
    pub const ALL: [DirectionClass; 4] =
        [DirectionClass::Front, DirectionClass::Down, DirectionClass::Left, DirectionClass::Right];

    /// 1-based ordinal used for tie-breaking (front = 1 ... right = 4).
    pub fn ordinal(self) -> usize {
        match self {
            DirectionClass::Front => 1,
            DirectionClass::Down => 2,
            DirectionClass::Left => 3,
            DirectionClass::Right => 4,
        }
    }

    /// Lowercase word used in prompts, manifests and config files.
    pub fn as_str(self) -> &'static str {
        match self {
            DirectionClass::Front => "front",
            DirectionClass::Down => "down",
            DirectionClass::Left => "left",
            DirectionClass::Right => "right",
        }
    }
}

impl core::fmt::Display for DirectionClass {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for DirectionClass {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "front" => Ok(DirectionClass::Front),
            "down" => Ok(DirectionClass::Down),
            "left" => Ok(DirectionClass::Left),
            "right" => Ok(DirectionClass::Right),
            _ => Err(PromptError::UnknownDirection),
        }
    }
}

/// The prompt template; `[class]` is replaced by the direction word.
pub const PROMPT_TEMPLATE: &str = "A photo of a face gazing [class]";

/// Sentence used by the plain-face prompt ablation (no direction word).
pub const PLAIN_FACE_PROMPT: &str = "A photo of a face";

/// Render the template for one direction class.
pub fn render_prompt(class: DirectionClass) -> String {
    let mut s = String::new();
    let mut rest = PROMPT_TEMPLATE;
    while let Some(idx) = rest.find("[class]") {
        s.push_str(&rest[..idx]);
        s.push_str(class.as_str());
        rest = &rest[idx + "[class]".len()..];
    }
    s.push_str(rest);
    s
}

/// What text (if any) the fusion stage receives, ablating prompt content.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PromptMode {
    /// The direction-specific template sentence (default).
    Predefined,
    /// "A photo of a face" regardless of direction.
    PlainFace,
    /// The empty string.
    #[cfg_attr(feature = "serde", serde(rename = "empty"))]
    EmptyString,
    /// No text input at all: fusion is bypassed.
    NoText,
}

impl PromptMode {
    /// Config-file / CLI spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Predefined => "predefined",
            PromptMode::PlainFace => "plain_face",
            PromptMode::EmptyString => "empty",
            PromptMode::NoText => "no_text",
        }
    }

    /// Human-readable label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            PromptMode::Predefined => "pre-defined prompt",
            PromptMode::PlainFace => "\"A photo of a face\"",
            PromptMode::EmptyString => "empty string",
            PromptMode::NoText => "without text input",
        }
    }

    /// The sentence handed to the text tower for a sample of `class`,
    /// or `None` when text is disabled entirely.
    pub fn fusion_text(self, class: DirectionClass) -> Option<String> {
        match self {
            PromptMode::Predefined => Some(render_prompt(class)),
            PromptMode::PlainFace => Some(String::from(PLAIN_FACE_PROMPT)),
            PromptMode::EmptyString => Some(String::new()),
            PromptMode::NoText => None,
        }
    }
}

impl core::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for PromptMode {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "predefined" => Ok(PromptMode::Predefined),
            "plain_face" => Ok(PromptMode::PlainFace),
            "empty" | "empty_string" => Ok(PromptMode::EmptyString),
            "no_text" => Ok(PromptMode::NoText),
            _ => Err(PromptError::UnknownPromptMode),
        }
    }
}

/// Errors from prompt rendering and similarity computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptError {
    /// Embeddings of different dimension were compared.
    DimensionMismatch,
    /// A zero-norm embedding has no defined cosine similarity.
    ZeroNorm,
    /// A similarity came out NaN (non-finite embedding entries).
    NonFiniteSimilarity,
    /// Unrecognized direction word.
    UnknownDirection,
    /// Unrecognized prompt-mode name.
    UnknownPromptMode,
}

impl core::fmt::Display for PromptError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PromptError::DimensionMismatch => write!(f, "embedding dimensions differ"),
            PromptError::ZeroNorm => write!(f, "zero-norm embedding has no cosine similarity"),
            PromptError::NonFiniteSimilarity => write!(f, "cosine similarity is not finite"),
            PromptError::UnknownDirection => {
                write!(f, "unknown direction (expected front, down, left or right)")
            }
            PromptError::UnknownPromptMode => write!(
                f,
                "unknown prompt mode (expected predefined, plain_face, empty or no_text)"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PromptError {}

/// Cosine similarity between two embeddings.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, PromptError> {
    if a.len() != b.len() {
        return Err(PromptError::DimensionMismatch);
    }
    let na = linalg::norm(a);
    let nb = linalg::norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(PromptError::ZeroNorm);
    }
    let c = linalg::dot(a, b) / (na * nb);
    if !c.is_finite() {
        return Err(PromptError::NonFiniteSimilarity);
    }
    Ok(c)
}

/// Zero-shot direction assignment: cosine argmax over the four prompt
/// embeddings (indexed in [`DirectionClass::ALL`] order), ties resolved
/// toward the lowest ordinal.
pub fn assign_direction(
    image_embedding: &[f64],
    prompt_embeddings: &[Vec<f64>; 4],
) -> Result<DirectionClass, PromptError> {
    let mut best = DirectionClass::Front;
    let mut best_sim = f64::NEG_INFINITY;
    for (class, emb) in DirectionClass::ALL.iter().zip(prompt_embeddings.iter()) {
        let sim = cosine_similarity(image_embedding, emb)?;
        if sim > best_sim {
            best_sim = sim;
            best = *class;
        }
    }
    Ok(best)
}
