//! One-word instruction prompts and the embeddings they produce.
//!
//! Every template follows the same skeleton: the input, a modality-specific
//! instruction, and a closing request to summarize "in one word:". The hidden
//! state of the final token at a chosen layer is the embedding.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Backend, BackendError, EmbedRequest};
use crate::rewrite::hex_prefix;
use crate::svg::RasterImage;

pub use crate::backend::Pooling;

/// Stands in for the image attachment inside a prompt's text.
pub const IMAGE_MARKER: &str = "<|image|>";
/// Stands in for the SVG code inside a prompt's text.
pub const SVG_MARKER: &str = "<|svg|>";

const INPUT_SLOT: &str = "{X}";
const INSTRUCTION_SLOT: &str = "{instruction}";

const BUILTIN_TEMPLATES: &str = include_str!("templates.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("template {template_id} expects {expected} input, got {got}")]
    ModalityMismatch {
        template_id: String,
        expected: Modality,
        got: Modality,
    },
    #[error("template {0} is not a one-word template")]
    NotOneWord(String),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("invalid template {id}: {reason}")]
    InvalidTemplate { id: String, reason: String },
    #[error("template registry: {0}")]
    Registry(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("BackendUnavailable: {0}")]
    BackendUnavailable(String),
    #[error("BackendRejected: {0}")]
    BackendRejected(String),
    #[error("NonFiniteVector: entry {index} is {value}")]
    NonFiniteVector { index: usize, value: f64 },
    #[error("protocol: {0}")]
    Protocol(String),
}

impl From<BackendError> for EmbedError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Unavailable(m) => EmbedError::BackendUnavailable(m),
            BackendError::Rejected(m) => EmbedError::BackendRejected(m),
            BackendError::Protocol(p) => EmbedError::Protocol(p.to_string()),
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("cannot normalize a zero vector")]
pub struct ZeroVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
    Svg,
    ImageSvg,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Svg => "svg",
            Modality::ImageSvg => "image_svg",
        }
    }

    /// Suffix used in built-in template ids (`meol-image-svg`).
    pub fn id_suffix(self) -> &'static str {
        match self {
            Modality::ImageSvg => "image-svg",
            other => other.as_str(),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthVariant {
    OneWord,
    TwoWords,
    ThreeWords,
    FourWords,
    Sentence,
}

impl LengthVariant {
    pub const ALL: [LengthVariant; 5] = [
        LengthVariant::OneWord,
        LengthVariant::TwoWords,
        LengthVariant::ThreeWords,
        LengthVariant::FourWords,
        LengthVariant::Sentence,
    ];

    pub fn suffix(self) -> &'static str {
        match self {
            LengthVariant::OneWord => "in one word:",
            LengthVariant::TwoWords => "in two words:",
            LengthVariant::ThreeWords => "in three words:",
            LengthVariant::FourWords => "in four words:",
            LengthVariant::Sentence => "in one sentence:",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LengthVariant::OneWord => "one_word",
            LengthVariant::TwoWords => "two_words",
            LengthVariant::ThreeWords => "three_words",
            LengthVariant::FourWords => "four_words",
            LengthVariant::Sentence => "sentence",
        }
    }

    /// Human label used in ablation reports.
    pub fn label(self) -> &'static str {
        match self {
            LengthVariant::OneWord => "One word",
            LengthVariant::TwoWords => "Two words",
            LengthVariant::ThreeWords => "Three words",
            LengthVariant::FourWords => "Four words",
            LengthVariant::Sentence => "Sentence",
        }
    }
}

impl fmt::Display for LengthVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LengthVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown length variant {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(rename = "id")]
    pub template_id: String,
    pub modality: Modality,
    pub skeleton: String,
    pub instruction: String,
    /// Set for templates that end in a length request; `None` for baselines
    /// with a fixed ending.
    #[serde(default)]
    pub length_variant: Option<LengthVariant>,
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), PromptError> {
        let invalid = |reason: String| PromptError::InvalidTemplate {
            id: self.template_id.clone(),
            reason,
        };
        for slot in [INPUT_SLOT, INSTRUCTION_SLOT] {
            let n = self.skeleton.matches(slot).count();
            if n != 1 {
                return Err(invalid(format!("{slot} appears {n} times")));
            }
        }
        if let Some(v) = self.length_variant {
            if !self.skeleton.ends_with(v.suffix()) {
                return Err(invalid(format!("skeleton must end with {:?}", v.suffix())));
            }
        }
        Ok(())
    }

    /// Substitutes both slots in a single left-to-right pass, so slot-like
    /// text inside the input is never re-expanded.
    fn fill(&self, input: &str) -> String {
        let mut out =
            String::with_capacity(self.skeleton.len() + input.len() + self.instruction.len());
        let mut rest = self.skeleton.as_str();
        while !rest.is_empty() {
            if let Some(r) = rest.strip_prefix(INPUT_SLOT) {
                out.push_str(input);
                rest = r;
            } else if let Some(r) = rest.strip_prefix(INSTRUCTION_SLOT) {
                out.push_str(&self.instruction);
                rest = r;
            } else {
                let ch = rest.chars().next().expect("non-empty");
                out.push(ch);
                rest = &rest[ch.len_utf8()..];
            }
        }
        out
    }
}

/// Input to embed, tagged by modality.
#[derive(Debug, Clone, PartialEq)]
pub enum ModalInput {
    Text(String),
    Image(RasterImage),
    Svg(String),
    ImageSvg(RasterImage, String),
}

impl ModalInput {
    pub fn modality(&self) -> Modality {
        match self {
            ModalInput::Text(_) => Modality::Text,
            ModalInput::Image(_) => Modality::Image,
            ModalInput::Svg(_) => Modality::Svg,
            ModalInput::ImageSvg(..) => Modality::ImageSvg,
        }
    }
}

/// A rendered prompt plus its attachments.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPayload {
    pub text_segment: String,
    pub image_attachment: Option<RasterImage>,
    pub svg_segment: Option<String>,
    pub template_id: String,
}

pub fn render_prompt(
    template: &PromptTemplate,
    input: &ModalInput,
) -> Result<PromptPayload, PromptError> {
    if input.modality() != template.modality {
        return Err(PromptError::ModalityMismatch {
            template_id: template.template_id.clone(),
            expected: template.modality,
            got: input.modality(),
        });
    }
    let (slot, image, svg) = match input {
        ModalInput::Text(t) => (t.clone(), None, None),
        ModalInput::Image(img) => (IMAGE_MARKER.to_string(), Some(img.clone()), None),
        ModalInput::Svg(code) => (SVG_MARKER.to_string(), None, Some(code.clone())),
        ModalInput::ImageSvg(img, code) => (
            format!("{IMAGE_MARKER} {SVG_MARKER}"),
            Some(img.clone()),
            Some(code.clone()),
        ),
    };
    Ok(PromptPayload {
        text_segment: template.fill(&slot),
        image_attachment: image,
        svg_segment: svg,
        template_id: template.template_id.clone(),
    })
}

/// Rewrites the closing "in one word:" of a one-word template.
///
/// The new template id is `<base>@<variant>`; the one-word variant returns
/// the template unchanged.
pub fn make_length_variant(
    base: &PromptTemplate,
    variant: LengthVariant,
) -> Result<PromptTemplate, PromptError> {
    if base.length_variant != Some(LengthVariant::OneWord) {
        return Err(PromptError::NotOneWord(base.template_id.clone()));
    }
    if variant == LengthVariant::OneWord {
        return Ok(base.clone());
    }
    let stem = base
        .skeleton
        .strip_suffix(LengthVariant::OneWord.suffix())
        .ok_or_else(|| PromptError::NotOneWord(base.template_id.clone()))?;
    Ok(PromptTemplate {
        template_id: format!("{}@{}", base.template_id, variant),
        skeleton: format!("{stem}{}", variant.suffix()),
        length_variant: Some(variant),
        ..base.clone()
    })
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    template: Vec<PromptTemplate>,
}

/// Templates by id.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_TEMPLATES).expect("built-in templates are valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PromptError> {
        let file: RegistryFile =
            toml::from_str(text).map_err(|e| PromptError::Registry(e.to_string()))?;
        let mut templates = BTreeMap::new();
        for t in file.template {
            t.validate()?;
            if templates.insert(t.template_id.clone(), t.clone()).is_some() {
                return Err(PromptError::Registry(format!(
                    "duplicate template id {:?}",
                    t.template_id
                )));
            }
        }
        Ok(Self { templates })
    }

    /// Loads a registry file, layered over the built-ins.
    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Registry(format!("{}: {e}", path.display())))?;
        let mut reg = Self::builtin();
        reg.templates.extend(Self::from_toml_str(&text)?.templates);
        Ok(reg)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(id)
            .ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    /// Template `<family>-<modality>`, with `variant` applied when given.
    pub fn resolve(
        &self,
        family: &str,
        modality: Modality,
        variant: Option<LengthVariant>,
    ) -> Result<PromptTemplate, PromptError> {
        let base = self.get(&format!("{family}-{}", modality.id_suffix()))?;
        match variant {
            Some(v) => make_length_variant(base, v),
            None => Ok(base.clone()),
        }
    }
}

/// Which hidden state to read: `layer_offset` counts back from the last
/// layer (0 = last, 1 = penultimate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HiddenStateSelector {
    pub layer_offset: u32,
    pub pooling: Pooling,
}

impl Default for HiddenStateSelector {
    /// Last token of the penultimate layer.
    fn default() -> Self {
        Self {
            layer_offset: 1,
            pooling: Pooling::LastToken,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub vector: Vec<f64>,
    pub dim: usize,
    pub model_id: String,
    pub selector: HiddenStateSelector,
    pub template_id: String,
    pub item_id: String,
}

/// Wire request for a payload.
pub fn embed_request(
    payload: &PromptPayload,
    selector: HiddenStateSelector,
    request_id: String,
) -> EmbedRequest {
    let image_b64 = payload.image_attachment.as_ref().map(|img| {
        base64::engine::general_purpose::STANDARD.encode(img.to_png().expect("png encoding"))
    });
    EmbedRequest {
        text: payload.text_segment.clone(),
        image_b64,
        svg_code: payload.svg_segment.clone(),
        layer_offset: selector.layer_offset,
        pooling: selector.pooling,
        request_id,
    }
}

fn default_request_id(payload: &PromptPayload) -> String {
    let mut h = Sha256::new();
    h.update(payload.template_id.as_bytes());
    h.update([0]);
    h.update(payload.text_segment.as_bytes());
    h.update([0]);
    h.update(payload.svg_segment.as_deref().unwrap_or("").as_bytes());
    format!("embed-{}", hex_prefix(&h.finalize()))
}

/// Embeds one payload and checks the reply.
pub fn embed(
    backend: &dyn Backend,
    payload: &PromptPayload,
    selector: HiddenStateSelector,
    item_id: &str,
) -> Result<EmbeddingRecord, EmbedError> {
    let request_id = if item_id.is_empty() {
        default_request_id(payload)
    } else {
        item_id.to_string()
    };
    let req = embed_request(payload, selector, request_id);
    let resp = backend.embed(&req)?;
    resp.validate_for(&req)
        .map_err(|e| EmbedError::Protocol(e.to_string()))?;
    if resp.layer_count <= selector.layer_offset {
        return Err(EmbedError::BackendRejected(format!(
            "layer_offset {} out of range for {} layers",
            selector.layer_offset, resp.layer_count
        )));
    }
    if let Some((index, &value)) = resp.vector.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(EmbedError::NonFiniteVector { index, value });
    }
    Ok(EmbeddingRecord {
        dim: resp.dim,
        vector: resp.vector,
        model_id: resp.model_id,
        selector,
        template_id: payload.template_id.clone(),
        item_id: item_id.to_string(),
    })
}

pub fn normalize(vector: &[f64]) -> Result<Vec<f64>, ZeroVector> {
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(ZeroVector);
    }
    Ok(vector.iter().map(|x| x / norm).collect())
}
