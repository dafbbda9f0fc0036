//! Semantic SVG rewriting.
//!
//! The model sees the SVG code and its rendering, names the salient objects,
//! and answers with a [`RewritePlan`]: new ids for existing elements plus a
//! selection of render-neutral simplifications. The plan is validated,
//! applied, and the result re-rendered; any failure along the way yields the
//! original document untouched.

mod plan;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Backend, GenerateRequest};
use crate::prompt::PromptPayload;
use crate::svg::{
    inventory_ids, rasterize_default, serialize_svg, visual_distance, RasterImage, SvgDocument,
    VISUAL_TOLERANCE,
};

pub use plan::{
    apply_rewrite_plan, parse_rewrite_plan, sanitize_id, ActionJson, ObjectJson, ObjectLabel,
    PlanError, PlanJson, PlannedAction, RewritePlan, Selector,
};

pub const ANALYSIS_TEMPLATE_ID: &str = "svg-analysis";

/// Instruction sent with every analysis request.
pub const ANALYSIS_INSTRUCTION: &str = "\
You are given an SVG icon twice: as source code and as its rendered image.
1. List the visually salient objects you can see in the rendered image.
2. Match each object to exactly one SVG element. Select the element by its existing id, or by its element path: zero-based child-element indices from the root <svg>, joined with \"/\" (for example \"0/2/1\").
3. Propose only these render-neutral simplifications, each with a selector:
   T1 flatten a <g> that has no attributes;
   T2 remove an empty group or unreferenced <defs> content;
   T3 drop a transform that is the identity;
   T4 move the transform of a single-child group onto its child.
4. Reply with JSON only, exactly in this shape:
{\"objects\": [{\"selector\": \"<id or path>\", \"new_id\": \"<short descriptive name>\"}], \"simplify\": [{\"action\": \"T1|T2|T3|T4\", \"selector\": \"<id or path>\"}]}";

/// Default context budget, in tokens.
pub const DEFAULT_CONTEXT_BUDGET: usize = 32_768;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewriteError {
    #[error("SvgTooLong: ~{estimated_tokens} tokens ({chars} characters) exceeds the budget of {budget} tokens")]
    SvgTooLong {
        chars: usize,
        estimated_tokens: usize,
        budget: usize,
    },
}

/// Token estimate for SVG source: one token per three bytes, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(3)
}

/// Builds the analysis request for one document and its rendering.
pub fn build_analysis_prompt(
    doc: &SvgDocument,
    render: &RasterImage,
    budget_tokens: usize,
) -> Result<PromptPayload, RewriteError> {
    let svg = serialize_svg(doc);
    let needed = estimate_tokens(ANALYSIS_INSTRUCTION) + estimate_tokens(&svg);
    if needed > budget_tokens {
        return Err(RewriteError::SvgTooLong {
            chars: svg.chars().count(),
            estimated_tokens: needed,
            budget: budget_tokens,
        });
    }
    Ok(PromptPayload {
        text_segment: ANALYSIS_INSTRUCTION.to_string(),
        image_attachment: Some(render.clone()),
        svg_segment: Some(svg),
        template_id: ANALYSIS_TEMPLATE_ID.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteStatus {
    Rewritten,
    FallbackOriginal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewriteOutcome {
    pub status: RewriteStatus,
    pub document: SvgDocument,
    /// RMSE between the original and candidate renders; 0 when no candidate was rendered.
    pub visual_rmse: f64,
    pub replaced_ids: usize,
    pub assigned_ids: usize,
    pub failure_reason: Option<String>,
    pub model_raw: Option<String>,
}

impl RewriteOutcome {
    fn fallback(doc: &SvgDocument, reason: String, model_raw: Option<String>, rmse: f64) -> Self {
        log::info!("rewrite fell back to original: {reason}");
        Self {
            status: RewriteStatus::FallbackOriginal,
            document: doc.clone(),
            visual_rmse: rmse,
            replaced_ids: 0,
            assigned_ids: 0,
            failure_reason: Some(reason),
            model_raw,
        }
    }

    /// Text to write out: the canonical serialization when rewritten, the
    /// original bytes otherwise.
    pub fn output_text(&self) -> String {
        match self.status {
            RewriteStatus::Rewritten => serialize_svg(&self.document),
            RewriteStatus::FallbackOriginal => self.document.source_text.clone(),
        }
    }

    pub fn audit_record(&self, item_id: &str) -> AuditRecord {
        AuditRecord {
            item_id: item_id.to_string(),
            status: self.status,
            visual_rmse: self.visual_rmse,
            replaced_ids: self.replaced_ids,
            assigned_ids: self.assigned_ids,
            failure_reason: self.failure_reason.clone(),
            model_raw: self.model_raw.clone(),
        }
    }
}

/// One line of the rewrite audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub item_id: String,
    pub status: RewriteStatus,
    pub visual_rmse: f64,
    pub replaced_ids: usize,
    pub assigned_ids: usize,
    pub failure_reason: Option<String>,
    pub model_raw: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RewriteOptions {
    pub context_budget: usize,
    /// Extra attempts after a backend or plan-parse failure.
    pub retries: usize,
    pub tolerance: f64,
    pub max_new_tokens: u32,
}

impl Default for RewriteOptions {
    fn default() -> Self {
        Self {
            context_budget: DEFAULT_CONTEXT_BUDGET,
            retries: 1,
            tolerance: VISUAL_TOLERANCE,
            max_new_tokens: 1024,
        }
    }
}

fn generate_request(payload: &PromptPayload, max_new_tokens: u32) -> GenerateRequest {
    let image_b64 = payload.image_attachment.as_ref().map(|img| {
        base64::engine::general_purpose::STANDARD.encode(img.to_png().expect("png encoding"))
    });
    let mut h = Sha256::new();
    h.update(payload.text_segment.as_bytes());
    h.update(payload.svg_segment.as_deref().unwrap_or("").as_bytes());
    let digest = h.finalize();
    GenerateRequest {
        prompt: payload.text_segment.clone(),
        image_b64,
        svg_code: payload.svg_segment.clone(),
        max_new_tokens,
        request_id: format!("rewrite-{}", hex_prefix(&digest)),
    }
}

pub(crate) fn hex_prefix(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the full analyse / plan / apply / verify cycle for one document.
///
/// Never fails: every error becomes a [`RewriteStatus::FallbackOriginal`]
/// outcome carrying the reason.
pub fn rewrite_document(
    doc: &SvgDocument,
    backend: &dyn Backend,
    opts: &RewriteOptions,
) -> RewriteOutcome {
    let before = match rasterize_default(doc) {
        Ok(img) => img,
        Err(e) => return RewriteOutcome::fallback(doc, e.to_string(), None, 0.0),
    };
    let payload = match build_analysis_prompt(doc, &before, opts.context_budget) {
        Ok(p) => p,
        Err(e) => return RewriteOutcome::fallback(doc, e.to_string(), None, 0.0),
    };
    let request = generate_request(&payload, opts.max_new_tokens);

    let mut last_failure = String::new();
    let mut last_raw = None;
    let mut plan = None;
    for attempt in 0..=opts.retries {
        match backend.generate(&request) {
            Err(e) => last_failure = e.to_string(),
            Ok(resp) => match parse_rewrite_plan(&resp.text, doc) {
                Ok(p) => {
                    plan = Some(p);
                    break;
                }
                Err(e) => {
                    last_failure = e.to_string();
                    last_raw = Some(resp.text);
                }
            },
        }
        log::debug!("rewrite attempt {} failed: {last_failure}", attempt + 1);
    }
    let Some(plan) = plan else {
        return RewriteOutcome::fallback(doc, last_failure, last_raw, 0.0);
    };
    let raw = Some(plan.model_raw.clone());

    let candidate = apply_rewrite_plan(doc, &plan);
    if let Err(e) = candidate.check_unique_ids() {
        return RewriteOutcome::fallback(doc, e.to_string(), raw, 0.0);
    }
    let after = match rasterize_default(&candidate) {
        Ok(img) => img,
        Err(e) => return RewriteOutcome::fallback(doc, e.to_string(), raw, 0.0),
    };
    let rmse = visual_distance(&before, &after).expect("same canvas size");
    if rmse > opts.tolerance {
        return RewriteOutcome::fallback(
            doc,
            format!(
                "VisualCheckFailed: rmse {rmse:.4} exceeds {}",
                opts.tolerance
            ),
            raw,
            rmse,
        );
    }
    let generic_before = inventory_ids(doc).non_descriptive.len();
    let generic_after = inventory_ids(&candidate).non_descriptive.len();
    if generic_before > 0 && generic_after >= generic_before {
        return RewriteOutcome::fallback(
            doc,
            format!(
                "NoSemanticGain: {generic_after} non-descriptive ids remain of {generic_before}"
            ),
            raw,
            rmse,
        );
    }

    let replaced_ids = plan
        .object_labels
        .iter()
        .filter(|l| doc.node(&l.target).is_some_and(|n| n.id().is_some()))
        .count();
    RewriteOutcome {
        status: RewriteStatus::Rewritten,
        document: candidate,
        visual_rmse: rmse,
        replaced_ids,
        assigned_ids: plan.object_labels.len() - replaced_ids,
        failure_reason: None,
        model_raw: raw,
    }
}
