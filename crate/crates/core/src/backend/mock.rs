//! Deterministic test doubles.
//!
//! [`MockHashBackend`] maps every distinct request to an unrelated pseudo-random
//! unit vector. [`MockSemanticBackend`] embeds the request's text and SVG code
//! as a hashed character-trigram histogram, so lexically similar inputs land
//! close together and retrieval over it is non-trivial.
//!
//! Both answer generation requests with [`heuristic_plan`], a rule-based
//! stand-in for a model's rewrite plan.

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::hash::Hasher;

use super::planner::heuristic_plan;
use super::{
    Backend, BackendError, EmbedRequest, EmbedResponse, GenerateRequest, GenerateResponse,
};

pub const MOCK_HASH_DIM: usize = 64;
pub const MOCK_SEMANTIC_DIM: usize = 512;
pub const MOCK_LAYER_COUNT: u32 = 33;

fn token_count(req: &EmbedRequest) -> u32 {
    let words = req.text.split_whitespace().count()
        + req
            .svg_code
            .as_deref()
            .map_or(0, |s| s.split_whitespace().count())
        + usize::from(req.image_b64.is_some());
    words.max(1) as u32
}

fn mock_generate(model_id: &str, req: &GenerateRequest) -> GenerateResponse {
    GenerateResponse {
        text: heuristic_plan(req.svg_code.as_deref().unwrap_or("")),
        model_id: model_id.to_string(),
        request_id: req.request_id.clone(),
    }
}

/// Pseudo-random unit vectors keyed by a hash of the whole request.
#[derive(Debug, Clone, Default)]
pub struct MockHashBackend {
    seed: u64,
}

impl MockHashBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_seed(seed: u64) -> Self {
        Self { seed }
    }

    fn key(&self, req: &EmbedRequest) -> [u8; 32] {
        fn field(h: &mut Sha256, bytes: Option<&[u8]>) {
            match bytes {
                None => h.update([0u8]),
                Some(b) => {
                    h.update([1u8]);
                    h.update((b.len() as u64).to_le_bytes());
                    h.update(b);
                }
            }
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        field(&mut h, Some(req.text.as_bytes()));
        field(&mut h, req.image_b64.as_deref().map(str::as_bytes));
        field(&mut h, req.svg_code.as_deref().map(str::as_bytes));
        h.update(req.layer_offset.to_le_bytes());
        field(&mut h, Some(req.pooling.as_str().as_bytes()));
        h.finalize().into()
    }

    pub fn vector_for(&self, req: &EmbedRequest) -> Vec<f64> {
        let mut rng = ChaCha8Rng::from_seed(self.key(req));
        let raw: Vec<f64> = (0..MOCK_HASH_DIM)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        raw.into_iter().map(|x| x / norm).collect()
    }
}

impl Backend for MockHashBackend {
    fn model_id(&self) -> String {
        "mock-hash".into()
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        let vector = self.vector_for(req);
        Ok(EmbedResponse {
            dim: vector.len(),
            vector,
            model_id: self.model_id(),
            layer_count: MOCK_LAYER_COUNT,
            token_count: token_count(req),
            request_id: req.request_id.clone(),
        })
    }

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
        Ok(mock_generate(&self.model_id(), req))
    }
}

/// Hashed character-trigram embeddings of `text + svg_code`.
///
/// Content is lowercased; trigrams are taken over Unicode scalar values and
/// bucketed with 64-bit FNV-1a modulo [`MOCK_SEMANTIC_DIM`]. Content with no
/// trigram embeds as the first basis vector. Layer and pooling are ignored.
#[derive(Debug, Clone, Default)]
pub struct MockSemanticBackend;

impl MockSemanticBackend {
    pub fn new() -> Self {
        Self
    }

    pub fn content(req: &EmbedRequest) -> String {
        let mut s = req.text.clone();
        if let Some(svg) = &req.svg_code {
            s.push_str(svg);
        }
        s.to_lowercase()
    }

    pub fn vector_for_text(content: &str) -> Vec<f64> {
        let chars: Vec<char> = content.chars().collect();
        let mut counts = vec![0f64; MOCK_SEMANTIC_DIM];
        let mut gram = String::new();
        for window in chars.windows(3) {
            gram.clear();
            gram.extend(window);
            let mut h = FnvHasher::default();
            h.write(gram.as_bytes());
            counts[(h.finish() % MOCK_SEMANTIC_DIM as u64) as usize] += 1.0;
        }
        let norm = counts.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            counts[0] = 1.0;
            return counts;
        }
        counts.into_iter().map(|x| x / norm).collect()
    }
}

impl Backend for MockSemanticBackend {
    fn model_id(&self) -> String {
        "mock-semantic".into()
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        let vector = Self::vector_for_text(&Self::content(req));
        Ok(EmbedResponse {
            dim: vector.len(),
            vector,
            model_id: self.model_id(),
            layer_count: MOCK_LAYER_COUNT,
            token_count: token_count(req),
            request_id: req.request_id.clone(),
        })
    }

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
        Ok(mock_generate(&self.model_id(), req))
    }
}
