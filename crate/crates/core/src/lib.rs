//! Training-free multimodal embeddings for SVG retrieval.
//!
//! The crate is organised along the pipeline:
//!
//! - [`svg`]: parse, serialize, rasterize, diff and simplify SVG documents.
//! - [`rewrite`]: model-guided semantic relabeling of SVG element ids, guarded
//!   by a visual-preservation check.
//! - [`prompt`]: one-word instruction prompts for text, image and SVG inputs,
//!   and conversion of backend replies into embedding records.
//! - [`backend`]: the length-prefixed JSON wire protocol, deterministic mock
//!   backends, a pooled TCP client and a small server.
//! - [`retrieval`]: exact cosine top-k search, Recall@k / MRR and
//!   self-similarity histograms.
//! - [`bench`]: dataset ingestion, end-to-end evaluation runs with an
//!   on-disk embedding cache, and ablation sweeps.

pub mod backend;
pub mod bench;
pub mod prompt;
pub mod retrieval;
pub mod rewrite;
pub mod svg;

pub use backend::{Backend, BackendError};
pub use prompt::{EmbeddingRecord, HiddenStateSelector, Pooling, PromptPayload, PromptTemplate};
pub use retrieval::{EvalRun, RankedResult, RetrievalIndex};
pub use rewrite::{RewriteOutcome, RewritePlan, RewriteStatus};
pub use svg::{ElementNode, RasterImage, SvgDocument};
