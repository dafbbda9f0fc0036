//! Model backends.
//!
//! A [`Backend`] turns an [`EmbedRequest`] into a hidden-state vector and a
//! [`GenerateRequest`] into free text. Two deterministic in-process doubles
//! ([`MockHashBackend`], [`MockSemanticBackend`]) stand in for a real model;
//! [`RemoteBackend`] speaks the framed protocol to a server, and
//! [`server::spawn`] exposes any backend over that protocol.

pub mod mock;
mod planner;
pub mod protocol;
pub mod remote;
pub mod server;

use std::sync::Arc;

use thiserror::Error;

pub use mock::{
    MockHashBackend, MockSemanticBackend, MOCK_HASH_DIM, MOCK_LAYER_COUNT, MOCK_SEMANTIC_DIM,
};
pub use planner::heuristic_plan;
pub use protocol::{
    decode_request, decode_response, encode_request, encode_response, EmbedRequest, EmbedResponse,
    GenerateRequest, GenerateResponse, Pooling, ProtocolError,
};
pub use remote::RemoteBackend;

/// Environment variable naming the default server address.
pub const ADDR_ENV: &str = "META_EMBED_ADDR";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend rejected request: {0}")]
    Rejected(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

pub trait Backend: Send + Sync {
    fn model_id(&self) -> String;

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError>;

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn model_id(&self) -> String {
        (**self).model_id()
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        (**self).embed(req)
    }

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
        (**self).generate(req)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn model_id(&self) -> String {
        (**self).model_id()
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        (**self).embed(req)
    }

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
        (**self).generate(req)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn model_id(&self) -> String {
        (**self).model_id()
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        (**self).embed(req)
    }

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
        (**self).generate(req)
    }
}

/// Opens a backend from a spec string: `mock-hash`, `mock-semantic`, or a
/// server address (`host:port`, optionally prefixed with `tcp://`).
pub fn open(spec: &str, seed: u64, pool_size: usize) -> Result<Arc<dyn Backend>, BackendError> {
    match spec {
        "mock-hash" => Ok(Arc::new(MockHashBackend::with_seed(seed))),
        "mock-semantic" => Ok(Arc::new(MockSemanticBackend::new())),
        addr => {
            let addr = addr.strip_prefix("tcp://").unwrap_or(addr);
            if !addr.contains(':') {
                return Err(BackendError::Unavailable(format!(
                    "unknown backend {spec:?}; expected mock-hash, mock-semantic or host:port"
                )));
            }
            Ok(Arc::new(RemoteBackend::new(addr, pool_size)))
        }
    }
}
