//! Length-prefixed JSON messages.
//!
//! Every frame is a 4-byte big-endian body length followed by a UTF-8 JSON
//! object. Embedding exchanges use [`EmbedRequest`] / [`EmbedResponse`];
//! free-text generation (used by the SVG rewriter) uses [`GenerateRequest`] /
//! [`GenerateResponse`], distinguished by the `prompt` field. A server that
//! cannot serve a request answers with `{"error": "...", "request_id": "..."}`.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on a single frame body.
pub const MAX_FRAME_LEN: usize = 256 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("bad frame: {0}")]
    Frame(String),
    #[error("bad message: {0}")]
    Json(String),
    #[error("invalid message: {0}")]
    Invalid(String),
    #[error("request_id mismatch: sent {sent:?}, got {got:?}")]
    EchoMismatch { sent: String, got: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    LastToken,
    MeanAllTokens,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::LastToken => "last_token",
            Pooling::MeanAllTokens => "mean_all_tokens",
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "last_token" | "last" => Ok(Pooling::LastToken),
            "mean_all_tokens" | "mean" => Ok(Pooling::MeanAllTokens),
            other => Err(format!("unknown pooling {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
    pub image_b64: Option<String>,
    pub svg_code: Option<String>,
    pub layer_offset: u32,
    pub pooling: Pooling,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
    pub dim: usize,
    pub model_id: String,
    pub layer_count: u32,
    pub token_count: u32,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub image_b64: Option<String>,
    pub svg_code: Option<String>,
    pub max_new_tokens: u32,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
    pub model_id: String,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
    pub request_id: String,
}

/// Anything a client may receive.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply<T> {
    Ok(T),
    Error(ErrorReply),
}

/// Anything a server may receive.
#[derive(Debug, Clone, PartialEq)]
pub enum Incoming {
    Embed(EmbedRequest),
    Generate(GenerateRequest),
}

/// Wraps a JSON body in a frame.
pub fn frame(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    out
}

/// Strips and checks the length prefix of a complete frame.
pub fn unframe(bytes: &[u8]) -> Result<&[u8], ProtocolError> {
    if bytes.len() < 4 {
        return Err(ProtocolError::Frame(format!(
            "{} bytes is shorter than the length prefix",
            bytes.len()
        )));
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if bytes.len() - 4 != len {
        return Err(ProtocolError::Frame(format!(
            "prefix says {len} bytes, body has {}",
            bytes.len() - 4
        )));
    }
    Ok(&bytes[4..])
}

pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> std::io::Result<()> {
    if body.len() > MAX_FRAME_LEN {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "frame too large",
        ));
    }
    w.write_all(&frame(body))?;
    w.flush()
}

/// Reads one frame body. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Option<Vec<u8>>> {
    let mut prefix = [0u8; 4];
    match r.read_exact(&mut prefix) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_LEN {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit"),
        ));
    }
    let mut body = vec![0; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    frame(&serde_json::to_vec(msg).expect("messages always serialize"))
}

fn decode<T: DeserializeOwned>(body: &[u8]) -> Result<T, ProtocolError> {
    serde_json::from_slice(body).map_err(|e| ProtocolError::Json(e.to_string()))
}

pub fn encode_request(req: &EmbedRequest) -> Vec<u8> {
    encode(req)
}

pub fn encode_response(resp: &EmbedResponse) -> Vec<u8> {
    encode(resp)
}

pub fn encode_generate_request(req: &GenerateRequest) -> Vec<u8> {
    encode(req)
}

pub fn encode_generate_response(resp: &GenerateResponse) -> Vec<u8> {
    encode(resp)
}

pub fn encode_error(err: &ErrorReply) -> Vec<u8> {
    encode(err)
}

impl EmbedRequest {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.request_id.is_empty() {
            return Err(ProtocolError::Invalid("empty request_id".into()));
        }
        Ok(())
    }
}

impl EmbedResponse {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.vector.len() != self.dim {
            return Err(ProtocolError::Invalid(format!(
                "dim is {} but vector has {} entries",
                self.dim,
                self.vector.len()
            )));
        }
        if self.layer_count == 0 {
            return Err(ProtocolError::Invalid("layer_count is zero".into()));
        }
        Ok(())
    }

    /// Checks the echo and layer invariants against the request that produced it.
    pub fn validate_for(&self, req: &EmbedRequest) -> Result<(), ProtocolError> {
        self.validate()?;
        if self.request_id != req.request_id {
            return Err(ProtocolError::EchoMismatch {
                sent: req.request_id.clone(),
                got: self.request_id.clone(),
            });
        }
        Ok(())
    }
}

pub fn decode_request(bytes: &[u8]) -> Result<EmbedRequest, ProtocolError> {
    let req: EmbedRequest = decode(unframe(bytes)?)?;
    req.validate()?;
    Ok(req)
}

/// Decodes a complete response frame. Unknown fields are ignored.
pub fn decode_response(bytes: &[u8]) -> Result<EmbedResponse, ProtocolError> {
    let resp: EmbedResponse = decode(unframe(bytes)?)?;
    resp.validate()?;
    Ok(resp)
}

fn is_error_body(value: &serde_json::Value) -> bool {
    value.get("error").is_some_and(|e| e.is_string())
}

/// Decodes a reply body (no prefix) that may be an error object.
pub fn decode_reply<T: DeserializeOwned>(body: &[u8]) -> Result<Reply<T>, ProtocolError> {
    let value: serde_json::Value = decode(body)?;
    if is_error_body(&value) {
        let err: ErrorReply =
            serde_json::from_value(value).map_err(|e| ProtocolError::Json(e.to_string()))?;
        return Ok(Reply::Error(err));
    }
    serde_json::from_value(value)
        .map(Reply::Ok)
        .map_err(|e| ProtocolError::Json(e.to_string()))
}

/// Decodes a request body (no prefix) on the server side.
pub fn decode_incoming(body: &[u8]) -> Result<Incoming, ProtocolError> {
    let value: serde_json::Value = decode(body)?;
    let to_err = |e: serde_json::Error| ProtocolError::Json(e.to_string());
    if value.get("prompt").is_some() {
        Ok(Incoming::Generate(
            serde_json::from_value(value).map_err(to_err)?,
        ))
    } else {
        let req: EmbedRequest = serde_json::from_value(value).map_err(to_err)?;
        req.validate()?;
        Ok(Incoming::Embed(req))
    }
}

/// Best-effort `request_id` extraction for error replies to bad requests.
pub fn peek_request_id(body: &[u8]) -> String {
    serde_json::from_slice::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            v.get("request_id")
                .and_then(|r| r.as_str())
                .map(str::to_string)
        })
        .unwrap_or_default()
}
