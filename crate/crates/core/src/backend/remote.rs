use std::net::TcpStream;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;

use super::protocol::{
    decode_reply, encode_generate_request, encode_request, read_frame, unframe, write_frame, Reply,
};
use super::{
    Backend, BackendError, EmbedRequest, EmbedResponse, GenerateRequest, GenerateResponse,
    ProtocolError,
};

const IO_TIMEOUT: Duration = Duration::from_secs(600);

struct Pool {
    idle: Vec<TcpStream>,
    open: usize,
}

/// Client for a protocol server. Holds at most `pool_size` connections, one
/// request in flight per connection.
pub struct RemoteBackend {
    addr: String,
    pool_size: usize,
    pool: Mutex<Pool>,
    available: Condvar,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("addr", &self.addr)
            .field("pool_size", &self.pool_size)
            .finish()
    }
}

impl RemoteBackend {
    pub fn new(addr: impl Into<String>, pool_size: usize) -> Self {
        Self {
            addr: addr.into(),
            pool_size: pool_size.max(1),
            pool: Mutex::new(Pool {
                idle: Vec::new(),
                open: 0,
            }),
            available: Condvar::new(),
        }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn checkout(&self) -> Result<TcpStream, BackendError> {
        let mut pool = self.pool.lock().expect("pool lock");
        loop {
            if let Some(conn) = pool.idle.pop() {
                return Ok(conn);
            }
            if pool.open < self.pool_size {
                pool.open += 1;
                drop(pool);
                return self.connect().inspect_err(|_| self.discard());
            }
            pool = self.available.wait(pool).expect("pool lock");
        }
    }

    fn connect(&self) -> Result<TcpStream, BackendError> {
        let conn = TcpStream::connect(&self.addr)
            .map_err(|e| BackendError::Unavailable(format!("{}: {e}", self.addr)))?;
        conn.set_nodelay(true).ok();
        conn.set_read_timeout(Some(IO_TIMEOUT)).ok();
        conn.set_write_timeout(Some(IO_TIMEOUT)).ok();
        Ok(conn)
    }

    fn checkin(&self, conn: TcpStream) {
        self.pool.lock().expect("pool lock").idle.push(conn);
        self.available.notify_one();
    }

    fn discard(&self) {
        self.pool.lock().expect("pool lock").open -= 1;
        self.available.notify_one();
    }

    fn round_trip<T: DeserializeOwned>(&self, frame: &[u8]) -> Result<T, BackendError> {
        let mut conn = self.checkout()?;
        let body = unframe(frame).expect("locally framed");
        let result = write_frame(&mut conn, body).and_then(|_| read_frame(&mut conn));
        let reply = match result {
            Ok(Some(reply)) => {
                self.checkin(conn);
                reply
            }
            Ok(None) => {
                self.discard();
                return Err(BackendError::Unavailable(
                    "server closed the connection".into(),
                ));
            }
            Err(e) => {
                self.discard();
                return Err(BackendError::Unavailable(e.to_string()));
            }
        };
        match decode_reply::<T>(&reply)? {
            Reply::Ok(v) => Ok(v),
            Reply::Error(e) => Err(BackendError::Rejected(e.error)),
        }
    }
}

impl Backend for RemoteBackend {
    fn model_id(&self) -> String {
        format!("remote:{}", self.addr)
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        let resp: EmbedResponse = self.round_trip(&encode_request(req))?;
        resp.validate_for(req)?;
        Ok(resp)
    }

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
        let resp: GenerateResponse = self.round_trip(&encode_generate_request(req))?;
        if resp.request_id != req.request_id {
            return Err(ProtocolError::EchoMismatch {
                sent: req.request_id.clone(),
                got: resp.request_id,
            }
            .into());
        }
        Ok(resp)
    }
}
