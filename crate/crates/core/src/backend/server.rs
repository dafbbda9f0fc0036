//! Protocol server for any in-process [`Backend`].

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::protocol::{
    decode_incoming, encode_error, encode_generate_response, encode_response, peek_request_id,
    read_frame, unframe, write_frame, ErrorReply, Incoming,
};
use super::Backend;

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.shutdown();
        }
    }
}

/// Answers one request body.
pub fn handle_body(backend: &dyn Backend, body: &[u8]) -> Vec<u8> {
    let error = |request_id: String, error: String| encode_error(&ErrorReply { error, request_id });
    let framed = match decode_incoming(body) {
        Ok(Incoming::Embed(req)) => match backend.embed(&req) {
            Ok(resp) if resp.layer_count <= req.layer_offset => error(
                req.request_id,
                format!(
                    "layer_offset {} out of range for {} layers",
                    req.layer_offset, resp.layer_count
                ),
            ),
            Ok(resp) => encode_response(&resp),
            Err(e) => error(req.request_id, e.to_string()),
        },
        Ok(Incoming::Generate(req)) => match backend.generate(&req) {
            Ok(resp) => encode_generate_response(&resp),
            Err(e) => error(req.request_id, e.to_string()),
        },
        Err(e) => error(peek_request_id(body), e.to_string()),
    };
    unframe(&framed).expect("locally framed").to_vec()
}

fn serve_connection(backend: &dyn Backend, mut conn: TcpStream) -> io::Result<()> {
    conn.set_nodelay(true).ok();
    while let Some(body) = read_frame(&mut conn)? {
        write_frame(&mut conn, &handle_body(backend, &body))?;
    }
    Ok(())
}

/// Binds `addr` and serves each connection on its own thread.
pub fn spawn<A: ToSocketAddrs>(addr: A, backend: Arc<dyn Backend>) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(conn) = conn else { continue };
            let backend = backend.clone();
            std::thread::spawn(move || {
                if let Err(e) = serve_connection(backend.as_ref(), conn) {
                    log::debug!("connection closed: {e}");
                }
            });
        }
    });
    Ok(ServerHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}
