//! Network front ends: newline-delimited JSON over TCP and `POST /probe`
//! over HTTP. Both hand each document to [`Kernel::handle_wire`]; a bad
//! document gets an error response and the connection stays open.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::branch::BranchId;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::protocol::ProbeResponse;

/// Largest accepted document, in bytes.
pub const MAX_DOCUMENT_BYTES: usize = 16 << 20;

fn respond(kernel: &Kernel, doc: &[u8]) -> ProbeResponse {
    match catch_unwind(AssertUnwindSafe(|| kernel.handle_wire(doc))) {
        Ok(r) => r,
        Err(_) => {
            tracing::error!("probe handler panicked");
            ProbeResponse::error("", BranchId::MAINLINE, &Error::Eval("internal failure while serving probe".into()))
        }
    }
}

fn too_large() -> ProbeResponse {
    let e = crate::protocol::ProtocolError::Malformed(format!("document exceeds {MAX_DOCUMENT_BYTES} bytes"));
    ProbeResponse::error("", BranchId::MAINLINE, &Error::Protocol(e))
}

/// Serve one TCP connection until the peer closes it.
pub fn serve_connection(kernel: &Kernel, stream: TcpStream) -> std::io::Result<()> {
    let peer = stream.peer_addr().ok();
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.by_ref().take(MAX_DOCUMENT_BYTES as u64 + 1).read_until(b'\n', &mut line)?;
        if n == 0 {
            break;
        }
        let resp = if line.len() > MAX_DOCUMENT_BYTES && line.last() != Some(&b'\n') {
            // Drain the rest of the oversized line.
            let mut sink = Vec::new();
            reader.read_until(b'\n', &mut sink)?;
            too_large()
        } else {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            respond(kernel, &line)
        };
        writer.write_all(resp.to_json().as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    tracing::debug!(?peer, "connection closed");
    Ok(())
}

/// Accept connections forever, one thread each.
pub fn serve_tcp(kernel: Arc<Kernel>, listener: TcpListener) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(error = %e, "accept failed");
                continue;
            }
        };
        let k = kernel.clone();
        std::thread::spawn(move || {
            if let Err(e) = serve_connection(&k, stream) {
                tracing::debug!(error = %e, "connection error");
            }
        });
    }
    Ok(())
}

/// Bind and serve TCP on a background thread; returns the bound address.
pub fn spawn_tcp(kernel: Arc<Kernel>, addr: impl ToSocketAddrs) -> Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let h = std::thread::spawn(move || {
        if let Err(e) = serve_tcp(kernel, listener) {
            tracing::error!(error = %e, "tcp server stopped");
        }
    });
    Ok((local, h))
}

/// A running HTTP server. Dropping it does not stop it; call [`HttpServer::stop`].
pub struct HttpServer {
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
    pub addr: SocketAddr,
}

impl std::fmt::Debug for HttpServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpServer").field("addr", &self.addr).finish()
    }
}

fn json_header() -> tiny_http::Header {
    tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header")
}

fn handle_request(kernel: &Kernel, mut req: tiny_http::Request) {
    let result = if req.url() != "/probe" {
        req.respond(tiny_http::Response::from_string("not found\n").with_status_code(404))
    } else if *req.method() != tiny_http::Method::Post {
        req.respond(tiny_http::Response::from_string("use POST\n").with_status_code(405))
    } else {
        let mut body = Vec::new();
        let read = req.as_reader().take(MAX_DOCUMENT_BYTES as u64 + 1).read_to_end(&mut body);
        let resp = match read {
            Ok(_) if body.len() > MAX_DOCUMENT_BYTES => too_large(),
            Ok(_) => respond(kernel, &body),
            Err(e) => ProbeResponse::error("", BranchId::MAINLINE, &Error::Io(e)),
        };
        req.respond(tiny_http::Response::from_string(resp.to_json()).with_header(json_header()))
    };
    if let Err(e) = result {
        tracing::debug!(error = %e, "http response failed");
    }
}

impl HttpServer {
    pub fn start(kernel: Arc<Kernel>, addr: impl ToSocketAddrs, workers: usize) -> Result<HttpServer> {
        let server = tiny_http::Server::http(addr).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Io(std::io::Error::other("http server is not bound to an IP address")))?;
        let server = Arc::new(server);
        let workers = (0..workers.max(1))
            .map(|_| {
                let s = server.clone();
                let k = kernel.clone();
                std::thread::spawn(move || {
                    for req in s.incoming_requests() {
                        handle_request(&k, req);
                    }
                })
            })
            .collect();
        Ok(HttpServer { server, workers, addr })
    }

    pub fn stop(self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers {
            let _ = w.join();
        }
    }

    /// Block until the workers exit.
    pub fn join(self) {
        for w in self.workers {
            let _ = w.join();
        }
    }
}
