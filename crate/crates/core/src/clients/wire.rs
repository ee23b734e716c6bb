//! JSON wire protocol shared by every model service.
//!
//! | route           | request                                   | response                             |
//! |-----------------|-------------------------------------------|--------------------------------------|
//! | `/v1/generate`  | `{"text", "relation": "xReact"}`          | `{"reaction"}`                       |
//! | `/v1/embed`     | `{"texts": [..]}`                         | `{"vectors": [[..]], "dim"}`         |
//! | `/v1/polarity`  | `{"text"}`                                | `{"label", "confidence"}`            |
//! | `/v1/complete`  | `{"instruction", "decode": {"mode"..}}`   | `{"output"}`                         |
//!
//! Failures are a non-2xx status with body `{"error": string}`.
//!
//! [`dispatch`] maps a request onto any [`Clients`] bundle, and [`serve`]
//! exposes it over HTTP so the mock can stand in for a real service.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use super::{ClientError, Clients, Decode, EmbeddingVector, Polarity};

pub const GENERATE: &str = "/v1/generate";
pub const EMBED: &str = "/v1/embed";
pub const POLARITY: &str = "/v1/polarity";
pub const COMPLETE: &str = "/v1/complete";

pub const XREACT: &str = "xReact";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub text: String,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub reaction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<EmbeddingVector>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarityRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarityResponse {
    pub label: Polarity,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteRequest {
    pub instruction: String,
    pub decode: Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Handles one request body for `path`. Returns the HTTP status and JSON body.
pub fn dispatch(clients: &Clients, path: &str, body: &[u8]) -> (u16, String) {
    fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, (u16, String)> {
        serde_json::from_slice(body).map_err(|e| (400, format!("malformed request body: {e}")))
    }
    fn run<T: Serialize>(r: Result<T, ClientError>) -> Result<String, (u16, String)> {
        match r {
            Ok(v) => Ok(serde_json::to_string(&v).expect("response serializes")),
            Err(ClientError::Precondition(m)) => Err((422, m)),
            Err(e) => Err((502, e.to_string())),
        }
    }

    let result = match path {
        GENERATE => parse::<GenerateRequest>(body).and_then(|req| {
            if req.relation != XREACT {
                return Err((422, format!("unsupported relation `{}`", req.relation)));
            }
            run(clients
                .generator
                .generate_reaction(&req.text)
                .map(|reaction| GenerateResponse { reaction }))
        }),
        EMBED => parse::<EmbedRequest>(body).and_then(|req| {
            run(clients
                .embedder
                .embed(&req.texts)
                .map(|vectors| EmbedResponse {
                    dim: vectors.first().map_or(0, EmbeddingVector::dim),
                    vectors,
                }))
        }),
        POLARITY => parse::<PolarityRequest>(body).and_then(|req| {
            run(clients
                .polarity
                .classify_polarity(&req.text)
                .map(|v| PolarityResponse {
                    label: v.label,
                    confidence: v.confidence,
                }))
        }),
        COMPLETE => parse::<CompleteRequest>(body).and_then(|req| {
            run(clients
                .completer
                .complete(&req.instruction, req.decode)
                .map(|output| CompleteResponse { output }))
        }),
        other => Err((404, format!("unknown route `{other}`"))),
    };

    match result {
        Ok(body) => (200, body),
        Err((status, error)) => (
            status,
            serde_json::to_string(&ErrorBody { error }).expect("error serializes"),
        ),
    }
}

/// A running protocol server. Dropping the handle does not stop it; call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(self) {
        self.server.unblock();
        for _ in 1..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers {
            let _ = w.join();
        }
    }

    /// Blocks until the server stops.
    pub fn join(self) {
        for w in self.workers {
            let _ = w.join();
        }
    }
}

/// Serves [`dispatch`] on `addr` (use port 0 for an ephemeral port) with
/// `workers` request threads.
pub fn serve(addr: &str, clients: Clients, workers: usize) -> std::io::Result<ServerHandle> {
    let server = tiny_http::Server::http(addr)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::AddrNotAvailable, e.to_string()))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
    let server = Arc::new(server);
    let workers = (0..workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let clients = clients.clone();
            std::thread::spawn(move || {
                while let Ok(mut request) = server.recv() {
                    let mut body = Vec::new();
                    let (status, payload) =
                        match std::io::Read::read_to_end(request.as_reader(), &mut body) {
                            Ok(_) if *request.method() == tiny_http::Method::Post => {
                                dispatch(&clients, request.url(), &body)
                            }
                            Ok(_) => (
                                405,
                                serde_json::to_string(&ErrorBody {
                                    error: "only POST is supported".into(),
                                })
                                .expect("error serializes"),
                            ),
                            Err(e) => (
                                400,
                                serde_json::to_string(&ErrorBody {
                                    error: format!("unreadable body: {e}"),
                                })
                                .expect("error serializes"),
                            ),
                        };
                    let header = tiny_http::Header::from_bytes(
                        &b"Content-Type"[..],
                        &b"application/json"[..],
                    )
                    .expect("static header");
                    let response = tiny_http::Response::from_string(payload)
                        .with_status_code(status)
                        .with_header(header);
                    let _ = request.respond(response);
                }
            })
        })
        .collect();
    Ok(ServerHandle {
        server,
        addr,
        workers,
    })
}
