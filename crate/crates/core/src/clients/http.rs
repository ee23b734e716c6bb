use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{self, ErrorBody};
use super::{
    check_batch, require_text, require_texts, ClientError, Completer, Decode, Embedder,
    EmbeddingVector, PolarityClassifier, PolarityVerdict, ReactionGenerator,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceEndpoint {
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Never serialized into manifests.
    #[serde(skip)]
    pub auth_token: Option<String>,
    /// Fixed pause between attempts.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    100
}

impl InferenceEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            auth_token: None,
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be positive".into());
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(format!(
                "base_url `{}` is not an http(s) URL",
                self.base_url
            ));
        }
        Ok(())
    }
}

/// Blocking JSON client for one endpoint. Cheap to clone and safe to share
/// across worker threads; every call is an independent request/response.
#[derive(Debug, Clone)]
pub struct HttpClient {
    endpoint: InferenceEndpoint,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(endpoint: InferenceEndpoint) -> Result<Self, ClientError> {
        endpoint.validate().map_err(ClientError::Precondition)?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build();
        Ok(Self { endpoint, agent })
    }

    pub fn endpoint(&self) -> &InferenceEndpoint {
        &self.endpoint
    }

    fn url(&self, route: &str) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), route)
    }

    /// Sends `body` to `route`, retrying timeouts, non-2xx replies and
    /// undecodable bodies. A failing endpoint sees exactly
    /// `max_retries + 1` attempts.
    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        route: &str,
        body: &Req,
    ) -> Result<Resp, ClientError> {
        let url = self.url(route);
        let attempts = self.endpoint.max_retries + 1;
        let mut cause = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 && self.endpoint.backoff_ms > 0 {
                std::thread::sleep(Duration::from_millis(self.endpoint.backoff_ms));
            }
            let mut req = self
                .agent
                .post(&url)
                .set("Content-Type", "application/json");
            if let Some(token) = &self.endpoint.auth_token {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
            match req.send_json(body) {
                Ok(resp) => match resp.into_json::<Resp>() {
                    Ok(v) => return Ok(v),
                    Err(e) => cause = format!("malformed response body: {e}"),
                },
                Err(ureq::Error::Status(code, resp)) => {
                    let detail = resp
                        .into_json::<ErrorBody>()
                        .map(|b| b.error)
                        .unwrap_or_else(|_| "no error body".into());
                    cause = format!("status {code}: {detail}");
                }
                Err(ureq::Error::Transport(t)) => cause = format!("transport: {t}"),
            }
        }
        Err(ClientError::Request {
            endpoint: url,
            attempts,
            cause,
        })
    }
}

impl ReactionGenerator for HttpClient {
    fn generate_reaction(&self, document_text: &str) -> Result<String, ClientError> {
        require_text("document text", document_text)?;
        let resp: wire::GenerateResponse = self.post(
            wire::GENERATE,
            &wire::GenerateRequest {
                text: document_text.to_string(),
                relation: wire::XREACT.to_string(),
            },
        )?;
        Ok(resp.reaction.trim().to_string())
    }
}

impl Embedder for HttpClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ClientError> {
        require_texts(texts)?;
        let resp: wire::EmbedResponse = self.post(
            wire::EMBED,
            &wire::EmbedRequest {
                texts: texts.to_vec(),
            },
        )?;
        check_batch(texts.len(), &resp.vectors, Some(resp.dim))?;
        Ok(resp.vectors)
    }
}

impl PolarityClassifier for HttpClient {
    fn classify_polarity(&self, document_text: &str) -> Result<PolarityVerdict, ClientError> {
        require_text("document text", document_text)?;
        let resp: wire::PolarityResponse = self.post(
            wire::POLARITY,
            &wire::PolarityRequest {
                text: document_text.to_string(),
            },
        )?;
        if !(0.0..=1.0).contains(&resp.confidence) {
            return Err(ClientError::Request {
                endpoint: self.url(wire::POLARITY),
                attempts: 1,
                cause: format!("confidence {} outside [0, 1]", resp.confidence),
            });
        }
        Ok(PolarityVerdict {
            label: resp.label,
            confidence: resp.confidence,
        })
    }
}

impl Completer for HttpClient {
    fn complete(&self, instruction: &str, decode: Decode) -> Result<String, ClientError> {
        require_text("instruction", instruction)?;
        let resp: wire::CompleteResponse = self.post(
            wire::COMPLETE,
            &wire::CompleteRequest {
                instruction: instruction.to_string(),
                decode,
            },
        )?;
        Ok(resp.output)
    }
}
