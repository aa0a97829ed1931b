//! Blocking HTTP adapter for live backends.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::CONTENT_TYPE;
use reqwest::StatusCode;

use super::{Backend, BackendEndpoint, GatewayError, Request, Route, WireRequest, WireResponse};

/// Fixed pause between attempts.
pub const RETRY_BACKOFF: Duration = Duration::from_millis(200);

pub struct HttpBackend {
    client: Client,
}

enum Failure {
    Retryable(GatewayError),
    Fatal(GatewayError),
}

impl HttpBackend {
    pub fn new(endpoint: &BackendEndpoint) -> Result<Self, GatewayError> {
        let client = Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Config(format!("endpoint {}: {e}", endpoint.id)))?;
        Ok(Self { client })
    }

    fn attempt(&self, endpoint: &BackendEndpoint, url: &str, body: &[u8]) -> Result<WireResponse, Failure> {
        let response =
            self.client.post(url).header(CONTENT_TYPE, "application/json").body(body.to_vec()).send().map_err(|e| {
                if e.is_timeout() {
                    Failure::Retryable(GatewayError::Timeout {
                        endpoint: endpoint.id.clone(),
                        timeout_ms: endpoint.timeout_ms,
                    })
                } else {
                    Failure::Retryable(GatewayError::transport(endpoint, e.to_string()))
                }
            })?;
        let status = response.status();
        if status != StatusCode::OK {
            let err = GatewayError::transport(endpoint, format!("HTTP {status} from {url}"));
            return Err(if status.is_server_error() { Failure::Retryable(err) } else { Failure::Fatal(err) });
        }
        let bytes = response.bytes().map_err(|e| {
            if e.is_timeout() {
                Failure::Retryable(GatewayError::Timeout {
                    endpoint: endpoint.id.clone(),
                    timeout_ms: endpoint.timeout_ms,
                })
            } else {
                Failure::Retryable(GatewayError::transport(endpoint, e.to_string()))
            }
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Failure::Fatal(GatewayError::transport(endpoint, format!("malformed response: {e}"))))
    }
}

impl Backend for HttpBackend {
    fn call(&self, endpoint: &BackendEndpoint, route: Route, request: &Request) -> Result<WireResponse, GatewayError> {
        let url = format!("{}{}", endpoint.address.trim_end_matches('/'), route.path());
        let body = WireRequest::encode(request)?.to_bytes();
        let mut attempt = 0;
        loop {
            match self.attempt(endpoint, &url, &body) {
                Ok(response) => return Ok(response),
                Err(Failure::Fatal(err)) => return Err(err),
                Err(Failure::Retryable(err)) => {
                    if attempt >= endpoint.max_retries {
                        return Err(err);
                    }
                    attempt += 1;
                    thread::sleep(RETRY_BACKOFF);
                }
            }
        }
    }
}
