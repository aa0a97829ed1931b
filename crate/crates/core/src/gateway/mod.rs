//! Uniform access to the model roles the correction pipeline consumes.
//!
//! Every model call goes through an [`Endpoint`], which pairs a
//! [`BackendEndpoint`] description with a [`Backend`] implementation. Two
//! backends ship with the crate: [`http::HttpBackend`] speaks the JSON wire
//! protocol in [`wire`], and the fixture backends in [`fixture`] answer from
//! deterministic scenario files so that every decision rule can be exercised
//! offline.

pub mod fixture;
pub mod http;
pub mod wire;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::SentenceSplitter;
pub use wire::{Route, WireDetection, WireRequest, WireResponse};

/// Prompt sent to every binary existence verifier.
pub const VQA_PROMPT_PREFIX: &str = "Is there a ";
pub const VQA_PROMPT_SUFFIX: &str = " in the image? Please answer only with yes or no.";
/// Prompt sent to the object captioner.
pub const CAPTION_PROMPT_PREFIX: &str = "Describe the ";
pub const CAPTION_PROMPT_SUFFIX: &str = " in the image with only one sentence.";

pub fn vqa_prompt(entity: &str) -> String {
    format!("{VQA_PROMPT_PREFIX}{entity}{VQA_PROMPT_SUFFIX}")
}

pub fn caption_prompt(tag: &str) -> String {
    format!("{CAPTION_PROMPT_PREFIX}{tag}{CAPTION_PROMPT_SUFFIX}")
}

/// Recovers the entity from a prompt built by [`vqa_prompt`].
pub fn entity_from_vqa_prompt(prompt: &str) -> Option<&str> {
    prompt.strip_prefix(VQA_PROMPT_PREFIX)?.strip_suffix(VQA_PROMPT_SUFFIX).filter(|e| !e.is_empty())
}

/// Recovers the tag from a prompt built by [`caption_prompt`].
pub fn tag_from_caption_prompt(prompt: &str) -> Option<&str> {
    prompt.strip_prefix(CAPTION_PROMPT_PREFIX)?.strip_suffix(CAPTION_PROMPT_SUFFIX).filter(|t| !t.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendRole {
    BinaryVqa,
    TextGen,
    Tagger,
    Detector,
    Captioner,
}

impl BackendRole {
    pub fn route(self) -> Route {
        match self {
            BackendRole::BinaryVqa => Route::Vqa,
            BackendRole::TextGen => Route::Generate,
            BackendRole::Tagger => Route::Tag,
            BackendRole::Detector => Route::Detect,
            BackendRole::Captioner => Route::Caption,
        }
    }
}

impl fmt::Display for BackendRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            BackendRole::BinaryVqa => "binary_vqa",
            BackendRole::TextGen => "text_gen",
            BackendRole::Tagger => "tagger",
            BackendRole::Detector => "detector",
            BackendRole::Captioner => "captioner",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    Http,
    Fixture,
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// Static description of one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub id: String,
    pub role: BackendRole,
    pub transport: Transport,
    /// Base URL for [`Transport::Http`], scenario or script file for [`Transport::Fixture`].
    pub address: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub max_retries: u32,
}

impl BackendEndpoint {
    pub fn fixture(id: impl Into<String>, role: BackendRole, address: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            role,
            transport: Transport::Fixture,
            address: address.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: 0,
        }
    }

    pub fn http(id: impl Into<String>, role: BackendRole, url: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            role,
            transport: Transport::Http,
            address: url.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: 0,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.id.trim().is_empty() {
            return Err(GatewayError::Config("endpoint id must be nonempty".into()));
        }
        if self.timeout_ms == 0 {
            return Err(GatewayError::Config(format!("endpoint {}: timeout_ms must be positive", self.id)));
        }
        match self.transport {
            Transport::Http => {
                let url = reqwest::Url::parse(&self.address).map_err(|e| {
                    GatewayError::Config(format!("endpoint {}: invalid url {:?}: {e}", self.id, self.address))
                })?;
                if !matches!(url.scheme(), "http" | "https") {
                    return Err(GatewayError::Config(format!(
                        "endpoint {}: unsupported url scheme {}",
                        self.id,
                        url.scheme()
                    )));
                }
            }
            Transport::Fixture => {
                if !std::path::Path::new(&self.address).is_file() {
                    return Err(GatewayError::Config(format!(
                        "endpoint {}: fixture file {} does not exist",
                        self.id, self.address
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Image handle passed through to backends. The pipeline never decodes pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl ImageRef {
    pub fn new(image_id: impl Into<String>) -> Self {
        Self { image_id: image_id.into(), path: None }
    }

    pub fn with_path(image_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self { image_id: image_id.into(), path: Some(path.into()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerValue {
    Yes,
    No,
    Unparseable,
}

/// A verifier reply and its parsed yes/no value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryAnswer {
    pub value: AnswerValue,
    pub raw_text: String,
}

impl BinaryAnswer {
    /// Parses free text: the earliest whole-word `yes` or `no` token decides.
    ///
    /// Tokens are maximal runs of alphanumeric characters, compared
    /// case-insensitively, so "nothing" or "cannot" never count as "no".
    pub fn parse(raw: &str) -> Self {
        let value = raw
            .split(|c: char| !c.is_alphanumeric())
            .find_map(|token| {
                if token.eq_ignore_ascii_case("yes") {
                    Some(AnswerValue::Yes)
                } else if token.eq_ignore_ascii_case("no") {
                    Some(AnswerValue::No)
                } else {
                    None
                }
            })
            .unwrap_or(AnswerValue::Unparseable);
        Self { value, raw_text: raw.to_string() }
    }

    pub fn is_yes(&self) -> bool {
        self.value == AnswerValue::Yes
    }
}

/// Bounding box `(x, y, w, h)`, normalized to the image size.
pub type NormBox = [f64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCandidate {
    pub tag: String,
    pub score: f64,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<NormBox>,
}

impl DetectionCandidate {
    pub fn undetected(tag: impl Into<String>) -> Self {
        Self { tag: tag.into(), score: 0.0, bbox: None }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        if let Some([x, y, w, h]) = self.bbox {
            let in_unit = [x, y, w, h].iter().all(|v| (0.0..=1.0).contains(v));
            if !in_unit || w <= 0.0 || h <= 0.0 {
                return Err(format!("box {:?} not a normalized nonempty box", [x, y, w, h]));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("endpoint {endpoint}: transport error: {message}")]
    Transport { endpoint: String, message: String },
    #[error("endpoint {endpoint}: timed out after {timeout_ms} ms")]
    Timeout { endpoint: String, timeout_ms: u64 },
    #[error("endpoint {endpoint}: empty response")]
    EmptyResponse { endpoint: String },
    #[error("endpoint {endpoint} has role {actual}, expected {expected}")]
    RoleMismatch { endpoint: String, expected: BackendRole, actual: BackendRole },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("endpoint configuration: {0}")]
    Config(String),
    #[error("fixture: {0}")]
    Fixture(String),
}

impl GatewayError {
    pub fn transport(endpoint: &BackendEndpoint, message: impl Into<String>) -> Self {
        GatewayError::Transport { endpoint: endpoint.id.clone(), message: message.into() }
    }
}

/// Request as seen by a backend, before wire encoding.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Request {
    pub image: Option<ImageRef>,
    pub prompt: Option<String>,
    pub tag: Option<String>,
}

/// A transport able to serve model calls.
pub trait Backend: Send + Sync {
    fn call(&self, endpoint: &BackendEndpoint, route: Route, request: &Request) -> Result<WireResponse, GatewayError>;
}

/// Shareable handle to one configured backend.
///
/// Cloning is cheap; clones share the call counter.
#[derive(Clone)]
pub struct Endpoint {
    spec: Arc<BackendEndpoint>,
    backend: Arc<dyn Backend>,
    calls: Arc<AtomicU64>,
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Endpoint")
            .field("id", &self.spec.id)
            .field("role", &self.spec.role)
            .field("calls", &self.call_count())
            .finish()
    }
}

impl Endpoint {
    pub fn new(spec: BackendEndpoint, backend: Arc<dyn Backend>) -> Self {
        Self { spec: Arc::new(spec), backend, calls: Arc::new(AtomicU64::new(0)) }
    }

    /// Validates `spec` and builds the backend its transport names.
    pub fn connect(spec: BackendEndpoint) -> Result<Self, GatewayError> {
        spec.validate()?;
        let backend: Arc<dyn Backend> = match spec.transport {
            Transport::Http => Arc::new(http::HttpBackend::new(&spec)?),
            Transport::Fixture => match spec.role {
                BackendRole::TextGen => Arc::new(fixture::TextGenFixture::load(&spec.address)?),
                _ => Arc::new(fixture::SceneFixture::load(&spec.address)?),
            },
        };
        Ok(Self::new(spec, backend))
    }

    pub fn spec(&self) -> &BackendEndpoint {
        &self.spec
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn role(&self) -> BackendRole {
        self.spec.role
    }

    /// Number of requests issued through this handle and its clones.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn request(&self, expected: BackendRole, request: Request) -> Result<WireResponse, GatewayError> {
        if self.spec.role != expected {
            return Err(GatewayError::RoleMismatch {
                endpoint: self.spec.id.clone(),
                expected,
                actual: self.spec.role,
            });
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.backend.call(&self.spec, expected.route(), &request)
    }

    fn empty(&self) -> GatewayError {
        GatewayError::EmptyResponse { endpoint: self.spec.id.clone() }
    }

    pub fn query_binary_vqa(&self, image: &ImageRef, entity: &str) -> Result<BinaryAnswer, GatewayError> {
        if entity.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("entity must be nonempty".into()));
        }
        let response = self.request(
            BackendRole::BinaryVqa,
            Request { image: Some(image.clone()), prompt: Some(vqa_prompt(entity)), tag: None },
        )?;
        let text = response.text.ok_or_else(|| self.empty())?;
        Ok(BinaryAnswer::parse(&text))
    }

    /// Returns the generated text with trailing whitespace removed.
    ///
    /// An empty string is a valid reply; only a missing `text` field is an
    /// [`GatewayError::EmptyResponse`].
    pub fn generate_text(&self, prompt: &str) -> Result<String, GatewayError> {
        if prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt must be nonempty".into()));
        }
        let response =
            self.request(BackendRole::TextGen, Request { prompt: Some(prompt.to_string()), ..Default::default() })?;
        let text = response.text.ok_or_else(|| self.empty())?;
        Ok(text.trim_end().to_string())
    }

    /// Lowercased, deduplicated tags in backend order.
    pub fn tag_image(&self, image: &ImageRef) -> Result<Vec<String>, GatewayError> {
        let response =
            self.request(BackendRole::Tagger, Request { image: Some(image.clone()), ..Default::default() })?;
        let mut tags: Vec<String> = Vec::new();
        for raw in response.tags.unwrap_or_default() {
            let tag = raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
            if !tag.is_empty() && !tags.contains(&tag) {
                tags.push(tag);
            }
        }
        Ok(tags)
    }

    /// Highest-confidence detection for `tag`, or a zero-score candidate.
    pub fn detect(&self, image: &ImageRef, tag: &str) -> Result<DetectionCandidate, GatewayError> {
        if tag.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("tag must be nonempty".into()));
        }
        let response = self.request(
            BackendRole::Detector,
            Request { image: Some(image.clone()), tag: Some(tag.to_string()), ..Default::default() },
        )?;
        let mut best = DetectionCandidate::undetected(tag);
        for det in response.detections.unwrap_or_default() {
            let candidate = DetectionCandidate { tag: tag.to_string(), score: det.score, bbox: det.bbox };
            candidate.validate().map_err(|e| GatewayError::transport(&self.spec, format!("bad detection: {e}")))?;
            if candidate.score > best.score {
                best = candidate;
            }
        }
        Ok(best)
    }

    /// One-sentence description of `tag`, terminated with punctuation.
    pub fn caption_object(&self, image: &ImageRef, tag: &str) -> Result<String, GatewayError> {
        let response = self.request(
            BackendRole::Captioner,
            Request { image: Some(image.clone()), prompt: Some(caption_prompt(tag)), ..Default::default() },
        )?;
        let text = response.text.ok_or_else(|| self.empty())?;
        let first = SentenceSplitter::default().split(&text).into_iter().next().ok_or_else(|| self.empty())?;
        Ok(ensure_terminal(first))
    }
}

fn ensure_terminal(mut sentence: String) -> String {
    if !sentence.ends_with(['.', '!', '?']) {
        sentence.push('.');
    }
    sentence
}
