//! JSON-over-HTTP wire frames.
//!
//! `POST {address}/v1/{route}` with a [`WireRequest`] body; a 200 reply
//! carries a [`WireResponse`]. Field order here is the serialized order.

use std::fmt;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{GatewayError, NormBox, Request};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Vqa,
    Generate,
    Tag,
    Detect,
    Caption,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::Vqa => "vqa",
            Route::Generate => "generate",
            Route::Tag => "tag",
            Route::Detect => "detect",
            Route::Caption => "caption",
        }
    }

    pub fn path(self) -> String {
        format!("/v1/{}", self.as_str())
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub image_id: Option<String>,
    pub image_b64: Option<String>,
    pub prompt: Option<String>,
    pub tag: Option<String>,
}

impl WireRequest {
    /// Encodes a request, inlining image bytes when the reference has a path.
    pub fn encode(request: &Request) -> Result<Self, GatewayError> {
        let image_b64 = match request.image.as_ref().and_then(|i| i.path.as_ref()) {
            Some(path) => {
                let bytes = std::fs::read(path)
                    .map_err(|e| GatewayError::InvalidRequest(format!("cannot read image {}: {e}", path.display())))?;
                Some(base64::engine::general_purpose::STANDARD.encode(bytes))
            }
            None => None,
        };
        Ok(Self {
            image_id: request.image.as_ref().map(|i| i.image_id.clone()),
            image_b64,
            prompt: request.prompt.clone(),
            tag: request.tag.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("wire request serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub tag: String,
    pub score: f64,
    #[serde(rename = "box", default)]
    pub bbox: Option<NormBox>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub tags: Option<Vec<String>>,
    #[serde(default)]
    pub detections: Option<Vec<WireDetection>>,
    #[serde(default)]
    pub latency_ms: f64,
}

impl WireResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: Some(text.into()), ..Default::default() }
    }

    pub fn tags(tags: Vec<String>) -> Self {
        Self { tags: Some(tags), ..Default::default() }
    }

    pub fn detections(detections: Vec<WireDetection>) -> Self {
        Self { detections: Some(detections), ..Default::default() }
    }
}
