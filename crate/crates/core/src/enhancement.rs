//! Critical-object identification and description.
//!
//! The tagger proposes objects, the detector confirms each one at threshold
//! `alpha`, and confirmed objects that cross-checking did not already keep
//! are described by the captioner. Every tag is processed; a rejected or
//! already-present tag never stops the loop.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crosscheck::VerdictLedger;
use crate::gateway::{Endpoint, GatewayError, ImageRef};
use crate::text::Canonicalizer;
use crate::timing::{StageTimings, Step};

pub const DEFAULT_ALPHA: f64 = 0.35;

/// Prefix introducing the appended object descriptions.
pub const ADDITIONAL_INFO_PREFIX: &str = "Some additional information includes:";

pub const DEFAULT_TRAFFIC_ALLOWLIST: &[&str] = &[
    "pedestrian",
    "person",
    "cyclist",
    "motorcycle",
    "bicycle",
    "car",
    "truck",
    "bus",
    "traffic light",
    "traffic sign",
    "traffic cone",
    "animal",
    "barrier",
    "stroller",
];

pub fn default_allowlist() -> BTreeSet<String> {
    DEFAULT_TRAFFIC_ALLOWLIST.iter().map(|s| s.to_string()).collect()
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_allowlist")]
    pub traffic_allowlist: BTreeSet<String>,
    #[serde(default = "default_true")]
    pub allowlist_enabled: bool,
}

impl Default for EnhancementConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, traffic_allowlist: default_allowlist(), allowlist_enabled: true }
    }
}

impl EnhancementConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(format!("alpha {} must lie in (0, 1)", self.alpha));
        }
        Ok(())
    }

    pub fn allows(&self, tag: &str, canon: &Canonicalizer) -> bool {
        if !self.allowlist_enabled {
            return true;
        }
        let tag = canon.canonicalize(tag);
        self.traffic_allowlist.iter().any(|a| canon.canonicalize(a) == tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTag {
    pub tag: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectDescription {
    pub tag: String,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionFailure {
    pub tag: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnhancementResult {
    /// Tags the allowlist filtered out before detection.
    pub excluded_by_allowlist: Vec<String>,
    /// Tags with detector score at or above alpha, in tagger order.
    pub retained_tags: Vec<ScoredTag>,
    pub rejected_below_threshold: Vec<ScoredTag>,
    /// Retained tags already kept by cross-checking.
    pub skipped_already_present: Vec<String>,
    /// Retained tags awaiting description.
    pub to_describe: Vec<String>,
    pub described: Vec<ObjectDescription>,
    pub caption_failures: Vec<CaptionFailure>,
}

#[derive(Debug, Error)]
#[error("{step} for tag {tag:?}: {source}")]
pub struct EnhancementError {
    pub step: Step,
    pub tag: Option<String>,
    #[source]
    pub source: GatewayError,
}

pub fn identify_critical_objects(
    image: &ImageRef,
    ledger: &VerdictLedger,
    cfg: &EnhancementConfig,
    tagger: &Endpoint,
    detector: &Endpoint,
    canon: &Canonicalizer,
) -> Result<EnhancementResult, EnhancementError> {
    identify_critical_objects_timed(image, ledger, cfg, tagger, detector, canon, &mut StageTimings::new())
}

pub fn identify_critical_objects_timed(
    image: &ImageRef,
    ledger: &VerdictLedger,
    cfg: &EnhancementConfig,
    tagger: &Endpoint,
    detector: &Endpoint,
    canon: &Canonicalizer,
    timings: &mut StageTimings,
) -> Result<EnhancementResult, EnhancementError> {
    let tags = timings.time(Step::Tag, || tagger.tag_image(image)).map_err(|source| EnhancementError {
        step: Step::Tag,
        tag: None,
        source,
    })?;
    let present: BTreeSet<String> = ledger.present().map(|e| canon.canonicalize(e)).collect();
    let mut result = EnhancementResult::default();
    for tag in tags {
        if !cfg.allows(&tag, canon) {
            result.excluded_by_allowlist.push(tag);
            continue;
        }
        let start = Instant::now();
        let detection = detector.detect(image, &tag);
        timings.add(Step::Detect, start.elapsed());
        let detection =
            detection.map_err(|source| EnhancementError { step: Step::Detect, tag: Some(tag.clone()), source })?;
        let scored = ScoredTag { tag: tag.clone(), score: detection.score };
        if detection.score < cfg.alpha {
            result.rejected_below_threshold.push(scored);
            continue;
        }
        result.retained_tags.push(scored);
        if present.contains(&canon.canonicalize(&tag)) {
            result.skipped_already_present.push(tag);
        } else {
            result.to_describe.push(tag);
        }
    }
    Ok(result)
}

/// Describes every pending tag; a failed description is recorded and skipped.
pub fn describe_objects(image: &ImageRef, result: &mut EnhancementResult, captioner: &Endpoint) {
    describe_objects_timed(image, result, captioner, &mut StageTimings::new())
}

pub fn describe_objects_timed(
    image: &ImageRef,
    result: &mut EnhancementResult,
    captioner: &Endpoint,
    timings: &mut StageTimings,
) {
    for tag in &result.to_describe {
        let start = Instant::now();
        let caption = captioner.caption_object(image, tag);
        timings.add(Step::Describe, start.elapsed());
        match caption {
            Ok(sentence) => result.described.push(ObjectDescription { tag: tag.clone(), sentence }),
            Err(e) => result.caption_failures.push(CaptionFailure { tag: tag.clone(), error: e.to_string() }),
        }
    }
}

/// Appends the object descriptions after [`ADDITIONAL_INFO_PREFIX`].
pub fn merge_final(corrected_caption: &str, result: &EnhancementResult) -> String {
    if result.described.is_empty() {
        return corrected_caption.to_string();
    }
    let descriptions: Vec<&str> = result.described.iter().map(|d| d.sentence.as_str()).collect();
    let suffix = format!("{ADDITIONAL_INFO_PREFIX} {}", descriptions.join(" "));
    if corrected_caption.is_empty() {
        suffix
    } else {
        format!("{corrected_caption} {suffix}")
    }
}
