//! Deterministic offline backends.
//!
//! [`SceneFixture`] serves the vision roles (binary VQA, tagger, detector,
//! captioner) from [`FixtureScenario`] records. [`TextGenFixture`] serves the
//! text generator by echoing, by prompt-hash lookup, or by a rule-based
//! simulation that reads the structured queries our own prompt templates
//! end with.
//!
//! Every reply is a pure function of the scenario, its seed and the request;
//! VQA noise comes from a keyed hash, never from shared RNG state.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    entity_from_vqa_prompt, tag_from_caption_prompt, Backend, BackendEndpoint, GatewayError, Request, Route,
    WireDetection, WireResponse,
};
use crate::prompts;
use crate::text::Canonicalizer;

/// Detector threshold that scenario captions must cover.
pub const CAPTION_COVERAGE_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureScenario {
    pub image_id: String,
    pub present_objects: BTreeSet<String>,
    /// Tagger output in order, with the detector score for each tag.
    pub tag_pool: Vec<(String, f64)>,
    pub object_captions: BTreeMap<String, String>,
    #[serde(default)]
    pub vqa_error_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl FixtureScenario {
    /// Human-readable invariant violations; empty when the scenario is valid.
    pub fn issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.image_id.trim().is_empty() {
            issues.push("image_id is empty".to_string());
        }
        if self.present_objects.is_empty() {
            issues.push(format!("{}: present_objects is empty", self.image_id));
        }
        if !(0.0..1.0).contains(&self.vqa_error_rate) {
            issues.push(format!("{}: vqa_error_rate {} outside [0, 1)", self.image_id, self.vqa_error_rate));
        }
        for (tag, score) in &self.tag_pool {
            if !(0.0..=1.0).contains(score) {
                issues.push(format!("{}: tag {tag:?} score {score} outside [0, 1]", self.image_id));
            }
            if *score >= CAPTION_COVERAGE_THRESHOLD && !self.object_captions.contains_key(tag) {
                issues.push(format!("{}: tag {tag:?} scores {score} but has no caption", self.image_id));
            }
        }
        issues
    }
}

/// Uniform draw in `[0, 1)` keyed by scenario seed, image, entity and endpoint.
pub fn noise_draw(seed: u64, image_id: &str, entity: &str, endpoint_id: &str) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_be_bytes());
    for part in [image_id, entity, endpoint_id] {
        hasher.update([0x1f]);
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

/// Vision-role fixture keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct SceneFixture {
    scenarios: BTreeMap<String, FixtureScenario>,
    canon: Canonicalizer,
}

pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<FixtureScenario>, GatewayError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::Fixture(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))
}

impl SceneFixture {
    pub fn new(scenarios: impl IntoIterator<Item = FixtureScenario>) -> Result<Self, GatewayError> {
        let mut map = BTreeMap::new();
        for s in scenarios {
            let id = s.image_id.clone();
            if map.insert(id.clone(), s).is_some() {
                return Err(GatewayError::Fixture(format!("duplicate scenario for image {id}")));
            }
        }
        Ok(Self { scenarios: map, canon: Canonicalizer::default() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        Self::new(load_scenarios(path)?)
    }

    pub fn scenario(&self, image_id: &str) -> Option<&FixtureScenario> {
        self.scenarios.get(image_id)
    }

    /// Noise-free membership answer for `entity`.
    pub fn is_present(&self, scenario: &FixtureScenario, entity: &str) -> bool {
        let target = self.canon.canonicalize(entity);
        scenario.present_objects.iter().any(|p| self.canon.canonicalize(p) == target)
    }

    fn lookup(&self, endpoint: &BackendEndpoint, request: &Request) -> Result<&FixtureScenario, GatewayError> {
        let image = request
            .image
            .as_ref()
            .ok_or_else(|| GatewayError::InvalidRequest("fixture request without image".into()))?;
        self.scenarios
            .get(&image.image_id)
            .ok_or_else(|| GatewayError::transport(endpoint, format!("unknown image {}", image.image_id)))
    }
}

impl Backend for SceneFixture {
    fn call(&self, endpoint: &BackendEndpoint, route: Route, request: &Request) -> Result<WireResponse, GatewayError> {
        let scenario = self.lookup(endpoint, request)?;
        match route {
            Route::Vqa => {
                let prompt = request.prompt.as_deref().unwrap_or_default();
                let entity = entity_from_vqa_prompt(prompt)
                    .ok_or_else(|| GatewayError::transport(endpoint, format!("unrecognized prompt {prompt:?}")))?;
                let mut present = self.is_present(scenario, entity);
                let draw = noise_draw(scenario.seed, &scenario.image_id, entity, &endpoint.id);
                if draw < scenario.vqa_error_rate {
                    present = !present;
                }
                Ok(WireResponse::text(if present { "Yes" } else { "No" }))
            }
            Route::Tag => Ok(WireResponse::tags(scenario.tag_pool.iter().map(|(t, _)| t.clone()).collect())),
            Route::Detect => {
                let tag = request.tag.as_deref().unwrap_or_default();
                let target = self.canon.canonicalize(tag);
                let detections = scenario
                    .tag_pool
                    .iter()
                    .filter(|(t, _)| self.canon.canonicalize(t) == target)
                    .map(|(t, score)| WireDetection { tag: t.clone(), score: *score, bbox: None })
                    .collect();
                Ok(WireResponse::detections(detections))
            }
            Route::Caption => {
                let prompt = request.prompt.as_deref().unwrap_or_default();
                let tag = tag_from_caption_prompt(prompt)
                    .ok_or_else(|| GatewayError::transport(endpoint, format!("unrecognized prompt {prompt:?}")))?;
                Ok(WireResponse { text: scenario.object_captions.get(tag).cloned(), ..Default::default() })
            }
            Route::Generate => Err(GatewayError::transport(endpoint, "scene fixture does not serve text generation")),
        }
    }
}

/// Text-generation fixture file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TextGenScript {
    /// Reply with the prompt itself.
    Echo,
    /// Reply looked up by [`prompt_key`] of the prompt.
    Scripted { replies: BTreeMap<String, String> },
    /// Rule-based stand-in for an instruction-following model over a closed object lexicon.
    Simulated { lexicon: Vec<String> },
}

/// Lookup key for scripted replies: SHA-256 hex of the prompt bytes.
pub fn prompt_key(prompt: &str) -> String {
    crate::hash_hex(prompt.as_bytes())
}

#[derive(Debug, Clone)]
pub struct TextGenFixture {
    script: TextGenScript,
    simulator: Option<SimulatedLlm>,
}

impl TextGenFixture {
    pub fn new(script: TextGenScript) -> Self {
        let simulator = match &script {
            TextGenScript::Simulated { lexicon } => Some(SimulatedLlm::new(lexicon)),
            _ => None,
        };
        Self { script, simulator }
    }

    pub fn echo() -> Self {
        Self::new(TextGenScript::Echo)
    }

    pub fn scripted(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let replies = pairs.into_iter().map(|(p, r)| (prompt_key(&p), r)).collect();
        Self::new(TextGenScript::Scripted { replies })
    }

    pub fn simulated<S: AsRef<str>>(lexicon: impl IntoIterator<Item = S>) -> Self {
        Self::new(TextGenScript::Simulated { lexicon: lexicon.into_iter().map(|s| s.as_ref().to_string()).collect() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Fixture(format!("cannot read {}: {e}", path.display())))?;
        let script =
            serde_json::from_str(&raw).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self::new(script))
    }

    pub fn script(&self) -> &TextGenScript {
        &self.script
    }

    pub fn respond(&self, prompt: &str) -> Option<String> {
        match &self.script {
            TextGenScript::Echo => Some(prompt.to_string()),
            TextGenScript::Scripted { replies } => replies.get(&prompt_key(prompt)).cloned(),
            TextGenScript::Simulated { .. } => self.simulator.as_ref().and_then(|s| s.respond(prompt)),
        }
    }
}

impl Backend for TextGenFixture {
    fn call(&self, endpoint: &BackendEndpoint, route: Route, request: &Request) -> Result<WireResponse, GatewayError> {
        if route != Route::Generate {
            return Err(GatewayError::transport(endpoint, format!("text fixture does not serve {route}")));
        }
        let prompt = request.prompt.as_deref().unwrap_or_default();
        match self.respond(prompt) {
            Some(text) => Ok(WireResponse::text(text)),
            None => Err(GatewayError::transport(endpoint, "fixture has no reply for prompt")),
        }
    }
}

/// Rule-based text model over a closed lexicon of object names.
///
/// Handles the three structured queries of our templates: extraction lists
/// the lexicon objects a sentence mentions; correction drops every clause
/// that mentions a rejected entity; the caption judge answers whether the
/// description mentions the asked object.
#[derive(Debug, Clone)]
pub struct SimulatedLlm {
    canon: Canonicalizer,
    /// Canonical phrases as token sequences, longest first.
    phrases: Vec<Vec<String>>,
}

impl SimulatedLlm {
    pub fn new<S: AsRef<str>>(lexicon: &[S]) -> Self {
        let canon = Canonicalizer::default();
        let mut phrases: Vec<Vec<String>> = lexicon
            .iter()
            .map(|p| canon.canonicalize(p.as_ref()).split(' ').map(str::to_string).collect::<Vec<_>>())
            .filter(|p: &Vec<String>| !p.is_empty() && !p[0].is_empty())
            .collect();
        phrases.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        phrases.dedup();
        Self { canon, phrases }
    }

    /// Lexicon objects mentioned in `text`, in order of first mention.
    pub fn mentions(&self, text: &str) -> Vec<String> {
        let tokens = self.canon.word_tokens(text);
        let mut found: Vec<String> = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self.phrases.iter().find(|p| tokens[i..].starts_with(p));
            match hit {
                Some(p) => {
                    let name = p.join(" ");
                    if !found.contains(&name) {
                        found.push(name);
                    }
                    i += p.len();
                }
                None => i += 1,
            }
        }
        found
    }

    pub fn respond(&self, prompt: &str) -> Option<String> {
        if let Some(sentence) = prompts::parse_extraction_query(prompt) {
            let found = self.mentions(sentence);
            return Some(if found.is_empty() { prompts::NO_ENTITIES.to_string() } else { found.join(", ") });
        }
        if let Some((sentence, e1, e2)) = prompts::parse_correction_query(prompt) {
            return Some(self.correct(sentence, e1, e2));
        }
        if let Some((caption, question)) = prompts::parse_judge_query(prompt) {
            let object = question.strip_prefix("Is there a ")?.strip_suffix(" in the image?")?;
            let target = self.canon.canonicalize(object);
            let yes = self.mentions(caption).contains(&target);
            return Some(if yes { "Yes" } else { "No" }.to_string());
        }
        None
    }

    fn parse_list(&self, list: &str) -> BTreeSet<String> {
        if list.trim() == prompts::NO_ENTITIES {
            return BTreeSet::new();
        }
        list.split(',').map(|e| self.canon.canonicalize(e)).filter(|e| !e.is_empty()).collect()
    }

    fn correct(&self, sentence: &str, entity_1: &str, entity_2: &str) -> String {
        let kept = self.parse_list(entity_2);
        let removed: BTreeSet<String> = self.parse_list(entity_1).difference(&kept).cloned().collect();
        if removed.is_empty() {
            return sentence.to_string();
        }
        let body = sentence.trim_end_matches(['.', '!', '?']);
        let clauses: Vec<&str> = body
            .split(", ")
            .flat_map(|c| c.split(" and "))
            .flat_map(|c| c.split(" while "))
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .collect();
        let remaining: Vec<&str> =
            clauses.into_iter().filter(|c| !self.mentions(c).iter().any(|m| removed.contains(m))).collect();
        if remaining.is_empty() {
            return String::new();
        }
        let mut text = match remaining.split_last() {
            Some((last, [])) => last.to_string(),
            Some((last, init)) => format!("{} and {}", init.join(", "), last),
            None => unreachable!(),
        };
        if let Some(first) = text.chars().next() {
            let upper: String = first.to_uppercase().collect();
            text.replace_range(..first.len_utf8(), &upper);
        }
        text.push('.');
        text
    }
}
