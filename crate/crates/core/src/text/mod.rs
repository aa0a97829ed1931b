//! Sentence decomposition and key-entity extraction.

mod canon;
mod split;

pub use canon::{parse_entities, Canonicalizer};
pub use split::{normalize_whitespace, split_sentences, SentenceSplitter, DEFAULT_ABBREVIATIONS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Endpoint, GatewayError, ImageRef};
use crate::prompts;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("malformed extraction reply {0:?}")]
    MalformedReply(String),
    #[error("sentence {index}: {source}")]
    Gateway {
        index: usize,
        #[source]
        source: GatewayError,
    },
    #[error("sentence {index}: malformed extraction reply {reply:?}")]
    MalformedAt { index: usize, reply: String },
    #[error("document is at stage {actual:?}, expected {expected:?}")]
    Stage { expected: DocumentStage, actual: DocumentStage },
    #[error("caption is empty")]
    EmptyDocument,
}

/// Processing stage of a [`CaptionDocument`]; transitions only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentStage {
    Raw,
    Split,
    Extracted,
    Checked,
    Corrected,
    Enhanced,
}

/// Outcome of the correction step for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "snake_case")]
pub enum CorrectedText {
    Unchanged(String),
    Rewritten(String),
    Dropped,
}

impl CorrectedText {
    pub fn text(&self) -> Option<&str> {
        match self {
            CorrectedText::Unchanged(t) | CorrectedText::Rewritten(t) => Some(t),
            CorrectedText::Dropped => None,
        }
    }

    pub fn is_dropped(&self) -> bool {
        matches!(self, CorrectedText::Dropped)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    /// Entities as extracted.
    pub entity_1: Vec<String>,
    /// Entities that survived cross-checking.
    pub entity_2: Vec<String>,
    pub corrected: Option<CorrectedText>,
}

impl Sentence {
    pub fn new(index: usize, text: impl Into<String>) -> Self {
        Self { index, text: text.into(), entity_1: Vec::new(), entity_2: Vec::new(), corrected: None }
    }
}

/// An initial caption and the per-sentence state carried through the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionDocument {
    pub image: ImageRef,
    pub initial_caption: String,
    pub sentences: Vec<Sentence>,
    stage: DocumentStage,
}

impl CaptionDocument {
    pub fn new(image: ImageRef, initial_caption: impl Into<String>) -> Self {
        Self { image, initial_caption: initial_caption.into(), sentences: Vec::new(), stage: DocumentStage::Raw }
    }

    pub fn stage(&self) -> DocumentStage {
        self.stage
    }

    pub fn expect_stage(&self, expected: DocumentStage) -> Result<(), TextError> {
        if self.stage == expected {
            Ok(())
        } else {
            Err(TextError::Stage { expected, actual: self.stage })
        }
    }

    /// Moves the document forward. Panics on a backward transition.
    pub fn advance(&mut self, to: DocumentStage) {
        assert!(to >= self.stage, "stage cannot move from {:?} back to {:?}", self.stage, to);
        self.stage = to;
    }

    pub fn split(&mut self, splitter: &SentenceSplitter) -> Result<(), TextError> {
        self.expect_stage(DocumentStage::Raw)?;
        self.sentences =
            splitter.split(&self.initial_caption).into_iter().enumerate().map(|(i, s)| Sentence::new(i, s)).collect();
        self.advance(DocumentStage::Split);
        Ok(())
    }

    /// Union of `entity_1` over all sentences, in first-occurrence order.
    pub fn entity_union(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in self.sentences.iter().flat_map(|s| s.entity_1.iter()) {
            if !out.contains(e) {
                out.push(e.clone());
            }
        }
        out
    }
}

pub fn build_extraction_prompt(sentence: &str) -> String {
    prompts::extraction_prompt(sentence)
}

/// Fills `entity_1` of every sentence with one TextGen call per sentence.
pub fn extract_entities(doc: &mut CaptionDocument, textgen: &Endpoint, canon: &Canonicalizer) -> Result<(), TextError> {
    doc.expect_stage(DocumentStage::Split)?;
    for sentence in doc.sentences.iter_mut() {
        let reply = textgen
            .generate_text(&build_extraction_prompt(&sentence.text))
            .map_err(|source| TextError::Gateway { index: sentence.index, source })?;
        sentence.entity_1 = match parse_entities(&reply, canon) {
            Ok(entities) => entities,
            Err(_) => return Err(TextError::MalformedAt { index: sentence.index, reply }),
        };
    }
    doc.advance(DocumentStage::Extracted);
    Ok(())
}
