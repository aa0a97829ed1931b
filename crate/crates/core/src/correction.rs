//! Sentence rewriting after cross-checking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crosscheck::{Decision, VerdictLedger};
use crate::gateway::{Endpoint, GatewayError};
use crate::prompts;
use crate::text::{CaptionDocument, CorrectedText, DocumentStage, Sentence};

#[derive(Debug, Error)]
pub enum CorrectionError {
    #[error("entity {0:?} has no verdict in the ledger")]
    MissingVerdict(String),
    #[error("entity_2 {extra:?} is not a subset of entity_1")]
    NotSubset { extra: Vec<String> },
    #[error("sentence {index}: {source}")]
    Gateway {
        index: usize,
        #[source]
        source: GatewayError,
    },
    #[error("sentence {0} has no correction outcome")]
    Uncorrected(usize),
}

/// Sentence entities whose verdict is not `Absent`, in order.
pub fn restrict_entities(sentence_entities: &[String], ledger: &VerdictLedger) -> Result<Vec<String>, CorrectionError> {
    let mut kept = Vec::with_capacity(sentence_entities.len());
    for entity in sentence_entities {
        let verdict = ledger.get(entity).ok_or_else(|| CorrectionError::MissingVerdict(entity.clone()))?;
        if verdict.decision == Decision::Present {
            kept.push(entity.clone());
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionRequest {
    pub sentence: String,
    pub entity_1: Vec<String>,
    pub entity_2: Vec<String>,
}

impl CorrectionRequest {
    pub fn new(
        sentence: impl Into<String>,
        entity_1: Vec<String>,
        entity_2: Vec<String>,
    ) -> Result<Self, CorrectionError> {
        let extra: Vec<String> = entity_2.iter().filter(|e| !entity_1.contains(e)).cloned().collect();
        if !extra.is_empty() {
            return Err(CorrectionError::NotSubset { extra });
        }
        Ok(Self { sentence: sentence.into(), entity_1, entity_2 })
    }

    pub fn for_sentence(sentence: &Sentence) -> Result<Self, CorrectionError> {
        Self::new(sentence.text.clone(), sentence.entity_1.clone(), sentence.entity_2.clone())
    }

    pub fn needs_rewrite(&self) -> bool {
        let a: BTreeSet<&String> = self.entity_1.iter().collect();
        let b: BTreeSet<&String> = self.entity_2.iter().collect();
        a != b
    }
}

pub fn build_correction_prompt(req: &CorrectionRequest) -> String {
    prompts::correction_prompt(&req.sentence, &req.entity_1, &req.entity_2)
}

/// Keeps the sentence when nothing was filtered out (no model call);
/// otherwise asks the text model for a rewrite. An empty rewrite drops the sentence.
pub fn correct_sentence(req: &CorrectionRequest, textgen: &Endpoint) -> Result<CorrectedText, GatewayError> {
    if !req.needs_rewrite() {
        return Ok(CorrectedText::Unchanged(req.sentence.clone()));
    }
    let reply = textgen.generate_text(&build_correction_prompt(req))?;
    let text = reply.trim();
    if text.is_empty() {
        Ok(CorrectedText::Dropped)
    } else {
        Ok(CorrectedText::Rewritten(text.to_string()))
    }
}

/// Fills `entity_2` from the ledger and corrects every sentence.
pub fn correct_document(
    doc: &mut CaptionDocument,
    ledger: &VerdictLedger,
    textgen: &Endpoint,
) -> Result<(), CorrectionError> {
    for sentence in doc.sentences.iter_mut() {
        sentence.entity_2 = restrict_entities(&sentence.entity_1, ledger)?;
        let req = CorrectionRequest::for_sentence(sentence)?;
        let outcome = correct_sentence(&req, textgen)
            .map_err(|source| CorrectionError::Gateway { index: sentence.index, source })?;
        sentence.corrected = Some(outcome);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledCaption {
    pub text: String,
    /// Every sentence was dropped.
    pub all_dropped: bool,
}

/// Joins the surviving sentences with single spaces and marks the document corrected.
pub fn assemble_corrected(doc: &mut CaptionDocument) -> Result<AssembledCaption, CorrectionError> {
    let mut parts = Vec::with_capacity(doc.sentences.len());
    for sentence in &doc.sentences {
        match &sentence.corrected {
            None => return Err(CorrectionError::Uncorrected(sentence.index)),
            Some(outcome) => parts.extend(outcome.text().map(str::to_string)),
        }
    }
    let all_dropped = !doc.sentences.is_empty() && parts.is_empty();
    doc.advance(DocumentStage::Corrected);
    Ok(AssembledCaption { text: parts.join(" "), all_dropped })
}

/// Audit line for one corrected sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceAudit {
    pub index: usize,
    pub original: String,
    pub entity_1: Vec<String>,
    pub entity_2: Vec<String>,
    pub corrected: Option<String>,
    pub dropped: bool,
}

impl SentenceAudit {
    pub fn from_sentence(s: &Sentence) -> Self {
        Self {
            index: s.index,
            original: s.text.clone(),
            entity_1: s.entity_1.clone(),
            entity_2: s.entity_2.clone(),
            corrected: s.corrected.as_ref().and_then(|c| c.text().map(str::to_string)),
            dropped: s.corrected.as_ref().is_some_and(CorrectedText::is_dropped),
        }
    }
}
