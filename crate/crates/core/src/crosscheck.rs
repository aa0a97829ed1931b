//! Entity cross-checking with two primary verifiers and a tie-breaker.
//!
//! Both primaries are asked whether the entity is in the image. Agreement
//! decides directly; any disagreement, including an unparseable primary
//! reply, is settled by the tie-breaker, whose unparseable reply counts as
//! absent.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{AnswerValue, BinaryAnswer, Endpoint, GatewayError, ImageRef};
use crate::timing::{StageTimings, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Present,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    BothNo,
    BothYes,
    TieBreakYes,
    TieBreakNo,
    UnparseableFallback,
}

impl Branch {
    pub fn decision(self) -> Decision {
        match self {
            Branch::BothYes | Branch::TieBreakYes => Decision::Present,
            Branch::BothNo | Branch::TieBreakNo | Branch::UnparseableFallback => Decision::Absent,
        }
    }

    pub fn used_tie_breaker(self) -> bool {
        matches!(self, Branch::TieBreakYes | Branch::TieBreakNo | Branch::UnparseableFallback)
    }
}

/// Branch chosen from the primary answers alone, or `None` when the tie-breaker must decide.
pub fn primary_outcome(a: AnswerValue, b: AnswerValue) -> Option<Branch> {
    match (a, b) {
        (AnswerValue::No, AnswerValue::No) => Some(Branch::BothNo),
        (AnswerValue::Yes, AnswerValue::Yes) => Some(Branch::BothYes),
        _ => None,
    }
}

pub fn tie_break_outcome(t: AnswerValue) -> Branch {
    match t {
        AnswerValue::Yes => Branch::TieBreakYes,
        AnswerValue::No => Branch::TieBreakNo,
        AnswerValue::Unparseable => Branch::UnparseableFallback,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierAnswers {
    pub primary_a: BinaryAnswer,
    pub primary_b: BinaryAnswer,
    pub tie_break: Option<BinaryAnswer>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub entity: String,
    pub decision: Decision,
    pub branch: Branch,
    pub answers: VerifierAnswers,
}

/// Audit form of a [`Verdict`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub entity: String,
    pub decision: Decision,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub image_id: String,
    pub verdicts: Vec<VerdictRecord>,
}

/// The per-image record of which extracted entities survived cross-checking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictLedger {
    pub image: ImageRef,
    verdicts: Vec<Verdict>,
}

impl VerdictLedger {
    pub fn empty(image: ImageRef) -> Self {
        Self { image, verdicts: Vec::new() }
    }

    /// Appends a verdict; a second verdict for the same entity is ignored.
    pub fn push(&mut self, verdict: Verdict) {
        if self.get(&verdict.entity).is_none() {
            self.verdicts.push(verdict);
        }
    }

    pub fn verdicts(&self) -> &[Verdict] {
        &self.verdicts
    }

    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }

    pub fn get(&self, entity: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.entity == entity)
    }

    pub fn is_present(&self, entity: &str) -> bool {
        self.get(entity).is_some_and(|v| v.decision == Decision::Present)
    }

    pub fn present(&self) -> impl Iterator<Item = &str> {
        self.verdicts.iter().filter(|v| v.decision == Decision::Present).map(|v| v.entity.as_str())
    }

    pub fn absent(&self) -> impl Iterator<Item = &str> {
        self.verdicts.iter().filter(|v| v.decision == Decision::Absent).map(|v| v.entity.as_str())
    }

    pub fn record(&self) -> LedgerRecord {
        LedgerRecord {
            image_id: self.image.image_id.clone(),
            verdicts: self
                .verdicts
                .iter()
                .map(|v| VerdictRecord { entity: v.entity.clone(), decision: v.decision, branch: v.branch })
                .collect(),
        }
    }
}

/// Primary verifiers A and B plus the tie-breaker.
#[derive(Debug, Clone)]
pub struct Verifiers {
    pub primary_a: Endpoint,
    pub primary_b: Endpoint,
    pub tie_breaker: Endpoint,
}

#[derive(Debug, Error)]
#[error("{step} verifying {entity:?}: {source}")]
pub struct CrosscheckError {
    pub entity: String,
    pub step: Step,
    #[source]
    pub source: GatewayError,
}

pub fn verify_entity(image: &ImageRef, entity: &str, verifiers: &Verifiers) -> Result<Verdict, CrosscheckError> {
    verify_entity_timed(image, entity, verifiers, &mut StageTimings::new())
}

pub fn verify_entity_timed(
    image: &ImageRef,
    entity: &str,
    verifiers: &Verifiers,
    timings: &mut StageTimings,
) -> Result<Verdict, CrosscheckError> {
    let ask = |endpoint: &Endpoint, step: Step, timings: &mut StageTimings| {
        let start = Instant::now();
        let answer = endpoint.query_binary_vqa(image, entity);
        timings.add(step, start.elapsed());
        answer.map_err(|source| CrosscheckError { entity: entity.to_string(), step, source })
    };
    let a = ask(&verifiers.primary_a, Step::CheckA, timings)?;
    let b = ask(&verifiers.primary_b, Step::CheckB, timings)?;
    let (branch, tie_break) = match primary_outcome(a.value, b.value) {
        Some(branch) => (branch, None),
        None => {
            let t = ask(&verifiers.tie_breaker, Step::CheckTie, timings)?;
            (tie_break_outcome(t.value), Some(t))
        }
    };
    Ok(Verdict {
        entity: entity.to_string(),
        decision: branch.decision(),
        branch,
        answers: VerifierAnswers { primary_a: a, primary_b: b, tie_break },
    })
}

/// Verifies each distinct entity once, keeping input order.
pub fn filter_entities(
    image: &ImageRef,
    entities: &[String],
    verifiers: &Verifiers,
) -> Result<VerdictLedger, CrosscheckError> {
    filter_entities_timed(image, entities, verifiers, &mut StageTimings::new())
}

pub fn filter_entities_timed(
    image: &ImageRef,
    entities: &[String],
    verifiers: &Verifiers,
    timings: &mut StageTimings,
) -> Result<VerdictLedger, CrosscheckError> {
    let mut ledger = VerdictLedger::empty(image.clone());
    for entity in entities {
        if ledger.get(entity).is_none() {
            ledger.push(verify_entity_timed(image, entity, verifiers, timings)?);
        }
    }
    Ok(ledger)
}
