//! Caption hallucination mitigation: entity extraction, multi-verifier
//! cross-checking, sentence correction and critical-object enhancement,
//! plus an object-probing evaluation harness.

pub mod batch;
pub mod correction;
pub mod crosscheck;
pub mod enhancement;
pub mod gateway;
pub mod pipeline;
pub mod pope;
pub mod prompts;
pub mod synth;
pub mod text;
pub mod timing;

use sha2::{Digest, Sha256};

pub use correction::{AssembledCaption, CorrectionError, CorrectionRequest, SentenceAudit};
pub use crosscheck::{Branch, Decision, Verdict, VerdictLedger, Verifiers};
pub use enhancement::{EnhancementConfig, EnhancementResult, ObjectDescription, ScoredTag};
pub use gateway::{
    AnswerValue, BackendEndpoint, BackendRole, BinaryAnswer, DetectionCandidate, Endpoint, GatewayError, ImageRef,
    Transport,
};
pub use pipeline::{Mode, Pipeline, PipelineConfig, PipelineError, PipelineOutput};
pub use pope::{EvalReport, Gold, PopeQuestion, Strategy, VocabStats};
pub use text::{Canonicalizer, CaptionDocument, CorrectedText, DocumentStage, Sentence, SentenceSplitter, TextError};
pub use timing::{StageTiming, StageTimings, Step};

/// Lowercase hex SHA-256 of `bytes`.
pub fn hash_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
