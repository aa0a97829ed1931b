//! End-to-end caption correction for one image.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correction::{self, AssembledCaption, CorrectionError};
use crate::crosscheck::{self, CrosscheckError, VerdictLedger, Verifiers};
use crate::enhancement::{self, EnhancementConfig, EnhancementError, EnhancementResult};
use crate::gateway::{BackendEndpoint, BackendRole, Endpoint, GatewayError, ImageRef, Transport};
use crate::text::{self, Canonicalizer, CaptionDocument, DocumentStage, SentenceSplitter, TextError};
use crate::timing::{StageTimings, Step};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Cross-check, correct, then enhance.
    #[default]
    Full,
    /// Cross-check and correct only.
    Hcnet,
    /// Enhance the caption as given.
    EnhanceOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Hcnet => "hcnet",
            Mode::EnhanceOnly => "enhance-only",
        }
    }

    pub fn corrects(self) -> bool {
        matches!(self, Mode::Full | Mode::Hcnet)
    }

    pub fn enhances(self) -> bool {
        matches!(self, Mode::Full | Mode::EnhanceOnly)
    }

    pub fn required_slots(self) -> Vec<Slot> {
        let mut slots = Vec::new();
        if self.corrects() {
            slots.extend([Slot::VerifierA, Slot::VerifierB, Slot::TieBreaker, Slot::Textgen]);
        }
        if self.enhances() {
            slots.extend([Slot::Tagger, Slot::Detector, Slot::Captioner]);
        }
        slots
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Mode::Full),
            "hcnet" => Ok(Mode::Hcnet),
            "enhance-only" => Ok(Mode::EnhanceOnly),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Position a backend fills in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    VerifierA,
    VerifierB,
    TieBreaker,
    Textgen,
    Tagger,
    Detector,
    Captioner,
}

impl Slot {
    pub const ALL: [Slot; 7] = [
        Slot::VerifierA,
        Slot::VerifierB,
        Slot::TieBreaker,
        Slot::Textgen,
        Slot::Tagger,
        Slot::Detector,
        Slot::Captioner,
    ];

    pub fn role(self) -> BackendRole {
        match self {
            Slot::VerifierA | Slot::VerifierB | Slot::TieBreaker => BackendRole::BinaryVqa,
            Slot::Textgen => BackendRole::TextGen,
            Slot::Tagger => BackendRole::Tagger,
            Slot::Detector => BackendRole::Detector,
            Slot::Captioner => BackendRole::Captioner,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Explicit slot; unslotted backends fill free slots of their role in listing order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<Slot>,
    #[serde(flatten)]
    pub endpoint: BackendEndpoint,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TextConfig {
    /// Extra abbreviations that never end a sentence.
    #[serde(default)]
    pub abbreviations: Vec<String>,
    #[serde(default)]
    pub singular: BTreeMap<String, String>,
    #[serde(default)]
    pub merge: BTreeMap<String, String>,
}

impl TextConfig {
    pub fn splitter(&self) -> SentenceSplitter {
        SentenceSplitter::with_abbreviations(self.abbreviations.iter().cloned())
    }

    pub fn canonicalizer(&self) -> Canonicalizer {
        Canonicalizer::with_tables(self.singular.clone(), self.merge.clone())
    }
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub enhancement: EnhancementConfig,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub text: TextConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("duplicate backend id {0:?}")]
    DuplicateId(String),
    #[error("backend {id:?} has role {role} but is bound to slot {slot:?}")]
    SlotRole { id: String, role: BackendRole, slot: Slot },
    #[error("slot {0:?} is bound twice")]
    SlotTaken(Slot),
    #[error("mode {mode} needs a backend for slot {slot:?}")]
    MissingSlot { mode: &'static str, slot: Slot },
    #[error("parallelism must be at least 1")]
    Parallelism,
    #[error("enhancement: {0}")]
    Enhancement(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl PipelineConfig {
    /// Reads a JSON config; relative fixture paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let read_err = |message: String| ConfigError::Read { path: path.display().to_string(), message };
        let raw = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&raw).map_err(|e| read_err(e.to_string()))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for b in &mut self.backends {
            if b.endpoint.transport == Transport::Fixture && Path::new(&b.endpoint.address).is_relative() {
                b.endpoint.address = base.join(&b.endpoint.address).display().to_string();
            }
        }
    }

    pub fn backend(&self, id: &str) -> Option<&BackendEndpoint> {
        self.backends.iter().map(|b| &b.endpoint).find(|e| e.id == id)
    }

    /// Slot to backend index. Explicit slots first, then free slots by role.
    pub fn slot_assignments(&self) -> Result<BTreeMap<Slot, usize>, ConfigError> {
        let mut ids = BTreeSet::new();
        let mut taken = BTreeMap::new();
        for (i, b) in self.backends.iter().enumerate() {
            if !ids.insert(b.endpoint.id.as_str()) {
                return Err(ConfigError::DuplicateId(b.endpoint.id.clone()));
            }
            if let Some(slot) = b.slot {
                if slot.role() != b.endpoint.role {
                    return Err(ConfigError::SlotRole { id: b.endpoint.id.clone(), role: b.endpoint.role, slot });
                }
                if taken.insert(slot, i).is_some() {
                    return Err(ConfigError::SlotTaken(slot));
                }
            }
        }
        for (i, b) in self.backends.iter().enumerate().filter(|(_, b)| b.slot.is_none()) {
            if let Some(free) = Slot::ALL.iter().find(|s| s.role() == b.endpoint.role && !taken.contains_key(*s)) {
                taken.insert(*free, i);
            }
        }
        Ok(taken)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_for(self.mode)
    }

    pub fn validate_for(&self, mode: Mode) -> Result<(), ConfigError> {
        if self.parallelism == 0 {
            return Err(ConfigError::Parallelism);
        }
        self.enhancement.validate().map_err(ConfigError::Enhancement)?;
        for b in &self.backends {
            b.endpoint.validate()?;
        }
        let slots = self.slot_assignments()?;
        for slot in mode.required_slots() {
            if !slots.contains_key(&slot) {
                return Err(ConfigError::MissingSlot { mode: mode.as_str(), slot });
            }
        }
        Ok(())
    }
}

/// Connected endpoints, one per slot the mode uses.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    pub verifiers: Option<Verifiers>,
    pub textgen: Option<Endpoint>,
    pub tagger: Option<Endpoint>,
    pub detector: Option<Endpoint>,
    pub captioner: Option<Endpoint>,
}

impl Bindings {
    pub fn connect(cfg: &PipelineConfig, mode: Mode) -> Result<Self, ConfigError> {
        cfg.validate_for(mode)?;
        let slots = cfg.slot_assignments()?;
        let mut connected = BTreeMap::new();
        for slot in mode.required_slots() {
            let spec = cfg.backends[slots[&slot]].endpoint.clone();
            connected.insert(slot, Endpoint::connect(spec)?);
        }
        let mut take = |slot| connected.remove(&slot);
        let verifiers = match (take(Slot::VerifierA), take(Slot::VerifierB), take(Slot::TieBreaker)) {
            (Some(primary_a), Some(primary_b), Some(tie_breaker)) => {
                Some(Verifiers { primary_a, primary_b, tie_breaker })
            }
            _ => None,
        };
        Ok(Bindings {
            verifiers,
            textgen: take(Slot::Textgen),
            tagger: take(Slot::Tagger),
            detector: take(Slot::Detector),
            captioner: take(Slot::Captioner),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub enhancement: EnhancementConfig,
    pub splitter: SentenceSplitter,
    pub canon: Canonicalizer,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("caption has no sentences")]
    EmptyDocument,
    #[error(transparent)]
    Extract(TextError),
    #[error(transparent)]
    Crosscheck(#[from] CrosscheckError),
    #[error(transparent)]
    Correct(#[from] CorrectionError),
    #[error(transparent)]
    Enhance(#[from] EnhancementError),
}

impl PipelineError {
    pub fn step(&self) -> Step {
        match self {
            PipelineError::EmptyDocument => Step::Split,
            PipelineError::Extract(_) => Step::Extract,
            PipelineError::Crosscheck(e) => e.step,
            PipelineError::Correct(_) => Step::Correct,
            PipelineError::Enhance(e) => e.step,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub document: CaptionDocument,
    pub ledger: VerdictLedger,
    pub corrected: AssembledCaption,
    /// `None` when the mode skips enhancement.
    pub enhancement: Option<EnhancementResult>,
    pub final_text: String,
    pub timings: StageTimings,
}

struct Corrector<'a> {
    verifiers: &'a Verifiers,
    textgen: &'a Endpoint,
}

struct Enhancer<'a> {
    tagger: &'a Endpoint,
    detector: &'a Endpoint,
    captioner: &'a Endpoint,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    mode: Mode,
    bindings: Bindings,
    options: PipelineOptions,
}

impl Pipeline {
    pub fn new(mode: Mode, bindings: Bindings, options: PipelineOptions) -> Result<Self, ConfigError> {
        options.enhancement.validate().map_err(ConfigError::Enhancement)?;
        let have = |slot: Slot| match slot {
            Slot::VerifierA | Slot::VerifierB | Slot::TieBreaker => bindings.verifiers.is_some(),
            Slot::Textgen => bindings.textgen.is_some(),
            Slot::Tagger => bindings.tagger.is_some(),
            Slot::Detector => bindings.detector.is_some(),
            Slot::Captioner => bindings.captioner.is_some(),
        };
        if let Some(slot) = mode.required_slots().into_iter().find(|s| !have(*s)) {
            return Err(ConfigError::MissingSlot { mode: mode.as_str(), slot });
        }
        Ok(Self { mode, bindings, options })
    }

    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, ConfigError> {
        let options = PipelineOptions {
            enhancement: cfg.enhancement.clone(),
            splitter: cfg.text.splitter(),
            canon: cfg.text.canonicalizer(),
        };
        Self::new(cfg.mode, Bindings::connect(cfg, cfg.mode)?, options)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn bindings(&self) -> &Bindings {
        &self.bindings
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.options
    }

    fn corrector(&self) -> Option<Corrector<'_>> {
        Some(Corrector { verifiers: self.bindings.verifiers.as_ref()?, textgen: self.bindings.textgen.as_ref()? })
    }

    fn enhancer(&self) -> Option<Enhancer<'_>> {
        Some(Enhancer {
            tagger: self.bindings.tagger.as_ref()?,
            detector: self.bindings.detector.as_ref()?,
            captioner: self.bindings.captioner.as_ref()?,
        })
    }

    pub fn run(&self, image: &ImageRef, caption: &str) -> Result<PipelineOutput, PipelineError> {
        let mut timings = StageTimings::new();
        let mut doc = CaptionDocument::new(image.clone(), caption);
        timings.time(Step::Split, || doc.split(&self.options.splitter)).map_err(PipelineError::Extract)?;
        if doc.sentences.is_empty() {
            return Err(PipelineError::EmptyDocument);
        }

        let (ledger, corrected) = match self.corrector().filter(|_| self.mode.corrects()) {
            Some(c) => {
                timings
                    .time(Step::Extract, || text::extract_entities(&mut doc, c.textgen, &self.options.canon))
                    .map_err(PipelineError::Extract)?;
                let ledger = crosscheck::filter_entities_timed(image, &doc.entity_union(), c.verifiers, &mut timings)?;
                doc.advance(DocumentStage::Checked);
                let corrected = timings.time(Step::Correct, || {
                    correction::correct_document(&mut doc, &ledger, c.textgen)?;
                    correction::assemble_corrected(&mut doc)
                })?;
                (ledger, corrected)
            }
            None => (
                VerdictLedger::empty(image.clone()),
                AssembledCaption { text: text::normalize_whitespace(caption), all_dropped: false },
            ),
        };

        let (enhancement, final_text) = match self.enhancer().filter(|_| self.mode.enhances()) {
            Some(e) => {
                let mut result = enhancement::identify_critical_objects_timed(
                    image,
                    &ledger,
                    &self.options.enhancement,
                    e.tagger,
                    e.detector,
                    &self.options.canon,
                    &mut timings,
                )?;
                enhancement::describe_objects_timed(image, &mut result, e.captioner, &mut timings);
                let merged = timings.time(Step::Merge, || enhancement::merge_final(&corrected.text, &result));
                doc.advance(DocumentStage::Enhanced);
                (Some(result), merged)
            }
            None => (None, corrected.text.clone()),
        };

        Ok(PipelineOutput { document: doc, ledger, corrected, enhancement, final_text, timings })
    }
}
