//! Manifest-driven batch runs, dataset export and before/after evaluation.
//!
//! A run directory holds `results.jsonl`, `audit.jsonl`, `timings.json` and
//! `config-snapshot.json`. Results carry no timing data so that reruns with
//! the same fixtures and config are byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correction::SentenceAudit;
use crate::crosscheck::LedgerRecord;
use crate::enhancement::EnhancementResult;
use crate::gateway::{Endpoint, ImageRef};
use crate::pipeline::{Mode, Pipeline, PipelineConfig};
use crate::pope::{self, JudgedQuestion, PopeError, PopeQuestion, ReportFile};
use crate::timing::{StageTiming, Step};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const TIMINGS_FILE: &str = "timings.json";
pub const CONFIG_SNAPSHOT_FILE: &str = "config-snapshot.json";
pub const EVAL_DIR: &str = "eval";

pub fn pipeline_version(mode: Mode) -> String {
    format!("halluguard-{}/{}", env!("CARGO_PKG_VERSION"), mode.as_str())
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("manifest lists image {0:?} twice")]
    DuplicateImage(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Pope(#[from] PopeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BatchError + '_ {
    move |source| BatchError::Io { path: path.display().to_string(), source }
}

/// Reads a JSON-lines file, skipping blank lines.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, BatchError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| BatchError::Parse {
            path: path.display().to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), BatchError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| io_err(path)(e.into()))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BatchError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| io_err(path)(e.into()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_model: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    /// Directory relative image paths resolve against.
    pub base: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(base: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self, BatchError> {
        let mut seen = BTreeSet::new();
        if let Some(dup) = entries.iter().find(|e| !seen.insert(e.image_id.as_str())) {
            return Err(BatchError::DuplicateImage(dup.image_id.clone()));
        }
        Ok(Self { base: base.into(), entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BatchError> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(base, read_jsonl(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), BatchError> {
        write_jsonl(path.as_ref(), &self.entries)
    }

    pub fn image_ref(&self, entry: &ManifestEntry) -> ImageRef {
        match &entry.image_path {
            Some(p) => ImageRef::with_path(&entry.image_id, self.base.join(p)),
            None => ImageRef::new(&entry.image_id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub step: Step,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_model: Option<String>,
    pub mode: Mode,
    pub status: Status,
    pub initial_caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_caption: Option<String>,
    #[serde(default)]
    pub all_dropped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FailureRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditLine {
    Sentence {
        image_id: String,
        #[serde(flatten)]
        sentence: SentenceAudit,
    },
    Ledger(LedgerRecord),
    Enhancement {
        image_id: String,
        #[serde(flatten)]
        result: EnhancementResult,
    },
    Failure {
        image_id: String,
        #[serde(flatten)]
        failure: FailureRecord,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTimings {
    pub image_id: String,
    pub stages: Vec<StageTiming>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub images: Vec<ImageTimings>,
    /// Sum per step over all images.
    pub stage_totals_ms: BTreeMap<Step, f64>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub images: usize,
    pub succeeded: usize,
    pub failed: usize,
}

struct ImageOutcome {
    result: ResultRecord,
    audit: Vec<AuditLine>,
    timings: Option<ImageTimings>,
}

fn process(pipeline: &Pipeline, manifest: &Manifest, entry: &ManifestEntry) -> ImageOutcome {
    let image = manifest.image_ref(entry);
    let mut result = ResultRecord {
        image_id: entry.image_id.clone(),
        image_path: entry.image_path.clone(),
        source_model: entry.source_model.clone(),
        mode: pipeline.mode(),
        status: Status::Ok,
        initial_caption: entry.caption.clone(),
        corrected_caption: None,
        final_caption: None,
        all_dropped: false,
        error: None,
    };
    match pipeline.run(&image, &entry.caption) {
        Ok(out) => {
            let image_id = entry.image_id.clone();
            let mut audit: Vec<AuditLine> = Vec::new();
            if pipeline.mode().corrects() {
                audit.extend(out.document.sentences.iter().map(|s| AuditLine::Sentence {
                    image_id: image_id.clone(),
                    sentence: SentenceAudit::from_sentence(s),
                }));
                audit.push(AuditLine::Ledger(out.ledger.record()));
            }
            if let Some(enh) = out.enhancement {
                audit.push(AuditLine::Enhancement { image_id: image_id.clone(), result: enh });
            }
            result.corrected_caption = Some(out.corrected.text);
            result.final_caption = Some(out.final_text);
            result.all_dropped = out.corrected.all_dropped;
            let timings = ImageTimings { image_id, stages: out.timings.records(), total_ms: out.timings.total_ms() };
            ImageOutcome { result, audit, timings: Some(timings) }
        }
        Err(e) => {
            let failure = FailureRecord { step: e.step(), message: e.to_string() };
            result.status = Status::Failed;
            result.error = Some(failure.clone());
            let audit = vec![AuditLine::Failure { image_id: entry.image_id.clone(), failure }];
            ImageOutcome { result, audit, timings: None }
        }
    }
}

/// Runs every manifest entry on a pool of `parallelism` threads and writes the run directory.
/// Output order follows the manifest regardless of completion order.
pub fn run_batch(
    pipeline: &Pipeline,
    snapshot: &PipelineConfig,
    manifest: &Manifest,
    parallelism: usize,
    run_dir: &Path,
) -> Result<BatchSummary, BatchError> {
    std::fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| BatchError::Pool(e.to_string()))?;
    let outcomes: Vec<ImageOutcome> =
        pool.install(|| manifest.entries.par_iter().map(|e| process(pipeline, manifest, e)).collect());

    write_jsonl(&run_dir.join(RESULTS_FILE), outcomes.iter().map(|o| &o.result))?;
    write_jsonl(&run_dir.join(AUDIT_FILE), outcomes.iter().flat_map(|o| &o.audit))?;
    let mut summary = TimingSummary::default();
    for t in outcomes.iter().filter_map(|o| o.timings.clone()) {
        for s in &t.stages {
            *summary.stage_totals_ms.entry(s.stage).or_default() += s.elapsed_ms;
        }
        summary.total_ms += t.total_ms;
        summary.images.push(t);
    }
    write_json(&run_dir.join(TIMINGS_FILE), &summary)?;
    write_json(&run_dir.join(CONFIG_SNAPSHOT_FILE), snapshot)?;

    let failed = outcomes.iter().filter(|o| o.result.status == Status::Failed).count();
    Ok(BatchSummary { images: outcomes.len(), succeeded: outcomes.len() - failed, failed })
}

pub fn read_results(run_dir: &Path) -> Result<Vec<ResultRecord>, BatchError> {
    read_jsonl(&run_dir.join(RESULTS_FILE))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image_path: String,
    pub caption: String,
    pub source_model: String,
    pub pipeline_version: String,
    pub audit_ref: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub written: usize,
    /// Failed images plus those whose final caption is empty.
    pub skipped: usize,
}

/// One annotation record per successfully processed image with a nonempty final caption.
pub fn export_dataset(run_dir: &Path, out: &Path) -> Result<ExportSummary, BatchError> {
    let results = read_results(run_dir)?;
    let records: Vec<DatasetRecord> = results
        .iter()
        .filter(|r| r.status == Status::Ok)
        .filter_map(|r| {
            let caption = r.final_caption.as_deref().filter(|c| !c.is_empty())?;
            Some(DatasetRecord {
                image_path: r.image_path.clone().unwrap_or_else(|| r.image_id.clone()),
                caption: caption.to_string(),
                source_model: r.source_model.clone().unwrap_or_else(|| "unknown".to_string()),
                pipeline_version: pipeline_version(r.mode),
                audit_ref: format!("{AUDIT_FILE}#{}", r.image_id),
            })
        })
        .collect();
    write_jsonl(out, &records)?;
    Ok(ExportSummary { written: records.len(), skipped: results.len() - records.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeMode {
    /// A text model reads the caption and answers the question.
    Caption,
    /// A vision model answers from the image; the caption is ignored.
    DirectVqa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    /// `before` and `after` for caption judging, `direct` for direct VQA.
    pub reports: BTreeMap<String, ReportFile>,
    /// Question image ids with no successful result in the run.
    pub missing_images: Vec<String>,
    pub scored_questions: usize,
}

fn judge_caption(q: &PopeQuestion, caption: &str, judge: &Endpoint) -> Result<JudgedQuestion, PopeError> {
    // Nothing described means nothing claimed.
    let answer = if caption.trim().is_empty() {
        crate::gateway::AnswerValue::No
    } else {
        pope::judge_from_caption(q, caption, judge)?.value
    };
    Ok(JudgedQuestion { question: q.clone(), answer })
}

/// Scores the run's captions against `questions` and writes `eval/<name>.json` reports.
pub fn evaluate(
    run_dir: &Path,
    questions: &[PopeQuestion],
    judge: &Endpoint,
    mode: JudgeMode,
) -> Result<EvalOutcome, BatchError> {
    if questions.is_empty() {
        return Err(PopeError::EmptyInput.into());
    }
    let results: BTreeMap<String, ResultRecord> = read_results(run_dir)?
        .into_iter()
        .filter(|r| r.status == Status::Ok)
        .map(|r| (r.image_id.clone(), r))
        .collect();
    let mut missing = BTreeSet::new();
    let usable: Vec<(&PopeQuestion, &ResultRecord)> = questions
        .iter()
        .filter_map(|q| match results.get(&q.image_id) {
            Some(r) => Some((q, r)),
            None => {
                missing.insert(q.image_id.clone());
                None
            }
        })
        .collect();

    let mut judged: BTreeMap<String, Vec<JudgedQuestion>> = BTreeMap::new();
    for (q, r) in &usable {
        match mode {
            JudgeMode::Caption => {
                let after = r.final_caption.as_deref().unwrap_or_default();
                judged.entry("before".into()).or_default().push(judge_caption(q, &r.initial_caption, judge)?);
                judged.entry("after".into()).or_default().push(judge_caption(q, after, judge)?);
            }
            JudgeMode::DirectVqa => {
                let image = match &r.image_path {
                    Some(p) => ImageRef::with_path(&r.image_id, p),
                    None => ImageRef::new(&r.image_id),
                };
                let answer = pope::judge_direct_vqa(q, &image, judge)?.value;
                judged.entry("direct".into()).or_default().push(JudgedQuestion { question: (*q).clone(), answer });
            }
        }
    }

    let mut reports = BTreeMap::new();
    for (name, items) in &judged {
        reports.insert(name.clone(), pope::build_report(items)?);
    }
    if reports.is_empty() {
        return Err(PopeError::EmptyInput.into());
    }
    let eval_dir = run_dir.join(EVAL_DIR);
    std::fs::create_dir_all(&eval_dir).map_err(io_err(&eval_dir))?;
    for (name, report) in &reports {
        write_json(&eval_dir.join(format!("{name}.json")), report)?;
    }
    let outcome =
        EvalOutcome { reports, missing_images: missing.into_iter().collect(), scored_questions: usable.len() };
    write_json(
        &eval_dir.join("summary.json"),
        &serde_json::json!({
            "scored_questions": outcome.scored_questions,
            "missing_images": outcome.missing_images,
        }),
    )?;
    Ok(outcome)
}
