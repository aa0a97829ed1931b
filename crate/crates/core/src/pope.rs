//! Polling-based object probing: balanced yes/no existence questions and
//! their binary-classification scores.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{AnswerValue, BinaryAnswer, Endpoint, GatewayError, ImageRef};
use crate::prompts;

/// Yes-questions (and as many no-questions) per image, at most.
pub const QUESTIONS_PER_POLARITY: usize = 3;

#[derive(Debug, Error)]
pub enum PopeError {
    #[error("no scored pairs")]
    EmptyInput,
    #[error("image {image_id}: needs {needed} negative objects, vocabulary offers {available}")]
    InsufficientVocabulary { image_id: String, needed: usize, available: usize },
    #[error("image {image_id}: ground-truth object {object:?} is not in the vocabulary")]
    UnknownObject { image_id: String, object: String },
    #[error("image {0}: no ground-truth objects")]
    NoGroundTruth(String),
    #[error("{0:?} is not a negative sampling strategy")]
    NotNegativeStrategy(Strategy),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("vocabulary statistics: {0}")]
    InvalidStats(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    Yes,
    No,
}

impl From<AnswerValue> for Gold {
    /// Unparseable replies count as `No`.
    fn from(value: AnswerValue) -> Self {
        match value {
            AnswerValue::Yes => Gold::Yes,
            AnswerValue::No | AnswerValue::Unparseable => Gold::No,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    GroundTruth,
    Random,
    Popular,
    Adversarial,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::GroundTruth => "ground_truth",
            Strategy::Random => "random",
            Strategy::Popular => "popular",
            Strategy::Adversarial => "adversarial",
        }
    }
}

pub fn existence_question(object: &str) -> String {
    format!("Is there a {object} in the image?")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeQuestion {
    pub image_id: String,
    pub object: String,
    pub question: String,
    pub gold: Gold,
    pub strategy: Strategy,
}

impl PopeQuestion {
    pub fn new(image_id: &str, object: &str, gold: Gold, strategy: Strategy) -> Self {
        Self {
            image_id: image_id.to_string(),
            object: object.to_string(),
            question: existence_question(object),
            gold,
            strategy,
        }
    }
}

/// Object vocabulary with per-image occurrence and co-occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabStats {
    pub vocabulary: BTreeSet<String>,
    #[serde(default)]
    pub frequency: BTreeMap<String, u64>,
    /// Symmetric: `cooccurrence[a][b] == cooccurrence[b][a]`.
    #[serde(default)]
    pub cooccurrence: BTreeMap<String, BTreeMap<String, u64>>,
}

impl VocabStats {
    /// Counts objects over a corpus of ground-truth sets, one per image.
    pub fn from_images<'a, I>(images: I) -> Self
    where
        I: IntoIterator<Item = &'a BTreeSet<String>>,
    {
        let mut stats = VocabStats::default();
        for objects in images {
            for a in objects {
                stats.vocabulary.insert(a.clone());
                *stats.frequency.entry(a.clone()).or_default() += 1;
                for b in objects.iter().filter(|b| *b != a) {
                    *stats.cooccurrence.entry(a.clone()).or_default().entry(b.clone()).or_default() += 1;
                }
            }
        }
        stats
    }

    pub fn frequency_of(&self, object: &str) -> u64 {
        self.frequency.get(object).copied().unwrap_or(0)
    }

    pub fn cooccurrence_of(&self, a: &str, b: &str) -> u64 {
        self.cooccurrence.get(a).and_then(|m| m.get(b)).copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(k) = self.frequency.keys().find(|k| !self.vocabulary.contains(*k)) {
            return Err(format!("frequency key {k:?} not in vocabulary"));
        }
        for (a, row) in &self.cooccurrence {
            for (b, n) in row {
                if !self.vocabulary.contains(a) || !self.vocabulary.contains(b) {
                    return Err(format!("co-occurrence ({a:?}, {b:?}) outside vocabulary"));
                }
                if self.cooccurrence_of(b, a) != *n {
                    return Err(format!("co-occurrence ({a:?}, {b:?}) is not symmetric"));
                }
            }
        }
        Ok(())
    }

    /// Keeps only objects in `allowed`.
    pub fn restricted_to(&self, allowed: &BTreeSet<String>) -> Self {
        let keep = |o: &String| allowed.contains(o);
        VocabStats {
            vocabulary: self.vocabulary.iter().filter(|o| keep(o)).cloned().collect(),
            frequency: self.frequency.iter().filter(|(o, _)| keep(o)).map(|(o, n)| (o.clone(), *n)).collect(),
            cooccurrence: self
                .cooccurrence
                .iter()
                .filter(|(a, _)| keep(a))
                .map(|(a, row)| {
                    (a.clone(), row.iter().filter(|(b, _)| keep(b)).map(|(b, n)| (b.clone(), *n)).collect())
                })
                .collect(),
        }
    }
}

/// Negatives ranked by `key` descending, ties broken lexicographically.
fn top_by_key(negatives: &[&String], k: usize, key: impl Fn(&str) -> u64) -> Vec<String> {
    let mut ranked: Vec<(u64, &String)> = negatives.iter().map(|o| (key(o), *o)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    ranked.into_iter().take(k).map(|(_, o)| o.clone()).collect()
}

/// Negative objects for one image under `strategy`.
pub fn sample_negatives(
    gt: &BTreeSet<String>,
    stats: &VocabStats,
    strategy: Strategy,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<String>, PopeError> {
    let negatives: Vec<&String> = stats.vocabulary.iter().filter(|o| !gt.contains(*o)).collect();
    match strategy {
        Strategy::GroundTruth => Err(PopeError::NotNegativeStrategy(strategy)),
        Strategy::Random => Ok(negatives.choose_multiple(rng, k).map(|o| (*o).clone()).collect()),
        Strategy::Popular => Ok(top_by_key(&negatives, k, |o| stats.frequency_of(o))),
        Strategy::Adversarial => {
            Ok(top_by_key(&negatives, k, |o| gt.iter().map(|g| stats.cooccurrence_of(o, g)).sum()))
        }
    }
}

/// Balanced question set: `min(3, |gt|)` yes-questions then as many no-questions.
pub fn build_questions(
    image_id: &str,
    gt: &BTreeSet<String>,
    stats: &VocabStats,
    strategy: Strategy,
    seed: u64,
) -> Result<Vec<PopeQuestion>, PopeError> {
    if gt.is_empty() {
        return Err(PopeError::NoGroundTruth(image_id.to_string()));
    }
    if let Some(object) = gt.iter().find(|o| !stats.vocabulary.contains(*o)) {
        return Err(PopeError::UnknownObject { image_id: image_id.to_string(), object: object.clone() });
    }
    if strategy == Strategy::GroundTruth {
        return Err(PopeError::NotNegativeStrategy(strategy));
    }
    let k = gt.len().min(QUESTIONS_PER_POLARITY);
    let available = stats.vocabulary.len() - gt.len();
    if available < k {
        return Err(PopeError::InsufficientVocabulary { image_id: image_id.to_string(), needed: k, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives: Vec<&String> = gt.iter().collect();
    let mut questions: Vec<PopeQuestion> = positives
        .choose_multiple(&mut rng, k)
        .map(|o| PopeQuestion::new(image_id, o, Gold::Yes, Strategy::GroundTruth))
        .collect();
    for object in sample_negatives(gt, stats, strategy, k, &mut rng)? {
        questions.push(PopeQuestion::new(image_id, &object, Gold::No, strategy));
    }
    Ok(questions)
}

/// Per-image seed derived from a run seed, so images are sampled independently.
pub fn image_seed(seed: u64, image_id: &str) -> u64 {
    let digest = crate::hash_hex(format!("{seed}:{image_id}").as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthImage {
    pub image_id: String,
    pub objects: BTreeSet<String>,
}

/// Ground-truth objects per image, with optional precomputed statistics.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthCorpus {
    pub images: Vec<GroundTruthImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<VocabStats>,
}

impl GroundTruthCorpus {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PopeError> {
        let path = path.as_ref();
        let io = |message: String| PopeError::Io { path: path.display().to_string(), message };
        let raw = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&raw).map_err(|e| io(e.to_string()))
    }

    /// The stored statistics, or counts over the corpus images.
    pub fn stats(&self) -> VocabStats {
        self.stats.clone().unwrap_or_else(|| VocabStats::from_images(self.images.iter().map(|i| &i.objects)))
    }

    pub fn restricted_to(&self, allowed: &BTreeSet<String>) -> Self {
        GroundTruthCorpus {
            images: self
                .images
                .iter()
                .map(|i| GroundTruthImage {
                    image_id: i.image_id.clone(),
                    objects: i.objects.intersection(allowed).cloned().collect(),
                })
                .collect(),
            stats: Some(self.stats().restricted_to(allowed)),
        }
    }

    /// Questions for every image; images without ground-truth objects are skipped.
    pub fn questions(&self, strategy: Strategy, seed: u64) -> Result<Vec<PopeQuestion>, PopeError> {
        let stats = self.stats();
        stats.validate().map_err(PopeError::InvalidStats)?;
        let mut out = Vec::new();
        for image in self.images.iter().filter(|i| !i.objects.is_empty()) {
            out.extend(build_questions(
                &image.image_id,
                &image.objects,
                &stats,
                strategy,
                image_seed(seed, &image.image_id),
            )?);
        }
        Ok(out)
    }
}

pub fn build_judge_prompt(caption: &str, question: &str) -> String {
    prompts::judge_prompt(caption, question)
}

/// Asks a text model whether `caption` implies the question's answer is yes.
pub fn judge_from_caption(
    question: &PopeQuestion,
    caption: &str,
    textgen: &Endpoint,
) -> Result<BinaryAnswer, PopeError> {
    if caption.trim().is_empty() {
        return Err(GatewayError::InvalidRequest("caption must be nonempty".into()).into());
    }
    let reply = textgen.generate_text(&build_judge_prompt(caption, &question.question))?;
    Ok(BinaryAnswer::parse(&reply))
}

/// Asks a vision verifier directly, bypassing the caption.
pub fn judge_direct_vqa(question: &PopeQuestion, image: &ImageRef, vqa: &Endpoint) -> Result<BinaryAnswer, PopeError> {
    Ok(vqa.query_binary_vqa(image, &question.object)?)
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean of precision, recall, F1 and accuracy.
pub fn average_score(precision: f64, recall: f64, f1: f64, accuracy: f64) -> f64 {
    (precision + recall + f1 + accuracy) / 4.0
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub yes_rate: f64,
    pub average: f64,
}

impl EvalReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let total = tp + fp + fn_ + tn;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = f1_score(precision, recall);
        let accuracy = ratio(tp + tn, total);
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            accuracy,
            yes_rate: ratio(tp + fp, total),
            average: average_score(precision, recall, f1, accuracy),
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn percentages(&self) -> Percentages {
        let pct = |x: f64| (x * 10_000.0).round() / 100.0;
        Percentages {
            precision: pct(self.precision),
            recall: pct(self.recall),
            f1: pct(self.f1),
            accuracy: pct(self.accuracy),
            yes_rate: pct(self.yes_rate),
            average: pct(self.average),
        }
    }
}

/// Metrics as percentages rounded to two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub yes_rate: f64,
    pub average: f64,
}

/// Confusion counts over `(gold, predicted)` pairs, with `Yes` as the positive class.
pub fn score(pairs: &[(Gold, Gold)]) -> Result<EvalReport, PopeError> {
    if pairs.is_empty() {
        return Err(PopeError::EmptyInput);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for pair in pairs {
        match pair {
            (Gold::Yes, Gold::Yes) => tp += 1,
            (Gold::No, Gold::Yes) => fp += 1,
            (Gold::Yes, Gold::No) => fn_ += 1,
            (Gold::No, Gold::No) => tn += 1,
        }
    }
    Ok(EvalReport::from_counts(tp, fp, fn_, tn))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedQuestion {
    pub question: PopeQuestion,
    pub answer: AnswerValue,
}

/// Overall report plus one report per negative strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub overall: EvalReport,
    pub percent: Percentages,
    pub questions: usize,
    pub unparseable: usize,
    /// Each entry scores the ground-truth questions together with that strategy's negatives.
    pub per_strategy: BTreeMap<Strategy, EvalReport>,
}

pub fn build_report(judged: &[JudgedQuestion]) -> Result<ReportFile, PopeError> {
    let pairs: Vec<(Gold, Gold)> = judged.iter().map(|j| (j.question.gold, Gold::from(j.answer))).collect();
    let overall = score(&pairs)?;
    let strategies: BTreeSet<Strategy> =
        judged.iter().map(|j| j.question.strategy).filter(|s| *s != Strategy::GroundTruth).collect();
    let mut per_strategy = BTreeMap::new();
    for s in strategies {
        let mut seen = BTreeSet::new();
        let subset: Vec<(Gold, Gold)> = judged
            .iter()
            .filter(|j| j.question.strategy == s || j.question.strategy == Strategy::GroundTruth)
            .filter(|j| seen.insert((j.question.image_id.clone(), j.question.object.clone(), j.question.strategy)))
            .map(|j| (j.question.gold, Gold::from(j.answer)))
            .collect();
        per_strategy.insert(s, score(&subset)?);
    }
    Ok(ReportFile {
        overall,
        percent: overall.percentages(),
        questions: judged.len(),
        unparseable: judged.iter().filter(|j| j.answer == AnswerValue::Unparseable).count(),
        per_strategy,
    })
}

pub fn read_questions(path: impl AsRef<Path>) -> Result<Vec<PopeQuestion>, PopeError> {
    let path = path.as_ref();
    let io = |message: String| PopeError::Io { path: path.display().to_string(), message };
    let file = std::fs::File::open(path).map_err(|e| io(e.to_string()))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

pub fn write_questions(mut out: impl Write, questions: &[PopeQuestion]) -> std::io::Result<()> {
    for q in questions {
        serde_json::to_writer(&mut out, q)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
