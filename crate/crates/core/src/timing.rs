//! Per-step latency bookkeeping.

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Pipeline steps, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Split,
    Extract,
    CheckA,
    CheckB,
    CheckTie,
    Correct,
    Tag,
    Detect,
    Describe,
    Merge,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Step::Split => "split",
            Step::Extract => "extract",
            Step::CheckA => "check_a",
            Step::CheckB => "check_b",
            Step::CheckTie => "check_tie",
            Step::Correct => "correct",
            Step::Tag => "tag",
            Step::Detect => "detect",
            Step::Describe => "describe",
            Step::Merge => "merge",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Step,
    pub elapsed_ms: f64,
}

/// Accumulates elapsed time per step; repeated steps add up.
#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    entries: Vec<(Step, Duration)>,
}

impl StageTimings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, step: Step, elapsed: Duration) {
        match self.entries.iter_mut().find(|(s, _)| *s == step) {
            Some((_, total)) => *total += elapsed,
            None => self.entries.push((step, elapsed)),
        }
    }

    /// Runs `f` and charges its wall time to `step`.
    pub fn time<T>(&mut self, step: Step, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.add(step, start.elapsed());
        out
    }

    pub fn contains(&self, step: Step) -> bool {
        self.entries.iter().any(|(s, _)| *s == step)
    }

    pub fn steps(&self) -> Vec<Step> {
        self.entries.iter().map(|(s, _)| *s).collect()
    }

    pub fn records(&self) -> Vec<StageTiming> {
        self.entries.iter().map(|(stage, d)| StageTiming { stage: *stage, elapsed_ms: d.as_secs_f64() * 1e3 }).collect()
    }

    pub fn total_ms(&self) -> f64 {
        self.entries.iter().map(|(_, d)| d.as_secs_f64() * 1e3).sum()
    }
}
