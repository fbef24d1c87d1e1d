//! Domain records shared by every pipeline stage, their JSONL persistence and
//! invariant checks.
//!
//! All records are plain values: once built they are never mutated in place,
//! so they can be shared freely across worker threads.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Separator between reasoning steps, both when splitting a generated chain of
/// thought and when rebuilding a truncated prompt.
pub const STEP_DELIMITER: &str = "\n\n";

/// Where a problem came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Source {
    Gsm8k,
    Math,
    Synthetic,
    Other(String),
}

impl Source {
    pub fn as_str(&self) -> &str {
        match self {
            Source::Gsm8k => "gsm8k",
            Source::Math => "math",
            Source::Synthetic => "synthetic",
            Source::Other(tag) => tag,
        }
    }
}

impl From<&str> for Source {
    fn from(s: &str) -> Self {
        match s {
            "gsm8k" => Source::Gsm8k,
            "math" => Source::Math,
            "synthetic" => Source::Synthetic,
            other => Source::Other(other.to_string()),
        }
    }
}

impl Serialize for Source {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Source::from(s.as_str()))
    }
}

/// A question with its ground-truth final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Problem {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        answer: impl Into<String>,
        source: Source,
    ) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            answer: answer.into(),
            source,
            meta: BTreeMap::new(),
        }
    }
}

/// A verified reasoning path, already split into steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotTrajectory {
    pub problem_id: String,
    pub steps: Vec<String>,
    pub iteration: u32,
    pub verified: bool,
    pub verifier_answer: String,
}

impl CotTrajectory {
    /// Identifier used by curriculum samples; one trajectory per problem and iteration.
    pub fn id(&self) -> String {
        format!("{}/iter{}", self.problem_id, self.iteration)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.steps.is_empty() {
            return Err("trajectory has no steps".into());
        }
        if let Some(i) = self.steps.iter().position(|s| s.trim().is_empty()) {
            return Err(format!("step {} is empty", i + 1));
        }
        Ok(())
    }
}

/// One truncation level of a trajectory: the question plus its first `retained_steps` steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumSample {
    pub problem_id: String,
    pub trajectory_id: String,
    pub retained_steps: usize,
    pub prompt: String,
    pub target_answer: String,
}

impl CurriculumSample {
    pub fn new(problem: &Problem, trajectory: &CotTrajectory, retained_steps: usize) -> Result<Self> {
        if retained_steps > trajectory.steps.len() {
            return Err(Error::contract(format!(
                "retained_steps {} exceeds trajectory length {}",
                retained_steps,
                trajectory.steps.len()
            )));
        }
        Ok(Self {
            problem_id: problem.id.clone(),
            trajectory_id: trajectory.id(),
            retained_steps,
            prompt: guided_prompt(&problem.question, &trajectory.steps[..retained_steps]),
            target_answer: problem.answer.clone(),
        })
    }

    /// The bare-question sample used for selection, evaluation and the no-curriculum baseline.
    pub fn bare(problem: &Problem) -> Self {
        Self {
            problem_id: problem.id.clone(),
            trajectory_id: String::new(),
            retained_steps: 0,
            prompt: problem.question.clone(),
            target_answer: problem.answer.clone(),
        }
    }
}

/// `question`, followed by the delimiter and the guidance steps when there are any.
pub fn guided_prompt(question: &str, steps: &[String]) -> String {
    if steps.is_empty() {
        return question.to_string();
    }
    let mut prompt = String::with_capacity(question.len() + steps.iter().map(|s| s.len() + 2).sum::<usize>() + 2);
    prompt.push_str(question);
    for step in steps {
        prompt.push_str(STEP_DELIMITER);
        prompt.push_str(step);
    }
    prompt
}

/// G completions for one curriculum sample with their binary rewards and
/// group-relative advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub sample: CurriculumSample,
    pub completions: Vec<String>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub group_size: usize,
}

impl RolloutGroup {
    pub fn correct_count(&self) -> usize {
        self.rewards.iter().filter(|&&r| r == 1.0).count()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let g = self.group_size;
        if g < 2 {
            return Err(format!("group_size {g} < 2"));
        }
        if self.completions.len() != g || self.rewards.len() != g || self.advantages.len() != g {
            return Err(format!(
                "length mismatch: completions {}, rewards {}, advantages {}, group_size {g}",
                self.completions.len(),
                self.rewards.len(),
                self.advantages.len()
            ));
        }
        if let Some(r) = self.rewards.iter().find(|&&r| r != 0.0 && r != 1.0) {
            return Err(format!("reward {r} outside {{0, 1}}"));
        }
        if self.rewards.iter().all(|&r| r == self.rewards[0]) && self.advantages.iter().any(|&a| a != 0.0) {
            return Err("uniform rewards must give zero advantages".into());
        }
        let sum: f64 = self.advantages.iter().sum();
        if sum.abs() > 1e-9 {
            return Err(format!("advantages sum to {sum}, expected 0"));
        }
        Ok(())
    }
}

/// Metrics for one self-evolution iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub selected_hard_count: usize,
    pub stage1_generated: usize,
    pub stage1_verified: usize,
    pub stage1_yield: f64,
    pub curriculum_samples: usize,
    pub train_steps_executed: usize,
    pub rollout_correct_curve: Vec<(usize, usize)>,
    pub eval_pass_at_1: f64,
    pub wall_time_seconds: f64,
}

impl IterationReport {
    pub fn stage1_yield(generated: usize, verified: usize) -> f64 {
        if generated == 0 {
            0.0
        } else {
            verified as f64 / generated as f64
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.stage1_verified > self.stage1_generated {
            return Err("stage1_verified exceeds stage1_generated".into());
        }
        let expected = Self::stage1_yield(self.stage1_generated, self.stage1_verified);
        if (self.stage1_yield - expected).abs() > 1e-12 {
            return Err(format!("stage1_yield {} != {}", self.stage1_yield, expected));
        }
        Ok(())
    }
}

/// Why a dataset record was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{}: {}", v.id, v.reason))
            .collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Accepts the records iff ids are unique and questions/answers are non-empty.
pub fn validate_dataset(records: Vec<Problem>) -> std::result::Result<Vec<Problem>, ValidationReport> {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    let mut reported_dup = HashSet::new();
    for p in &records {
        if p.id.trim().is_empty() {
            report.violations.push(Violation {
                id: p.id.clone(),
                reason: "empty id".into(),
            });
        }
        if !seen.insert(p.id.as_str()) && reported_dup.insert(p.id.as_str()) {
            report.violations.push(Violation {
                id: p.id.clone(),
                reason: "duplicated id".into(),
            });
        }
        if p.question.trim().is_empty() {
            report.violations.push(Violation {
                id: p.id.clone(),
                reason: "empty question".into(),
            });
        }
        if p.answer.trim().is_empty() {
            report.violations.push(Violation {
                id: p.id.clone(),
                reason: "empty answer".into(),
            });
        }
    }
    if report.violations.is_empty() {
        Ok(records)
    } else {
        Err(report)
    }
}

/// Reads a problems file, reporting malformed lines and invariant violations together.
pub fn load_problems(path: &Path) -> Result<Vec<Problem>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut report = ValidationReport::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Problem>(&line) {
            Ok(p) => records.push(p),
            Err(e) => report.violations.push(Violation {
                id: format!("line {}", i + 1),
                reason: format!("malformed record: {e}"),
            }),
        }
    }
    match validate_dataset(records) {
        Ok(records) if report.violations.is_empty() => Ok(records),
        Ok(_) => Err(Error::Dataset(report)),
        Err(mut r) => {
            report.violations.append(&mut r.violations);
            Err(Error::Dataset(report))
        }
    }
}

/// Reads every line of a JSONL file; any malformed line is an error carrying its line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends one record and flushes, for per-item checkpoints.
pub fn append_jsonl<T: Serialize>(path: &Path, item: &T) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_vec(item)?;
    line.push(b'\n');
    file.write_all(&line).map_err(|e| Error::io(path, e))
}
