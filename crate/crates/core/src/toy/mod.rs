//! Desk-scale stand-in for an LLM: multi-step integer arithmetic tasks and a
//! position-wise softmax policy that can be trained with the same pipeline.
//!
//! A task starts from an integer and applies `L` affine operations drawn from
//! a small vocabulary. Its reasoning path has one step per operation, so the
//! curriculum machinery sees the same step structure as for real problems.
//! The toy "model" reads the question and any guidance steps from the prompt,
//! follows the guidance verbatim and samples the remaining operations from
//! its policy.

mod backend;
mod policy;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use std::sync::LazyLock;

use crate::config::ToyTaskConfig;
use crate::data::{Problem, Source, STEP_DELIMITER};
use crate::gateway::GatewayError;

pub use backend::{ToyBackend, ToyLab};
pub use policy::{surrogate_objective, toy_grad, ToyPolicy, ToyTrainer};

/// `x -> mul * x + add`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyOp {
    pub mul: i64,
    pub add: i64,
    pub label: String,
}

impl ToyOp {
    /// Parses labels such as `+1`, `-1`, `−1`, `×2`, `*3`, `×4+3`.
    pub fn parse(label: &str) -> Result<Self, String> {
        let s = label.trim().replace('−', "-").replace('*', "×");
        let (mul, rest) = match s.strip_prefix('×') {
            Some(r) => {
                let end = r.find(['+', '-']).unwrap_or(r.len());
                let m: i64 = r[..end].parse().map_err(|_| format!("bad multiplier in {label:?}"))?;
                (m, &r[end..])
            }
            None => (1, s.as_str()),
        };
        let add = if rest.is_empty() {
            0
        } else {
            let digits = rest.strip_prefix('+').unwrap_or(rest);
            digits.parse::<i64>().map_err(|_| format!("bad offset in {label:?}"))?
        };
        if mul == 1 && add == 0 {
            return Err(format!("{label:?} is the identity"));
        }
        Ok(Self {
            mul,
            add,
            label: label.trim().to_string(),
        })
    }

    pub fn apply(&self, x: i64) -> Option<i64> {
        x.checked_mul(self.mul)?.checked_add(self.add)
    }
}

/// The operation vocabulary; its order fixes the policy's action indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ops: Vec<ToyOp>,
}

impl Vocab {
    pub fn parse(labels: &[String]) -> Result<Self, String> {
        if labels.len() < 2 {
            return Err("vocabulary needs at least two operations".into());
        }
        let ops = labels.iter().map(|l| ToyOp::parse(l)).collect::<Result<Vec<_>, _>>()?;
        for (i, a) in ops.iter().enumerate() {
            if ops[..i].iter().any(|b| b.label == a.label || (b.mul, b.add) == (a.mul, a.add)) {
                return Err(format!("duplicate operation {:?}", a.label));
            }
        }
        Ok(Self { ops })
    }

    pub fn from_labels(labels: &[&str]) -> Result<Self, String> {
        Self::parse(&labels.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn op(&self, i: usize) -> &ToyOp {
        &self.ops[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        let label = label.trim();
        self.ops.iter().position(|o| o.label == label)
    }

    /// Applies the operations in order; `None` on overflow.
    pub fn fold(&self, start: i64, ops: &[usize]) -> Option<i64> {
        ops.iter().try_fold(start, |x, &i| self.ops[i].apply(x))
    }

    /// Intermediate values after each operation.
    pub fn trace(&self, start: i64, ops: &[usize]) -> Option<Vec<i64>> {
        let mut x = start;
        ops.iter()
            .map(|&i| {
                x = self.ops[i].apply(x)?;
                Some(x)
            })
            .collect()
    }
}

/// A start value, an operation chain (vocabulary indices) and the answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyTask {
    pub start: i64,
    pub ops: Vec<usize>,
    pub answer: i64,
}

impl ToyTask {
    pub fn new(start: i64, ops: Vec<usize>, vocab: &Vocab) -> Option<Self> {
        if ops.is_empty() {
            return None;
        }
        let answer = vocab.fold(start, &ops)?;
        Some(Self { start, ops, answer })
    }
}

impl fmt::Display for ToyTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?} = {}", self.start, self.ops, self.answer)
    }
}

pub fn question_text(start: i64, ops: &[usize], vocab: &Vocab) -> String {
    let labels: Vec<&str> = ops.iter().map(|&i| vocab.op(i).label.as_str()).collect();
    format!(
        "Start with {start} and apply the operations {} in order. What is the final value?",
        labels.join(", ")
    )
}

pub fn step_text(label: &str, value: i64) -> String {
    format!("apply {label}: {value}")
}

pub fn final_line(value: i64) -> String {
    format!("Final value: \\boxed{{{value}}}")
}

/// Steps for `ops` from `start`; the last step also states `boxed` as the final answer.
pub fn cot_steps(start: i64, ops: &[usize], boxed: i64, vocab: &Vocab) -> Option<Vec<String>> {
    let trace = vocab.trace(start, ops)?;
    let mut steps: Vec<String> = ops
        .iter()
        .zip(&trace)
        .map(|(&op, &v)| step_text(&vocab.op(op).label, v))
        .collect();
    if let Some(last) = steps.last_mut() {
        last.push_str(". ");
        last.push_str(&final_line(boxed));
    }
    Some(steps)
}

/// Question, answer and the full reasoning path (steps joined by the delimiter).
pub fn render_task(task: &ToyTask, vocab: &Vocab) -> (String, String, String) {
    let steps = cot_steps(task.start, &task.ops, task.answer, vocab).expect("task answer already folded");
    (
        question_text(task.start, &task.ops, vocab),
        task.answer.to_string(),
        steps.join(STEP_DELIMITER),
    )
}

static QUESTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Start with (-?\d+) and apply the operations (.+?) in order\.").unwrap());
static STEP_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^apply (\S+): (-?\d+)").unwrap());
static HINT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)final answer is\s+\$?(-?\d+)").unwrap());

/// What the toy model understands of a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub start: i64,
    /// Operations listed in the question.
    pub task_ops: Vec<usize>,
    /// Guidance steps: raw text and the operation each one applies.
    pub guidance: Vec<(String, usize)>,
    /// Answer revealed by an answer-conditioned prompt.
    pub hint: Option<i64>,
}

pub fn parse_prompt(prompt: &str, vocab: &Vocab) -> Result<ParsedPrompt, GatewayError> {
    let caps = QUESTION_RE
        .captures(prompt)
        .ok_or_else(|| GatewayError::Protocol("toy backend: prompt does not contain a toy question".into()))?;
    let start: i64 = caps[1]
        .parse()
        .map_err(|_| GatewayError::Protocol("toy backend: start value out of range".into()))?;
    let task_ops = caps[2]
        .split(',')
        .map(|l| {
            vocab
                .index_of(l)
                .ok_or_else(|| GatewayError::Protocol(format!("toy backend: unknown operation {:?}", l.trim())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let question_end = caps.get(0).map_or(0, |m| m.end());
    let rest = &prompt[question_end..];
    let guidance = step_ops(rest, vocab)?
        .into_iter()
        .map(|(text, op)| (text.to_string(), op))
        .collect::<Vec<_>>();
    if guidance.len() > task_ops.len() {
        return Err(GatewayError::Protocol(format!(
            "toy backend: {} guidance steps for a {}-step task",
            guidance.len(),
            task_ops.len()
        )));
    }
    let hint = HINT_RE.captures(rest).and_then(|c| c[1].parse().ok());
    Ok(ParsedPrompt {
        start,
        task_ops,
        guidance,
        hint,
    })
}

/// Each `apply <op>: <value>` line with its vocabulary index.
fn step_ops<'a>(text: &'a str, vocab: &Vocab) -> Result<Vec<(&'a str, usize)>, GatewayError> {
    STEP_RE
        .captures_iter(text)
        .map(|c| {
            let line_end = text[c.get(0).unwrap().start()..]
                .find('\n')
                .map_or(text.len(), |e| c.get(0).unwrap().start() + e);
            let whole = &text[c.get(0).unwrap().start()..line_end];
            vocab
                .index_of(&c[1])
                .map(|op| (whole, op))
                .ok_or_else(|| GatewayError::Protocol(format!("toy backend: unknown operation {:?}", &c[1])))
        })
        .collect()
}

/// Operations chosen at each position of a toy completion, in order.
pub fn completion_actions(completion: &str, vocab: &Vocab) -> Vec<usize> {
    STEP_RE
        .captures_iter(completion)
        .map_while(|c| vocab.index_of(&c[1]))
        .collect()
}

/// Seeded task set. All tasks share one random operation chain; each position
/// is independently replaced by a uniform operation with probability
/// `chain_noise`. With probability `label_noise` the stored answer is wrong.
pub fn generate_tasks(cfg: &ToyTaskConfig, vocab: &Vocab, seed: u64) -> Vec<(ToyTask, Option<i64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(seed));
    let template: Vec<usize> = (0..cfg.length).map(|_| rng.random_range(0..vocab.len())).collect();
    let mut out = Vec::with_capacity(cfg.count);
    while out.len() < cfg.count {
        let start = rng.random_range(cfg.start_min..=cfg.start_max);
        let ops: Vec<usize> = template
            .iter()
            .map(|&t| {
                if rng.random_bool(cfg.chain_noise) {
                    rng.random_range(0..vocab.len())
                } else {
                    t
                }
            })
            .collect();
        let corrupt = rng.random_bool(cfg.label_noise);
        let offset = rng.random_range(1..=3i64) * if rng.random_bool(0.5) { 1 } else { -1 };
        if let Some(task) = ToyTask::new(start, ops, vocab) {
            let wrong = corrupt.then(|| task.answer + offset);
            out.push((task, wrong));
        }
    }
    out
}

/// Task set as dataset records; ids are `toy-0000`, `toy-0001`, ...
pub fn tasks_to_problems(tasks: &[(ToyTask, Option<i64>)], vocab: &Vocab) -> Vec<Problem> {
    tasks
        .iter()
        .enumerate()
        .map(|(i, (task, wrong))| {
            let (question, answer, _) = render_task(task, vocab);
            let mut p = Problem::new(
                format!("toy-{i:04}"),
                question,
                wrong.map_or(answer, |w| w.to_string()),
                Source::Synthetic,
            );
            let labels: Vec<&str> = task.ops.iter().map(|&o| vocab.op(o).label.as_str()).collect();
            p.meta.insert("toy_ops".into(), labels.join(" "));
            if wrong.is_some() {
                p.meta.insert("label_corrupted".into(), "true".into());
            }
            p
        })
        .collect()
}
