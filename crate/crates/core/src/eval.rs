//! pass@k estimation and benchmark scoring.

use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{write_jsonl, Problem};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, GenerationRequest};
use crate::seeds::derive_seed;
use crate::verifier::score_completion;

fn binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    (0..k).fold(BigInt::one(), |acc, i| acc * BigInt::from(n - i) / BigInt::from(i + 1))
}

/// Unbiased estimator `1 - C(n-c, k) / C(n, k)`, evaluated exactly.
pub fn pass_at_k_exact(n: u64, c: u64, k: u64) -> Result<BigRational> {
    if c > n {
        return Err(Error::contract(format!("correct count {c} exceeds samples {n}")));
    }
    if k == 0 || k > n {
        return Err(Error::contract(format!("k must be in 1..={n}, got {k}")));
    }
    Ok(BigRational::one() - BigRational::new(binomial(n - c, k), binomial(n, k)))
}

pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64> {
    Ok(pass_at_k_exact(n, c, k)?.to_f64().unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemScore {
    pub problem_id: String,
    pub samples: usize,
    pub correct: usize,
    /// `None` when generation failed.
    pub pass_at_1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Mean pass@1 over scored problems, in percent.
    pub pass_at_1: f64,
    pub problems: usize,
    pub scored: usize,
    pub missing: usize,
    pub eval_samples: usize,
    pub temperature: f64,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub scores: Vec<ProblemScore>,
    pub summary: EvalSummary,
}

/// Scores `eval_samples` completions per bare question at `temperature_eval`.
/// Problems whose generation fails are excluded from the mean and counted.
pub fn evaluate(problems: &[Problem], gateway: &Gateway, config: &RunConfig, seed: u64) -> Evaluation {
    let scores: Vec<ProblemScore> = problems
        .par_iter()
        .map(|p| {
            let request = GenerationRequest::new(
                p.question.clone(),
                config.eval_samples,
                config.temperature_eval,
                config.max_response_len,
            )
            .with_seed(derive_seed(seed, &[&"eval", &p.id]));
            match gateway.generate(&request) {
                Ok(r) => {
                    let correct = r.completions.iter().filter(|c| score_completion(c, &p.answer).correct).count();
                    let n = r.completions.len() as u64;
                    ProblemScore {
                        problem_id: p.id.clone(),
                        samples: r.completions.len(),
                        correct,
                        pass_at_1: pass_at_k(n, correct as u64, 1).ok(),
                        error: None,
                    }
                }
                Err(e) => ProblemScore {
                    problem_id: p.id.clone(),
                    samples: 0,
                    correct: 0,
                    pass_at_1: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let scored: Vec<f64> = scores.iter().filter_map(|s| s.pass_at_1).collect();
    let mean = if scored.is_empty() {
        0.0
    } else {
        100.0 * scored.iter().sum::<f64>() / scored.len() as f64
    };
    Evaluation {
        summary: EvalSummary {
            pass_at_1: mean,
            problems: problems.len(),
            scored: scored.len(),
            missing: problems.len() - scored.len(),
            eval_samples: config.eval_samples,
            temperature: config.temperature_eval,
            backend: gateway.backend_id(),
        },
        scores,
    }
}

/// Writes `eval.jsonl` and `eval_summary.json` into `dir`.
pub fn write_evaluation(dir: &Path, evaluation: &Evaluation) -> Result<()> {
    write_jsonl(&dir.join("eval.jsonl"), &evaluation.scores)?;
    let path = dir.join("eval_summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&evaluation.summary)?).map_err(|e| Error::io(path, e))
}
