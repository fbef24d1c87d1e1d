//! Answer-guided reasoning-path generation: sample CoTs conditioned on the
//! question and its answer, keep those from which the model recovers the
//! answer without seeing it, and split the survivors into steps.

use std::collections::HashMap;
use std::path::Path;

use parking_lot::Mutex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{append_jsonl, read_jsonl, CotTrajectory, Problem, STEP_DELIMITER};
use crate::error::{Error, Result};
use crate::events::Observer;
use crate::gateway::{Gateway, GatewayError, GenerationRequest};
use crate::seeds::derive_seed;
use crate::verifier::{extract_final_answer, raw_equivalent};

/// Splits on the step delimiter, trims each segment and drops empty ones.
pub fn split_steps(cot: &str) -> Result<Vec<String>> {
    let steps: Vec<String> = cot
        .split(STEP_DELIMITER)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if steps.is_empty() {
        Err(Error::DegenerateCot)
    } else {
        Ok(steps)
    }
}

/// `stage1_candidates` CoTs sampled from the answer-conditioned template.
pub fn generate_cots(problem: &Problem, gateway: &Gateway, config: &RunConfig, seed: u64) -> Result<Vec<String>, GatewayError> {
    let prompt = config.templates.generation_prompt(&problem.question, &problem.answer);
    let request = GenerationRequest::new(
        prompt,
        config.stage1_candidates,
        config.temperature_stage1,
        config.max_response_len,
    )
    .with_seed(seed);
    Ok(gateway.generate(&request)?.completions)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub verified: bool,
    /// Answer extracted from the greedy verification completion.
    pub recovered: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// One greedy generation on (question, CoT) with the answer hidden; the CoT is
/// kept iff the recovered answer is equivalent to the ground truth.
pub fn verify_cot(problem: &Problem, cot: &str, gateway: &Gateway, config: &RunConfig) -> Result<Verification, GatewayError> {
    if cot.trim().is_empty() {
        return Err(GatewayError::InvalidRequest("cannot verify an empty CoT".into()));
    }
    let prompt = config.templates.verification_prompt(&problem.question, cot);
    let request = GenerationRequest::new(prompt, 1, 0.0, config.max_response_len).with_seed(config.seed);
    let response = gateway.generate(&request)?;
    let recovered = extract_final_answer(&response.completions[0]);
    Ok(match recovered {
        None => Verification {
            verified: false,
            recovered: None,
            reason: Some("no_answer_extracted".into()),
        },
        Some(a) => Verification {
            verified: raw_equivalent(&a, &problem.answer),
            recovered: Some(a),
            reason: None,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub index: usize,
    pub text: String,
    /// Empty when the text had no non-empty step.
    pub steps: Vec<String>,
    pub verified: bool,
    pub recovered: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Set only when the leakage diagnostic is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage_suspect: Option<bool>,
}

/// Everything Stage 1 learned about one problem; also the checkpoint unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemOutcome {
    pub problem_id: String,
    pub iteration: u32,
    pub candidates: Vec<CandidateRecord>,
    pub trajectory: Option<CotTrajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl ProblemOutcome {
    pub fn verified_count(&self) -> usize {
        self.candidates.iter().filter(|c| c.verified).count()
    }
}

/// A problem for which no candidate survived verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnsolvedRecord {
    pub problem_id: String,
    pub iteration: u32,
    pub answer: String,
    pub candidates: Vec<CandidateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stage1Result {
    /// In problem order.
    pub trajectories: Vec<CotTrajectory>,
    pub unsolved: Vec<UnsolvedRecord>,
    pub generated: usize,
    pub verified: usize,
    pub outcomes: Vec<ProblemOutcome>,
}

/// Fewest steps wins; ties go to the earliest candidate.
pub fn select_shortest(candidates: &[CandidateRecord]) -> Option<&CandidateRecord> {
    candidates
        .iter()
        .filter(|c| c.verified)
        .min_by_key(|c| (c.steps.len(), c.index))
}

/// The CoT's boxed answer is the target but the value it derives right before
/// disagrees: the answer looks appended rather than derived.
pub fn splice_suspect(steps: &[String], answer: &str) -> bool {
    let text = steps.join(STEP_DELIMITER);
    let Some(stated) = extract_final_answer(&text) else {
        return false;
    };
    if !raw_equivalent(&stated, answer) {
        return false;
    }
    let cut = text.rfind("\\boxed").unwrap_or(text.len());
    crate::verifier::last_numeric_token(&text[..cut]).is_some_and(|derived| !raw_equivalent(&derived, answer))
}

/// Generates, verifies and selects for one problem.
pub fn process_problem(problem: &Problem, gateway: &Gateway, config: &RunConfig, iteration: u32, observer: &Observer) -> ProblemOutcome {
    let seed = derive_seed(config.seed, &[&"stage1", &iteration, &problem.id]);
    let mut outcome = ProblemOutcome {
        problem_id: problem.id.clone(),
        iteration,
        candidates: Vec::new(),
        trajectory: None,
        skipped: None,
    };
    let texts = match generate_cots(problem, gateway, config, seed) {
        Ok(t) => t,
        Err(e) => {
            observer.warn(&format!("stage1: skipping {}: generation failed: {e}", problem.id));
            outcome.skipped = Some(if e.is_transport() { "transport_error".into() } else { format!("generation_error: {e}") });
            return outcome;
        }
    };
    for (index, text) in texts.into_iter().enumerate() {
        let mut record = CandidateRecord {
            index,
            text,
            steps: Vec::new(),
            verified: false,
            recovered: None,
            reason: None,
            leakage_suspect: None,
        };
        match split_steps(&record.text) {
            Err(_) => record.reason = Some("degenerate_cot".into()),
            Ok(steps) => {
                match verify_cot(problem, &steps.join(STEP_DELIMITER), gateway, config) {
                    Ok(v) => {
                        record.verified = v.verified;
                        record.recovered = v.recovered;
                        record.reason = v.reason;
                    }
                    Err(e) => record.reason = Some(format!("verification_error: {e}")),
                }
                if config.leakage_diagnostic {
                    record.leakage_suspect = Some(splice_suspect(&steps, &problem.answer));
                }
                record.steps = steps;
            }
        }
        outcome.candidates.push(record);
    }
    outcome.trajectory = select_shortest(&outcome.candidates).map(|c| CotTrajectory {
        problem_id: problem.id.clone(),
        steps: c.steps.clone(),
        iteration,
        verified: true,
        verifier_answer: c.recovered.clone().unwrap_or_default(),
    });
    outcome
}

/// Stage 1 over a problem set. With a checkpoint path, finished problems are
/// appended as they complete and reused (not regenerated) on the next call.
pub fn build_trajectories(
    problems: &[Problem],
    gateway: &Gateway,
    config: &RunConfig,
    iteration: u32,
    checkpoint: Option<&Path>,
    observer: &Observer,
) -> Result<Stage1Result> {
    let mut done: HashMap<String, ProblemOutcome> = HashMap::new();
    if let Some(path) = checkpoint.filter(|p| p.exists()) {
        for o in read_jsonl::<ProblemOutcome>(path)? {
            done.insert(o.problem_id.clone(), o);
        }
    }
    let writer = Mutex::new(());
    let finished = std::sync::atomic::AtomicUsize::new(done.len());
    let fresh: Vec<ProblemOutcome> = problems
        .par_iter()
        .filter(|p| !done.contains_key(&p.id))
        .map(|p| -> Result<ProblemOutcome> {
            let outcome = process_problem(p, gateway, config, iteration, observer);
            if let Some(path) = checkpoint {
                let _guard = writer.lock();
                append_jsonl(path, &outcome)?;
            }
            let n = finished.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
            if n.is_multiple_of((config.progress_interval * 10).max(problems.len() / 4).max(1)) {
                observer.progress(&format!("stage1: {n}/{} problems", problems.len()));
            }
            Ok(outcome)
        })
        .collect::<Result<_>>()?;
    done.extend(fresh.into_iter().map(|o| (o.problem_id.clone(), o)));

    let mut result = Stage1Result::default();
    for problem in problems {
        let outcome = done.remove(&problem.id).expect("every problem processed");
        result.generated += outcome.candidates.len();
        result.verified += outcome.verified_count();
        match &outcome.trajectory {
            Some(t) => result.trajectories.push(t.clone()),
            None => result.unsolved.push(UnsolvedRecord {
                problem_id: problem.id.clone(),
                iteration,
                answer: problem.answer.clone(),
                candidates: outcome.candidates.clone(),
                skipped: outcome.skipped.clone(),
            }),
        }
        result.outcomes.push(outcome);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Source;
    use crate::gateway::{FixtureRecord, ScriptedBackend};
    use std::sync::Arc;

    fn record(index: usize, steps: usize, verified: bool) -> CandidateRecord {
        CandidateRecord {
            index,
            text: String::new(),
            steps: vec!["s".into(); steps],
            verified,
            recovered: None,
            reason: None,
            leakage_suspect: None,
        }
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_steps("a\n\nb\n\nc").unwrap(), vec!["a", "b", "c"]);
        assert_eq!(split_steps("a").unwrap(), vec!["a"]);
        assert_eq!(split_steps("a\n\n\n\nb").unwrap(), vec!["a", "b"]);
        assert_eq!(split_steps("  a \n\n b\n").unwrap(), vec!["a", "b"]);
        assert!(matches!(split_steps("\n\n  \n\n"), Err(Error::DegenerateCot)));
    }

    #[test]
    fn shortest_verified_wins_ties_by_index() {
        let c = vec![record(0, 4, true), record(1, 2, true), record(2, 5, true), record(3, 1, false)];
        assert_eq!(select_shortest(&c).unwrap().index, 1);
        let tie = vec![record(0, 3, false), record(1, 2, true), record(2, 2, true)];
        assert_eq!(select_shortest(&tie).unwrap().index, 1);
        assert!(select_shortest(&[record(0, 1, false)]).is_none());
    }

    #[test]
    fn splice_heuristic() {
        let spliced = vec!["apply +1: 4".to_string(), "apply ×2: 7. Final value: \\boxed{9}".to_string()];
        assert!(splice_suspect(&spliced, "9"));
        let honest = vec!["apply +1: 4".to_string(), "apply ×2: 8. Final value: \\boxed{8}".to_string()];
        assert!(!splice_suspect(&honest, "8"));
        assert!(!splice_suspect(&spliced, "7"));
    }

    fn problem() -> Problem {
        Problem::new("p", "What is 4+4?", "8", Source::Other("t".into()))
    }

    fn scripted(config: &RunConfig, cots: &[&str], verdicts: &[&str]) -> Gateway {
        let p = problem();
        let mut records = vec![FixtureRecord::for_prompt(
            &config.templates.generation_prompt(&p.question, &p.answer),
            cots.iter().map(|s| s.to_string()).collect(),
        )];
        for (cot, verdict) in cots.iter().zip(verdicts) {
            if let Ok(steps) = split_steps(cot) {
                let prompt = config.templates.verification_prompt(&p.question, &steps.join(STEP_DELIMITER));
                records.push(FixtureRecord::for_prompt(&prompt, vec![verdict.to_string()]));
            }
        }
        Gateway::new(Arc::new(ScriptedBackend::from_records(records)))
    }

    #[test]
    fn verification_examples() {
        let config = RunConfig::default();
        let gw = scripted(&config, &["4+4\n\n=8", "x\n\ny", "z"], &["so \\boxed{8}", "\\boxed{9}", "nothing"]);
        let p = problem();
        assert!(verify_cot(&p, "4+4\n\n=8", &gw, &config).unwrap().verified);
        let v = verify_cot(&p, "x\n\ny", &gw, &config).unwrap();
        assert_eq!((v.verified, v.recovered.as_deref()), (false, Some("9")));
        let v = verify_cot(&p, "z", &gw, &config).unwrap();
        assert_eq!(v.reason.as_deref(), Some("no_answer_extracted"));

        let half = Problem::new("h", "Half?", "0.5", Source::Math);
        let prompt = config.templates.verification_prompt(&half.question, "c");
        let gw = Gateway::new(Arc::new(ScriptedBackend::from_records([FixtureRecord::for_prompt(
            &prompt,
            vec!["\\boxed{1/2}".into()],
        )])));
        assert!(verify_cot(&half, "c", &gw, &config).unwrap().verified);
    }

    #[test]
    fn build_keeps_shortest_verified_and_records_unsolved() {
        let config = RunConfig {
            stage1_candidates: 4,
            ..RunConfig::default()
        };
        let cots = ["a\n\nb\n\nc\n\nd", "a\n\nb", "a\n\nb\n\nc\n\nd\n\ne", "q"];
        let gw = scripted(&config, &cots, &["\\boxed{8}", "\\boxed{8}", "\\boxed{8}", "\\boxed{7}"]);
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("ckpt.jsonl");
        let r = build_trajectories(&[problem()], &gw, &config, 1, Some(&ckpt), &Observer::silent()).unwrap();
        assert_eq!((r.generated, r.verified), (4, 3));
        assert_eq!(r.trajectories[0].steps, vec!["a", "b"]);
        assert_eq!(r.trajectories[0].verifier_answer, "8");

        // Resume: the checkpoint answers without touching the backend.
        let empty = Gateway::new(Arc::new(ScriptedBackend::default()));
        let again = build_trajectories(&[problem()], &empty, &config, 1, Some(&ckpt), &Observer::silent()).unwrap();
        assert_eq!(again.trajectories, r.trajectories);

        let bad = scripted(&config, &cots, &["\\boxed{1}"; 4]);
        let r = build_trajectories(&[problem()], &bad, &config, 2, None, &Observer::silent()).unwrap();
        assert!(r.trajectories.is_empty());
        assert_eq!(r.unsolved[0].problem_id, "p");
        assert_eq!(r.unsolved[0].candidates.len(), 4);
    }

    #[test]
    fn generation_failure_skips_problem() {
        let config = RunConfig::default();
        let gw = Gateway::new(Arc::new(ScriptedBackend::default()));
        let r = build_trajectories(&[problem()], &gw, &config, 1, None, &Observer::silent()).unwrap();
        assert_eq!(r.generated, 0);
        assert!(r.unsolved[0].skipped.is_some());
    }
}
