//! The self-evolving loop: select hard problems, build verified trajectories,
//! train on their truncation curriculum, evaluate, repeat.
//!
//! Every step persists its artifacts under `runs/<run_id>/iter<t>/` and
//! reuses them when present, so an aborted iteration resumes without
//! regenerating finished work.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{BackendConfig, RunConfig};
use crate::data::{load_problems, read_jsonl, write_jsonl, CotTrajectory, IterationReport, Problem};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_evaluation, Evaluation};
use crate::events::Observer;
use crate::gateway::{load_fixture, Backend, Gateway, GatewayError, GenerationRequest, HttpBackend, HttpOptions};
use crate::seeds::derive_seed;
use crate::stage1::{build_trajectories, splice_suspect, Stage1Result, UnsolvedRecord};
use crate::stage2::{bare_schedule, run_batches, schedule_curriculum, RecorderTrainer, Stage2Outcome, Stage2Paths, Trainer};
use crate::toy::{generate_tasks, tasks_to_problems, ToyLab};
use crate::verifier::{raw_equivalent, score_completion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStatus {
    Hard,
    Solved,
    UnselectedTransportError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub problem_id: String,
    pub samples: usize,
    pub correct: usize,
    pub status: SelectionStatus,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub hard: Vec<Problem>,
    pub records: Vec<SelectionRecord>,
    /// First generation failure, kept so a dead backend can be reported as such.
    pub first_error: Option<GatewayError>,
}

/// Keeps the problems for which none of `rollouts_for_selection` samples on
/// the bare question is correct. Transport failures mark the problem and move on.
pub fn select_hard_problems(dataset: &[Problem], gateway: &Gateway, config: &RunConfig, seed: u64) -> Selection {
    let results: Vec<(SelectionRecord, Option<GatewayError>)> = dataset
        .par_iter()
        .map(|p| {
            let request = GenerationRequest::new(
                p.question.clone(),
                config.rollouts_for_selection,
                config.temperature_train,
                config.max_response_len,
            )
            .with_seed(derive_seed(seed, &[&p.id]));
            match gateway.generate(&request) {
                Ok(r) => {
                    let correct = r.completions.iter().filter(|c| score_completion(c, &p.answer).correct).count();
                    let record = SelectionRecord {
                        problem_id: p.id.clone(),
                        samples: r.completions.len(),
                        correct,
                        status: if correct == 0 { SelectionStatus::Hard } else { SelectionStatus::Solved },
                    };
                    (record, None)
                }
                Err(e) => {
                    log::warn!("selection failed for {}: {e}", p.id);
                    let record = SelectionRecord {
                        problem_id: p.id.clone(),
                        samples: 0,
                        correct: 0,
                        status: SelectionStatus::UnselectedTransportError,
                    };
                    (record, Some(e))
                }
            }
        })
        .collect();
    let (records, errors): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let first_error = errors.into_iter().flatten().next();
    let hard = dataset
        .iter()
        .zip(&records)
        .filter(|(_, r)| r.status == SelectionStatus::Hard)
        .map(|(p, _)| p.clone())
        .collect();
    Selection {
        hard,
        records,
        first_error,
    }
}

/// True iff the latest pass@1 improvement is below `epsilon` points.
pub fn detect_saturation(reports: &[IterationReport], epsilon: f64) -> bool {
    match reports {
        [.., prev, last] => last.eval_pass_at_1 - prev.eval_pass_at_1 < epsilon,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosisClass {
    SuspectGroundTruth,
    SpliceSuspect,
    NeverVerified,
}

/// Review flags for one persistently unsolved problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub problem_id: String,
    /// The most specific flag.
    pub class: DiagnosisClass,
    pub flags: Vec<DiagnosisClass>,
    pub answer: String,
    /// The recovered answer most candidates agreed on, when one disagreeing answer reached 3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistent_answer: Option<String>,
    pub consistent_count: usize,
    pub iterations: Vec<u32>,
}

pub const SUSPECT_GROUND_TRUTH_MIN: usize = 3;

/// Classifies problems that stayed unsolved from their first appearance in
/// an unsolved list through the last iteration.
pub fn diagnose_unsolved(unsolved_by_iteration: &[Vec<UnsolvedRecord>], dataset: &[Problem]) -> Vec<Diagnosis> {
    let Some(last) = unsolved_by_iteration.len().checked_sub(1) else {
        return Vec::new();
    };
    let mut history: BTreeMap<&str, Vec<(usize, &UnsolvedRecord)>> = BTreeMap::new();
    for (i, list) in unsolved_by_iteration.iter().enumerate() {
        for r in list {
            history.entry(r.problem_id.as_str()).or_default().push((i, r));
        }
    }
    let order: BTreeMap<&str, usize> = dataset.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    let mut out: Vec<(usize, Diagnosis)> = history
        .into_iter()
        .filter(|(_, recs)| recs.len() == last - recs[0].0 + 1 && recs.last().is_some_and(|r| r.0 == last))
        .map(|(id, recs)| {
            let answer = dataset
                .iter()
                .find(|p| p.id == id)
                .map_or_else(|| recs[0].1.answer.clone(), |p| p.answer.clone());
            let candidates: Vec<_> = recs.iter().flat_map(|(_, r)| &r.candidates).collect();
            let mut flags = Vec::new();

            // Cluster recovered answers by equivalence.
            let mut clusters: Vec<(String, usize)> = Vec::new();
            for a in candidates.iter().filter_map(|c| c.recovered.as_deref()) {
                match clusters.iter_mut().find(|(rep, _)| raw_equivalent(rep, a)) {
                    Some(c) => c.1 += 1,
                    None => clusters.push((a.to_string(), 1)),
                }
            }
            let top = clusters
                .iter()
                .filter(|(rep, _)| !raw_equivalent(rep, &answer))
                .max_by_key(|(_, n)| *n)
                .filter(|(_, n)| *n >= SUSPECT_GROUND_TRUTH_MIN)
                .cloned();
            if top.is_some() {
                flags.push(DiagnosisClass::SuspectGroundTruth);
            }
            if candidates.iter().any(|c| !c.steps.is_empty() && splice_suspect(&c.steps, &answer)) {
                flags.push(DiagnosisClass::SpliceSuspect);
            }
            if candidates.iter().all(|c| !c.verified) {
                flags.push(DiagnosisClass::NeverVerified);
            }
            let class = flags.iter().min().copied().unwrap_or(DiagnosisClass::NeverVerified);
            let diagnosis = Diagnosis {
                problem_id: id.to_string(),
                class,
                flags,
                answer,
                consistent_count: top.as_ref().map_or(0, |t| t.1),
                consistent_answer: top.map(|t| t.0),
                iterations: recs.iter().map(|(_, r)| r.iteration).collect(),
            };
            (order.get(id).copied().unwrap_or(usize::MAX), diagnosis)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.problem_id.cmp(&b.1.problem_id)));
    out.into_iter().map(|(_, d)| d).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub backend: String,
    pub version: String,
    pub config: RunConfig,
}

/// Exclusive claim on a run directory, released on drop.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path, run_id: &str) -> Result<Self> {
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(run_id.to_string())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

/// Backend, trainer and, for the toy backend, its lab.
pub type BackendParts = (Arc<dyn Backend>, Box<dyn Trainer>, Option<ToyLab>);

pub fn build_backend(config: &RunConfig) -> Result<BackendParts> {
    Ok(match &config.backend {
        BackendConfig::Toy => {
            let lab = ToyLab::new(&config.toy)?;
            let trainer = lab.trainer(config.effective_toy_lr(), config.kl_coefficient);
            (Arc::new(lab.backend()), Box::new(trainer), Some(lab))
        }
        BackendConfig::Scripted { fixture_path } => {
            (Arc::new(load_fixture(fixture_path)?), Box::new(RecorderTrainer::new()), None)
        }
        BackendConfig::Http {
            endpoint,
            model,
            key_env,
            max_in_flight,
            timeout_secs,
            retries,
            initial_backoff_ms,
        } => {
            let backend = HttpBackend::new(HttpOptions {
                endpoint: endpoint.clone(),
                model: model.clone(),
                key_env: key_env.clone(),
                max_in_flight: *max_in_flight,
                timeout: Duration::from_secs(*timeout_secs),
                attempts: *retries,
                initial_backoff: Duration::from_millis(*initial_backoff_ms),
            });
            (Arc::new(backend), Box::new(RecorderTrainer::new()), None)
        }
    })
}

/// The training set: the configured dataset, or a generated toy task set.
pub fn load_dataset(config: &RunConfig, lab: Option<&ToyLab>) -> Result<Vec<Problem>> {
    match (&config.dataset, lab) {
        (Some(path), _) => load_problems(path),
        (None, Some(lab)) => {
            let tasks = generate_tasks(&config.toy.tasks, &lab.vocab, config.seed);
            Ok(tasks_to_problems(&tasks, &lab.vocab))
        }
        (None, None) => Err(Error::Config(format!(
            "`dataset` is required with the {} backend",
            config.backend.kind()
        ))),
    }
}

/// Result of the whole loop.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOutcome {
    pub reports: Vec<IterationReport>,
    pub saturated_at: Option<u32>,
    pub diagnostics: Vec<Diagnosis>,
}

/// Result of the no-curriculum baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub hard_count: usize,
    pub stage2: Stage2Outcome,
    pub evaluation: Evaluation,
}

/// An open run directory with its backend, trainer and datasets.
pub struct Run {
    pub config: RunConfig,
    pub run_id: String,
    pub dir: PathBuf,
    pub gateway: Gateway,
    pub trainer: Box<dyn Trainer>,
    pub dataset: Vec<Problem>,
    pub eval_set: Vec<Problem>,
    pub observer: Observer,
    _lock: RunLock,
}

impl Run {
    /// Creates `root/run_id` (or reopens it when the stored config matches).
    pub fn open(config: RunConfig, root: &Path, run_id: &str, observer: Observer) -> Result<Self> {
        config.validate()?;
        let dir = root.join(run_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let lock = RunLock::acquire(&dir, run_id)?;
        let (backend, trainer, lab) = build_backend(&config)?;
        let gateway = Gateway::new(backend).with_prompt_limit(config.max_prompt_len);

        let manifest_path = dir.join("manifest.json");
        if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            let existing: Manifest = serde_json::from_str(&text)?;
            if existing.config_hash != config.hash() {
                return Err(Error::contract(format!(
                    "run {run_id} already exists with a different config (hash {}); use a new --run-id",
                    existing.config_hash
                )));
            }
        }

        let dataset_path = dir.join("dataset.jsonl");
        let dataset = if dataset_path.exists() {
            load_problems(&dataset_path)?
        } else {
            let d = load_dataset(&config, lab.as_ref())?;
            write_jsonl(&dataset_path, &d)?;
            d
        };
        let eval_set = match &config.eval_dataset {
            Some(p) => load_problems(p)?,
            None => dataset.clone(),
        };
        if !manifest_path.exists() {
            let manifest = Manifest {
                run_id: run_id.to_string(),
                config_hash: config.hash(),
                seed: config.seed,
                backend: gateway.backend_id(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: config.clone(),
            };
            write_json(&manifest_path, &manifest)?;
        }
        Ok(Self {
            config,
            run_id: run_id.to_string(),
            dir,
            gateway,
            trainer,
            dataset,
            eval_set,
            observer,
            _lock: lock,
        })
    }

    pub fn iter_dir(&self, t: u32) -> PathBuf {
        self.dir.join(format!("iter{t}"))
    }

    fn ensure_iter_dir(&self, t: u32) -> Result<PathBuf> {
        let d = self.iter_dir(t);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    fn check_iteration(&self, t: u32) -> Result<()> {
        if t == 0 {
            return Err(Error::contract("iterations are numbered from 1"));
        }
        Ok(())
    }

    /// Puts the trainer in the state it had when iteration `t` started.
    fn restore_iteration_start(&mut self, t: u32) -> Result<()> {
        let dir = self.ensure_iter_dir(t)?;
        let start = dir.join("policy_start.json");
        if start.exists() {
            return self.trainer.load_state(&start);
        }
        if t > 1 {
            let prev = self.iter_dir(t - 1).join("policy_end.json");
            if !prev.exists() {
                return Err(Error::contract(format!(
                    "iteration {} has not finished training ({} missing)",
                    t - 1,
                    prev.display()
                )));
            }
            self.trainer.load_state(&prev)?;
        }
        self.trainer.save_state(&start)
    }

    /// Problems eligible for selection: the full dataset at `t = 1`, afterwards
    /// the first iteration's hard pool.
    fn selection_pool(&self, t: u32) -> Result<Vec<Problem>> {
        if t == 1 {
            return Ok(self.dataset.clone());
        }
        let path = self.iter_dir(1).join("problems.jsonl");
        if !path.exists() {
            return Err(Error::contract(format!("{} missing; run iteration 1 first", path.display())));
        }
        read_jsonl(&path)
    }

    pub fn select_step(&mut self, t: u32) -> Result<Vec<Problem>> {
        self.check_iteration(t)?;
        let dir = self.ensure_iter_dir(t)?;
        let problems_path = dir.join("problems.jsonl");
        let records_path = dir.join("selection.jsonl");
        if problems_path.exists() && records_path.exists() {
            return read_jsonl(&problems_path);
        }
        self.restore_iteration_start(t)?;
        let pool = self.selection_pool(t)?;
        let selection = select_hard_problems(&pool, &self.gateway, &self.config, derive_seed(self.config.seed, &[&"select", &t]));
        let errors = selection
            .records
            .iter()
            .filter(|r| r.status == SelectionStatus::UnselectedTransportError)
            .count();
        if errors > 0 && errors == pool.len() {
            // Nothing came back at all: the backend is down, not the problems hard.
            if let Some(e) = selection.first_error {
                return Err(e.into());
            }
        }
        if errors > 0 {
            self.observer.warn(&format!("selection: {errors} problem(s) unselected after transport errors"));
        }
        write_jsonl(&records_path, &selection.records)?;
        write_jsonl(&problems_path, &selection.hard)?;
        self.observer.progress(&format!(
            "iter {t}: selected {} hard problems out of {}",
            selection.hard.len(),
            pool.len()
        ));
        self.observer.event("selection", json!({ "iteration": t, "pool": pool.len(), "hard": selection.hard.len() }));
        Ok(selection.hard)
    }

    fn hard_problems(&self, t: u32) -> Result<Vec<Problem>> {
        let path = self.iter_dir(t).join("problems.jsonl");
        if !path.exists() {
            return Err(Error::contract(format!("{} missing; run select-hard first", path.display())));
        }
        read_jsonl(&path)
    }

    pub fn stage1_step(&mut self, t: u32) -> Result<Stage1Result> {
        self.check_iteration(t)?;
        let problems = self.hard_problems(t)?;
        self.restore_iteration_start(t)?;
        let dir = self.iter_dir(t);
        let result = build_trajectories(
            &problems,
            &self.gateway,
            &self.config,
            t,
            Some(&dir.join("stage1_checkpoint.jsonl")),
            &self.observer,
        )?;
        write_jsonl(&dir.join("trajectories.jsonl"), &result.trajectories)?;
        write_jsonl(&dir.join("unsolved.jsonl"), &result.unsolved)?;
        self.observer.progress(&format!(
            "iter {t}: stage1 verified {}/{} candidates, {} trajectories, {} unsolved",
            result.verified,
            result.generated,
            result.trajectories.len(),
            result.unsolved.len()
        ));
        self.observer.event(
            "stage1",
            json!({ "iteration": t, "generated": result.generated, "verified": result.verified,
                    "trajectories": result.trajectories.len(), "unsolved": result.unsolved.len() }),
        );
        Ok(result)
    }

    pub fn stage2_step(&mut self, t: u32) -> Result<Stage2Outcome> {
        self.check_iteration(t)?;
        let dir = self.iter_dir(t);
        let traj_path = dir.join("trajectories.jsonl");
        if !traj_path.exists() {
            return Err(Error::contract(format!("{} missing; run stage1 first", traj_path.display())));
        }
        let trajectories: Vec<CotTrajectory> = read_jsonl(&traj_path)?;
        let problems = self.hard_problems(t)?;
        self.restore_iteration_start(t)?;
        self.trainer.begin_iteration(&dir)?;
        let export = dir.join("train_export.jsonl");
        if export.exists() {
            std::fs::remove_file(&export).map_err(|e| Error::io(&export, e))?;
        }
        let batches = schedule_curriculum(&problems, &trajectories, &self.config)?;
        let outcome = run_batches(
            &batches,
            &self.gateway,
            self.trainer.as_mut(),
            &self.config,
            derive_seed(self.config.seed, &[&"stage2", &t]),
            &Stage2Paths::in_dir(&dir),
            &self.observer,
        )?;
        self.trainer.save_state(&dir.join("policy_end.json"))?;
        Ok(outcome)
    }

    /// Evaluates the policy as it stands after iteration `t` (or at its start
    /// when it has not trained yet).
    pub fn eval_step(&mut self, t: u32) -> Result<Evaluation> {
        self.check_iteration(t)?;
        let dir = self.ensure_iter_dir(t)?;
        let end = dir.join("policy_end.json");
        if end.exists() {
            self.trainer.load_state(&end)?;
        } else {
            self.restore_iteration_start(t)?;
        }
        let evaluation = evaluate(&self.eval_set, &self.gateway, &self.config, self.eval_seed());
        write_evaluation(&dir, &evaluation)?;
        if evaluation.summary.missing > 0 {
            self.observer
                .warn(&format!("eval: {} problem(s) missing after generation errors", evaluation.summary.missing));
        }
        Ok(evaluation)
    }

    /// The same sampling seed at every evaluation, so differences between
    /// iterations come from the policy rather than from sampling noise.
    pub fn eval_seed(&self) -> u64 {
        derive_seed(self.config.seed, &[&"eval"])
    }

    fn completed_report(&self, t: u32) -> Result<Option<IterationReport>> {
        let path = self.iter_dir(t).join("reports.jsonl");
        if !path.exists() {
            return Ok(None);
        }
        Ok(read_jsonl::<IterationReport>(&path)?.into_iter().next())
    }

    /// Select, Stage 1, Stage 2 and evaluation for iteration `t`.
    pub fn run_iteration(&mut self, t: u32) -> Result<IterationReport> {
        let started = Instant::now();
        let hard = self.select_step(t)?;
        let s1 = self.stage1_step(t)?;
        let s2 = self.stage2_step(t)?;
        let evaluation = self.eval_step(t)?;
        let report = IterationReport {
            iteration: t,
            selected_hard_count: hard.len(),
            stage1_generated: s1.generated,
            stage1_verified: s1.verified,
            stage1_yield: IterationReport::stage1_yield(s1.generated, s1.verified),
            curriculum_samples: s2.samples,
            train_steps_executed: s2.train_steps,
            rollout_correct_curve: s2.curve,
            eval_pass_at_1: evaluation.summary.pass_at_1,
            wall_time_seconds: if self.config.record_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        write_jsonl(&self.iter_dir(t).join("reports.jsonl"), [&report])?;
        self.observer.progress(&format!(
            "iter {t}: pass@1 {:.2} after {} train steps",
            report.eval_pass_at_1, report.train_steps_executed
        ));
        self.observer.event("iteration", serde_json::to_value(&report)?);
        Ok(report)
    }

    /// Runs iterations `1..=iterations`, skipping completed ones, stopping
    /// early on saturation when configured to.
    pub fn evolve(&mut self) -> Result<EvolveOutcome> {
        let mut reports = Vec::new();
        let mut saturated_at = None;
        for t in 1..=self.config.iterations {
            let report = match self.completed_report(t)? {
                Some(r) => {
                    self.trainer.load_state(&self.iter_dir(t).join("policy_end.json"))?;
                    self.observer.progress(&format!("iter {t}: already complete, skipping"));
                    r
                }
                None => self.run_iteration(t)?,
            };
            reports.push(report);
            write_jsonl(&self.dir.join("reports.jsonl"), &reports)?;
            if saturated_at.is_none() && detect_saturation(&reports, self.config.saturation_epsilon) {
                saturated_at = Some(t);
                self.observer.progress(&format!("iter {t}: pass@1 saturated"));
                if self.config.stop_on_saturation {
                    break;
                }
            }
        }
        let unsolved = (1..=reports.len() as u32)
            .map(|t| read_jsonl::<UnsolvedRecord>(&self.iter_dir(t).join("unsolved.jsonl")))
            .collect::<Result<Vec<_>>>()?;
        let diagnostics = diagnose_unsolved(&unsolved, &self.dataset);
        write_jsonl(&self.dir.join("diagnostics.jsonl"), &diagnostics)?;
        write_json(
            &self.dir.join("summary.json"),
            &json!({
                "run_id": self.run_id,
                "iterations": reports.len(),
                "pass_at_1": reports.iter().map(|r| r.eval_pass_at_1).collect::<Vec<_>>(),
                "saturated_at": saturated_at,
                "diagnosed": diagnostics.len(),
            }),
        )?;
        Ok(EvolveOutcome {
            reports,
            saturated_at,
            diagnostics,
        })
    }

    /// GRPO on bare questions of the first selection's hard set for `steps`
    /// batches, then evaluation. Artifacts go to `baseline/`.
    pub fn baseline(&mut self, steps: usize) -> Result<BaselineOutcome> {
        let dir = self.dir.join("baseline");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let selection = select_hard_problems(
            &self.dataset,
            &self.gateway,
            &self.config,
            derive_seed(self.config.seed, &[&"select", &1u32]),
        );
        write_jsonl(&dir.join("problems.jsonl"), &selection.hard)?;
        self.trainer.save_state(&dir.join("policy_start.json"))?;
        self.trainer.begin_iteration(&dir)?;
        let batches = bare_schedule(&selection.hard, self.config.train_batch_size, steps);
        let stage2 = run_batches(
            &batches,
            &self.gateway,
            self.trainer.as_mut(),
            &self.config,
            derive_seed(self.config.seed, &[&"baseline"]),
            &Stage2Paths::in_dir(&dir),
            &self.observer,
        )?;
        self.trainer.save_state(&dir.join("policy_end.json"))?;
        let evaluation = evaluate(&self.eval_set, &self.gateway, &self.config, self.eval_seed());
        write_evaluation(&dir, &evaluation)?;
        Ok(BaselineOutcome {
            hard_count: selection.hard.len(),
            stage2,
            evaluation,
        })
    }
}

/// Iteration reports of a run, from its top-level `reports.jsonl` or, failing
/// that, from the iteration directories.
pub fn load_reports(run_dir: &Path) -> Result<Vec<IterationReport>> {
    let top = run_dir.join("reports.jsonl");
    if top.exists() {
        return read_jsonl(&top);
    }
    let mut reports = Vec::new();
    for t in 1.. {
        let path = run_dir.join(format!("iter{t}")).join("reports.jsonl");
        if !path.exists() {
            break;
        }
        reports.extend(read_jsonl::<IterationReport>(&path)?);
    }
    Ok(reports)
}
