//! Step-wise curriculum learning: truncation schedules, group rollouts,
//! group-relative advantages and trainer updates.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Interleave, RunConfig};
use crate::data::{append_jsonl, CotTrajectory, CurriculumSample, Problem, RolloutGroup};
use crate::error::{Error, Result};
use crate::events::Observer;
use crate::gateway::{Gateway, GenerationRequest};
use crate::seeds::derive_seed;
use crate::verifier::score_completion;

pub const ADVANTAGE_EPSILON: f64 = 1e-8;

/// One training step's worth of curriculum samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBatch {
    pub samples: Vec<CurriculumSample>,
    pub step_index: usize,
}

/// Samples `k = n, n-1, ..., 0` for one trajectory.
pub fn curriculum_for(problem: &Problem, trajectory: &CotTrajectory) -> Result<Vec<CurriculumSample>> {
    (0..=trajectory.len())
        .rev()
        .map(|k| CurriculumSample::new(problem, trajectory, k))
        .collect()
}

/// Orders every trajectory's curriculum (dataset order unless `shuffle_dataset`
/// is set; levels of one trajectory always stay together), cuts it
/// into batches of `train_batch_size` and keeps at most `max_train_steps` batches.
pub fn schedule_curriculum(
    problems: &[Problem],
    trajectories: &[CotTrajectory],
    config: &RunConfig,
) -> Result<Vec<TrainBatch>> {
    let by_id: HashMap<&str, &Problem> = problems.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut per_trajectory = trajectories
        .iter()
        .map(|t| {
            let problem = by_id
                .get(t.problem_id.as_str())
                .ok_or_else(|| Error::contract(format!("trajectory for unknown problem {}", t.problem_id)))?;
            curriculum_for(problem, t)
        })
        .collect::<Result<Vec<_>>>()?;
    if config.shuffle_dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[&"shuffle"]));
        per_trajectory.shuffle(&mut rng);
    }
    let stream = interleave(per_trajectory, config.interleave);
    Ok(into_batches(stream, config.train_batch_size, config.max_train_steps))
}

fn interleave(lists: Vec<Vec<CurriculumSample>>, mode: Interleave) -> Vec<CurriculumSample> {
    match mode {
        Interleave::Sequential => lists.into_iter().flatten().collect(),
        Interleave::RoundRobin => {
            let mut iters: Vec<_> = lists.into_iter().map(Vec::into_iter).collect();
            let mut out = Vec::new();
            loop {
                let before = out.len();
                out.extend(iters.iter_mut().filter_map(Iterator::next));
                if out.len() == before {
                    return out;
                }
            }
        }
    }
}

fn into_batches(stream: Vec<CurriculumSample>, batch_size: usize, max_steps: usize) -> Vec<TrainBatch> {
    stream
        .chunks(batch_size.max(1))
        .take(max_steps)
        .enumerate()
        .map(|(i, chunk)| TrainBatch {
            samples: chunk.to_vec(),
            step_index: i + 1,
        })
        .collect()
}

/// The no-curriculum baseline: bare questions, cycled until `steps` batches exist.
pub fn bare_schedule(problems: &[Problem], batch_size: usize, steps: usize) -> Vec<TrainBatch> {
    if problems.is_empty() {
        return Vec::new();
    }
    let stream: Vec<CurriculumSample> = problems
        .iter()
        .cycle()
        .take(batch_size.max(1) * steps)
        .map(CurriculumSample::bare)
        .collect();
    into_batches(stream, batch_size, steps)
}

/// `(r_i - mean) / (popstd + 1e-8)`; exactly zero when all rewards are equal.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::contract(format!("advantages need a group of at least 2, got {}", rewards.len())));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + ADVANTAGE_EPSILON)).collect())
}

/// Samples `group_size` completions for the sample's prompt and scores them
/// against its target answer.
pub fn rollout_group(sample: &CurriculumSample, gateway: &Gateway, config: &RunConfig, seed: u64) -> Result<RolloutGroup> {
    let request = GenerationRequest::new(
        sample.prompt.clone(),
        config.group_size,
        config.temperature_train,
        config.max_response_len,
    )
    .with_seed(seed);
    let response = gateway.generate(&request)?;
    let rewards: Vec<f64> = response
        .completions
        .iter()
        .map(|c| score_completion(c, &sample.target_answer).reward())
        .collect();
    let advantages = compute_advantages(&rewards)?;
    Ok(RolloutGroup {
        sample: sample.clone(),
        completions: response.completions,
        rewards,
        advantages,
        group_size: config.group_size,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub loss: f64,
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    pub kl: f64,
    pub update_applied: bool,
}

impl TrainStats {
    /// Reward and advantage statistics; loss and KL left at zero.
    pub fn from_groups(groups: &[RolloutGroup]) -> Self {
        let rewards: Vec<f64> = groups.iter().flat_map(|g| g.rewards.iter().cloned()).collect();
        let n = rewards.len().max(1) as f64;
        Self {
            mean_reward: rewards.iter().sum::<f64>() / n,
            mean_abs_advantage: groups.iter().flat_map(|g| &g.advantages).map(|a| a.abs()).sum::<f64>() / n,
            ..Self::default()
        }
    }
}

/// Owner of the trainable parameters.
pub trait Trainer: Send {
    /// Called before each iteration's Stage 2; the KL reference is taken here.
    fn begin_iteration(&mut self, dir: &Path) -> Result<()>;

    /// One optimization step on a mini-batch of scored groups.
    fn update(&mut self, groups: &[RolloutGroup]) -> Result<TrainStats>;

    fn save_state(&self, path: &Path) -> Result<()>;

    fn load_state(&mut self, path: &Path) -> Result<()>;
}

/// Stand-in for remote backends: persists mini-batches to
/// `train_export.jsonl` for an external trainer and never updates anything.
#[derive(Debug, Default)]
pub struct RecorderTrainer {
    export: Option<PathBuf>,
    step: usize,
}

impl RecorderTrainer {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Serialize)]
struct ExportRecord<'a> {
    update: usize,
    groups: &'a [RolloutGroup],
}

impl Trainer for RecorderTrainer {
    fn begin_iteration(&mut self, dir: &Path) -> Result<()> {
        self.export = Some(dir.join("train_export.jsonl"));
        self.step = 0;
        Ok(())
    }

    fn update(&mut self, groups: &[RolloutGroup]) -> Result<TrainStats> {
        self.step += 1;
        if let Some(path) = &self.export {
            append_jsonl(
                path,
                &ExportRecord {
                    update: self.step,
                    groups,
                },
            )?;
        }
        Ok(TrainStats::from_groups(groups))
    }

    fn save_state(&self, path: &Path) -> Result<()> {
        std::fs::write(path, "{}").map_err(|e| Error::io(path, e))
    }

    fn load_state(&mut self, _path: &Path) -> Result<()> {
        Ok(())
    }
}

/// One update per mini-batch of the batch's groups, in order.
pub fn train_step(trainer: &mut dyn Trainer, groups: &[RolloutGroup], config: &RunConfig) -> Result<Vec<TrainStats>> {
    groups
        .chunks(config.mini_batch_size.max(1))
        .map(|mb| trainer.update(mb))
        .collect()
}

/// `(step, total correct completions)` for one batch.
pub fn curve_point(step: usize, groups: &[RolloutGroup]) -> (usize, usize) {
    (step, groups.iter().map(RolloutGroup::correct_count).sum())
}

pub fn write_curve_csv(path: &Path, curve: &[(usize, usize)]) -> Result<()> {
    let mut out = String::from("step,correct_count\n");
    for (step, correct) in curve {
        out.push_str(&format!("{step},{correct}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Where Stage 2 writes its artifacts; `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct Stage2Paths {
    pub samples: Option<PathBuf>,
    pub rollouts: Option<PathBuf>,
    pub curve: Option<PathBuf>,
}

impl Stage2Paths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            samples: Some(dir.join("samples.jsonl")),
            rollouts: Some(dir.join("rollouts.jsonl")),
            curve: Some(dir.join("curve.csv")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stage2Outcome {
    pub curve: Vec<(usize, usize)>,
    pub train_steps: usize,
    pub samples: usize,
    pub stats: Vec<TrainStats>,
}

/// Rolls out and trains on each batch in order. Rollouts within a batch run
/// in parallel against the parameters as they were when the batch started.
pub fn run_batches(
    batches: &[TrainBatch],
    gateway: &Gateway,
    trainer: &mut dyn Trainer,
    config: &RunConfig,
    seed: u64,
    paths: &Stage2Paths,
    observer: &Observer,
) -> Result<Stage2Outcome> {
    for path in [&paths.samples, &paths.rollouts].into_iter().flatten() {
        std::fs::write(path, "").map_err(|e| Error::io(path, e))?;
    }
    let mut outcome = Stage2Outcome::default();
    let mut samples_file = match &paths.samples {
        Some(p) => Some(std::fs::OpenOptions::new().append(true).open(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    for batch in batches {
        if let Some(f) = samples_file.as_mut() {
            for s in &batch.samples {
                writeln!(f, "{}", serde_json::to_string(s)?).map_err(|e| Error::io(paths.samples.clone().unwrap(), e))?;
            }
        }
        let groups = batch
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| rollout_group(s, gateway, config, derive_seed(seed, &[&"rollout", &batch.step_index, &i])))
            .collect::<Result<Vec<_>>>()?;
        if let Some(p) = &paths.rollouts {
            for g in &groups {
                append_jsonl(p, g)?;
            }
        }
        let point = curve_point(batch.step_index, &groups);
        outcome.curve.push(point);
        let stats = train_step(trainer, &groups, config)?;
        outcome.train_steps += 1;
        outcome.samples += batch.samples.len();
        observer.event(
            "train_step",
            json!({ "step": batch.step_index, "correct": point.1, "updates": stats.len(),
                    "mean_reward": stats.iter().map(|s| s.mean_reward).sum::<f64>() / stats.len().max(1) as f64 }),
        );
        if config.progress_interval > 0 && batch.step_index % config.progress_interval == 0 {
            observer.progress(&format!(
                "stage2: step {}/{} correct {}/{}",
                batch.step_index,
                batches.len(),
                point.1,
                batch.samples.len() * config.group_size
            ));
        }
        outcome.stats.extend(stats);
    }
    if let Some(p) = &paths.curve {
        write_curve_csv(p, &outcome.curve)?;
    }
    Ok(outcome)
}
