//! Run configuration. Every knob of a run lives here; defaults follow the
//! published training setup where one exists.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_API_KEY_ENV: &str = "EVOCOT_API_KEY";

/// Answer-conditioned prompt used to sample candidate reasoning paths.
pub const DEFAULT_GENERATION_TEMPLATE: &str = "{question}\n\nThe final answer is {answer}. \
Write the step-by-step reasoning that leads to this answer. Separate consecutive steps with a blank line \
and finish with the answer in \\boxed{}.";

/// Answer-free prompt used to check that a reasoning path recovers the answer on its own.
pub const DEFAULT_VERIFICATION_TEMPLATE: &str = "{question}\n\n{cot}\n\n\
Based on the reasoning above, state the final result in \\boxed{}.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Http {
        endpoint: String,
        model: String,
        #[serde(default = "default_key_env")]
        key_env: String,
        #[serde(default = "default_max_in_flight")]
        max_in_flight: usize,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        retries: u32,
        #[serde(default = "default_backoff_ms")]
        initial_backoff_ms: u64,
    },
    Scripted {
        fixture_path: PathBuf,
    },
    Toy,
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_max_in_flight() -> usize {
    4
}
fn default_timeout_secs() -> u64 {
    300
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}

impl BackendConfig {
    pub fn http(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        BackendConfig::Http {
            endpoint: endpoint.into(),
            model: model.into(),
            key_env: default_key_env(),
            max_in_flight: default_max_in_flight(),
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
            initial_backoff_ms: default_backoff_ms(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BackendConfig::Http { .. } => "http",
            BackendConfig::Scripted { .. } => "scripted",
            BackendConfig::Toy => "toy",
        }
    }
}

/// Stage-1 prompt templates. Placeholders: `{question}`, `{answer}`, `{cot}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Templates {
    pub generation: String,
    pub verification: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            generation: DEFAULT_GENERATION_TEMPLATE.to_string(),
            verification: DEFAULT_VERIFICATION_TEMPLATE.to_string(),
        }
    }
}

impl Templates {
    pub fn generation_prompt(&self, question: &str, answer: &str) -> String {
        fill(&self.generation, question, answer, "")
    }

    pub fn verification_prompt(&self, question: &str, cot: &str) -> String {
        fill(&self.verification, question, "", cot)
    }
}

fn fill(template: &str, question: &str, answer: &str, cot: &str) -> String {
    // Single pass so placeholder-like text inside the inserted values is left alone.
    let mut out = String::with_capacity(template.len() + question.len() + answer.len() + cot.len());
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let (value, len) = if tail.starts_with("{question}") {
            (question, "{question}".len())
        } else if tail.starts_with("{answer}") {
            (answer, "{answer}".len())
        } else if tail.starts_with("{cot}") {
            (cot, "{cot}".len())
        } else {
            ("{", 1)
        };
        out.push_str(value);
        rest = &tail[len..];
    }
    out.push_str(rest);
    out
}

/// How curriculum samples of different trajectories are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interleave {
    /// All truncation levels of one trajectory before the next.
    Sequential,
    /// One level of every trajectory per round (ablation).
    RoundRobin,
}

/// Synthetic arithmetic task set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTaskConfig {
    pub count: usize,
    /// Operations per task.
    pub length: usize,
    pub start_min: i64,
    pub start_max: i64,
    /// Tasks share one seeded operation chain; each position is replaced by a
    /// uniformly random operation with this probability.
    pub chain_noise: f64,
    /// Fraction of tasks whose stored answer is deliberately wrong (label errors).
    pub label_noise: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        Self {
            count: 200,
            length: 3,
            start_min: 0,
            start_max: 20,
            chain_noise: 0.0,
            label_noise: 0.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// Operation labels such as `+1`, `×2`, `−1`, `×4+3`.
    pub vocab: Vec<String>,
    /// Rows of the policy logit matrix; the longest task the policy can solve.
    pub max_len: usize,
    /// Probability that an answer-conditioned generation follows the true derivation.
    pub p_hint: f64,
    /// Toy logits need far larger steps than LLM weights; the effective
    /// learning rate is `learning_rate * lr_multiplier`.
    pub lr_multiplier: f64,
    /// Start from a previously trained policy instead of uniform logits.
    pub initial_policy: Option<PathBuf>,
    pub tasks: ToyTaskConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            vocab: ["+1", "+2", "×2", "−1"].iter().map(|s| s.to_string()).collect(),
            max_len: 8,
            p_hint: 0.7,
            lr_multiplier: 1e3,
            initial_policy: None,
            tasks: ToyTaskConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub group_size: usize,
    pub temperature_train: f64,
    pub temperature_eval: f64,
    pub train_batch_size: usize,
    pub mini_batch_size: usize,
    pub learning_rate: f64,
    pub kl_coefficient: f64,
    pub max_prompt_len: usize,
    pub max_response_len: usize,
    pub shuffle_dataset: bool,
    pub micro_batch_size: usize,
    /// Batches per iteration; the curriculum stream is cut once this many are produced.
    pub max_train_steps: usize,
    pub iterations: u32,
    pub rollouts_for_selection: usize,
    pub eval_samples: usize,
    /// Candidate reasoning paths sampled per problem in Stage 1.
    pub stage1_candidates: usize,
    pub temperature_stage1: f64,
    pub backend: BackendConfig,
    pub seed: u64,

    /// problems.jsonl; the toy backend generates a task set when absent.
    pub dataset: Option<PathBuf>,
    /// Evaluation problems; defaults to the training dataset.
    pub eval_dataset: Option<PathBuf>,
    pub templates: Templates,
    pub interleave: Interleave,
    pub saturation_epsilon: f64,
    pub stop_on_saturation: bool,
    /// Progress line to stderr every this many batches.
    pub progress_interval: usize,
    /// Off-by-default diagnostic: count candidates whose text states the answer verbatim.
    pub leakage_diagnostic: bool,
    /// Wall time is machine-dependent; when false reports carry 0.0 so that
    /// reports are byte-reproducible.
    pub record_wall_time: bool,
    pub toy: ToyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            temperature_train: 1.0,
            temperature_eval: 0.6,
            train_batch_size: 32,
            mini_batch_size: 32,
            learning_rate: 1e-6,
            kl_coefficient: 1e-4,
            max_prompt_len: 3000,
            max_response_len: 5192,
            shuffle_dataset: false,
            micro_batch_size: 1,
            max_train_steps: 100,
            iterations: 1,
            rollouts_for_selection: 8,
            eval_samples: 8,
            stage1_candidates: 8,
            temperature_stage1: 1.0,
            backend: BackendConfig::Toy,
            seed: 0,
            dataset: None,
            eval_dataset: None,
            templates: Templates::default(),
            interleave: Interleave::Sequential,
            saturation_epsilon: 0.5,
            stop_on_saturation: true,
            progress_interval: 10,
            leakage_diagnostic: false,
            record_wall_time: false,
            toy: ToyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.group_size < 2 {
            problems.push(format!("group_size must be >= 2, got {}", self.group_size));
        }
        for (name, v) in [
            ("train_batch_size", self.train_batch_size),
            ("mini_batch_size", self.mini_batch_size),
            ("micro_batch_size", self.micro_batch_size),
            ("max_prompt_len", self.max_prompt_len),
            ("max_response_len", self.max_response_len),
            ("max_train_steps", self.max_train_steps),
            ("rollouts_for_selection", self.rollouts_for_selection),
            ("eval_samples", self.eval_samples),
            ("stage1_candidates", self.stage1_candidates),
            ("progress_interval", self.progress_interval),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        for (name, t) in [
            ("temperature_train", self.temperature_train),
            ("temperature_eval", self.temperature_eval),
            ("temperature_stage1", self.temperature_stage1),
        ] {
            if !(t >= 0.0 && t.is_finite()) {
                problems.push(format!("{name} must be >= 0, got {t}"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push("learning_rate must be positive".into());
        }
        if self.kl_coefficient.is_nan() || self.kl_coefficient < 0.0 {
            problems.push("kl_coefficient must be >= 0".into());
        }
        if self.saturation_epsilon.is_nan() || self.saturation_epsilon < 0.0 {
            problems.push("saturation_epsilon must be >= 0".into());
        }
        let toy = &self.toy;
        if !(0.0..=1.0).contains(&toy.p_hint) {
            problems.push("toy.p_hint must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&toy.tasks.chain_noise) || !(0.0..=1.0).contains(&toy.tasks.label_noise) {
            problems.push("toy.tasks noise rates must be in [0, 1]".into());
        }
        if toy.tasks.length == 0 || toy.tasks.length > toy.max_len {
            problems.push(format!(
                "toy.tasks.length must be in 1..={}, got {}",
                toy.max_len, toy.tasks.length
            ));
        }
        if toy.tasks.start_min > toy.tasks.start_max {
            problems.push("toy.tasks.start_min exceeds start_max".into());
        }
        if let Err(e) = crate::toy::Vocab::parse(&toy.vocab) {
            problems.push(format!("toy.vocab: {e}"));
        }
        if let BackendConfig::Http { max_in_flight, retries, .. } = &self.backend {
            if *max_in_flight == 0 || *retries == 0 {
                problems.push("http max_in_flight and retries must be positive".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Loads a config file, or the config echoed inside a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let value = match value {
            serde_json::Value::Object(mut m) if m.contains_key("config") && m.contains_key("config_hash") => {
                m.remove("config").unwrap_or_default()
            }
            v => v,
        };
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Hex SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn effective_toy_lr(&self) -> f64 {
        self.learning_rate * self.toy.lr_multiplier
    }
}
