use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{cot_steps, final_line, parse_prompt, step_text, ParsedPrompt, ToyPolicy, ToyTrainer, Vocab};
use crate::config::ToyConfig;
use crate::data::STEP_DELIMITER;
use crate::error::{Error, Result};
use crate::gateway::{whitespace_tokens, Backend, GatewayError, GenerationRequest, GenerationResponse};

/// Toy model answering prompts from a shared policy.
///
/// * Answer-conditioned prompts (a hint and no guidance steps): with
///   probability `p_hint` the model writes the correct derivation; otherwise it
///   derives along operations sampled from the policy and states the hinted
///   answer in the box regardless of what it derived. At temperature 0 the
///   correct derivation is written iff `p_hint >= 0.5`.
/// * Every other prompt: guidance steps are copied verbatim, the remaining
///   positions are sampled from the policy, values are recomputed and the box
///   holds the computed result.
pub struct ToyBackend {
    policy: Arc<RwLock<ToyPolicy>>,
    vocab: Vocab,
    p_hint: f64,
    unseeded: Mutex<ChaCha8Rng>,
}

impl ToyBackend {
    pub fn new(policy: Arc<RwLock<ToyPolicy>>, vocab: Vocab, p_hint: f64) -> Self {
        Self {
            policy,
            vocab,
            p_hint,
            unseeded: Mutex::new(ChaCha8Rng::seed_from_u64(0x5eed)),
        }
    }

    fn rng_for(&self, request: &GenerationRequest) -> ChaCha8Rng {
        let base = match request.seed {
            Some(s) => s,
            None => self.unseeded.lock().random(),
        };
        let digest = Sha256::digest(request.prompt.as_bytes());
        let mix = u64::from_le_bytes(digest[..8].try_into().unwrap());
        ChaCha8Rng::seed_from_u64(base ^ mix)
    }

    fn hinted(&self, parsed: &ParsedPrompt, hint: i64, temperature: f64, rng: &mut ChaCha8Rng) -> Result<String, GatewayError> {
        let honest = if temperature == 0.0 {
            self.p_hint >= 0.5
        } else {
            rng.random_bool(self.p_hint.clamp(0.0, 1.0))
        };
        let steps = if honest {
            let answer = self.fold(parsed.start, &parsed.task_ops)?;
            cot_steps(parsed.start, &parsed.task_ops, answer, &self.vocab)
        } else {
            let policy = self.policy.read();
            let ops: Vec<usize> = (0..parsed.task_ops.len())
                .map(|i| policy.sample(i, temperature, rng))
                .collect();
            cot_steps(parsed.start, &ops, hint, &self.vocab)
        };
        steps
            .map(|s| s.join(STEP_DELIMITER))
            .ok_or_else(|| GatewayError::Protocol("toy backend: arithmetic overflow".into()))
    }

    fn execute(&self, parsed: &ParsedPrompt, temperature: f64, rng: &mut ChaCha8Rng) -> Result<String, GatewayError> {
        let policy = self.policy.read();
        let mut lines: Vec<String> = parsed.guidance.iter().map(|(text, _)| text.clone()).collect();
        let mut ops: Vec<usize> = parsed.guidance.iter().map(|(_, op)| *op).collect();
        let mut value = self.fold(parsed.start, &ops)?;
        for i in ops.len()..parsed.task_ops.len() {
            let op = policy.sample(i, temperature, rng);
            value = self.vocab.op(op).apply(value).ok_or_else(overflow)?;
            lines.push(step_text(&self.vocab.op(op).label, value));
            ops.push(op);
        }
        lines.push(final_line(value));
        Ok(lines.join(STEP_DELIMITER))
    }

    fn fold(&self, start: i64, ops: &[usize]) -> Result<i64, GatewayError> {
        self.vocab.fold(start, ops).ok_or_else(overflow)
    }
}

fn overflow() -> GatewayError {
    GatewayError::Protocol("toy backend: arithmetic overflow".into())
}

/// Keeps the first `max_tokens` whitespace-separated symbols, preserving layout.
fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            seen += 1;
            if seen > max_tokens {
                return text[..i].trim_end().to_string();
            }
        }
    }
    text.to_string()
}

impl Backend for ToyBackend {
    fn id(&self) -> String {
        format!("toy:{}x{}", self.policy.read().max_len(), self.vocab.len())
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let parsed = parse_prompt(&request.prompt, &self.vocab)?;
        if parsed.task_ops.len() > self.policy.read().max_len() {
            return Err(GatewayError::Protocol(format!(
                "toy backend: task has {} steps, policy supports {}",
                parsed.task_ops.len(),
                self.policy.read().max_len()
            )));
        }
        let mut rng = self.rng_for(request);
        let completions = (0..request.n)
            .map(|_| {
                let text = match parsed.hint {
                    Some(hint) if parsed.guidance.is_empty() => self.hinted(&parsed, hint, request.temperature, &mut rng),
                    _ => self.execute(&parsed, request.temperature, &mut rng),
                }?;
                Ok(truncate_tokens(&text, request.max_tokens))
            })
            .collect::<Result<Vec<_>, GatewayError>>()?;
        let token_counts = completions.iter().map(|c| whitespace_tokens(c)).collect();
        Ok(GenerationResponse {
            completions,
            token_counts,
            backend_id: self.id(),
        })
    }

    fn count_tokens(&self, text: &str) -> Option<usize> {
        Some(whitespace_tokens(text))
    }
}

/// Vocabulary plus the policy shared by the toy backend and trainer.
#[derive(Clone)]
pub struct ToyLab {
    pub vocab: Vocab,
    pub policy: Arc<RwLock<ToyPolicy>>,
    pub p_hint: f64,
}

impl ToyLab {
    pub fn new(cfg: &ToyConfig) -> Result<Self> {
        let vocab = Vocab::parse(&cfg.vocab).map_err(Error::Config)?;
        let policy = match &cfg.initial_policy {
            Some(path) => {
                let p = ToyPolicy::load(path)?;
                if p.vocab_size() != vocab.len() || p.max_len() != cfg.max_len {
                    return Err(Error::Config(format!(
                        "{}: policy is {}x{}, config expects {}x{}",
                        path.display(),
                        p.max_len(),
                        p.vocab_size(),
                        cfg.max_len,
                        vocab.len()
                    )));
                }
                p
            }
            None => ToyPolicy::uniform(cfg.max_len, vocab.len()),
        };
        Ok(Self {
            vocab,
            policy: Arc::new(RwLock::new(policy)),
            p_hint: cfg.p_hint,
        })
    }

    pub fn backend(&self) -> ToyBackend {
        ToyBackend::new(self.policy.clone(), self.vocab.clone(), self.p_hint)
    }

    pub fn trainer(&self, learning_rate: f64, kl_coefficient: f64) -> ToyTrainer {
        ToyTrainer::new(self.policy.clone(), self.vocab.clone(), learning_rate, kl_coefficient)
    }
}
