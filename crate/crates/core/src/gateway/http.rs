//! Chat-completion client for OpenAI-compatible inference servers.

use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use super::{whitespace_tokens, Backend, GatewayError, GenerationRequest, GenerationResponse};

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub key_env: String,
    pub max_in_flight: usize,
    pub timeout: Duration,
    /// Total attempts, including the first.
    pub attempts: u32,
    pub initial_backoff: Duration,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    n: usize,
    temperature: f64,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a [String]>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    slots: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            slots: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut slots = self.slots.lock();
        while *slots == 0 {
            self.freed.wait(&mut slots);
        }
        *slots -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock() += 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    options: HttpOptions,
    url: String,
    agent: ureq::Agent,
    in_flight: InFlight,
}

enum Attempt {
    Done(GenerationResponse),
    Retry(GatewayError),
    Fail(GatewayError),
}

impl HttpBackend {
    pub fn new(options: HttpOptions) -> Self {
        let trimmed = options.endpoint.trim_end_matches('/');
        let url = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(options.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = InFlight::new(options.max_in_flight.max(1));
        Self {
            options,
            url,
            agent,
            in_flight,
        }
    }

    fn attempt(&self, request: &GenerationRequest, attempts: u32) -> Attempt {
        let body = ChatRequest {
            model: &self.options.model,
            messages: vec![ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            n: request.n,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            seed: request.seed,
            stop: request.stop.as_deref(),
        };
        let mut call = self.agent.post(&self.url);
        if let Ok(key) = std::env::var(&self.options.key_env) {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match call.send_json(&body) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry(GatewayError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        let status = response.status().as_u16();
        if status >= 400 {
            let message = response.body_mut().read_to_string().unwrap_or_default();
            let err = GatewayError::Status {
                status,
                attempts,
                message: message.chars().take(500).collect(),
            };
            return if status >= 500 { Attempt::Retry(err) } else { Attempt::Fail(err) };
        }
        let parsed: ChatResponse = match response.body_mut().read_json() {
            Ok(p) => p,
            Err(e) => return Attempt::Fail(GatewayError::Protocol(format!("unreadable response body: {e}"))),
        };
        if parsed.choices.len() != request.n {
            return Attempt::Fail(GatewayError::Protocol(format!(
                "requested {} choices, server returned {}",
                request.n,
                parsed.choices.len()
            )));
        }
        let completions: Vec<String> = parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect();
        let token_counts = completions.iter().map(|c| whitespace_tokens(c)).collect();
        Attempt::Done(GenerationResponse {
            completions,
            token_counts,
            backend_id: self.id(),
        })
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}@{}", self.options.model, self.url)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let _permit = self.in_flight.acquire();
        let mut backoff = self.options.initial_backoff;
        let attempts = self.options.attempts.max(1);
        for attempt in 1..=attempts {
            match self.attempt(request, attempt) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt == attempts => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("attempt {attempt}/{attempts} failed: {e}; retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
        unreachable!("loop returns on the final attempt")
    }
}
