use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AugmentError, GenRequest, Origin, VariantGenerator};

pub const DEFAULT_PROMPT_TEMPLATE: &str = include_str!("../../data/prompt_template.txt");
pub const API_KEY_ENV: &str = "TXNCAT_GEN_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationClientConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    /// Upper bound on request starts per second, shared by all workers.
    pub requests_per_second: Option<f64>,
    pub timeout_secs: u64,
    /// Larger quotas for one description are split across requests.
    pub max_variants_per_request: usize,
}

impl Default for GenerationClientConfig {
    fn default() -> Self {
        GenerationClientConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            temperature: 0.7,
            max_tokens: 512,
            max_in_flight: 4,
            max_attempts: 5,
            initial_backoff_ms: 500,
            requests_per_second: None,
            timeout_secs: 60,
            max_variants_per_request: 20,
        }
    }
}

/// Spaces request starts at least `1 / rate` seconds apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn new(requests_per_second: Option<f64>) -> Self {
        let interval = match requests_per_second {
            Some(r) if r > 0.0 => Duration::from_secs_f64(1.0 / r),
            _ => Duration::ZERO,
        };
        RateLimiter {
            interval,
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock().expect("rate limiter lock");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }

    /// Pushes the next free slot out by `delay`, used when the server asks
    /// every client to back off.
    pub fn defer(&self, delay: Duration) {
        let mut next = self.next.lock().expect("rate limiter lock");
        let until = Instant::now() + delay;
        if until > *next {
            *next = until;
        }
    }
}

pub fn render_prompt(template: &str, req: &GenRequest) -> String {
    template
        .replace("{description}", &req.description)
        .replace("{category}", &req.category)
        .replace("{n}", &req.n_variants.to_string())
}

/// Splits a completion into lines, strips list markers ("1.", "2)", "-",
/// "*", bullets) and surrounding quotes, drops blanks, and keeps at most `n`.
pub fn parse_completion(content: &str, n: usize) -> Vec<String> {
    content
        .lines()
        .map(strip_list_marker)
        .filter(|l| !l.is_empty())
        .take(n)
        .map(str::to_string)
        .collect()
}

fn strip_list_marker(line: &str) -> &str {
    let mut s = line.trim();
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            s = r.trim_start();
        }
    } else if let Some(r) = s
        .strip_prefix("- ")
        .or_else(|| s.strip_prefix("* "))
        .or_else(|| s.strip_prefix('\u{2022}'))
    {
        s = r.trim_start();
    }
    s.trim_matches(|c| c == '"' || c == '\'' || c == '`').trim()
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

/// Chat-completion client with retries, a shared rate limiter and bounded
/// parallelism for batches.
pub struct RemoteGenerator {
    config: GenerationClientConfig,
    api_key: String,
    template: String,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

enum Attempt {
    Done(Vec<String>),
    Retry { reason: String, wait: Option<Duration>, rate_limited: bool },
    Fatal(AugmentError),
}

impl RemoteGenerator {
    pub fn new(config: GenerationClientConfig, api_key: String) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        RemoteGenerator {
            limiter: RateLimiter::new(config.requests_per_second),
            config,
            api_key,
            template: DEFAULT_PROMPT_TEMPLATE.to_string(),
            agent,
        }
    }

    /// Reads the credential from `TXNCAT_GEN_API_KEY`.
    pub fn from_env(config: GenerationClientConfig) -> Result<Self, AugmentError> {
        match std::env::var(API_KEY_ENV) {
            Ok(key) if !key.trim().is_empty() => Ok(Self::new(config, key)),
            _ => Err(AugmentError::MissingCredential(API_KEY_ENV.to_string())),
        }
    }

    pub fn with_template(mut self, template: String) -> Self {
        self.template = template;
        self
    }

    pub fn config(&self) -> &GenerationClientConfig {
        &self.config
    }

    fn request_body(&self, req: &GenRequest) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": render_prompt(&self.template, req)}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }

    fn attempt(&self, req: &GenRequest) -> Attempt {
        self.limiter.acquire();
        let result = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.request_body(req));
        let mut response = match result {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    reason: e.to_string(),
                    wait: None,
                    rate_limited: false,
                }
            }
        };
        let status = response.status().as_u16();
        if status == 429 {
            let wait = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(Duration::from_secs_f64);
            return Attempt::Retry {
                reason: "429 Too Many Requests".into(),
                wait,
                rate_limited: true,
            };
        }
        if status >= 500 {
            return Attempt::Retry {
                reason: format!("server returned {status}"),
                wait: None,
                rate_limited: false,
            };
        }
        let body = match response.body_mut().read_to_string() {
            Ok(b) => b,
            Err(e) => {
                return Attempt::Retry {
                    reason: e.to_string(),
                    wait: None,
                    rate_limited: false,
                }
            }
        };
        if !(200..300).contains(&status) {
            return Attempt::Fatal(AugmentError::RemoteRejected {
                status,
                body: body.chars().take(500).collect(),
            });
        }
        match serde_json::from_str::<ChatResponse>(&body) {
            Ok(parsed) => {
                let content = parsed
                    .choices
                    .into_iter()
                    .next()
                    .and_then(|c| c.message.content)
                    .unwrap_or_default();
                let lines = parse_completion(&content, req.n_variants);
                if lines.len() < req.n_variants {
                    log::warn!(
                        "generator returned {} of {} variants for {:?}",
                        lines.len(),
                        req.n_variants,
                        req.description
                    );
                }
                Attempt::Done(lines)
            }
            Err(e) => {
                log::warn!("malformed completion for {:?}: {e}", req.description);
                Attempt::Fatal(AugmentError::MalformedResponse(e.to_string()))
            }
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.config.initial_backoff_ms.saturating_mul(1 << attempt.min(16)))
    }
}

impl VariantGenerator for RemoteGenerator {
    fn origin(&self) -> Origin {
        Origin::Remote
    }

    fn max_variants_per_request(&self) -> Option<usize> {
        Some(self.config.max_variants_per_request.max(1))
    }

    fn generate(&self, req: &GenRequest) -> Result<Vec<String>, AugmentError> {
        req.validate()?;
        let attempts = self.config.max_attempts.max(1);
        let mut last_reason = String::new();
        let mut last_rate_limited = None;
        for attempt in 0..attempts {
            match self.attempt(req) {
                Attempt::Done(lines) => return Ok(lines),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry {
                    reason,
                    wait,
                    rate_limited,
                } => {
                    log::debug!("generator attempt {} failed: {reason}", attempt + 1);
                    last_reason = reason;
                    last_rate_limited = rate_limited.then_some(wait);
                    if attempt + 1 == attempts {
                        break;
                    }
                    let delay = wait.unwrap_or_else(|| self.backoff(attempt));
                    if rate_limited {
                        self.limiter.defer(delay);
                    }
                    thread::sleep(delay);
                }
            }
        }
        match last_rate_limited {
            Some(wait) => Err(AugmentError::RateLimited {
                attempts,
                retry_after_secs: wait.map(|d| d.as_secs_f64()),
            }),
            None => Err(AugmentError::RemoteUnavailable {
                attempts,
                message: last_reason,
            }),
        }
    }

    /// Runs up to `max_in_flight` requests at once; results keep input order.
    fn generate_batch(&self, reqs: &[GenRequest]) -> Vec<Result<Vec<String>, AugmentError>> {
        let workers = self.config.max_in_flight.clamp(1, reqs.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<Vec<String>, AugmentError>>>> =
            reqs.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= reqs.len() {
                        break;
                    }
                    let result = self.generate(&reqs[i]);
                    *slots[i].lock().expect("slot lock") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }
}
