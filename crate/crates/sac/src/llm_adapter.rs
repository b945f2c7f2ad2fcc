//! Live chat-completion backend: prompt templates, response parsers, and
//! an HTTP client with retry. Off by default; everything outside this
//! module is network-free.
//!
//! Failure handling is deliberately lossy-safe: a score that cannot be
//! parsed becomes 0.5 (maximally uncertain) and an answer that cannot be
//! parsed leaves the agent's current response unchanged, so transport or
//! parsing trouble can never corrupt protocol state.

use std::env;
use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::agents::{AgentSpec, Backend, Response, RetainedEntry, Task, TaskKind};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Score,
    Refine,
}

/// A fully rendered prompt: byte-deterministic in its inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub system: String,
    pub user: String,
}

fn task_text(task: &Task) -> &str {
    task.text.as_deref().unwrap_or(&task.query_id)
}

fn problem_noun(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Math => "mathematical reasoning problem",
        TaskKind::Commonsense => "question",
    }
}

/// Receiver-side scoring prompt. The evaluator solves the problem itself,
/// judges the proposed answer, and emits a single calibrated number.
pub fn render_score_prompt(task: &Task, response_text: &str, f: usize) -> PromptTemplate {
    let user = format!(
        "You are evaluating the correctness of a proposed answer to a {}.\n\
         Assume that up to {} responses may be malicious or unreliable.\n\
         Reason carefully before producing the final score.\n\
         \n\
         Problem: {}\n\
         Proposed answer: {}\n\
         \n\
         Step 1: Solve the problem independently step by step.\n\
         Step 2: Evaluate the proposed answer.\n\
         Step 3: Output ONLY a single decimal number between 0.0 and 1.0.\n\
         0.0 = clearly incorrect, 0.5 = uncertain, 1.0 = clearly correct.\n\
         Score:",
        problem_noun(task.kind),
        f,
        task_text(task),
        response_text
    );
    PromptTemplate {
        kind: PromptKind::Score,
        system: "You are an expert evaluator. Respond using only a single number.".into(),
        user,
    }
}

fn answer_format_line(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Math => "Respond using the format:\nAnswer: [your numerical answer]",
        TaskKind::Commonsense => {
            "Respond strictly using the answer format specified in the question.\n Answer: [your answer]"
        }
    }
}

/// Refine prompt over the retained neighbor responses, listed in
/// descending score order with scores printed to two decimals. Callers
/// skip refinement entirely when the retained set is empty.
pub fn render_refine_prompt(
    task: &Task,
    own_response: &str,
    retained: &[(String, f64)],
    f: usize,
) -> PromptTemplate {
    let mut entries: Vec<&(String, f64)> = retained.iter().collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let listing: String = entries
        .iter()
        .map(|(r, s)| format!("- Answer: {} (reliability score: {:.2})\n", r, s))
        .collect();
    let user = format!(
        "You are solving a {}. Review the information below and provide your best answer.\n\
         Assume that up to {} responses may be malicious or unreliable.\n\
         Reason carefully before producing the final answer.\n\
         \n\
         Problem: {}\n\
         \n\
         Your current answer: {}\n\
         \n\
         Other agents' answers with reliability scores (higher indicates greater reliability):\n\
         {}\
         \n\
         Prefer answers with higher reliability scores, but retain your current answer if you believe it is correct.\n\
         {}",
        problem_noun(task.kind),
        f,
        task_text(task),
        own_response,
        listing,
        answer_format_line(task.kind)
    );
    PromptTemplate {
        kind: PromptKind::Refine,
        system: "You are a helpful assistant. Follow the required output format exactly.".into(),
        user,
    }
}

/// Extract the first numeric token and clip to [0, 1]; anything
/// unparseable is treated as maximal uncertainty (0.5). Total function.
pub fn parse_score(raw: &str) -> f64 {
    // first numeric token: digits, optional decimal point, digits
    static PATTERN: &str = r"([0-9]+(?:\.[0-9]+)?)";
    let re = Regex::new(PATTERN).expect("static pattern");
    match re.find(raw).and_then(|m| m.as_str().parse::<f64>().ok()) {
        Some(v) => v.clamp(0.0, 1.0),
        None => 0.5,
    }
}

fn normalize_label(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| "[]()\"'`.,!?".contains(c))
        .trim()
        .to_lowercase()
}

/// Take what follows the final "Answer:" marker (first line only),
/// normalize it, and match it against the task alphabet. No match means
/// the caller keeps the previous response unchanged.
pub fn parse_answer(raw: &str, task: &Task) -> Option<String> {
    let idx = raw.rfind("Answer:")?;
    let tail = &raw[idx + "Answer:".len()..];
    let line = tail.lines().next().unwrap_or("");
    let wanted = normalize_label(line);
    if wanted.is_empty() {
        return None;
    }
    task.alphabet
        .iter()
        .find(|label| normalize_label(label) == wanted)
        .cloned()
}

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: usize,
    pub temperature: f64,
}

impl EndpointConfig {
    /// Read `SAC_ENDPOINT`, `SAC_API_KEY`, and `SAC_MODEL`.
    pub fn from_env() -> Result<Self, AdapterError> {
        let base_url =
            env::var("SAC_ENDPOINT").map_err(|_| AdapterError::MissingEnv("SAC_ENDPOINT"))?;
        let api_key = env::var("SAC_API_KEY").unwrap_or_default();
        let model = env::var("SAC_MODEL").map_err(|_| AdapterError::MissingEnv("SAC_MODEL"))?;
        Self::new(base_url, api_key, model)
    }

    pub fn new(
        base_url: String,
        api_key: String,
        model: String,
    ) -> Result<Self, AdapterError> {
        let cfg = Self {
            base_url,
            api_key,
            model,
            timeout: Duration::from_secs(60),
            max_retries: 2,
            temperature: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.timeout.is_zero() {
            return Err(AdapterError::InvalidConfig("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

/// One chat completion with retry and linear backoff. Every failure mode
/// (timeout, non-success status, malformed payload) collapses into a
/// transport error carrying the attempt count; no partial text escapes.
pub fn call_endpoint(
    cfg: &EndpointConfig,
    system: &str,
    user: &str,
) -> Result<String, AdapterError> {
    cfg.validate()?;
    let client = reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| AdapterError::Transport {
            attempts: 0,
            message: e.to_string(),
        })?;
    let body = json!({
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
    });
    let attempts = cfg.max_retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(100 * attempt as u64));
        }
        let mut req = client.post(&cfg.base_url).json(&body);
        if !cfg.api_key.is_empty() {
            req = req.bearer_auth(&cfg.api_key);
        }
        match req.send() {
            Err(e) => last = e.to_string(),
            Ok(resp) => {
                let status = resp.status();
                if !status.is_success() {
                    last = format!("status {}", status);
                    continue;
                }
                match resp.json::<Completion>() {
                    Err(e) => last = format!("malformed payload: {}", e),
                    Ok(c) => match c.choices.into_iter().next() {
                        Some(choice) => return Ok(choice.message.content),
                        None => last = "empty choices".into(),
                    },
                }
            }
        }
    }
    Err(AdapterError::Transport {
        attempts,
        message: last,
    })
}

/// [`Backend`] implementation over a live endpoint. Parsing or transport
/// failures resolve to the protocol defaults: score 0.5, response kept.
#[derive(Debug, Clone)]
pub struct EndpointBackend {
    pub cfg: EndpointConfig,
    pub f_bound: usize,
}

impl EndpointBackend {
    fn solve(&self, task: &Task) -> Option<String> {
        // initial generation reuses the refine scaffolding with no
        // neighbor listing: just the problem and the answer-format line
        let user = format!(
            "You are solving a {}.\n\
             Reason carefully before producing the final answer.\n\
             \n\
             Problem: {}\n\
             \n\
             {}",
            problem_noun(task.kind),
            task_text(task),
            answer_format_line(task.kind)
        );
        let raw = call_endpoint(
            &self.cfg,
            "You are a helpful assistant. Follow the required output format exactly.",
            &user,
        )
        .ok()?;
        parse_answer(&raw, task)
    }
}

impl Backend for EndpointBackend {
    fn initial(&self, _spec: &AgentSpec, task: &Task, _rng: &mut ChaCha8Rng) -> Response {
        // with no prior response to fall back on, an unusable completion
        // degrades to the first alphabet label
        let answer = self
            .solve(task)
            .unwrap_or_else(|| task.alphabet[0].clone());
        Response::new(answer, task)
    }

    fn score(
        &self,
        _spec: &AgentSpec,
        task: &Task,
        response: &Response,
        _rng: &mut ChaCha8Rng,
    ) -> f64 {
        let prompt = render_score_prompt(task, &response.answer, self.f_bound);
        match call_endpoint(&self.cfg, &prompt.system, &prompt.user) {
            Ok(raw) => parse_score(&raw),
            Err(_) => 0.5,
        }
    }

    fn refine(
        &self,
        _spec: &AgentSpec,
        task: &Task,
        own: &Response,
        _self_score: f64,
        retained: &[RetainedEntry],
        _rng: &mut ChaCha8Rng,
    ) -> Response {
        if retained.is_empty() {
            return own.clone();
        }
        let listed: Vec<(String, f64)> = retained
            .iter()
            .map(|e| (e.response.answer.clone(), e.score))
            .collect();
        let prompt = render_refine_prompt(task, &own.answer, &listed, self.f_bound);
        match call_endpoint(&self.cfg, &prompt.system, &prompt.user) {
            Ok(raw) => match parse_answer(&raw, task) {
                Some(answer) => Response::new(answer, task),
                None => own.clone(),
            },
            Err(_) => own.clone(),
        }
    }
}
