//! The completion interface every harness talks to, plus the local
//! implementations used for offline runs and the remote web-API client.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{derive_seed, fnv1a};

pub const MAX_STOP_SEQUENCES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("model configuration error: {0}")]
    Config(String),
    #[error("tokenizer plug-in failed: {0}")]
    Tokenizer(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: usize,
    #[serde(default)]
    pub stop: Vec<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, max_tokens: usize) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_tokens,
            stop: Vec::new(),
            temperature: 0.0,
            seed: None,
        }
    }

    pub fn stop(mut self, stop: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.stop = stop.into_iter().map(Into::into).collect();
        self
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.prompt.is_empty() {
            return Err(ModelError::InvalidRequest("empty prompt".into()));
        }
        if self.max_tokens == 0 {
            return Err(ModelError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if self.stop.len() > MAX_STOP_SEQUENCES {
            return Err(ModelError::InvalidRequest(format!(
                "at most {MAX_STOP_SEQUENCES} stop sequences, got {}",
                self.stop.len()
            )));
        }
        if !(self.temperature >= 0.0) {
            return Err(ModelError::InvalidRequest("temperature must be non-negative".into()));
        }
        Ok(())
    }
}

/// A text-completion backend.
pub trait CompletionModel: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<String, ModelError>;

    /// Per-candidate scores (higher is better), for backends that can
    /// score continuations. `None` means the capability is missing.
    fn score(&self, _prompt: &str, _candidates: &[String]) -> Option<Result<Vec<f64>, ModelError>> {
        None
    }
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stop: &[String]) -> &'a str {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

/// Returns a fixed completion for each known prompt and the default (empty
/// unless set) otherwise. The oracle models are scripted models whose
/// table holds the ground truth.
pub struct ScriptedModel {
    name: String,
    table: HashMap<String, String>,
    default: String,
    scores: HashMap<String, f64>,
}

impl ScriptedModel {
    pub fn new(table: HashMap<String, String>) -> Self {
        ScriptedModel { name: "mock_scripted".into(), table, default: String::new(), scores: HashMap::new() }
    }

    pub fn oracle(table: HashMap<String, String>) -> Self {
        ScriptedModel { name: "mock_oracle".into(), table, default: String::new(), scores: HashMap::new() }
    }

    /// Completion for prompts missing from the table.
    pub fn with_default(mut self, text: &str) -> Self {
        self.default = text.to_string();
        self
    }

    /// Fixed scores per candidate text, enabling [`CompletionModel::score`].
    pub fn with_scores(mut self, scores: HashMap<String, f64>) -> Self {
        self.scores = scores;
        self
    }
}

impl CompletionModel for ScriptedModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ModelError> {
        request.validate()?;
        Ok(self
            .table
            .get(&request.prompt)
            .map_or_else(|| truncate_at_stop(&self.default, &request.stop), |c| truncate_at_stop(c, &request.stop))
            .to_string())
    }

    fn score(&self, _prompt: &str, candidates: &[String]) -> Option<Result<Vec<f64>, ModelError>> {
        if self.scores.is_empty() {
            return None;
        }
        Some(Ok(candidates
            .iter()
            .map(|c| self.scores.get(c).copied().unwrap_or(f64::NEG_INFINITY))
            .collect()))
    }
}

/// What a random policy emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomChoices {
    /// One of a fixed list of texts (e.g. action tokens "1".."5").
    Tokens(Vec<String>),
    /// `dims` integers drawn uniformly from `lo..=hi`, joined by ", ".
    Vectors { dims: usize, lo: i64, hi: i64 },
}

/// Uniformly random answers. The draw is a pure function of the prompt and
/// the request seed, so a fixed seed stream replays identically.
pub struct RandomPolicyModel {
    choices: RandomChoices,
}

impl RandomPolicyModel {
    pub fn new(choices: RandomChoices) -> Self {
        RandomPolicyModel { choices }
    }

    pub fn actions(n: usize) -> Self {
        RandomPolicyModel::new(RandomChoices::Tokens((1..=n).map(|a| a.to_string()).collect()))
    }
}

impl CompletionModel for RandomPolicyModel {
    fn name(&self) -> &str {
        "random_policy"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ModelError> {
        request.validate()?;
        let seed = derive_seed(request.seed.unwrap_or(0), &[fnv1a(request.prompt.as_bytes())]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match &self.choices {
            RandomChoices::Tokens(tokens) if tokens.is_empty() => String::new(),
            RandomChoices::Tokens(tokens) => tokens[rng.random_range(0..tokens.len())].clone(),
            RandomChoices::Vectors { dims, lo, hi } => (0..*dims)
                .map(|_| rng.random_range(*lo..=*hi).to_string())
                .collect::<Vec<_>>()
                .join(", "),
        })
    }
}

/// How a choice among candidates was made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceMethod {
    Single,
    Scored,
    Matched,
    Defaulted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Choice {
    pub chosen: String,
    pub method: ChoiceMethod,
}

/// Picks one of `candidates`: by score when the backend can score, else by
/// completing the prompt and matching the text against the candidates.
pub fn score_logprob_choice(model: &dyn CompletionModel, prompt: &str, candidates: &[String]) -> Choice {
    assert!(!candidates.is_empty(), "no candidates");
    if candidates.len() == 1 {
        return Choice { chosen: candidates[0].clone(), method: ChoiceMethod::Single };
    }
    if let Some(Ok(scores)) = model.score(prompt, candidates) {
        if scores.len() == candidates.len() {
            let mut best = 0;
            for (i, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = i;
                }
            }
            return Choice { chosen: candidates[best].clone(), method: ChoiceMethod::Scored };
        }
    }
    complete_then_match(model, prompt, candidates)
}

/// The fallback path of [`score_logprob_choice`].
pub fn complete_then_match(model: &dyn CompletionModel, prompt: &str, candidates: &[String]) -> Choice {
    let max_tokens = candidates.iter().map(|c| crate::codec::estimate_tokens(c)).max().unwrap_or(1).max(1);
    let request = CompletionRequest::new(prompt, max_tokens).stop(["\n"]);
    let text = match model.complete(&request) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("choice completion failed: {e}");
            String::new()
        }
    };
    let text = text.trim();
    if let Some(c) = candidates.iter().find(|c| c.as_str() == text) {
        return Choice { chosen: c.clone(), method: ChoiceMethod::Matched };
    }
    let prefix = candidates
        .iter()
        .filter(|c| !c.is_empty() && text.starts_with(c.as_str()))
        .max_by_key(|c| c.len());
    match prefix {
        Some(c) => Choice { chosen: c.clone(), method: ChoiceMethod::Matched },
        None => Choice { chosen: candidates[0].clone(), method: ChoiceMethod::Defaulted },
    }
}

/// Where and how to reach a remote completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub path: String,
    pub model: String,
    /// Name of the environment variable holding the credential. The
    /// credential itself is never stored in configs or artifacts.
    pub credential_env: Option<String>,
    pub auth_header: String,
    pub auth_scheme: String,
    pub timeout_secs: f64,
    pub retries: u32,
    pub backoff_initial_ms: u64,
    pub requests_per_second: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000".into(),
            path: "/v1/completions".into(),
            model: String::new(),
            credential_env: None,
            auth_header: "Authorization".into(),
            auth_scheme: "Bearer".into(),
            timeout_secs: 60.0,
            retries: 3,
            backoff_initial_ms: 500,
            requests_per_second: 1.0,
        }
    }
}

struct Secret(String);

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(**redacted**)")
    }
}

/// Token bucket with capacity one: successive acquisitions are spaced at
/// least `1 / rate` seconds apart.
pub struct RateLimiter {
    interval: Option<Duration>,
    next_free: Mutex<Instant>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64) -> Self {
        let interval = (requests_per_second > 0.0 && requests_per_second.is_finite())
            .then(|| Duration::from_secs_f64(1.0 / requests_per_second));
        RateLimiter { interval, next_free: Mutex::new(Instant::now()) }
    }

    pub fn acquire(&self) {
        let Some(interval) = self.interval else { return };
        let wait = {
            let mut next = self.next_free.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    temperature: f64,
}

/// Client for the common completions-over-HTTP convention: POST
/// `{model, prompt, max_tokens, stop, temperature}`, read
/// `choices[0].text`.
pub struct RemoteModel {
    config: EndpointConfig,
    credential: Option<Secret>,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
}

impl RemoteModel {
    pub fn new(config: EndpointConfig) -> Result<Self, ModelError> {
        let credential = match &config.credential_env {
            Some(var) => Some(Secret(std::env::var(var).map_err(|_| {
                ModelError::Config(format!("credential environment variable {var} is not set"))
            })?)),
            None => None,
        };
        if !(config.timeout_secs > 0.0) {
            return Err(ModelError::Config("timeout_secs must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| ModelError::Config(e.to_string()))?;
        let limiter = RateLimiter::new(config.requests_per_second);
        Ok(RemoteModel { config, credential, client, limiter })
    }

    fn url(&self) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), self.config.path)
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<String, (bool, String)> {
        let body = WireRequest {
            model: &self.config.model,
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            stop: &request.stop,
            temperature: request.temperature,
        };
        let mut http = self.client.post(self.url()).json(&body);
        if let Some(secret) = &self.credential {
            let value = if self.config.auth_scheme.is_empty() {
                secret.0.clone()
            } else {
                format!("{} {}", self.config.auth_scheme, secret.0)
            };
            http = http.header(self.config.auth_header.as_str(), value);
        }
        let response = http.send().map_err(|e| (true, e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err((true, format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err((false, format!("HTTP {status}")));
        }
        let value: serde_json::Value = response.json().map_err(|e| (true, e.to_string()))?;
        Ok(value
            .pointer("/choices/0/text")
            .and_then(|t| t.as_str())
            .unwrap_or_default()
            .to_string())
    }
}

impl CompletionModel for RemoteModel {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ModelError> {
        request.validate()?;
        let mut backoff = Duration::from_millis(self.config.backoff_initial_ms);
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            self.limiter.acquire();
            match self.attempt(request) {
                Ok(text) => return Ok(truncate_at_stop(&text, &request.stop).to_string()),
                Err((retryable, message)) => {
                    log::warn!("completion attempt {attempt}/{attempts} failed: {message}");
                    last = message;
                    if !retryable {
                        return Err(ModelError::Transport { attempts: attempt, message: last });
                    }
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(ModelError::Transport { attempts, message: last })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Remote,
    MockScripted,
    MockOracle,
    RandomPolicy,
    PcfgSearcher,
    PeriodRepeat,
}

impl std::str::FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.replace('-', "_").as_str() {
            "remote" => ModelKind::Remote,
            "mock_scripted" | "scripted" => ModelKind::MockScripted,
            "mock_oracle" | "oracle" => ModelKind::MockOracle,
            "random_policy" | "random" => ModelKind::RandomPolicy,
            "pcfg_searcher" | "searcher" => ModelKind::PcfgSearcher,
            "period_repeat" => ModelKind::PeriodRepeat,
            other => return Err(ModelError::Config(format!("unknown model kind {other:?}"))),
        })
    }
}

/// Serializable model selection. Holds no secrets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointConfig>,
    /// Prompt-to-completion table file (JSON object) for `mock_scripted`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
}

impl ModelSpec {
    pub fn local(kind: ModelKind) -> Self {
        ModelSpec { kind, endpoint: None, script: None }
    }
}

/// Harness-supplied context needed to instantiate the local kinds.
#[derive(Default)]
pub struct BuildContext {
    /// Ground truth for `mock_oracle`.
    pub oracle_table: Option<HashMap<String, String>>,
    /// The legal outputs for `random_policy`.
    pub random_choices: Option<RandomChoices>,
}

pub fn build_model(spec: &ModelSpec, ctx: BuildContext) -> Result<Box<dyn CompletionModel>, ModelError> {
    Ok(match spec.kind {
        ModelKind::Remote => {
            let endpoint = spec
                .endpoint
                .clone()
                .ok_or_else(|| ModelError::Config("remote model needs an endpoint section".into()))?;
            Box::new(RemoteModel::new(endpoint)?)
        }
        ModelKind::MockScripted => {
            let path = spec
                .script
                .as_ref()
                .ok_or_else(|| ModelError::Config("mock_scripted needs a script file".into()))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
            let table: HashMap<String, String> =
                serde_json::from_str(&text).map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
            Box::new(ScriptedModel::new(table))
        }
        ModelKind::MockOracle => Box::new(ScriptedModel::oracle(ctx.oracle_table.ok_or_else(|| {
            ModelError::Config("this harness has no ground truth to build an oracle from".into())
        })?)),
        ModelKind::RandomPolicy => Box::new(RandomPolicyModel::new(ctx.random_choices.ok_or_else(|| {
            ModelError::Config("this harness has no action set for a random policy".into())
        })?)),
        ModelKind::PcfgSearcher => Box::new(crate::pcfg::SearcherModel::default()),
        ModelKind::PeriodRepeat => Box::new(crate::completion::PeriodRepeatModel),
    })
}

/// Token counting used for context budgets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCounter {
    #[default]
    Heuristic,
    /// An executable that reads text on stdin and prints a token count.
    External(PathBuf),
}

impl TokenCounter {
    pub fn count(&self, text: &str) -> Result<usize, ModelError> {
        match self {
            TokenCounter::Heuristic => Ok(crate::codec::estimate_tokens(text)),
            TokenCounter::External(program) => {
                let mut child = Command::new(program)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(|e| ModelError::Tokenizer(format!("{}: {e}", program.display())))?;
                child
                    .stdin
                    .take()
                    .expect("piped stdin")
                    .write_all(text.as_bytes())
                    .map_err(|e| ModelError::Tokenizer(e.to_string()))?;
                let out = child.wait_with_output().map_err(|e| ModelError::Tokenizer(e.to_string()))?;
                if !out.status.success() {
                    return Err(ModelError::Tokenizer(format!("exit status {}", out.status)));
                }
                String::from_utf8_lossy(&out.stdout)
                    .trim()
                    .parse()
                    .map_err(|e| ModelError::Tokenizer(format!("bad count: {e}")))
            }
        }
    }
}
