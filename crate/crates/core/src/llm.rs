//! Prompt construction, the outbound leak guard, and completion backends.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymizer::{normalize, SessionVault};
use crate::detector::{Detector, EntityKind};
use crate::placeholder::{find_placeholders, placeholder_regex};
use crate::policy::{CompliancePolicy, PolicyAction, RedactionLevel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system_instruction: String,
    pub context_header: String,
    pub query_header: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system_instruction: "You are a customer support assistant. Answer the customer query \
                below using your general knowledge and any reference material provided. Some \
                values in the query were replaced by bracketed tokens; repeat a token verbatim \
                when you need to refer to it and never guess what it stands for."
                .into(),
            context_header: "Reference material:".into(),
            query_header: "Customer query:".into(),
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), String> {
        if self.context_header.trim().is_empty() || self.query_header.trim().is_empty() {
            return Err("prompt headers must be non-empty".into());
        }
        if placeholder_regex().is_match(&self.system_instruction) {
            return Err("system instruction contains a placeholder token".into());
        }
        Ok(())
    }
}

/// Joins the prompt segments with blank lines. An empty context drops the
/// context header as well.
pub fn build_prompt(anonymized_query: &str, context: &str, template: &PromptTemplate) -> String {
    let mut parts = vec![template.system_instruction.as_str()];
    if !context.is_empty() {
        parts.push(&template.context_header);
        parts.push(context);
    }
    parts.push(&template.query_header);
    parts.push(anonymized_query);
    parts.join("\n\n")
}

/// One reason the guard stopped a prompt. Never carries the raw value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GuardFinding {
    pub kind: EntityKind,
    /// Detector id, or `vault` for an echoed vaulted original.
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuardVerdict {
    Pass,
    LeakPrevented(Vec<GuardFinding>),
}

impl GuardVerdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, GuardVerdict::Pass)
    }
}

/// Whether `text` contains the normalized form of a vaulted value.
pub(crate) struct NormalizedText {
    folded: String,
    stripped: String,
    raw: String,
}

impl NormalizedText {
    pub(crate) fn new(text: &str) -> Self {
        Self {
            folded: text.to_lowercase(),
            stripped: text.chars().filter(|c| *c != ' ' && *c != '-').collect(),
            raw: text.to_string(),
        }
    }

    pub(crate) fn contains(&self, kind: &EntityKind, original: &str) -> bool {
        let needle = normalize(kind, original);
        if needle.is_empty() {
            return false;
        }
        if kind.is_case_folded() {
            self.folded.contains(&needle)
        } else if kind.is_digit_bearing() {
            self.stripped.contains(&needle)
        } else {
            self.raw.contains(&needle)
        }
    }
}

/// Last check before text leaves the gateway.
///
/// Fails when the prompt contains any vaulted original, or when the detector
/// finds a span at or above the policy's leak threshold whose action at
/// `level` is not Allow.
pub fn outbound_guard(
    prompt: &str,
    vault: &SessionVault,
    detector: &Detector,
    policy: &CompliancePolicy,
    level: RedactionLevel,
) -> GuardVerdict {
    let mut findings = Vec::new();
    let normalized = NormalizedText::new(prompt);
    for entry in vault.entries() {
        if normalized.contains(&entry.kind, &entry.original) {
            findings.push(GuardFinding {
                kind: entry.kind.clone(),
                rule: "vault".into(),
            });
        }
    }
    for span in detector.detect(prompt) {
        if span.confidence >= policy.leak_threshold() && policy.action_for(&span.kind, level) != PolicyAction::Allow {
            findings.push(GuardFinding {
                kind: span.kind,
                rule: span.detector_id,
            });
        }
    }
    if findings.is_empty() {
        GuardVerdict::Pass
    } else {
        GuardVerdict::LeakPrevented(findings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub max_output_terms: usize,
    pub temperature: f64,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmResponse {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub truncated: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend timed out")]
    Timeout,
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned status {0}")]
    Status(u16),
    #[error("malformed backend reply: {0}")]
    Protocol(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Unreachable(_) => true,
            BackendError::Status(code) => *code >= 500 || *code == 429,
            BackendError::Protocol(_) | BackendError::Config(_) => false,
        }
    }
}

/// A completion provider.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, request: &LlmRequest) -> Result<String, BackendError>;
}

/// Cuts `text` after its first `cap` whitespace-separated terms.
pub fn truncate_terms(text: &str, cap: usize) -> (String, bool) {
    let mut seen = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word && seen == cap {
                return (text[..i].to_string(), true);
            }
            in_word = false;
        } else if !in_word {
            in_word = true;
            seen += 1;
            if seen > cap {
                return (text[..i].trim_end().to_string(), true);
            }
        }
    }
    (text.to_string(), false)
}

pub fn term_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Sends the request and enforces the output cap.
pub fn complete(request: &LlmRequest, backend: &dyn Backend) -> Result<LlmResponse, BackendError> {
    let started = Instant::now();
    let raw = backend.generate(request)?;
    let (text, truncated) = truncate_terms(&raw, request.max_output_terms);
    Ok(LlmResponse {
        text,
        backend_id: backend.id().to_string(),
        latency_ms: started.elapsed().as_millis() as u64,
        truncated,
    })
}

pub const MOCK_ACKNOWLEDGMENT: &str = "Thank you for contacting support. We have received your request.";

/// Deterministic reply used for desk testing.
///
/// Starts with the first sentence of the first `SOURCE` block when there is
/// one, otherwise a fixed acknowledgment; then appends `, regarding <p>` for
/// each distinct placeholder in the query block, in order of appearance.
pub fn mock_complete(prompt: &str, query_header: &str) -> String {
    let mut reply = first_source_sentence(prompt).unwrap_or_else(|| MOCK_ACKNOWLEDGMENT.to_string());
    let query_block = prompt
        .rfind(query_header)
        .map_or(prompt, |i| &prompt[i + query_header.len()..]);
    let mut seen = Vec::new();
    for (_, _, p) in find_placeholders(query_block) {
        if !seen.contains(&p) {
            reply.push_str(&format!(", regarding {p}"));
            seen.push(p);
        }
    }
    reply
}

fn first_source_sentence(prompt: &str) -> Option<String> {
    let line = prompt.lines().find(|l| l.starts_with("SOURCE "))?;
    let body = line.split_once(": ")?.1.trim_start();
    let mut end = body.len();
    let mut chars = body.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            end = i + c.len_utf8();
            break;
        }
    }
    let sentence = body[..end].trim();
    (!sentence.is_empty()).then(|| sentence.to_string())
}

/// In-process backend that answers with [`mock_complete`] and records every
/// prompt it receives.
pub struct MockBackend {
    id: String,
    query_header: String,
    prompts: Mutex<Vec<String>>,
}

impl MockBackend {
    pub fn new(query_header: impl Into<String>) -> Self {
        Self {
            id: "mock".into(),
            query_header: query_header.into(),
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Every prompt seen so far, in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.prompts.lock().unwrap().clear();
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new(PromptTemplate::default().query_header)
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &LlmRequest) -> Result<String, BackendError> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        Ok(mock_complete(&request.prompt, &self.query_header))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// `mock` or `http`.
    #[serde(default = "default_backend_kind")]
    pub kind: String,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Maximum reply length in whitespace-separated terms.
    #[serde(default = "default_output_cap")]
    pub output_cap: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default)]
    pub temperature: f64,
}

fn default_backend_kind() -> String {
    "mock".into()
}
fn default_timeout_ms() -> u64 {
    10_000
}
fn default_output_cap() -> usize {
    256
}
fn default_retries() -> u32 {
    2
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: default_backend_kind(),
            base_url: String::new(),
            model: String::new(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            output_cap: default_output_cap(),
            retries: default_retries(),
            temperature: 0.0,
        }
    }
}

/// Chat-completions style JSON over HTTP.
///
/// Sends `{"model", "messages": [{"role": "user", "content": prompt}],
/// "temperature", "max_tokens"}` to `<base_url>/chat/completions` and reads
/// `choices[0].message.content`. Must be created and used outside an async
/// context.
pub struct HttpBackend {
    id: String,
    url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        if config.base_url.is_empty() {
            return Err(BackendError::Config("base_url is required".into()));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            id: format!("http:{}", config.model),
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            api_key,
            client,
        })
    }
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("url", &self.url)
            .field("model", &self.model)
            .finish()
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &LlmRequest) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_terms * 2,
        });
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Unreachable(e.without_url().to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::Status(status.as_u16()));
        }
        let value: serde_json::Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Protocol(e.without_url().to_string())
            }
        })?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template() -> PromptTemplate {
        PromptTemplate::default()
    }

    #[test]
    fn prompt_without_context_has_no_context_block() {
        let p = build_prompt("where is my refund", "", &template());
        assert!(!p.contains("Reference material:"));
        assert!(p.ends_with("Customer query:\n\nwhere is my refund"));
    }

    #[test]
    fn prompt_keeps_placeholders_and_is_deterministic() {
        let a = build_prompt("[[EMAIL_1]] issue", "SOURCE a#0: x", &template());
        let b = build_prompt("[[EMAIL_1]] issue", "SOURCE a#0: x", &template());
        assert!(a.contains("[[EMAIL_1]]"));
        assert_eq!(a, b);
        assert!(a.contains("Reference material:\n\nSOURCE a#0: x\n\nCustomer query:"));
    }

    #[test]
    fn template_validation() {
        assert!(template().validate().is_ok());
        let mut t = template();
        t.system_instruction.push_str(" [[EMAIL_1]]");
        assert!(t.validate().is_err());
        let mut t = template();
        t.query_header = " ".into();
        assert!(t.validate().is_err());
    }

    #[test]
    fn guard_examples() {
        let d = Detector::with_defaults();
        let policy = CompliancePolicy::default();
        let mut vault = SessionVault::new("s");
        let p = vault.lookup_or_insert("a@b.co", &EntityKind::Email);

        let leaked = build_prompt("contact A@B.CO please", "", &template());
        match outbound_guard(&leaked, &vault, &d, &policy, RedactionLevel::Standard) {
            GuardVerdict::LeakPrevented(f) => {
                assert!(f.iter().any(|x| x.rule == "vault"));
                assert!(f.iter().all(|x| x.kind == EntityKind::Email));
            }
            GuardVerdict::Pass => panic!("leak not caught"),
        }

        let clean = build_prompt(&format!("contact {p} please"), "", &template());
        assert!(outbound_guard(&clean, &vault, &d, &policy, RedactionLevel::Standard).is_pass());

        let secret = build_prompt("my password is hunter2", "", &template());
        assert!(outbound_guard(&secret, &vault, &d, &policy, RedactionLevel::Standard).is_pass());
    }

    #[test]
    fn guard_respects_allow_and_threshold() {
        let d = Detector::with_defaults();
        let empty = SessionVault::new("s");
        let prompt = build_prompt("since 2024-01-05", "", &template());
        let policy = CompliancePolicy::default();
        assert!(outbound_guard(&prompt, &empty, &d, &policy, RedactionLevel::Minimal).is_pass());
        assert!(!outbound_guard(&prompt, &empty, &d, &policy, RedactionLevel::Standard).is_pass());
    }

    #[test]
    fn mock_examples() {
        let t = template();
        let with_ctx = build_prompt(
            "status of [[EMAIL_1]] and [[PHONE_1]] and [[EMAIL_1]]",
            "SOURCE kb1#0: Refunds take 5 days. More text.",
            &t,
        );
        let reply = mock_complete(&with_ctx, &t.query_header);
        assert_eq!(
            reply,
            "Refunds take 5 days., regarding [[EMAIL_1]], regarding [[PHONE_1]]"
        );
        let plain = build_prompt("hello", "", &t);
        assert_eq!(mock_complete(&plain, &t.query_header), MOCK_ACKNOWLEDGMENT);
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_terms("a b c", 5), ("a b c".into(), false));
        assert_eq!(truncate_terms("a b c d", 2), ("a b".into(), true));
        assert_eq!(truncate_terms("a  b\n c", 2), ("a  b".into(), true));
        assert_eq!(truncate_terms("", 0), ("".into(), false));

        struct Loud;
        impl Backend for Loud {
            fn id(&self) -> &str {
                "loud"
            }
            fn generate(&self, _: &LlmRequest) -> Result<String, BackendError> {
                Ok(vec!["word"; 100].join(" "))
            }
        }
        let req = LlmRequest {
            prompt: "p".into(),
            max_output_terms: 10,
            temperature: 0.0,
            backend_id: "loud".into(),
        };
        let resp = complete(&req, &Loud).unwrap();
        assert!(resp.truncated);
        assert_eq!(term_count(&resp.text), 10);
    }

    #[test]
    fn mock_backend_records_prompts() {
        let m = MockBackend::default();
        let req = LlmRequest {
            prompt: "hello".into(),
            max_output_terms: 50,
            temperature: 0.0,
            backend_id: "mock".into(),
        };
        let a = complete(&req, &m).unwrap();
        let b = complete(&req, &m).unwrap();
        assert_eq!(a.text, b.text);
        assert_eq!(m.prompts(), ["hello", "hello"]);
    }

    #[test]
    fn retryable_classification() {
        assert!(BackendError::Timeout.is_retryable());
        assert!(BackendError::Status(503).is_retryable());
        assert!(!BackendError::Status(400).is_retryable());
        assert!(!BackendError::Protocol("x".into()).is_retryable());
    }
}
