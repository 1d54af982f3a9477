//! Session lifecycle and the per-turn pipeline.

mod config;
pub mod http;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, TryLockError};
use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymizer::{anonymize_text, SessionVault};
use crate::detector::{Detector, EntityKind};
use crate::llm::{
    build_prompt, complete, outbound_guard, Backend, BackendError, GuardVerdict, LlmRequest, MockBackend,
    PromptTemplate,
};
use crate::policy::{validate_policy, CompliancePolicy, RedactionLevel};
use crate::postprocess::{
    finalize, privacy_filter, write_audit, ActionRecord, ActionTaken, AuditRecord, AuditSink, Disposition, LeakEvent,
    LeakSource, MemoryAuditSink,
};
use crate::rag::{assemble_context, KnowledgeBase};

pub use config::{build_gateway, ConfigError, ServiceConfig};

pub const DEFAULT_REFUSAL: &str =
    "I'm sorry, I can't help with that request here. Please contact support through a verified channel.";

/// What a second concurrent request on a busy session does.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusyBehavior {
    #[default]
    Wait,
    Reject,
}

#[derive(Debug, Clone)]
pub struct GatewaySettings {
    pub default_level: RedactionLevel,
    pub default_rag: bool,
    pub refusal_text: String,
    pub busy: BusyBehavior,
    pub top_k: usize,
    /// Context budget in terms.
    pub context_budget: usize,
    pub template: PromptTemplate,
    pub output_cap: usize,
    pub temperature: f64,
    pub retries: u32,
    pub retry_backoff: Duration,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            default_level: RedactionLevel::Standard,
            default_rag: true,
            refusal_text: DEFAULT_REFUSAL.into(),
            busy: BusyBehavior::Wait,
            top_k: 3,
            context_budget: 400,
            template: PromptTemplate::default(),
            output_cap: 256,
            temperature: 0.0,
            retries: 2,
            retry_backoff: Duration::from_millis(200),
        }
    }
}

/// In-memory conversation state. Never persisted.
pub struct Session {
    pub session_id: String,
    pub vault: SessionVault,
    pub level: RedactionLevel,
    pub rag_enabled: bool,
    pub created_at: DateTime<Utc>,
    pub last_active: DateTime<Utc>,
    pub turn_counter: u32,
    /// (anonymized query, sanitized reply) pairs.
    pub history: Vec<(String, String)>,
    deleted: bool,
}

/// Read-only copy of the non-secret parts of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionView {
    pub session_id: String,
    pub level: RedactionLevel,
    pub rag_enabled: bool,
    pub turn_counter: u32,
    pub history: Vec<(String, String)>,
    pub vault_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PipelineOutcome {
    pub text: String,
    pub disposition: Disposition,
    pub session_id: String,
    pub turn: u32,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("session not found")]
    NotFound,
    #[error("session is busy")]
    Busy,
    #[error("backend unavailable for turn {turn}: {source}")]
    BackendUnavailable {
        session_id: String,
        turn: u32,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub backend: &'static str,
    pub audit: &'static str,
}

pub struct GatewayBuilder {
    detector: Option<Detector>,
    policy: CompliancePolicy,
    kb: KnowledgeBase,
    backend: Option<Arc<dyn Backend>>,
    audit: Option<Arc<dyn AuditSink>>,
    settings: GatewaySettings,
    seed: Option<u64>,
}

impl GatewayBuilder {
    pub fn detector(mut self, detector: Detector) -> Self {
        self.detector = Some(detector);
        self
    }

    pub fn policy(mut self, policy: CompliancePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn knowledge_base(mut self, kb: KnowledgeBase) -> Self {
        self.kb = kb;
        self
    }

    pub fn backend(mut self, backend: Arc<dyn Backend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn audit_sink(mut self, sink: Arc<dyn AuditSink>) -> Self {
        self.audit = Some(sink);
        self
    }

    pub fn settings(mut self, settings: GatewaySettings) -> Self {
        self.settings = settings;
        self
    }

    /// Fixes the session id generator, for reproducible runs.
    pub fn session_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn build(self) -> Result<Gateway, ConfigError> {
        validate_policy(&self.policy).map_err(ConfigError::Policy)?;
        self.settings.template.validate().map_err(ConfigError::Template)?;
        let rng = match self.seed {
            Some(seed) => ChaCha20Rng::seed_from_u64(seed),
            None => ChaCha20Rng::from_entropy(),
        };
        let template = &self.settings.template;
        Ok(Gateway {
            detector: self.detector.unwrap_or_else(Detector::with_defaults),
            policy: self.policy,
            kb: self.kb,
            backend: self
                .backend
                .unwrap_or_else(|| Arc::new(MockBackend::new(template.query_header.clone()))),
            audit: self.audit.unwrap_or_else(|| Arc::new(MemoryAuditSink::new())),
            settings: self.settings,
            sessions: RwLock::new(HashMap::new()),
            rng: Mutex::new(rng),
            backend_ok: AtomicBool::new(true),
            audit_ok: AtomicBool::new(true),
        })
    }
}

/// Shared service state. Detector, policy and index are fixed after build.
pub struct Gateway {
    detector: Detector,
    policy: CompliancePolicy,
    kb: KnowledgeBase,
    backend: Arc<dyn Backend>,
    audit: Arc<dyn AuditSink>,
    settings: GatewaySettings,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    rng: Mutex<ChaCha20Rng>,
    backend_ok: AtomicBool,
    audit_ok: AtomicBool,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder {
            detector: None,
            policy: CompliancePolicy::default(),
            kb: KnowledgeBase::new(),
            backend: None,
            audit: None,
            settings: GatewaySettings::default(),
            seed: None,
        }
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn policy(&self) -> &CompliancePolicy {
        &self.policy
    }

    pub fn knowledge_base(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    pub fn audit_sink(&self) -> &dyn AuditSink {
        self.audit.as_ref()
    }

    fn new_session_id(&self) -> String {
        let mut bytes = [0u8; 16];
        lock(&self.rng).fill_bytes(&mut bytes);
        hex::encode(bytes)
    }

    /// Opens a session; `None` falls back to the configured defaults.
    pub fn create_session(&self, level: Option<RedactionLevel>, rag: Option<bool>) -> String {
        let now = Utc::now();
        let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        let id = loop {
            let id = self.new_session_id();
            if !sessions.contains_key(&id) {
                break id;
            }
        };
        let session = Session {
            session_id: id.clone(),
            vault: SessionVault::new(id.clone()),
            level: level.unwrap_or(self.settings.default_level),
            rag_enabled: rag.unwrap_or(self.settings.default_rag),
            created_at: now,
            last_active: now,
            turn_counter: 0,
            history: Vec::new(),
            deleted: false,
        };
        sessions.insert(id.clone(), Arc::new(Mutex::new(session)));
        id
    }

    fn handle(&self, session_id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(session_id)
            .cloned()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn session_view(&self, session_id: &str) -> Option<SessionView> {
        let handle = self.handle(session_id)?;
        let s = lock(&handle);
        (!s.deleted).then(|| SessionView {
            session_id: s.session_id.clone(),
            level: s.level,
            rag_enabled: s.rag_enabled,
            turn_counter: s.turn_counter,
            history: s.history.clone(),
            vault_len: s.vault.len(),
        })
    }

    /// Purges the vault and history and forgets the id. Audit lines stay.
    pub fn delete_session(&self, session_id: &str) -> Result<(), GatewayError> {
        let handle = self
            .sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .remove(session_id)
            .ok_or(GatewayError::NotFound)?;
        let mut s = lock(&handle);
        s.vault.purge();
        s.history.clear();
        s.history.shrink_to_fit();
        s.deleted = true;
        Ok(())
    }

    pub fn health(&self) -> Health {
        let backend_ok = self.backend_ok.load(Ordering::Relaxed);
        let audit_ok = self.audit_ok.load(Ordering::Relaxed);
        Health {
            status: if backend_ok && audit_ok { "ok" } else { "degraded" },
            backend: if backend_ok { "ok" } else { "unavailable" },
            audit: if audit_ok { "ok" } else { "degraded" },
        }
    }

    pub fn flush_audit(&self) {
        if let Err(e) = self.audit.flush() {
            self.audit_ok.store(false, Ordering::Relaxed);
            tracing::error!(error = %e, "audit flush failed");
        }
    }

    fn audit(&self, record: &AuditRecord, vault: &SessionVault) {
        if let Err(e) = write_audit(record, self.audit.as_ref(), &self.detector, Some(vault)) {
            self.audit_ok.store(false, Ordering::Relaxed);
            tracing::error!(turn = record.turn, error = %e, "audit write failed");
        }
    }

    fn generate(&self, prompt: String) -> Result<(String, bool), BackendError> {
        let request = LlmRequest {
            prompt,
            max_output_terms: self.settings.output_cap,
            temperature: self.settings.temperature,
            backend_id: self.backend.id().to_string(),
        };
        let mut attempt = 0;
        loop {
            match complete(&request, self.backend.as_ref()) {
                Ok(resp) => return Ok((resp.text, resp.truncated)),
                Err(e) if e.is_retryable() && attempt < self.settings.retries => {
                    attempt += 1;
                    tracing::warn!(attempt, error = %e, "backend call failed, retrying");
                    std::thread::sleep(self.settings.retry_backoff * attempt);
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Runs one turn through every pipeline stage.
    ///
    /// Turns on one session are serialized. A guard block still completes
    /// the turn with the refusal text; a backend failure leaves the session
    /// as it was and writes a single blocked audit record.
    pub fn handle_turn(&self, session_id: &str, user_text: &str) -> Result<PipelineOutcome, GatewayError> {
        let handle = self.handle(session_id).ok_or(GatewayError::NotFound)?;
        let mut session = match self.settings.busy {
            BusyBehavior::Wait => lock(&handle),
            BusyBehavior::Reject => match handle.try_lock() {
                Ok(guard) => guard,
                Err(TryLockError::Poisoned(e)) => e.into_inner(),
                Err(TryLockError::WouldBlock) => return Err(GatewayError::Busy),
            },
        };
        if session.deleted {
            return Err(GatewayError::NotFound);
        }
        let session = &mut *session;
        let turn = session.turn_counter + 1;
        let level = session.level;
        let snapshot = session.vault.clone();
        session.vault.begin_turn(turn);
        session.last_active = Utc::now();

        let anon = anonymize_text(user_text, &self.detector, &mut session.vault, &self.policy, level);
        let mut detections: BTreeMap<EntityKind, usize> = BTreeMap::new();
        for s in &anon.detections {
            *detections.entry(s.kind.clone()).or_default() += 1;
        }
        let actions: Vec<ActionRecord> = anon
            .actions
            .into_iter()
            .map(|a| ActionRecord {
                kind: a.kind,
                action: a.action,
            })
            .collect();
        let anonymized = anon.text;

        let (context, retrieved) = if session.rag_enabled {
            let results = self.kb.retrieve(&anonymized, self.settings.top_k);
            let refs = results.iter().map(|r| r.chunk.reference()).collect();
            (assemble_context(&results, self.settings.context_budget), refs)
        } else {
            (String::new(), Vec::new())
        };
        let prompt = build_prompt(&anonymized, &context, &self.settings.template);

        let mut record = AuditRecord {
            session_id: session.session_id.clone(),
            turn,
            timestamp: Utc::now(),
            level,
            detections,
            actions,
            retrieved,
            leak_events: Vec::new(),
            disposition: Disposition::Blocked,
            backend_id: self.backend.id().to_string(),
            truncated: false,
        };

        let (text, sanitized) = match outbound_guard(&prompt, &session.vault, &self.detector, &self.policy, level) {
            GuardVerdict::LeakPrevented(findings) => {
                record.leak_events = findings
                    .into_iter()
                    .map(|f| LeakEvent {
                        source: if f.rule == "vault" {
                            LeakSource::VaultEcho
                        } else {
                            LeakSource::FreshDetection
                        },
                        kind: f.kind,
                        action_taken: ActionTaken::Blocked,
                    })
                    .collect();
                tracing::warn!(turn, "outbound guard blocked a prompt");
                let refusal = self.settings.refusal_text.clone();
                (refusal.clone(), refusal)
            }
            GuardVerdict::Pass => {
                let (reply, truncated) = match self.generate(prompt) {
                    Ok(r) => {
                        self.backend_ok.store(true, Ordering::Relaxed);
                        r
                    }
                    Err(source) => {
                        self.backend_ok.store(false, Ordering::Relaxed);
                        record.timestamp = Utc::now();
                        self.audit(&record, &session.vault);
                        session.vault = snapshot;
                        return Err(GatewayError::BackendUnavailable {
                            session_id: session.session_id.clone(),
                            turn,
                            source,
                        });
                    }
                };
                record.truncated = truncated;
                let (sanitized, events) =
                    privacy_filter(&reply, &mut session.vault, &self.detector, &self.policy, level);
                record.leak_events = events;
                let (text, disposition) = finalize(
                    &sanitized,
                    &session.vault,
                    &self.policy,
                    &self.detector,
                    &self.settings.refusal_text,
                );
                record.disposition = disposition;
                let kept = match disposition {
                    Disposition::Delivered => sanitized,
                    Disposition::Blocked => text.clone(),
                };
                (text, kept)
            }
        };

        record.timestamp = Utc::now();
        self.audit(&record, &session.vault);
        session.history.push((anonymized, sanitized));
        session.turn_counter = turn;
        session.last_active = Utc::now();
        Ok(PipelineOutcome {
            text,
            disposition: record.disposition,
            session_id: session.session_id.clone(),
            turn,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Detector;
    use crate::llm::MOCK_ACKNOWLEDGMENT;
    use crate::rag::Document;

    struct Failing;

    impl Backend for Failing {
        fn id(&self) -> &str {
            "failing"
        }
        fn generate(&self, _: &LlmRequest) -> Result<String, BackendError> {
            Err(BackendError::Unreachable("connection refused".into()))
        }
    }

    fn refund_kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        let doc = Document::new(
            "refunds",
            "Refund policy",
            "Refunds are issued to the original payment method within five business days. \
             Contact support if your refund has not arrived.",
        );
        kb.ingest(doc, &Detector::with_defaults()).unwrap();
        kb
    }

    fn gateway(mock: Arc<MockBackend>) -> Gateway {
        Gateway::builder()
            .backend(mock)
            .knowledge_base(refund_kb())
            .session_seed(1)
            .build()
            .unwrap()
    }

    #[test]
    fn refund_query_end_to_end() {
        let mock = Arc::new(MockBackend::default());
        let gw = gateway(mock.clone());
        let id = gw.create_session(None, None);
        let out = gw.handle_turn(&id, "my email is a@b.co, where is my refund?").unwrap();
        assert_eq!(out.disposition, Disposition::Delivered);
        assert_eq!(
            out.text,
            "Refunds are issued to the original payment method within five business days., regarding a@b.co"
        );
        let prompts = mock.prompts();
        assert_eq!(prompts.len(), 1);
        assert!(!prompts[0].contains("a@b.co"));
        assert!(prompts[0].contains("[[EMAIL_1]]"));

        let lines = gw.audit_sink().read_lines().unwrap();
        assert_eq!(lines.len(), 1);
        let rec: AuditRecord = serde_json::from_str(&lines[0]).unwrap();
        assert_eq!(rec.detections, BTreeMap::from([(EntityKind::Email, 1)]));
        assert_eq!(rec.retrieved, ["refunds#0"]);
        assert_eq!(rec.turn, 1);
    }

    #[test]
    fn empty_text_gets_acknowledgment() {
        let gw = gateway(Arc::new(MockBackend::default()));
        let id = gw.create_session(None, Some(false));
        let out = gw.handle_turn(&id, "").unwrap();
        assert_eq!(out.text, MOCK_ACKNOWLEDGMENT);
        let rec: AuditRecord = serde_json::from_str(&gw.audit_sink().read_lines().unwrap()[0]).unwrap();
        assert!(rec.detections.is_empty());
    }

    #[test]
    fn placeholder_reused_across_turns() {
        let mock = Arc::new(MockBackend::default());
        let gw = gateway(mock.clone());
        let id = gw.create_session(None, Some(false));
        gw.handle_turn(&id, "my email is a@b.co").unwrap();
        gw.handle_turn(&id, "did you write to A@B.CO yet?").unwrap();
        let prompts = mock.prompts();
        assert!(prompts[1].contains("[[EMAIL_1]]"));
        assert!(!prompts[1].contains("EMAIL_2"));
        assert_eq!(gw.session_view(&id).unwrap().turn_counter, 2);
    }

    #[test]
    fn delete_forgets_session() {
        let gw = gateway(Arc::new(MockBackend::default()));
        let id = gw.create_session(Some(RedactionLevel::Strict), None);
        assert_eq!(gw.session_view(&id).unwrap().level, RedactionLevel::Strict);
        gw.handle_turn(&id, "my email is a@b.co").unwrap();
        gw.delete_session(&id).unwrap();
        assert!(matches!(gw.handle_turn(&id, "hi"), Err(GatewayError::NotFound)));
        assert!(matches!(gw.delete_session(&id), Err(GatewayError::NotFound)));
        assert!(gw.session_view(&id).is_none());
        // audit lines survive deletion
        assert_eq!(gw.audit_sink().read_lines().unwrap().len(), 1);
    }

    #[test]
    fn distinct_session_ids() {
        let gw = gateway(Arc::new(MockBackend::default()));
        let a = gw.create_session(None, None);
        let b = gw.create_session(None, None);
        assert_ne!(a, b);
        assert_eq!(a.len(), 32);
        assert!(a.bytes().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    }

    #[test]
    fn backend_failure_is_atomic() {
        let settings = GatewaySettings {
            retry_backoff: Duration::ZERO,
            ..Default::default()
        };
        let gw = Gateway::builder()
            .backend(Arc::new(Failing))
            .settings(settings)
            .build()
            .unwrap();
        let id = gw.create_session(None, None);
        let err = gw.handle_turn(&id, "my email is a@b.co").unwrap_err();
        assert!(matches!(err, GatewayError::BackendUnavailable { turn: 1, .. }));
        let view = gw.session_view(&id).unwrap();
        assert_eq!(view.turn_counter, 0);
        assert_eq!(view.vault_len, 0);
        assert!(view.history.is_empty());
        let lines = gw.audit_sink().read_lines().unwrap();
        assert_eq!(lines.len(), 1);
        let rec: AuditRecord = serde_json::from_str(&lines[0]).unwrap();
        assert_eq!(rec.disposition, Disposition::Blocked);
        assert_eq!(gw.health().backend, "unavailable");
        assert_eq!(gw.health().status, "degraded");
    }

    #[test]
    fn guard_block_completes_turn_with_refusal() {
        // an operator-supplied instruction carrying an address trips the guard
        let mock = Arc::new(MockBackend::default());
        let mut settings = GatewaySettings::default();
        settings.template.system_instruction = "Escalations go to boss@corp.example.".into();
        let gw = Gateway::builder()
            .backend(mock.clone())
            .settings(settings)
            .build()
            .unwrap();
        let id = gw.create_session(None, None);
        let out = gw.handle_turn(&id, "hello").unwrap();
        assert_eq!(out.disposition, Disposition::Blocked);
        assert_eq!(out.text, DEFAULT_REFUSAL);
        assert!(mock.prompts().is_empty());
        assert_eq!(gw.session_view(&id).unwrap().turn_counter, 1);
    }

    #[test]
    fn history_holds_no_originals() {
        let gw = gateway(Arc::new(MockBackend::default()));
        let id = gw.create_session(None, None);
        gw.handle_turn(&id, "this is Alice Moreau, call me on 212-555-0143")
            .unwrap();
        for (q, a) in gw.session_view(&id).unwrap().history {
            for s in [q, a] {
                assert!(!s.contains("Alice") && !s.contains("555-0143"), "{s}");
            }
        }
    }
}
