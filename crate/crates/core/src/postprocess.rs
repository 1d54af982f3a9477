//! Response-side privacy filtering, restoration, and the compliance audit.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymizer::{anonymize_text, normalize, rehydrate, Placeholder, SessionVault};
use crate::detector::{Detector, EntityKind, EntitySpan};
use crate::llm::NormalizedText;
use crate::placeholder::protected_ranges;
use crate::policy::{CompliancePolicy, PolicyAction, RedactionLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakSource {
    VaultEcho,
    FreshDetection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionTaken {
    ReplacedWithPlaceholder,
    Applied(PolicyAction),
    Blocked,
}

/// A sensitive value found on the way out. Holds the kind only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakEvent {
    pub source: LeakSource,
    pub kind: EntityKind,
    pub action_taken: ActionTaken,
}

fn echo_pattern(kind: &EntityKind, original: &str) -> Option<Regex> {
    let norm = normalize(kind, original);
    if norm.is_empty() {
        return None;
    }
    let pattern = if kind.is_case_folded() {
        format!("(?i){}", regex::escape(&norm))
    } else if kind.is_digit_bearing() {
        norm.chars()
            .map(|c| regex::escape(&c.to_string()))
            .collect::<Vec<_>>()
            .join("[ \\-]*")
    } else {
        regex::escape(&norm)
    };
    Regex::new(&pattern).ok()
}

/// Two passes over a generated response, repeated until the text is stable.
///
/// 1. Every occurrence of a vaulted original (matched in normalized form) is
///    put back behind its placeholder.
/// 2. The detector runs on the result; each fresh span gets the policy action
///    for `level`. Spans the policy allows are left alone and not logged.
///
/// Pass 2 can vault values that pass 1 then finds inside longer words, so a
/// single round is not idempotent.
pub fn privacy_filter(
    response: &str,
    vault: &mut SessionVault,
    detector: &Detector,
    policy: &CompliancePolicy,
    level: RedactionLevel,
) -> (String, Vec<LeakEvent>) {
    let mut current = response.to_string();
    let mut events = Vec::new();
    for _ in 0..MAX_FILTER_ROUNDS {
        let (next, round) = filter_round(&current, vault, detector, policy, level);
        events.extend(round);
        if next == current {
            break;
        }
        current = next;
    }
    (current, events)
}

const MAX_FILTER_ROUNDS: usize = 8;

fn filter_round(
    response: &str,
    vault: &mut SessionVault,
    detector: &Detector,
    policy: &CompliancePolicy,
    level: RedactionLevel,
) -> (String, Vec<LeakEvent>) {
    let mut events = Vec::new();

    let protected = protected_ranges(response);
    // substring prefilter; lowercase and regex case folding only agree on ASCII
    let normalized = NormalizedText::new(response);
    let ascii = response.is_ascii();
    let mut hits: Vec<(usize, usize, Placeholder)> = Vec::new();
    for entry in vault.entries() {
        if (ascii || !entry.kind.is_case_folded()) && !normalized.contains(&entry.kind, &entry.original) {
            continue;
        }
        let Some(re) = echo_pattern(&entry.kind, &entry.original) else {
            continue;
        };
        for m in re.find_iter(response) {
            if protected.iter().any(|&(s, e)| m.start() < e && s < m.end()) {
                continue;
            }
            hits.push((m.start(), m.end(), entry.placeholder.clone()));
        }
    }
    // longest first, then leftmost
    hits.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(usize, usize, Placeholder)> = Vec::new();
    for h in hits {
        if kept.iter().all(|k| h.1 <= k.0 || k.1 <= h.0) {
            kept.push(h);
        }
    }
    kept.sort_by_key(|h| h.0);
    let mut echoed = String::with_capacity(response.len());
    let mut cursor = 0;
    for (start, end, p) in &kept {
        echoed.push_str(&response[cursor..*start]);
        echoed.push_str(&p.to_string());
        cursor = *end;
        events.push(LeakEvent {
            source: LeakSource::VaultEcho,
            kind: p.kind.clone(),
            action_taken: ActionTaken::ReplacedWithPlaceholder,
        });
    }
    echoed.push_str(&response[cursor..]);

    let fresh = anonymize_text(&echoed, detector, vault, policy, level);
    events.extend(
        fresh
            .actions
            .into_iter()
            .filter(|a| a.action != PolicyAction::Allow)
            .map(|a| LeakEvent {
                source: LeakSource::FreshDetection,
                kind: a.kind,
                action_taken: ActionTaken::Applied(a.action),
            }),
    );
    (fresh.text, events)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Disposition {
    Delivered,
    Blocked,
}

/// Restores allowlisted placeholders, then scans for kinds outside the
/// allowlist. Any finding replaces the whole reply with `refusal`.
pub fn finalize(
    sanitized: &str,
    vault: &SessionVault,
    policy: &CompliancePolicy,
    detector: &Detector,
    refusal: &str,
) -> (String, Disposition) {
    let (restored, _unresolved) = rehydrate(sanitized, vault, policy);
    if restricted_scan(&restored, policy, detector).is_empty() {
        (restored, Disposition::Delivered)
    } else {
        (refusal.to_string(), Disposition::Blocked)
    }
}

/// Detections of kinds that are not in the rehydration allowlist.
pub fn restricted_scan(text: &str, policy: &CompliancePolicy, detector: &Detector) -> Vec<EntitySpan> {
    let spans: Vec<EntitySpan> = detector
        .detect_all(text)
        .into_iter()
        .filter(|s| !policy.is_rehydratable(&s.kind))
        .collect();
    crate::detector::resolve_overlaps(text, spans).expect("detector spans are in bounds")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub kind: EntityKind,
    pub action: PolicyAction,
}

/// PII-free trace of one pipeline turn; one JSON line in the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub session_id: String,
    pub turn: u32,
    pub timestamp: DateTime<Utc>,
    pub level: RedactionLevel,
    pub detections: BTreeMap<EntityKind, usize>,
    pub actions: Vec<ActionRecord>,
    pub retrieved: Vec<String>,
    pub leak_events: Vec<LeakEvent>,
    pub disposition: Disposition,
    pub backend_id: String,
    pub truncated: bool,
}

impl AuditRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("audit records always serialize")
    }

    /// Rejects records whose serialized form contains anything the detector
    /// flags or any original held in `vault`.
    pub fn check_pii_free(&self, detector: &Detector, vault: Option<&SessionVault>) -> Result<(), AuditError> {
        if self.session_id.is_empty() || !self.session_id.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(AuditError::InvariantViolation("session id is not hex".into()));
        }
        let line = self.to_line();
        let mut kinds: Vec<EntityKind> = detector.detect(&line).into_iter().map(|s| s.kind).collect();
        if let Some(vault) = vault {
            let normalized = NormalizedText::new(&line);
            kinds.extend(
                vault
                    .entries()
                    .filter(|e| normalized.contains(&e.kind, &e.original))
                    .map(|e| e.kind.clone()),
            );
        }
        if kinds.is_empty() {
            Ok(())
        } else {
            kinds.sort();
            kinds.dedup();
            let labels: Vec<&str> = kinds.iter().map(EntityKind::label).collect();
            Err(AuditError::InvariantViolation(format!(
                "record contains sensitive values of kind {}",
                labels.join(", ")
            )))
        }
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit invariant violated: {0}")]
    InvariantViolation(String),
    #[error("audit sink: {0}")]
    Io(#[from] io::Error),
}

/// Append-only destination for audit lines.
pub trait AuditSink: Send + Sync {
    /// Appends one line atomically with respect to other appends.
    fn append_line(&self, line: &str) -> io::Result<()>;
    fn read_lines(&self) -> io::Result<Vec<String>>;
    fn flush(&self) -> io::Result<()> {
        Ok(())
    }
}

/// JSON Lines file opened in append mode.
pub struct FileAuditSink {
    path: PathBuf,
    file: Mutex<File>,
}

impl FileAuditSink {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl AuditSink for FileAuditSink {
    fn append_line(&self, line: &str) -> io::Result<()> {
        let mut buf = String::with_capacity(line.len() + 1);
        buf.push_str(line);
        buf.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(buf.as_bytes())?;
        file.flush()
    }

    fn read_lines(&self) -> io::Result<Vec<String>> {
        let _guard = self.file.lock().unwrap_or_else(|e| e.into_inner());
        let raw = std::fs::read_to_string(&self.path)?;
        Ok(raw.lines().filter(|l| !l.is_empty()).map(String::from).collect())
    }

    fn flush(&self) -> io::Result<()> {
        let file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.sync_all()
    }
}

#[derive(Default)]
pub struct MemoryAuditSink {
    lines: Mutex<Vec<String>>,
}

impl MemoryAuditSink {
    pub fn new() -> Self {
        Self::default()
    }
}

impl AuditSink for MemoryAuditSink {
    fn append_line(&self, line: &str) -> io::Result<()> {
        self.lines.lock().unwrap().push(line.to_string());
        Ok(())
    }

    fn read_lines(&self) -> io::Result<Vec<String>> {
        Ok(self.lines.lock().unwrap().clone())
    }
}

/// Validates and appends one record.
pub fn write_audit(
    record: &AuditRecord,
    sink: &dyn AuditSink,
    detector: &Detector,
    vault: Option<&SessionVault>,
) -> Result<(), AuditError> {
    record.check_pii_free(detector, vault)?;
    sink.append_line(&record.to_line())?;
    Ok(())
}

/// Lines belonging to one session, in append order.
pub fn session_lines(sink: &dyn AuditSink, session_id: &str) -> io::Result<Vec<String>> {
    #[derive(Deserialize)]
    struct Probe {
        session_id: String,
    }
    Ok(sink
        .read_lines()?
        .into_iter()
        .filter(|l| serde_json::from_str::<Probe>(l).is_ok_and(|p| p.session_id == session_id))
        .collect())
}
