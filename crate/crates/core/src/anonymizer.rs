//! Span substitution and the per-session pseudonym vault.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::detector::{Detector, EntityKind, EntitySpan};
use crate::placeholder::{find_placeholders, REDACTED_TOKEN};
use crate::policy::{CompliancePolicy, PolicyAction, RedactionLevel};

pub use crate::placeholder::Placeholder;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnonymizeError {
    #[error("spans overlap or are unsorted at [{start}, {end})")]
    OverlappingSpans { start: usize, end: usize },
    #[error("span [{start}, {end}) does not match the text")]
    SpanOutOfBounds { start: usize, end: usize },
}

/// Canonical form used to decide whether two surfaces are the same value.
pub fn normalize(kind: &EntityKind, value: &str) -> String {
    if kind.is_case_folded() {
        value.to_lowercase()
    } else if kind.is_digit_bearing() {
        value.chars().filter(|c| *c != ' ' && *c != '-').collect()
    } else {
        value.to_string()
    }
}

#[derive(Clone, PartialEq)]
pub struct VaultEntry {
    pub placeholder: Placeholder,
    pub original: String,
    pub kind: EntityKind,
    pub first_seen_turn: u32,
    pub action: PolicyAction,
}

impl fmt::Debug for VaultEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VaultEntry")
            .field("placeholder", &self.placeholder.to_string())
            .field("original", &"<hidden>")
            .field("first_seen_turn", &self.first_seen_turn)
            .finish()
    }
}

/// Bijective original/placeholder mapping for one session.
///
/// Never serialized; callers serialize access per session.
#[derive(Clone, Default, PartialEq)]
pub struct SessionVault {
    session_id: String,
    forward: BTreeMap<(EntityKind, String), Placeholder>,
    reverse: BTreeMap<Placeholder, VaultEntry>,
    counters: BTreeMap<EntityKind, u32>,
    turn: u32,
}

impl fmt::Debug for SessionVault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionVault")
            .field("session_id", &self.session_id)
            .field("entries", &self.reverse.len())
            .finish()
    }
}

impl SessionVault {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            turn: 1,
            ..Default::default()
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// Turn number recorded as `first_seen_turn` for new entries.
    pub fn begin_turn(&mut self, turn: u32) {
        self.turn = turn.max(1);
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    pub fn get(&self, placeholder: &Placeholder) -> Option<&VaultEntry> {
        self.reverse.get(placeholder)
    }

    pub fn lookup(&self, kind: &EntityKind, original: &str) -> Option<&Placeholder> {
        self.forward.get(&(kind.clone(), normalize(kind, original)))
    }

    /// Entries ordered by placeholder.
    pub fn entries(&self) -> impl Iterator<Item = &VaultEntry> {
        self.reverse.values()
    }

    /// Same normalized value and kind always yields the same placeholder;
    /// new values take the next per-kind counter.
    pub fn lookup_or_insert(&mut self, original: &str, kind: &EntityKind) -> Placeholder {
        debug_assert!(!original.is_empty());
        let key = (kind.clone(), normalize(kind, original));
        if let Some(p) = self.forward.get(&key) {
            return p.clone();
        }
        let next = self.counters.entry(kind.clone()).or_insert(1);
        let placeholder = Placeholder::new(kind.clone(), *next);
        *next += 1;
        self.reverse.insert(
            placeholder.clone(),
            VaultEntry {
                placeholder: placeholder.clone(),
                original: original.to_string(),
                kind: kind.clone(),
                first_seen_turn: self.turn,
                action: PolicyAction::Pseudonymize,
            },
        );
        self.forward.insert(key, placeholder.clone());
        placeholder
    }

    /// Forgets every entry and resets the counters.
    pub fn purge(&mut self) {
        self.forward.clear();
        self.reverse.clear();
        self.counters.clear();
    }

    /// Bijection and dense-counter invariants.
    pub fn is_consistent(&self) -> bool {
        if self.forward.len() != self.reverse.len() {
            return false;
        }
        let forward_ok = self.forward.iter().all(|((kind, norm), p)| {
            self.reverse
                .get(p)
                .is_some_and(|e| &e.kind == kind && &normalize(kind, &e.original) == norm)
        });
        let reverse_ok = self.reverse.iter().all(|(p, e)| {
            &e.placeholder == p && self.forward.get(&(e.kind.clone(), normalize(&e.kind, &e.original))) == Some(p)
        });
        let mut per_kind: BTreeMap<&EntityKind, u32> = BTreeMap::new();
        for e in self.reverse.values() {
            *per_kind.entry(&e.kind).or_default() += 1;
        }
        let counters_ok = self.counters.len() == per_kind.len()
            && per_kind.iter().all(|(k, n)| self.counters.get(*k) == Some(&(n + 1)))
            && self.reverse.keys().all(|p| p.n <= per_kind[&p.kind]);
        forward_ok && reverse_ok && counters_ok
    }
}

/// What was done to one span.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedAction {
    pub kind: EntityKind,
    pub action: PolicyAction,
    pub placeholder: Option<Placeholder>,
}

/// Stars out alphanumeric characters except the last `keep_last`;
/// separators stay in place.
pub fn mask_value(value: &str, keep_last: u8) -> String {
    let total = value.chars().filter(|c| c.is_alphanumeric()).count();
    let keep_from = total.saturating_sub(keep_last as usize);
    let mut seen = 0;
    value
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                seen += 1;
                if seen > keep_from {
                    c
                } else {
                    '*'
                }
            } else {
                c
            }
        })
        .collect()
}

/// Replaces each span according to the policy action for its kind.
///
/// Spans must be sorted and non-overlapping. Pseudonymized values go through
/// the vault; masked and redacted values are not stored anywhere.
pub fn anonymize(
    text: &str,
    spans: &[EntitySpan],
    vault: &mut SessionVault,
    policy: &CompliancePolicy,
    level: RedactionLevel,
) -> Result<(String, Vec<AppliedAction>), AnonymizeError> {
    let mut previous_end = 0;
    for s in spans {
        if !s.is_valid_for(text) {
            return Err(AnonymizeError::SpanOutOfBounds {
                start: s.start,
                end: s.end,
            });
        }
        if s.start < previous_end {
            return Err(AnonymizeError::OverlappingSpans {
                start: s.start,
                end: s.end,
            });
        }
        previous_end = s.end;
    }

    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    let mut applied = Vec::with_capacity(spans.len());
    for s in spans {
        out.push_str(&text[cursor..s.start]);
        let action = policy.action_for(&s.kind, level);
        let mut placeholder = None;
        match action {
            PolicyAction::Allow => out.push_str(&s.surface),
            PolicyAction::Mask { keep_last } => out.push_str(&mask_value(&s.surface, keep_last)),
            PolicyAction::Redact => out.push_str(REDACTED_TOKEN),
            PolicyAction::Pseudonymize => {
                let p = vault.lookup_or_insert(&s.surface, &s.kind);
                out.push_str(&p.to_string());
                placeholder = Some(p);
            }
        }
        applied.push(AppliedAction {
            kind: s.kind.clone(),
            action,
            placeholder,
        });
        cursor = s.end;
    }
    out.push_str(&text[cursor..]);
    Ok((out, applied))
}

/// Result of [`anonymize_text`].
#[derive(Debug, Clone, PartialEq)]
pub struct Anonymized {
    pub text: String,
    /// First-pass detections, plus any later-pass span that changed the text.
    pub detections: Vec<EntitySpan>,
    /// One action per entry in `detections`.
    pub actions: Vec<AppliedAction>,
}

const MAX_PASSES: usize = 8;

/// Detects and anonymizes until the text stops changing.
///
/// Masking can expose a new match next to the kept characters (a masked card
/// followed by a house number, say), so a single pass is not idempotent.
/// Placeholders and redaction tokens are immune to detection and masking
/// strictly reduces alphanumerics, so this settles in a few passes.
pub fn anonymize_text(
    text: &str,
    detector: &Detector,
    vault: &mut SessionVault,
    policy: &CompliancePolicy,
    level: RedactionLevel,
) -> Anonymized {
    let mut current = text.to_string();
    let mut detections = Vec::new();
    let mut actions = Vec::new();
    for pass in 0..MAX_PASSES {
        let spans = detector.detect(&current);
        let (next, applied) =
            anonymize(&current, &spans, vault, policy, level).expect("detector output is sorted and non-overlapping");
        for (span, action) in spans.into_iter().zip(applied) {
            let changed = span.surface != mask_or_keep(&span.surface, action.action);
            if pass == 0 || changed {
                detections.push(span);
                actions.push(action);
            }
        }
        if next == current {
            break;
        }
        current = next;
    }
    Anonymized {
        text: current,
        detections,
        actions,
    }
}

fn mask_or_keep(surface: &str, action: PolicyAction) -> String {
    match action {
        PolicyAction::Allow => surface.to_string(),
        PolicyAction::Mask { keep_last } => mask_value(surface, keep_last),
        _ => String::new(),
    }
}

/// Restores allowlisted placeholders that the vault knows.
///
/// Allowlisted placeholders missing from the vault stay verbatim and are
/// returned as unresolved; placeholders of other kinds stay verbatim silently.
pub fn rehydrate(text: &str, vault: &SessionVault, policy: &CompliancePolicy) -> (String, Vec<Placeholder>) {
    let mut out = String::with_capacity(text.len());
    let mut unresolved = Vec::new();
    let mut cursor = 0;
    for (start, end, placeholder) in find_placeholders(text) {
        if !policy.is_rehydratable(&placeholder.kind) {
            continue;
        }
        match vault.get(&placeholder) {
            Some(entry) => {
                out.push_str(&text[cursor..start]);
                out.push_str(&entry.original);
                cursor = end;
            }
            None => unresolved.push(placeholder),
        }
    }
    out.push_str(&text[cursor..]);
    (out, unresolved)
}
