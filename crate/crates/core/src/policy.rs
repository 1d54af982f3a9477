//! Compliance policy: which action each entity kind receives at each
//! redaction level, and which kinds may be restored in responses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::EntityKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RedactionLevel {
    Minimal,
    Standard,
    Strict,
}

impl RedactionLevel {
    pub const ALL: [RedactionLevel; 3] = [
        RedactionLevel::Minimal,
        RedactionLevel::Standard,
        RedactionLevel::Strict,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RedactionLevel::Minimal => "minimal",
            RedactionLevel::Standard => "standard",
            RedactionLevel::Strict => "strict",
        }
    }
}

impl fmt::Display for RedactionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for RedactionLevel {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "minimal" => Ok(RedactionLevel::Minimal),
            "standard" => Ok(RedactionLevel::Standard),
            "strict" => Ok(RedactionLevel::Strict),
            _ => Err(PolicyError::Parse(format!("unknown redaction level {s:?}"))),
        }
    }
}

pub const MAX_KEEP_LAST: u8 = 8;

/// What happens to a detected value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PolicyAction {
    Allow,
    /// Star out every alphanumeric character except the last `keep_last`.
    Mask {
        keep_last: u8,
    },
    Pseudonymize,
    Redact,
}

impl PolicyAction {
    /// Allow < Mask < Pseudonymize < Redact.
    pub fn strictness(self) -> u8 {
        match self {
            PolicyAction::Allow => 0,
            PolicyAction::Mask { .. } => 1,
            PolicyAction::Pseudonymize => 2,
            PolicyAction::Redact => 3,
        }
    }

    /// Mask with the per-kind default: 4 trailing characters for
    /// digit-bearing kinds, none otherwise.
    pub fn default_mask(kind: &EntityKind) -> Self {
        PolicyAction::Mask {
            keep_last: if kind.is_digit_bearing() { 4 } else { 0 },
        }
    }

    fn parse_for(s: &str, kind: &EntityKind) -> Result<Self, PolicyError> {
        if s.trim().eq_ignore_ascii_case("mask") {
            return Ok(Self::default_mask(kind));
        }
        s.parse()
    }
}

impl fmt::Display for PolicyAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyAction::Allow => f.write_str("allow"),
            PolicyAction::Mask { keep_last } => write!(f, "mask:{keep_last}"),
            PolicyAction::Pseudonymize => f.write_str("pseudonymize"),
            PolicyAction::Redact => f.write_str("redact"),
        }
    }
}

impl FromStr for PolicyAction {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "allow" => Ok(PolicyAction::Allow),
            "pseudonymize" => Ok(PolicyAction::Pseudonymize),
            "redact" => Ok(PolicyAction::Redact),
            "mask" => Ok(PolicyAction::Mask { keep_last: 0 }),
            other => {
                let keep = other
                    .strip_prefix("mask:")
                    .and_then(|n| n.parse::<u8>().ok())
                    .ok_or_else(|| PolicyError::Parse(format!("unknown action {s:?}")))?;
                Ok(PolicyAction::Mask { keep_last: keep })
            }
        }
    }
}

impl From<PolicyAction> for String {
    fn from(a: PolicyAction) -> Self {
        a.to_string()
    }
}

impl TryFrom<String> for PolicyAction {
    type Error = PolicyError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy parse error: {0}")]
    Parse(String),
    #[error("policy rejected: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// One broken policy invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// A configured kind has no action at this level.
    Missing {
        kind: EntityKind,
        level: RedactionLevel,
    },
    /// A stricter level exposes more than a laxer one.
    NonMonotonic {
        kind: EntityKind,
        level: RedactionLevel,
    },
    /// An allowlisted kind is masked, so there is nothing to restore.
    AllowlistMasked {
        kind: EntityKind,
        level: RedactionLevel,
    },
    MaskTooLong {
        kind: EntityKind,
        level: RedactionLevel,
    },
    /// The allowlist names a kind the table does not configure.
    AllowlistUnknown {
        kind: EntityKind,
    },
    LeakThreshold,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Missing { kind, level } => write!(f, "{kind}/{level}: no action configured"),
            Violation::NonMonotonic { kind, level } => {
                write!(f, "{kind}/{level}: action is less strict than at the previous level")
            }
            Violation::AllowlistMasked { kind, level } => {
                write!(f, "{kind}/{level}: allowlisted kind must not be masked")
            }
            Violation::MaskTooLong { kind, level } => {
                write!(f, "{kind}/{level}: mask keep_last exceeds {MAX_KEEP_LAST}")
            }
            Violation::AllowlistUnknown { kind } => {
                write!(f, "{kind}: allowlisted kind has no table entry")
            }
            Violation::LeakThreshold => f.write_str("leak_threshold outside [0, 1]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompliancePolicy {
    table: BTreeMap<(EntityKind, RedactionLevel), PolicyAction>,
    rehydration_allowlist: BTreeSet<EntityKind>,
    leak_threshold: f64,
}

impl Default for CompliancePolicy {
    fn default() -> Self {
        use EntityKind::*;
        use PolicyAction::*;
        let card_mask = Mask { keep_last: 4 };
        let rows: [(EntityKind, [PolicyAction; 3]); 8] = [
            (Email, [Pseudonymize, Pseudonymize, Redact]),
            (Phone, [Pseudonymize, Pseudonymize, Redact]),
            (PersonName, [Pseudonymize, Pseudonymize, Redact]),
            (NationalId, [Pseudonymize, Pseudonymize, Redact]),
            (CreditCard, [card_mask, card_mask, Redact]),
            (AccountNumber, [Pseudonymize, Pseudonymize, Redact]),
            (Date, [Allow, Pseudonymize, Redact]),
            (Address, [Allow, Pseudonymize, Redact]),
        ];
        let mut policy = CompliancePolicy::new(0.5);
        for (kind, actions) in rows {
            for (level, action) in RedactionLevel::ALL.into_iter().zip(actions) {
                policy.set(kind.clone(), level, action);
            }
        }
        policy.rehydration_allowlist = [Email, Phone, PersonName, Address, Date].into();
        policy
    }
}

impl CompliancePolicy {
    /// An empty table: every kind falls back to Redact.
    pub fn new(leak_threshold: f64) -> Self {
        Self {
            table: BTreeMap::new(),
            rehydration_allowlist: BTreeSet::new(),
            leak_threshold,
        }
    }

    pub fn set(&mut self, kind: EntityKind, level: RedactionLevel, action: PolicyAction) {
        self.table.insert((kind, level), action);
    }

    pub fn allow_rehydration(&mut self, kind: EntityKind) {
        self.rehydration_allowlist.insert(kind);
    }

    pub fn is_rehydratable(&self, kind: &EntityKind) -> bool {
        self.rehydration_allowlist.contains(kind)
    }

    pub fn rehydration_allowlist(&self) -> &BTreeSet<EntityKind> {
        &self.rehydration_allowlist
    }

    pub fn leak_threshold(&self) -> f64 {
        self.leak_threshold
    }

    pub fn kinds(&self) -> BTreeSet<EntityKind> {
        self.table.keys().map(|(k, _)| k.clone()).collect()
    }

    /// The configured action, or Redact for kinds the table does not know.
    pub fn action_for(&self, kind: &EntityKind, level: RedactionLevel) -> PolicyAction {
        // BTreeMap lookups need an owned key; kinds are small.
        self.table
            .get(&(kind.clone(), level))
            .copied()
            .unwrap_or(PolicyAction::Redact)
    }

    /// Every invariant violation, or an empty list when the policy is sound.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.leak_threshold) {
            out.push(Violation::LeakThreshold);
        }
        for kind in self.kinds() {
            let mut previous: Option<PolicyAction> = None;
            for level in RedactionLevel::ALL {
                let Some(&action) = self.table.get(&(kind.clone(), level)) else {
                    out.push(Violation::Missing {
                        kind: kind.clone(),
                        level,
                    });
                    continue;
                };
                if let PolicyAction::Mask { keep_last } = action {
                    if keep_last > MAX_KEEP_LAST {
                        out.push(Violation::MaskTooLong {
                            kind: kind.clone(),
                            level,
                        });
                    }
                    if self.is_rehydratable(&kind) {
                        out.push(Violation::AllowlistMasked {
                            kind: kind.clone(),
                            level,
                        });
                    }
                }
                if let Some(prev) = previous {
                    if action.strictness() < prev.strictness() {
                        out.push(Violation::NonMonotonic {
                            kind: kind.clone(),
                            level,
                        });
                    }
                }
                previous = Some(action);
            }
        }
        let configured = self.kinds();
        for kind in &self.rehydration_allowlist {
            if !configured.contains(kind) {
                out.push(Violation::AllowlistUnknown { kind: kind.clone() });
            }
        }
        out
    }

    /// Parses a policy file and rejects it unless it validates.
    ///
    /// ```toml
    /// leak_threshold = 0.5
    /// rehydration_allowlist = ["EMAIL"]
    ///
    /// [kinds.EMAIL]
    /// minimal = "pseudonymize"
    /// standard = "pseudonymize"
    /// strict = "redact"
    /// ```
    pub fn from_toml(source: &str) -> Result<Self, PolicyError> {
        let file: PolicyFile = toml::from_str(source).map_err(|e| PolicyError::Parse(e.to_string()))?;
        let mut policy = CompliancePolicy::new(file.leak_threshold);
        for (label, levels) in file.kinds {
            let kind: EntityKind = label.parse().map_err(|e| PolicyError::Parse(format!("{e}")))?;
            for (level, action) in [
                (RedactionLevel::Minimal, levels.minimal),
                (RedactionLevel::Standard, levels.standard),
                (RedactionLevel::Strict, levels.strict),
            ] {
                if let Some(action) = action {
                    let action = PolicyAction::parse_for(&action, &kind)
                        .map_err(|e| PolicyError::Parse(format!("{kind}/{level}: {e}")))?;
                    policy.set(kind.clone(), level, action);
                }
            }
        }
        for label in file.rehydration_allowlist {
            let kind = label.parse().map_err(|e| PolicyError::Parse(format!("{e}")))?;
            policy.allow_rehydration(kind);
        }
        let violations = policy.validate();
        if violations.is_empty() {
            Ok(policy)
        } else {
            Err(PolicyError::Invalid(violations))
        }
    }
}

/// Free-function form of [`CompliancePolicy::action_for`].
pub fn action_for(kind: &EntityKind, level: RedactionLevel, policy: &CompliancePolicy) -> PolicyAction {
    policy.action_for(kind, level)
}

/// Free-function form of [`CompliancePolicy::validate`].
pub fn validate_policy(policy: &CompliancePolicy) -> Result<(), Vec<Violation>> {
    let v = policy.validate();
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    leak_threshold: f64,
    #[serde(default)]
    rehydration_allowlist: Vec<String>,
    #[serde(default)]
    kinds: BTreeMap<String, LevelEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelEntry {
    minimal: Option<String>,
    standard: Option<String>,
    strict: Option<String>,
}
