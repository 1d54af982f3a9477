//! Rule-based detection of sensitive entities.
//!
//! A [`Detector`] is a compiled ruleset: regular-expression rules, gazetteer
//! rules, and composite rules that pair a pattern with a checksum validator.
//! [`Detector::detect_all`] returns every raw match; [`Detector::detect`]
//! additionally resolves overlaps into a sorted, non-overlapping span list.
//!
//! Spans never overlap a placeholder token or the redaction literal, so
//! anonymized text can be scanned again without being rewritten.

mod gazetteer;
mod kind;
mod luhn;
mod overlap;
mod ruleset;

use std::collections::HashMap;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gazetteer::Gazetteer;
pub use kind::EntityKind;
pub use luhn::validate_luhn;
pub use overlap::{priority_order, resolve_overlaps};
pub use ruleset::{default_gazetteers, default_rules, load_gazetteer_dir, parse_ruleset};

use crate::placeholder::protected_ranges;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("rule {detector_id}: invalid pattern: {source}")]
    Pattern {
        detector_id: String,
        #[source]
        source: Box<regex::Error>,
    },
    #[error("rule {detector_id}: {reason}")]
    Rule { detector_id: String, reason: String },
    #[error("gazetteer {name}: {reason}")]
    Gazetteer { name: String, reason: String },
    #[error("invalid entity kind label {0:?}")]
    InvalidKind(String),
    #[error("invalid Luhn input: {0}")]
    InvalidLuhnInput(String),
    #[error("span [{start}, {end}) violates text bounds or character boundaries")]
    SpanOutOfBounds { start: usize, end: usize },
    #[error("ruleset file: {0}")]
    RulesetFile(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A detected sensitive region of a source text, addressed in bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub kind: EntityKind,
    pub surface: String,
    pub confidence: f64,
    pub detector_id: String,
}

impl EntitySpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Checks the offset invariants against `text`.
    pub fn is_valid_for(&self, text: &str) -> bool {
        self.start < self.end
            && self.end <= text.len()
            && text.is_char_boundary(self.start)
            && text.is_char_boundary(self.end)
            && text[self.start..self.end] == self.surface
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Validator {
    Luhn,
}

impl Validator {
    fn accepts(self, surface: &str) -> bool {
        match self {
            Validator::Luhn => validate_luhn(surface).unwrap_or(false),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    Pattern(String),
    Gazetteer(String),
    Composite { pattern: String, validator: Validator },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRule {
    pub detector_id: String,
    pub kind: EntityKind,
    pub mechanism: Mechanism,
    pub base_confidence: f64,
}

impl DetectorRule {
    pub fn pattern(id: &str, kind: EntityKind, pattern: &str, confidence: f64) -> Self {
        Self {
            detector_id: id.into(),
            kind,
            mechanism: Mechanism::Pattern(pattern.into()),
            base_confidence: confidence,
        }
    }

    pub fn gazetteer(id: &str, kind: EntityKind, gazetteer: &str, confidence: f64) -> Self {
        Self {
            detector_id: id.into(),
            kind,
            mechanism: Mechanism::Gazetteer(gazetteer.into()),
            base_confidence: confidence,
        }
    }

    pub fn composite(id: &str, kind: EntityKind, pattern: &str, validator: Validator, confidence: f64) -> Self {
        Self {
            detector_id: id.into(),
            kind,
            mechanism: Mechanism::Composite {
                pattern: pattern.into(),
                validator,
            },
            base_confidence: confidence,
        }
    }
}

#[derive(Debug)]
enum Matcher {
    Regex(Regex, Option<Validator>),
    Gazetteer(Arc<Gazetteer>),
}

#[derive(Debug)]
struct CompiledRule {
    rule: DetectorRule,
    matcher: Matcher,
}

/// A validated, compiled ruleset. Immutable and shareable across threads.
#[derive(Debug)]
pub struct Detector {
    rules: Vec<CompiledRule>,
}

impl Detector {
    pub fn new(rules: Vec<DetectorRule>, gazetteers: &HashMap<String, Gazetteer>) -> Result<Self, DetectorError> {
        let mut seen = std::collections::HashSet::new();
        let mut shared: HashMap<&str, Arc<Gazetteer>> = HashMap::new();
        let mut compiled = Vec::with_capacity(rules.len());
        for rule in rules {
            let id = rule.detector_id.clone();
            let fail = |reason: &str| DetectorError::Rule {
                detector_id: id.clone(),
                reason: reason.into(),
            };
            if id.is_empty() {
                return Err(fail("empty detector id"));
            }
            if !seen.insert(id.clone()) {
                return Err(fail("duplicate detector id"));
            }
            if !(0.0..=1.0).contains(&rule.base_confidence) {
                return Err(fail("base confidence outside [0, 1]"));
            }
            let compile = |pattern: &str| {
                Regex::new(pattern).map_err(|e| DetectorError::Pattern {
                    detector_id: id.clone(),
                    source: Box::new(e),
                })
            };
            let matcher = match &rule.mechanism {
                Mechanism::Pattern(p) => Matcher::Regex(compile(p)?, None),
                Mechanism::Composite { pattern, validator } => Matcher::Regex(compile(pattern)?, Some(*validator)),
                Mechanism::Gazetteer(name) => {
                    let gaz = match shared.get(name.as_str()) {
                        Some(g) => g.clone(),
                        None => {
                            let (key, g) = gazetteers
                                .get_key_value(name)
                                .ok_or_else(|| fail(&format!("unknown gazetteer {name:?}")))?;
                            let g = Arc::new(g.clone());
                            shared.insert(key.as_str(), g.clone());
                            g
                        }
                    };
                    Matcher::Gazetteer(gaz)
                }
            };
            compiled.push(CompiledRule { rule, matcher });
        }
        Ok(Self { rules: compiled })
    }

    /// The shipped ruleset and name list.
    pub fn with_defaults() -> Self {
        Self::new(default_rules(), &default_gazetteers()).expect("default ruleset compiles")
    }

    pub fn rules(&self) -> impl Iterator<Item = &DetectorRule> {
        self.rules.iter().map(|c| &c.rule)
    }

    pub fn kinds(&self) -> Vec<EntityKind> {
        let mut kinds: Vec<EntityKind> = self.rules().map(|r| r.kind.clone()).collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }

    /// Every match of every rule, possibly overlapping, in rule order.
    pub fn detect_all(&self, text: &str) -> Vec<EntitySpan> {
        if text.is_empty() {
            return Vec::new();
        }
        let protected = protected_ranges(text);
        let mut spans = Vec::new();
        for compiled in &self.rules {
            let rule = &compiled.rule;
            let mut push = |start: usize, end: usize| {
                if start >= end {
                    return;
                }
                if protected.iter().any(|&(ps, pe)| start < pe && ps < end) {
                    return;
                }
                spans.push(EntitySpan {
                    start,
                    end,
                    kind: rule.kind.clone(),
                    surface: text[start..end].to_string(),
                    confidence: rule.base_confidence,
                    detector_id: rule.detector_id.clone(),
                });
            };
            match &compiled.matcher {
                Matcher::Regex(re, validator) => {
                    for caps in re.captures_iter(text) {
                        let m = caps.name("value").or_else(|| caps.get(0)).unwrap();
                        if let Some(v) = validator {
                            if !v.accepts(m.as_str()) {
                                continue;
                            }
                        }
                        push(m.start(), m.end());
                    }
                }
                Matcher::Gazetteer(g) => {
                    for (start, end) in g.find_all(text) {
                        push(start, end);
                    }
                }
            }
        }
        spans
    }

    /// Sorted, non-overlapping detections.
    pub fn detect(&self, text: &str) -> Vec<EntitySpan> {
        resolve_overlaps(text, self.detect_all(text)).expect("detector spans always satisfy the offset invariants")
    }
}

/// One-shot form of [`Detector::detect_all`] for callers holding raw rules.
pub fn detect_all(
    text: &str,
    rules: Vec<DetectorRule>,
    gazetteers: &HashMap<String, Gazetteer>,
) -> Result<Vec<EntitySpan>, DetectorError> {
    Ok(Detector::new(rules, gazetteers)?.detect_all(text))
}

/// One-shot form of [`Detector::detect`].
pub fn detect(
    text: &str,
    rules: Vec<DetectorRule>,
    gazetteers: &HashMap<String, Gazetteer>,
) -> Result<Vec<EntitySpan>, DetectorError> {
    Ok(Detector::new(rules, gazetteers)?.detect(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(kind: EntityKind) -> DetectorRule {
        default_rules().into_iter().find(|r| r.kind == kind).unwrap()
    }

    fn only(kind: EntityKind) -> Detector {
        Detector::new(vec![rule(kind)], &default_gazetteers()).unwrap()
    }

    fn surfaces(spans: &[EntitySpan]) -> Vec<(&str, &str)> {
        spans.iter().map(|s| (s.kind.label(), s.surface.as_str())).collect()
    }

    #[test]
    fn email_rule_finds_address() {
        let spans = only(EntityKind::Email).detect_all("mail me at a@b.co");
        assert_eq!(surfaces(&spans), [("EMAIL", "a@b.co")]);
    }

    #[test]
    fn empty_text_has_no_spans() {
        assert!(Detector::with_defaults().detect_all("").is_empty());
    }

    #[test]
    fn luhn_failure_suppresses_card() {
        let d = only(EntityKind::CreditCard);
        assert!(d.detect_all("card 4111111111111112 on file").is_empty());
        assert_eq!(d.detect_all("card 4111111111111111 on file").len(), 1);
    }

    #[test]
    fn repeated_phone_yields_two_spans() {
        let spans = only(EntityKind::Phone).detect("call 555-0100 or 555-0100");
        assert_eq!(surfaces(&spans), [("PHONE", "555-0100"), ("PHONE", "555-0100")]);
    }

    #[test]
    fn nothing_sensitive() {
        assert!(Detector::with_defaults().detect("nothing sensitive here").is_empty());
    }

    #[test]
    fn malformed_pattern_names_rule() {
        let bad = DetectorRule::pattern("broken", EntityKind::Email, "(unclosed", 0.5);
        let err = Detector::new(vec![bad], &HashMap::new()).unwrap_err();
        assert!(err.to_string().contains("broken"), "{err}");
    }

    #[test]
    fn duplicate_ids_and_bad_confidence_rejected() {
        let a = DetectorRule::pattern("x", EntityKind::Email, "a", 0.5);
        assert!(Detector::new(vec![a.clone(), a.clone()], &HashMap::new()).is_err());
        let mut b = a;
        b.base_confidence = 1.5;
        assert!(Detector::new(vec![b], &HashMap::new()).is_err());
    }

    #[test]
    fn unknown_gazetteer_rejected() {
        let r = DetectorRule::gazetteer("n", EntityKind::PersonName, "missing", 0.5);
        assert!(Detector::new(vec![r], &HashMap::new()).is_err());
    }

    #[test]
    fn placeholders_are_immune() {
        let d = Detector::with_defaults();
        let text = "[[EMAIL_1]] [[PHONE_12]] [REDACTED] [[CREDIT_CARD_3]]";
        assert!(d.detect_all(text).is_empty());
    }

    #[test]
    fn value_group_narrows_account_span() {
        let spans = only(EntityKind::AccountNumber).detect("my account number is 12345678.");
        assert_eq!(surfaces(&spans), [("ACCOUNT_NUMBER", "12345678")]);
    }

    // Golden coverage for the shipped ruleset.
    #[test]
    fn default_ruleset_golden() {
        let d = Detector::with_defaults();
        let cases: &[(&str, &[(&str, &str)])] = &[
            (
                "write to jane.doe+x@mail.example.org.",
                &[("EMAIL", "jane.doe+x@mail.example.org")],
            ),
            ("ring (212) 555-0143 today", &[("PHONE", "(212) 555-0143")]),
            ("ring +44 212 555 0143", &[("PHONE", "+44 212 555 0143")]),
            ("ring 212.555.0143", &[("PHONE", "212.555.0143")]),
            ("card 4111 1111 1111 1111 ok", &[("CREDIT_CARD", "4111 1111 1111 1111")]),
            ("card 4111-1111-1111-1111", &[("CREDIT_CARD", "4111-1111-1111-1111")]),
            ("ssn 123-45-6789", &[("NATIONAL_ID", "123-45-6789")]),
            ("acct #00123456", &[("ACCOUNT_NUMBER", "00123456")]),
            ("Account no. 9876543210", &[("ACCOUNT_NUMBER", "9876543210")]),
            ("born 1990-04-12", &[("DATE", "1990-04-12")]),
            ("due 4/12/2024", &[("DATE", "4/12/2024")]),
            ("on March 3, 2024 and", &[("DATE", "March 3, 2024")]),
            ("since 3rd March 2024", &[("DATE", "3rd March 2024")]),
            ("by Dec. 5th", &[("DATE", "Dec. 5th")]),
            ("this is Alice Moreau speaking", &[("PERSON_NAME", "Alice Moreau")]),
            ("hi müller", &[("PERSON_NAME", "müller")]),
            ("ship to 221 Baker Street now", &[("ADDRESS", "221 Baker Street")]),
            ("at 12 Old Mill Road", &[("ADDRESS", "12 Old Mill Road")]),
            ("Refunds take 5 days. You may return items.", &[]),
            ("Order 12345 shipped in 2 boxes", &[]),
        ];
        for (text, expected) in cases {
            let got = d.detect(text);
            assert_eq!(&surfaces(&got), expected, "{text}");
        }
    }

    #[test]
    fn detect_output_sorted_non_overlapping() {
        let d = Detector::with_defaults();
        let text = "Alice Moreau, 221 Baker Street, card 4111111111111111, account 4111111111111111";
        let spans = d.detect(text);
        for w in spans.windows(2) {
            assert!(w[0].end <= w[1].start);
        }
        assert!(spans.iter().all(|s| s.is_valid_for(text)));
    }
}
