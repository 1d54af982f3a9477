//! Placeholder token grammar shared by detection, anonymization and filtering.
//!
//! A placeholder renders as `[[KIND_n]]`: two left brackets, an uppercase
//! kind label, an underscore, a decimal counter starting at 1, and two right
//! brackets.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;

use crate::detector::EntityKind;

/// Literal substituted for redacted values.
pub const REDACTED_TOKEN: &str = "[REDACTED]";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Placeholder {
    pub kind: EntityKind,
    pub n: u32,
}

impl Placeholder {
    pub fn new(kind: EntityKind, n: u32) -> Self {
        debug_assert!(n >= 1);
        Self { kind, n }
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}_{}]]", self.kind.label(), self.n)
    }
}

pub(crate) fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\[([A-Z](?:[A-Z_]*[A-Z])?)_([1-9][0-9]{0,8})\]\]").unwrap())
}

impl FromStr for Placeholder {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let caps = placeholder_regex().captures(s).ok_or(())?;
        if caps.get(0).map(|m| m.as_str().len()) != Some(s.len()) {
            return Err(());
        }
        let kind = caps[1].parse().map_err(|_| ())?;
        let n = caps[2].parse().map_err(|_| ())?;
        Ok(Placeholder { kind, n })
    }
}

/// Every well-formed placeholder in `text` with its byte range.
pub fn find_placeholders(text: &str) -> Vec<(usize, usize, Placeholder)> {
    placeholder_regex()
        .captures_iter(text)
        .filter_map(|caps| {
            let m = caps.get(0)?;
            let kind = caps[1].parse().ok()?;
            let n = caps[2].parse().ok()?;
            Some((m.start(), m.end(), Placeholder { kind, n }))
        })
        .collect()
}

/// Byte ranges of tokens that detection must never touch: placeholders and
/// the redaction literal.
pub(crate) fn protected_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = find_placeholders(text).into_iter().map(|(s, e, _)| (s, e)).collect();
    out.extend(text.match_indices(REDACTED_TOKEN).map(|(s, m)| (s, s + m.len())));
    out.sort_unstable();
    out
}
