use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DetectorError;

/// Category of a sensitive entity.
///
/// Built-in kinds render as their fixed label (`EMAIL`, `CREDIT_CARD`, ...).
/// Custom kinds carry their own label and parse from either `CUSTOM:<LABEL>`
/// or a bare label that does not collide with a built-in one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EntityKind {
    Email,
    Phone,
    CreditCard,
    NationalId,
    AccountNumber,
    Date,
    PersonName,
    Address,
    Custom(String),
}

impl EntityKind {
    /// The eight kinds covered by the default ruleset.
    pub const BUILTIN: [EntityKind; 8] = [
        EntityKind::Email,
        EntityKind::Phone,
        EntityKind::CreditCard,
        EntityKind::NationalId,
        EntityKind::AccountNumber,
        EntityKind::Date,
        EntityKind::PersonName,
        EntityKind::Address,
    ];

    pub fn label(&self) -> &str {
        match self {
            EntityKind::Email => "EMAIL",
            EntityKind::Phone => "PHONE",
            EntityKind::CreditCard => "CREDIT_CARD",
            EntityKind::NationalId => "NATIONAL_ID",
            EntityKind::AccountNumber => "ACCOUNT_NUMBER",
            EntityKind::Date => "DATE",
            EntityKind::PersonName => "PERSON_NAME",
            EntityKind::Address => "ADDRESS",
            EntityKind::Custom(label) => label,
        }
    }

    /// Kinds whose values are compared after stripping spaces and hyphens.
    pub fn is_digit_bearing(&self) -> bool {
        matches!(
            self,
            EntityKind::Phone | EntityKind::CreditCard | EntityKind::NationalId | EntityKind::AccountNumber
        )
    }

    /// Kinds whose values are compared case-insensitively.
    pub fn is_case_folded(&self) -> bool {
        matches!(self, EntityKind::Email | EntityKind::PersonName)
    }

    fn from_builtin(label: &str) -> Option<EntityKind> {
        Self::BUILTIN.iter().find(|k| k.label() == label).cloned()
    }
}

pub(crate) fn is_valid_label(label: &str) -> bool {
    !label.is_empty()
        && label.bytes().all(|b| b.is_ascii_uppercase() || b == b'_')
        && !label.starts_with('_')
        && !label.ends_with('_')
}

impl FromStr for EntityKind {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bare = s.strip_prefix("CUSTOM:").unwrap_or(s);
        if !is_valid_label(bare) {
            return Err(DetectorError::InvalidKind(s.to_string()));
        }
        Ok(Self::from_builtin(bare).unwrap_or_else(|| EntityKind::Custom(bare.to_string())))
    }
}

impl TryFrom<String> for EntityKind {
    type Error = DetectorError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<EntityKind> for String {
    fn from(kind: EntityKind) -> Self {
        kind.label().to_string()
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.label())
    }
}
