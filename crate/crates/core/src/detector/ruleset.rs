use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{DetectorError, DetectorRule, EntityKind, Gazetteer, Mechanism, Validator};

const DEFAULT_RULESET: &str = include_str!("../../data/default_ruleset.toml");
const DEFAULT_NAMES: &str = include_str!("../../data/gazetteers/person_names.txt");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesetFile {
    #[serde(default)]
    rule: Vec<RuleEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleEntry {
    id: String,
    kind: String,
    pattern: Option<String>,
    gazetteer: Option<String>,
    validator: Option<Validator>,
    confidence: f64,
}

/// Parses a ruleset file.
///
/// Every rule needs `id`, `kind`, `confidence`, and exactly one of `pattern`
/// or `gazetteer`; `validator` turns a pattern rule into a composite rule.
/// Custom kinds must be unique labels across the file.
pub fn parse_ruleset(source: &str) -> Result<Vec<DetectorRule>, DetectorError> {
    let file: RulesetFile = toml::from_str(source).map_err(|e| DetectorError::RulesetFile(e.to_string()))?;
    let mut rules = Vec::with_capacity(file.rule.len());
    for entry in file.rule {
        let fail = |reason: String| DetectorError::Rule {
            detector_id: entry.id.clone(),
            reason,
        };
        let kind: EntityKind = entry.kind.parse().map_err(|e: DetectorError| fail(e.to_string()))?;
        let mechanism = match (entry.pattern, entry.gazetteer, entry.validator) {
            (Some(p), None, None) => Mechanism::Pattern(p),
            (Some(pattern), None, Some(validator)) => Mechanism::Composite { pattern, validator },
            (None, Some(g), None) => Mechanism::Gazetteer(g),
            _ => {
                return Err(fail(
                    "needs exactly one of `pattern` or `gazetteer`; `validator` only with `pattern`".into(),
                ))
            }
        };
        rules.push(DetectorRule {
            detector_id: entry.id,
            kind,
            mechanism,
            base_confidence: entry.confidence,
        });
    }
    Ok(rules)
}

pub fn default_rules() -> Vec<DetectorRule> {
    parse_ruleset(DEFAULT_RULESET).expect("bundled ruleset parses")
}

pub fn default_gazetteers() -> HashMap<String, Gazetteer> {
    let names = Gazetteer::parse("person_names", DEFAULT_NAMES).expect("bundled gazetteer parses");
    HashMap::from([(names.name().to_string(), names)])
}

/// Loads every `*.txt` file in `dir` as a gazetteer named after its stem.
pub fn load_gazetteer_dir(dir: &Path) -> Result<HashMap<String, Gazetteer>, DetectorError> {
    let io = |source| DetectorError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut out = HashMap::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .collect::<Result<_, _>>()
        .map_err(io)?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(name) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let source = std::fs::read_to_string(&path).map_err(|source| DetectorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        out.insert(name.to_string(), Gazetteer::parse(name, &source)?);
    }
    Ok(out)
}
