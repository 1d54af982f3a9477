use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use super::{BusyBehavior, Gateway, GatewaySettings, DEFAULT_REFUSAL};
use crate::detector::{default_gazetteers, default_rules, load_gazetteer_dir, parse_ruleset, Detector, DetectorError};
use crate::llm::{Backend, BackendConfig, BackendError, HttpBackend, MockBackend, PromptTemplate};
use crate::policy::{CompliancePolicy, PolicyError, RedactionLevel, Violation};
use crate::postprocess::FileAuditSink;
use crate::rag::{read_kb_dir, IngestOutcome, KnowledgeBase, RagError};

/// Service configuration file. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_address")]
    pub address: String,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_level")]
    pub default_level: RedactionLevel,
    #[serde(default = "default_true")]
    pub default_rag: bool,
    pub policy_path: Option<PathBuf>,
    pub ruleset_path: Option<PathBuf>,
    pub gazetteer_dir: Option<PathBuf>,
    /// Directory of source documents, ingested at startup.
    pub kb_dir: Option<PathBuf>,
    /// Prebuilt index from `kb ingest --index`; takes precedence over `kb_dir`.
    pub kb_index: Option<PathBuf>,
    pub audit_path: PathBuf,
    #[serde(default = "default_refusal")]
    pub refusal_text: String,
    #[serde(default)]
    pub busy: BusyBehavior,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_context_budget")]
    pub context_budget: usize,
    #[serde(default = "default_retry_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default)]
    pub backend: BackendConfig,
}

fn default_address() -> String {
    "127.0.0.1".into()
}
fn default_port() -> u16 {
    8080
}
fn default_level() -> RedactionLevel {
    RedactionLevel::Standard
}
fn default_true() -> bool {
    true
}
fn default_refusal() -> String {
    DEFAULT_REFUSAL.into()
}
fn default_top_k() -> usize {
    3
}
fn default_context_budget() -> usize {
    400
}
fn default_retry_backoff_ms() -> u64 {
    200
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("policy: {0}")]
    PolicyFile(#[from] PolicyError),
    #[error("policy failed validation:{}", ViolationList(.0))]
    Policy(Vec<Violation>),
    #[error("ruleset: {0}")]
    Ruleset(#[from] DetectorError),
    #[error("knowledge base: {0}")]
    Kb(#[from] RagError),
    #[error("audit log {path}: {source}")]
    Audit {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("prompt template: {0}")]
    Template(String),
    #[error("{0}")]
    Invalid(String),
}

struct ViolationList<'a>(&'a [Violation]);

impl fmt::Display for ViolationList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in self.0 {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })
}

impl ServiceConfig {
    /// Parses `source`; errors carry line and column.
    pub fn parse(source: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: ServiceConfig = toml::from_str(source).map_err(|e| ConfigError::Syntax {
            path: base_dir.join("<config>"),
            message: e.to_string(),
        })?;
        for p in [
            &mut config.policy_path,
            &mut config.ruleset_path,
            &mut config.gazetteer_dir,
            &mut config.kb_dir,
            &mut config.kb_index,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if config.audit_path.is_relative() {
            config.audit_path = base_dir.join(&config.audit_path);
        }
        if config.top_k == 0 {
            return Err(ConfigError::Invalid("top_k must be at least 1".into()));
        }
        if !matches!(config.backend.kind.as_str(), "mock" | "http") {
            return Err(ConfigError::Invalid(format!(
                "backend.kind must be \"mock\" or \"http\", got {:?}",
                config.backend.kind
            )));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&source, base).map_err(|e| match e {
            ConfigError::Syntax { message, .. } => ConfigError::Syntax {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn settings(&self) -> GatewaySettings {
        GatewaySettings {
            default_level: self.default_level,
            default_rag: self.default_rag,
            refusal_text: self.refusal_text.clone(),
            busy: self.busy,
            top_k: self.top_k,
            context_budget: self.context_budget,
            template: PromptTemplate::default(),
            output_cap: self.backend.output_cap,
            temperature: self.backend.temperature,
            retries: self.backend.retries,
            retry_backoff: Duration::from_millis(self.retry_backoff_ms),
        }
    }
}

/// Loads every artifact named by `config` and assembles a gateway.
///
/// Returns the gateway plus non-fatal warnings (empty knowledge base with
/// retrieval on, documents rejected for containing PII).
pub fn build_gateway(config: &ServiceConfig) -> Result<(Gateway, Vec<String>), ConfigError> {
    let mut warnings = Vec::new();

    let policy = match &config.policy_path {
        Some(p) => CompliancePolicy::from_toml(&read(p)?).map_err(|e| match e {
            PolicyError::Invalid(v) => ConfigError::Policy(v),
            other => ConfigError::PolicyFile(other),
        })?,
        None => CompliancePolicy::default(),
    };

    let mut gazetteers: HashMap<_, _> = default_gazetteers();
    if let Some(dir) = &config.gazetteer_dir {
        gazetteers.extend(load_gazetteer_dir(dir)?);
    }
    let rules = match &config.ruleset_path {
        Some(p) => parse_ruleset(&read(p)?)?,
        None => default_rules(),
    };
    let detector = Detector::new(rules, &gazetteers)?;

    let kb = if let Some(index) = &config.kb_index {
        KnowledgeBase::load(index)?
    } else if let Some(dir) = &config.kb_dir {
        let mut kb = KnowledgeBase::new();
        for (path, doc) in read_kb_dir(dir)? {
            match kb.ingest(doc?, &detector)? {
                IngestOutcome::Accepted { .. } => {}
                IngestOutcome::Rejected(spans) => warnings.push(format!(
                    "{}: rejected, contains {} sensitive value(s)",
                    path.display(),
                    spans.len()
                )),
            }
        }
        kb
    } else {
        KnowledgeBase::new()
    };
    if kb.is_empty() && config.default_rag {
        warnings.push("knowledge base is empty; retrieval will return no context".into());
    }

    let sink = FileAuditSink::open(&config.audit_path).map_err(|source| ConfigError::Audit {
        path: config.audit_path.clone(),
        source,
    })?;

    let settings = config.settings();
    let backend: Arc<dyn Backend> = match config.backend.kind.as_str() {
        "http" => Arc::new(HttpBackend::new(&config.backend)?),
        _ => Arc::new(MockBackend::new(settings.template.query_header.clone())),
    };

    let gateway = Gateway::builder()
        .detector(detector)
        .policy(policy)
        .knowledge_base(kb)
        .backend(backend)
        .audit_sink(Arc::new(sink))
        .settings(settings)
        .build()?;
    Ok((gateway, warnings))
}
