//! Privacy-preserving gateway between customer-support clients and an LLM.
//!
//! A turn runs detect → anonymize → retrieve → prompt → outbound guard →
//! complete → privacy filter → rehydrate → audit. Sensitive values are
//! replaced by `[[KIND_n]]` placeholders before anything leaves the process,
//! and only allowlisted kinds are restored in the reply.
//!
//! ```
//! use privgate::{anonymize, CompliancePolicy, Detector, RedactionLevel, SessionVault};
//!
//! let detector = Detector::with_defaults();
//! let text = "reach me at a@b.co";
//! let spans = detector.detect(text);
//! let mut vault = SessionVault::new("demo");
//! let (out, _) = anonymize(text, &spans, &mut vault, &CompliancePolicy::default(), RedactionLevel::Standard).unwrap();
//! assert_eq!(out, "reach me at [[EMAIL_1]]");
//! ```

pub mod anonymizer;
pub mod cli;
pub mod detector;
pub mod gateway;
pub mod llm;
pub mod placeholder;
pub mod policy;
pub mod postprocess;
pub mod rag;
pub mod synth;

pub use anonymizer::{anonymize, rehydrate, SessionVault};
pub use detector::{detect, detect_all, resolve_overlaps, validate_luhn, Detector, EntityKind, EntitySpan};
pub use gateway::{Gateway, GatewayError, GatewaySettings, PipelineOutcome};
pub use llm::{Backend, HttpBackend, MockBackend};
pub use placeholder::Placeholder;
pub use policy::{CompliancePolicy, PolicyAction, RedactionLevel};
pub use postprocess::{AuditRecord, Disposition};
pub use rag::{Document, KnowledgeBase};
