//! Replays a synthetic corpus with seeded PII through the gateway at every
//! redaction level and checks that no seeded value reached the backend or
//! the audit log.
//!
//!     cargo run --release --example synthetic_audit -- 500

use std::sync::Arc;
use std::time::Instant;

use privgate::postprocess::MemoryAuditSink;
use privgate::synth::corpus;
use privgate::{Gateway, MockBackend, RedactionLevel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(500);
    let queries = corpus(2024, n);

    for level in RedactionLevel::ALL {
        let backend = Arc::new(MockBackend::default());
        let sink = Arc::new(MemoryAuditSink::new());
        let gateway = Gateway::builder()
            .backend(backend.clone())
            .audit_sink(sink.clone())
            .build()?;
        let started = Instant::now();
        let mut leaks = 0;
        for q in &queries {
            let session = gateway.create_session(Some(level), Some(false));
            gateway.handle_turn(&session, &q.text)?;
            let prompt = backend.prompts().pop().unwrap_or_default();
            backend.clear();
            leaks += q
                .seeds
                .iter()
                .filter(|s| gateway.policy().action_for(&s.kind, level) != privgate::PolicyAction::Allow)
                .filter(|s| prompt.contains(&s.value))
                .count();
        }
        let log = privgate::postprocess::AuditSink::read_lines(sink.as_ref())?.join("\n");
        let audit_hits = queries
            .iter()
            .flat_map(|q| &q.seeds)
            .filter(|s| log.contains(&s.value))
            .count();
        println!(
            "{level:>8}: {n} turns in {:.2?}, prompt leaks {leaks}, audit hits {audit_hits}",
            started.elapsed()
        );
    }
    Ok(())
}
