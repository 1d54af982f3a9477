//! Runs a short conversation through the full pipeline with the mock
//! backend, then prints the prompts the backend saw and the audit trail.
//!
//!     cargo run --example mock_pipeline

use std::path::Path;
use std::sync::Arc;

use privgate::rag::read_kb_dir;
use privgate::{Detector, Gateway, KnowledgeBase, MockBackend, RedactionLevel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let detector = Detector::with_defaults();
    let mut kb = KnowledgeBase::new();
    for (_, doc) in read_kb_dir(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/kb"))? {
        kb.ingest(doc?, &detector)?;
    }

    let backend = Arc::new(MockBackend::default());
    let gateway = Gateway::builder().knowledge_base(kb).backend(backend.clone()).build()?;
    let session = gateway.create_session(Some(RedactionLevel::Standard), Some(true));

    let turns = [
        "my email is a@b.co, where is my refund?",
        "I'm Elena Kowalski and my card 4539 1488 0343 6467 was charged twice.",
        "Please send the tracking link to a@b.co, when will my order ship?",
    ];
    for text in turns {
        let out = gateway.handle_turn(&session, text)?;
        println!(
            "user:  {text}\nagent: {} ({:?}, turn {})\n",
            out.text, out.disposition, out.turn
        );
    }

    println!("--- prompts seen by the backend ---");
    for (i, prompt) in backend.prompts().iter().enumerate() {
        let query = prompt.rsplit("\n\n").next().unwrap_or_default();
        println!("{}: {query}", i + 1);
    }

    println!("\n--- audit ---");
    for line in gateway.audit_sink().read_lines()? {
        println!("{line}");
    }

    gateway.delete_session(&session)?;
    println!(
        "\nsession deleted; next turn -> {}",
        gateway.handle_turn(&session, "hello").unwrap_err()
    );
    Ok(())
}
