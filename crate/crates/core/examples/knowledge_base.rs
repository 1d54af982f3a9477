//! Builds a BM25 index from the bundled support articles, rejects a document
//! that carries PII, and round-trips the index through a file.
//!
//!     cargo run --example knowledge_base -- "where is my refund"

use std::path::Path;

use privgate::rag::{assemble_context, read_kb_dir, IngestOutcome};
use privgate::{Detector, Document, KnowledgeBase};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let query = std::env::args().nth(1).unwrap_or_else(|| "where is my refund".into());
    let detector = Detector::with_defaults();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/kb");

    let mut kb = KnowledgeBase::new();
    for (path, doc) in read_kb_dir(&dir)? {
        let outcome = kb.ingest(doc?, &detector)?;
        println!("{:?} <- {}", outcome, path.file_name().unwrap().to_string_lossy());
    }

    let leaky = Document::new(
        "escalations",
        "Escalations",
        "Escalate to Helga Petrov at helga@corp.example.",
    );
    if let IngestOutcome::Rejected(spans) = kb.ingest(leaky, &detector)? {
        let kinds: Vec<_> = spans.iter().map(|s| s.kind.to_string()).collect();
        println!("escalations rejected: {}", kinds.join(", "));
    }

    println!("\nquery: {query}");
    let results = kb.retrieve(&query, 3);
    for r in &results {
        println!("  {} {:.4}", r.chunk.reference(), r.score);
    }
    println!("\ncontext:\n{}", assemble_context(&results, 400));

    let file = std::env::temp_dir().join(format!("privgate-kb-{}.json", std::process::id()));
    kb.save(&file)?;
    let reloaded = KnowledgeBase::load(&file)?;
    assert_eq!(reloaded.retrieve(&query, 3), results);
    println!("\nindex saved and reloaded from {}", file.display());
    std::fs::remove_file(file)?;
    Ok(())
}
