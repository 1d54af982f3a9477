//! Detects PII in a support message and shows what each redaction level
//! sends onward.
//!
//!     cargo run --example detect_and_redact

use privgate::{anonymize, CompliancePolicy, Detector, RedactionLevel, SessionVault};

fn main() {
    let detector = Detector::with_defaults();
    let policy = CompliancePolicy::default();
    let text = "Hi, this is Priya Nakamura. My card 4111 1111 1111 1111 was charged twice on \
                March 3, 2024; call me on (415) 555-0199 or write to priya.n@example.org.";

    println!("input: {text}\n");
    for span in detector.detect(text) {
        println!(
            "{:>14} {:>3}..{:<3} conf {:.2} via {}",
            span.kind, span.start, span.end, span.confidence, span.detector_id
        );
    }

    for level in RedactionLevel::ALL {
        let mut vault = SessionVault::new("example");
        let spans = detector.detect(text);
        let (out, _) = anonymize(text, &spans, &mut vault, &policy, level).unwrap();
        println!("\n[{level}] {out}");
    }
}
