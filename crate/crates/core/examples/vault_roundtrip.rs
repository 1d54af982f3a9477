//! Pseudonymizes a conversation, restores it, and shows that placeholders do
//! not resolve across sessions.
//!
//!     cargo run --example vault_roundtrip

use privgate::{anonymize, rehydrate, CompliancePolicy, Detector, RedactionLevel, SessionVault};

fn main() {
    let detector = Detector::with_defaults();
    let policy = CompliancePolicy::default();
    let mut vault = SessionVault::new("session-a");

    let turns = [
        "My name is Oskar Lindqvist and my email is oskar@mailbox.test.",
        "Did you get my note at OSKAR@MAILBOX.TEST? Ship to 12 Harbor Lane.",
    ];
    let mut anonymized = Vec::new();
    for (i, text) in turns.iter().enumerate() {
        vault.begin_turn(i as u32 + 1);
        let spans = detector.detect(text);
        let (out, _) = anonymize(text, &spans, &mut vault, &policy, RedactionLevel::Standard).unwrap();
        println!("turn {}: {out}", i + 1);
        anonymized.push(out);
    }

    println!("\nvault holds {} values", vault.len());
    for entry in vault.entries() {
        println!("  {} first seen in turn {}", entry.placeholder, entry.first_seen_turn);
    }

    let (restored, unresolved) = rehydrate(&anonymized[1], &vault, &policy);
    println!("\nrestored: {restored}");
    assert!(unresolved.is_empty());

    let other = SessionVault::new("session-b");
    let (foreign, unresolved) = rehydrate(&anonymized[1], &other, &policy);
    println!("other session: {foreign}");
    println!("unresolved there: {}", unresolved.len());

    vault.purge();
    println!("\nafter purge the vault holds {} values", vault.len());
}
