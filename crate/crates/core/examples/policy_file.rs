//! Loads a compliance policy from TOML and shows how invalid tables are
//! rejected.
//!
//!     cargo run --example policy_file

use privgate::{CompliancePolicy, EntityKind, RedactionLevel};

const POLICY: &str = r#"
leak_threshold = 0.5
rehydration_allowlist = ["EMAIL", "PERSON_NAME"]

[kinds.EMAIL]
minimal = "pseudonymize"
standard = "pseudonymize"
strict = "redact"

[kinds.PERSON_NAME]
minimal = "allow"
standard = "pseudonymize"
strict = "redact"

[kinds.CREDIT_CARD]
minimal = "mask:4"
standard = "mask"
strict = "redact"
"#;

const BROKEN: &str = r#"
leak_threshold = 0.5
rehydration_allowlist = ["CREDIT_CARD"]

[kinds.CREDIT_CARD]
minimal = "redact"
standard = "mask:12"
strict = "allow"
"#;

fn main() {
    let policy = CompliancePolicy::from_toml(POLICY).expect("valid policy");
    for kind in [
        EntityKind::Email,
        EntityKind::PersonName,
        EntityKind::CreditCard,
        EntityKind::Phone,
    ] {
        let actions: Vec<String> = RedactionLevel::ALL
            .iter()
            .map(|&l| policy.action_for(&kind, l).to_string())
            .collect();
        println!("{:>12}: {}", kind, actions.join(" / "));
    }
    println!("(kinds missing from the table fall back to redact)\n");

    match CompliancePolicy::from_toml(BROKEN) {
        Ok(_) => unreachable!(),
        Err(e) => println!("{e}"),
    }
}
