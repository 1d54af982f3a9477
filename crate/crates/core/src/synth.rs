//! Seeded generator of customer-support queries carrying known PII.
//!
//! Every generated query records the exact values it embeds, so a test can
//! check both detection counts and leaks against ground truth. Values are
//! shaped to be detected by exactly one default rule each.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::EntityKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seed {
    pub kind: EntityKind,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticQuery {
    pub text: String,
    pub seeds: Vec<Seed>,
}

impl SyntheticQuery {
    pub fn count(&self, kind: &EntityKind) -> usize {
        self.seeds.iter().filter(|s| &s.kind == kind).count()
    }
}

const FIRST_NAMES: &[&str] = &[
    "Alice", "Bruno", "Carmen", "Dmitri", "Elena", "Farid", "Giulia", "Hiroshi", "Ingrid", "Javier", "Katarina",
    "Nadia", "Oskar", "Priya", "Rafael", "Sofia", "Viktor", "Yusuf",
];
const SURNAMES: &[&str] = &[
    "Moreau",
    "Okafor",
    "Lindqvist",
    "Nakamura",
    "Fernandes",
    "Kowalski",
    "Haddad",
    "Petrov",
    "Schneider",
    "Takahashi",
    "Castellanos",
    "Johansson",
    "Novak",
    "Delacroix",
    "Müller",
];
const STREETS: &[&str] = &[
    "Maple",
    "Oak",
    "Cedar",
    "Lakeview",
    "Highland",
    "Birch",
    "Harbor",
    "Sunset",
    "Meadow",
    "Old Mill",
    "Green Valley",
];
const SUFFIXES: &[&str] = &["Street", "Avenue", "Road", "Lane", "Drive", "Court", "Boulevard"];
const MONTHS: &[&str] = &[
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];
const DOMAINS: &[&str] = &["example.org", "mailbox.test", "corp.example.net"];
const MAILBOX_WORDS: &[&str] = &["cust", "user", "member", "client"];

const QUESTIONS: &[&str] = &[
    "Where is my refund?",
    "How do I reset my password?",
    "When will my order ship?",
    "How can I update my billing details?",
    "Can I cancel my subscription?",
    "Why was I charged twice?",
];

fn fragments(kind: &EntityKind) -> &'static [&'static str] {
    match kind {
        EntityKind::Email => &["my email is {}", "you can reach me at {}", "please write to {}"],
        EntityKind::Phone => &["call me on {}", "my phone number is {}", "text {} if needed"],
        EntityKind::CreditCard => &["I paid with card {}", "please charge {} instead"],
        EntityKind::NationalId => &["my SSN is {}", "my social security number is {}"],
        EntityKind::AccountNumber => &[
            "my account number is {}",
            "account {} was charged",
            "acct #{} is locked",
        ],
        EntityKind::Date => &["the order was placed on {}", "I was born on {}", "it started {}"],
        EntityKind::PersonName => &["my name is {}", "this is {} writing", "please ask {} to help"],
        EntityKind::Address => &["ship it to {}", "I moved to {}", "my billing address is {}"],
        EntityKind::Custom(_) => &["{}"],
    }
}

pub struct CorpusGenerator {
    rng: ChaCha8Rng,
    produced: usize,
}

impl CorpusGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            produced: 0,
        }
    }

    fn digits(&mut self, n: usize) -> String {
        (0..n).map(|_| char::from(b'0' + self.rng.gen_range(0..10))).collect()
    }

    fn pick<'a>(&mut self, items: &'a [&'a str]) -> &'a str {
        items.choose(&mut self.rng).unwrap()
    }

    /// A fresh value of `kind` in one of its supported surface formats.
    pub fn value(&mut self, kind: &EntityKind) -> String {
        match kind {
            EntityKind::Email => {
                let word = self.pick(MAILBOX_WORDS);
                let n = self.rng.gen_range(100..100_000);
                let domain = self.pick(DOMAINS);
                format!("{word}{n}@{domain}")
            }
            EntityKind::Phone => {
                let area = self.rng.gen_range(200..990);
                let exchange = self.rng.gen_range(200..990);
                let line = self.digits(4);
                match self.rng.gen_range(0..4) {
                    0 => format!("({area}) {exchange}-{line}"),
                    1 => format!("{area}-{exchange}-{line}"),
                    2 => format!("+1 {area} {exchange} {line}"),
                    _ => format!("{exchange}-{line}"),
                }
            }
            EntityKind::CreditCard => {
                let mut number = format!("4{}", self.digits(14));
                number.push(luhn_check_digit(&number));
                match self.rng.gen_range(0..3) {
                    0 => number,
                    sep => {
                        let sep = if sep == 1 { " " } else { "-" };
                        number
                            .as_bytes()
                            .chunks(4)
                            .map(|c| std::str::from_utf8(c).unwrap())
                            .collect::<Vec<_>>()
                            .join(sep)
                    }
                }
            }
            EntityKind::NationalId => {
                let mut area = self.rng.gen_range(100..900);
                if area == 666 {
                    area = 667;
                }
                let group = self.rng.gen_range(1..100);
                let serial = self.rng.gen_range(1..10_000);
                format!("{area}-{group:02}-{serial:04}")
            }
            EntityKind::AccountNumber => {
                let len = self.rng.gen_range(8..=11);
                let mut d = self.digits(len);
                d.replace_range(0..1, &self.rng.gen_range(1..10).to_string());
                d
            }
            EntityKind::Date => {
                let year = self.rng.gen_range(1950..2026);
                let month = self.rng.gen_range(1..=12);
                let day = self.rng.gen_range(1..=28);
                let name = MONTHS[month - 1];
                match self.rng.gen_range(0..4) {
                    0 => format!("{year}-{month:02}-{day:02}"),
                    1 => format!("{month:02}/{day:02}/{year}"),
                    2 => format!("{name} {day}, {year}"),
                    _ => format!("{day} {name} {year}"),
                }
            }
            EntityKind::PersonName => {
                let first = self.pick(FIRST_NAMES);
                let last = self.pick(SURNAMES);
                format!("{first} {last}")
            }
            EntityKind::Address => {
                let number = self.rng.gen_range(1..10_000);
                let street = self.pick(STREETS);
                let suffix = self.pick(SUFFIXES);
                format!("{number} {street} {suffix}")
            }
            EntityKind::Custom(label) => format!("{label}-{}", self.digits(6)),
        }
    }

    /// Next query. Query `i` always carries kind `i mod 8`, plus up to three
    /// more random kinds, so any 8 consecutive queries cover every kind.
    pub fn next_query(&mut self) -> SyntheticQuery {
        let anchor = EntityKind::BUILTIN[self.produced % EntityKind::BUILTIN.len()].clone();
        self.produced += 1;
        let mut kinds = vec![anchor];
        for _ in 0..self.rng.gen_range(0..=3) {
            kinds.push(EntityKind::BUILTIN.choose(&mut self.rng).unwrap().clone());
        }
        kinds.shuffle(&mut self.rng);

        let mut seeds = Vec::with_capacity(kinds.len());
        let mut parts = Vec::with_capacity(kinds.len());
        for kind in kinds {
            let value = self.value(&kind);
            let template = self.pick(fragments(&kind));
            parts.push(template.replace("{}", &value));
            seeds.push(Seed { kind, value });
        }
        let question = self.pick(QUESTIONS);
        let text = format!("Hi, {}. {}", parts.join("; "), question);
        SyntheticQuery { text, seeds }
    }

    pub fn generate(&mut self, n: usize) -> Vec<SyntheticQuery> {
        (0..n).map(|_| self.next_query()).collect()
    }
}

/// `n` queries from a fixed seed.
pub fn corpus(seed: u64, n: usize) -> Vec<SyntheticQuery> {
    CorpusGenerator::new(seed).generate(n)
}

fn luhn_check_digit(payload: &str) -> char {
    // double every second digit counting from the right of the final number
    let sum: u32 = payload
        .bytes()
        .rev()
        .enumerate()
        .map(|(i, b)| {
            let d = (b - b'0') as u32;
            if i % 2 == 0 {
                let x = d * 2;
                if x > 9 {
                    x - 9
                } else {
                    x
                }
            } else {
                d
            }
        })
        .sum();
    char::from(b'0' + ((10 - sum % 10) % 10) as u8)
}
