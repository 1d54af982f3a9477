//! Reference implementations and fixtures shared by the integration tests.
//! Nothing here calls into the code it checks.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use privgate::{Document, EntityKind, EntitySpan};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Luhn by literal digit sums: weights 1,2,1,2,... from the rightmost digit,
/// and a doubled digit contributes the sum of its decimal digits.
pub fn luhn_oracle(digits: &str) -> bool {
    let digits: Vec<u32> = digits.chars().map(|c| c.to_digit(10).unwrap()).collect();
    let len = digits.len();
    let mut total = 0;
    for (i, d) in digits.iter().enumerate() {
        let position_from_right = len - i; // 1-based
        let value = if position_from_right.is_multiple_of(2) {
            d * 2
        } else {
            *d
        };
        total += value.to_string().chars().map(|c| c.to_digit(10).unwrap()).sum::<u32>();
    }
    total % 10 == 0
}

fn spans_overlap(a: &EntitySpan, b: &EntitySpan) -> bool {
    a.start < b.end && b.start < a.end
}

fn priority_key(s: &EntitySpan) -> (std::cmp::Reverse<usize>, std::cmp::Reverse<u64>, usize, String, String) {
    // confidences are in [0, 1], so the bit pattern orders like the value
    (
        std::cmp::Reverse(s.end - s.start),
        std::cmp::Reverse(s.confidence.to_bits()),
        s.start,
        s.kind.label().to_string(),
        s.detector_id.clone(),
    )
}

/// Exhaustive overlap resolution: among all pairwise non-overlapping subsets,
/// the one whose membership vector (spans listed by priority) is
/// lexicographically greatest. This is what the greedy rule selects.
pub fn overlap_oracle(spans: &[EntitySpan]) -> Vec<EntitySpan> {
    assert!(spans.len() <= 16);
    let mut ordered: Vec<&EntitySpan> = spans.iter().collect();
    ordered.sort_by_key(|s| priority_key(s));
    let n = ordered.len();
    let mut best: Option<Vec<bool>> = None;
    for mask in 0u32..(1 << n) {
        let members: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        let chosen: Vec<&EntitySpan> = (0..n).filter(|&i| members[i]).map(|i| ordered[i]).collect();
        let independent = chosen
            .iter()
            .enumerate()
            .all(|(i, a)| chosen[i + 1..].iter().all(|b| !spans_overlap(a, b)));
        if !independent {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => members.iter().cmp(b.iter()) == Ordering::Greater,
        };
        if better {
            best = Some(members);
        }
    }
    let best = best.unwrap_or_default();
    let mut out: Vec<EntitySpan> = (0..n).filter(|&i| best[i]).map(|i| ordered[i].clone()).collect();
    out.sort_by_key(|s| s.start);
    out
}

pub const OVERLAP_TEXT: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

/// Random span set over [`OVERLAP_TEXT`] with few distinct confidences, kinds
/// and ids, so every tie-break gets exercised.
pub fn random_spans(rng: &mut impl Rng, max: usize) -> Vec<EntitySpan> {
    let kinds = [
        EntityKind::Email,
        EntityKind::Phone,
        EntityKind::Date,
        EntityKind::Address,
    ];
    let ids = ["a", "b", "c"];
    let confidences = [0.5, 0.75, 1.0];
    let n = rng.gen_range(0..=max);
    (0..n)
        .map(|_| {
            let start = rng.gen_range(0..20);
            let end = rng.gen_range(start + 1..=(start + 8).min(OVERLAP_TEXT.len()));
            EntitySpan {
                start,
                end,
                kind: kinds.choose(rng).unwrap().clone(),
                surface: OVERLAP_TEXT[start..end].to_string(),
                confidence: *confidences.choose(rng).unwrap(),
                detector_id: ids.choose(rng).unwrap().to_string(),
            }
        })
        .collect()
}

fn oracle_terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Ranks every chunk of every document by textbook BM25, recomputing
/// chunking, term counts and document frequencies from scratch.
pub fn bm25_oracle(docs: &[Document], query: &str, k: usize) -> Vec<(String, f64)> {
    let (k1, b) = (1.2_f64, 0.75_f64);
    let mut chunks: Vec<(String, String, usize, Vec<String>)> = Vec::new();
    for doc in docs {
        let terms = oracle_terms(&doc.body);
        let mut i = 0;
        let mut start = 0;
        while start < terms.len() {
            let end = (start + 200).min(terms.len());
            chunks.push((
                doc.doc_id.clone(),
                format!("{}#{i}", doc.doc_id),
                i,
                terms[start..end].to_vec(),
            ));
            i += 1;
            if end == terms.len() {
                break;
            }
            start += 160;
        }
    }
    let n = chunks.len() as f64;
    let avg = chunks.iter().map(|c| c.3.len()).sum::<usize>() as f64 / n;
    let mut query_terms: Vec<String> = Vec::new();
    for t in oracle_terms(query) {
        if !query_terms.contains(&t) {
            query_terms.push(t);
        }
    }
    let mut scored = Vec::new();
    for (doc_id, reference, index, terms) in &chunks {
        let len = terms.len() as f64;
        let mut score = 0.0;
        for q in &query_terms {
            let tf = terms.iter().filter(|t| *t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = chunks.iter().filter(|c| c.3.contains(q)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
        }
        if score > 0.0 {
            scored.push((doc_id.clone(), *index, reference.clone(), score));
        }
    }
    scored.sort_by(|a, b| b.3.total_cmp(&a.3).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, _, r, s)| (r, s)).collect()
}

const VOCAB: &[&str] = &[
    "refund",
    "order",
    "shipping",
    "delivery",
    "password",
    "reset",
    "invoice",
    "billing",
    "subscription",
    "cancel",
    "charge",
    "payment",
    "warranty",
    "return",
    "exchange",
    "tracking",
    "package",
    "courier",
    "login",
    "security",
    "upgrade",
    "plan",
    "discount",
    "coupon",
    "store",
    "credit",
    "balance",
    "support",
    "agent",
    "ticket",
    "the",
    "a",
    "is",
    "to",
    "of",
    "and",
    "your",
    "we",
    "within",
    "days",
    "business",
    "request",
    "link",
    "page",
    "profile",
    "device",
];

/// Twenty support articles: mixed lengths (several span multiple chunks),
/// two exact duplicates to force score ties, ids inserted out of order.
pub fn fixture_corpus() -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut docs = Vec::new();
    for i in 0..18 {
        let len = match i % 6 {
            0 => 450,
            1 => 210,
            2 => 40,
            _ => rng.gen_range(60..160),
        };
        let body: Vec<&str> = (0..len).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect();
        docs.push(Document::new(
            format!("doc-{:02}", i + 1),
            format!("article {}", i + 1),
            body.join(" "),
        ));
    }
    let twin = "warranty claims need the original invoice and the package tracking link";
    docs.push(Document::new("twin-b", "warranty b", twin));
    docs.push(Document::new("twin-a", "warranty a", twin));
    docs.shuffle(&mut rng);
    docs
}

pub const FIXTURE_QUERIES: [&str; 25] = [
    "refund",
    "where is my refund",
    "reset password link",
    "cancel subscription",
    "shipping delivery days",
    "warranty invoice",
    "warranty claims",
    "package tracking",
    "billing payment charge",
    "coupon discount store",
    "upgrade plan",
    "login security device",
    "credit balance",
    "support agent ticket",
    "return exchange",
    "courier",
    "refund refund refund",
    "the",
    "business days",
    "profile page",
    "zebra",
    "order order shipping",
    "Invoice, BILLING & payment!",
    "request a link to your profile",
    "",
];

/// Scans `haystacks` for any value, with the same normalization used for
/// vault matching: case-folded for emails and names, separators stripped for
/// digit-bearing kinds.
pub fn leaked<'a>(values: impl IntoIterator<Item = (&'a EntityKind, &'a str)>, haystack: &str) -> Vec<String> {
    let folded = haystack.to_lowercase();
    let stripped: String = haystack.chars().filter(|c| *c != ' ' && *c != '-').collect();
    let mut hits = Vec::new();
    for (kind, value) in values {
        let hit = match kind {
            EntityKind::Email | EntityKind::PersonName => folded.contains(&value.to_lowercase()),
            EntityKind::Phone | EntityKind::CreditCard | EntityKind::NationalId | EntityKind::AccountNumber => {
                let v: String = value.chars().filter(|c| *c != ' ' && *c != '-').collect();
                stripped.contains(&v)
            }
            _ => haystack.contains(value),
        };
        if hit {
            hits.push(format!("{kind}"));
        }
    }
    hits
}

pub fn count_by_kind(kinds: impl IntoIterator<Item = EntityKind>) -> BTreeMap<EntityKind, usize> {
    let mut m = BTreeMap::new();
    for k in kinds {
        *m.entry(k).or_default() += 1;
    }
    m
}

/// Every file under `dir`, recursively, as lossy text.
pub fn read_tree(dir: &std::path::Path) -> HashMap<std::path::PathBuf, String> {
    let mut out = HashMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.clone(),
                    String::from_utf8_lossy(&std::fs::read(&p).unwrap()).into_owned(),
                );
            }
        }
    }
    out
}
