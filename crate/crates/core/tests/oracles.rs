mod common;

use common::*;
use privgate::rag::{bm25_score, tokenize_terms, Bm25Params, InvertedIndex};
use privgate::{resolve_overlaps, validate_luhn, Detector, Document, EntityKind, EntitySpan, KnowledgeBase};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn luhn_hand_values() {
    assert!(validate_luhn("4111111111111111").unwrap());
    assert!(validate_luhn("0000000000000000").unwrap());
    assert!(!validate_luhn("4111111111111112").unwrap());
    assert!(luhn_oracle("4111111111111111"));
    assert!(!luhn_oracle("4111111111111112"));
    assert!(validate_luhn("4111-1111 1111-1111").unwrap());
    assert!(validate_luhn("4111x11111111111").is_err());
}

#[test]
fn luhn_matches_oracle_on_every_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for len in 12..=19 {
        for _ in 0..500 {
            let s: String = (0..len)
                .map(|_| char::from(b'0' + rand::Rng::gen_range(&mut rng, 0..10)))
                .collect();
            assert_eq!(validate_luhn(&s).unwrap(), luhn_oracle(&s), "{s}");
        }
    }
}

#[test]
fn overlap_hand_cases() {
    let span = |s: usize, e: usize, c: f64, id: &str| EntitySpan {
        start: s,
        end: e,
        kind: EntityKind::Email,
        surface: OVERLAP_TEXT[s..e].into(),
        confidence: c,
        detector_id: id.into(),
    };
    let out = resolve_overlaps(OVERLAP_TEXT, vec![span(0, 10, 0.9, "x"), span(3, 8, 1.0, "y")]).unwrap();
    assert_eq!(out, vec![span(0, 10, 0.9, "x")]);
    let out = resolve_overlaps(OVERLAP_TEXT, vec![span(2, 5, 0.5, "b"), span(2, 5, 0.5, "a")]).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out, overlap_oracle(&[span(2, 5, 0.5, "b"), span(2, 5, 0.5, "a")]));
    assert!(resolve_overlaps("short", vec![span(0, 10, 0.5, "a")]).is_err());
}

#[test]
fn overlap_matches_oracle_on_small_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2_000 {
        let spans = random_spans(&mut rng, 8);
        let got = resolve_overlaps(OVERLAP_TEXT, spans.clone()).unwrap();
        assert_eq!(got, overlap_oracle(&spans), "{spans:?}");
    }
}

fn fixture_kb() -> KnowledgeBase {
    let detector = Detector::with_defaults();
    let mut kb = KnowledgeBase::new();
    for doc in fixture_corpus() {
        let outcome = kb.ingest(doc, &detector).unwrap();
        assert!(matches!(outcome, privgate::rag::IngestOutcome::Accepted { .. }));
    }
    kb
}

#[test]
fn retrieval_matches_brute_force() {
    let kb = fixture_kb();
    let docs = fixture_corpus();
    for q in FIXTURE_QUERIES {
        for k in [1, 3, 5, 50] {
            let got: Vec<(String, f64)> = kb
                .retrieve(q, k)
                .into_iter()
                .map(|r| (r.chunk.reference(), r.score))
                .collect();
            let want = bm25_oracle(&docs, q, k);
            assert_eq!(got.len(), want.len(), "{q:?} k={k}");
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.0, w.0, "{q:?} k={k}");
                assert!((g.1 - w.1).abs() < 1e-9, "{q:?}: {} vs {}", g.1, w.1);
            }
        }
    }
}

#[test]
fn duplicate_bodies_tie_by_doc_id() {
    let kb = fixture_kb();
    let refs: Vec<String> = kb
        .retrieve("warranty claims", 2)
        .into_iter()
        .map(|r| r.chunk.reference())
        .collect();
    assert_eq!(refs, ["twin-a#0", "twin-b#0"]);
}

#[test]
fn chunk_window_arithmetic() {
    let body: Vec<String> = (0..450).map(|i| format!("w{i}")).collect();
    let doc = Document::new("long", "t", body.join(" "));
    let chunks = privgate::rag::chunk_document(&doc);
    assert_eq!(chunks.len(), 3);
    assert!(chunks[0].text.starts_with("w0 "));
    assert!(chunks[1].text.starts_with("w160 "));
    assert!(chunks[2].text.starts_with("w320 "));
    assert_eq!(chunks.iter().map(|c| c.term_count).collect::<Vec<_>>(), [200, 200, 130]);
}

#[test]
fn single_chunk_score_by_hand() {
    // one chunk "refund": N=1, df=1, tf=1, len=avg=1
    let mut kb = KnowledgeBase::new();
    kb.ingest(Document::new("d", "t", "refund"), &Detector::with_defaults())
        .unwrap();
    let idf = (1.0_f64 + 0.5 / 1.5).ln();
    let expected = idf * 2.2 / (1.0 + 1.2);
    let got = bm25_score(&tokenize_terms("refund"), 0, kb.index(), Bm25Params::default());
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn index_consistency() {
    let kb = fixture_kb();
    let index = kb.index();
    for (i, chunk) in kb.chunks().iter().enumerate() {
        let sum: u32 = index
            .postings
            .values()
            .flat_map(|p| p.iter())
            .filter(|p| p.chunk == i)
            .map(|p| p.tf)
            .sum();
        assert_eq!(sum as usize, chunk.term_count);
        assert_eq!(index.chunk_lengths[i], chunk.term_count);
    }
    assert_eq!(*index, InvertedIndex::build(kb.chunks()));
    let mean = index.chunk_lengths.iter().sum::<usize>() as f64 / index.n_chunks as f64;
    assert!((index.avg_chunk_length - mean).abs() < 1e-12);
}
