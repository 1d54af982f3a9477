use std::cmp::Ordering;

use super::{DetectorError, EntitySpan};

/// Priority used to settle overlaps: longer spans first, then higher
/// confidence, smaller start offset, smaller kind label, smaller detector id.
pub fn priority_order(a: &EntitySpan, b: &EntitySpan) -> Ordering {
    b.len()
        .cmp(&a.len())
        .then_with(|| b.confidence.total_cmp(&a.confidence))
        .then_with(|| a.start.cmp(&b.start))
        .then_with(|| a.kind.label().cmp(b.kind.label()))
        .then_with(|| a.detector_id.cmp(&b.detector_id))
}

/// Greedy selection of a pairwise non-overlapping subset.
///
/// Spans are visited in [`priority_order`]; a span is kept iff it overlaps no
/// span kept before it. The result is sorted by start offset.
pub fn resolve_overlaps(text: &str, mut spans: Vec<EntitySpan>) -> Result<Vec<EntitySpan>, DetectorError> {
    if let Some(bad) = spans.iter().find(|s| !s.is_valid_for(text)) {
        return Err(DetectorError::SpanOutOfBounds {
            start: bad.start,
            end: bad.end,
        });
    }
    spans.sort_by(priority_order);
    let mut kept: Vec<EntitySpan> = Vec::with_capacity(spans.len());
    for span in spans {
        if kept.iter().all(|k| !k.overlaps(&span)) {
            kept.push(span);
        }
    }
    kept.sort_by_key(|s| s.start);
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::EntityKind;

    fn span(start: usize, end: usize, confidence: f64, id: &str) -> EntitySpan {
        let text = "abcdefghijklmnopqrstuvwxyz";
        EntitySpan {
            start,
            end,
            kind: EntityKind::Email,
            surface: text[start..end].into(),
            confidence,
            detector_id: id.into(),
        }
    }

    const TEXT: &str = "abcdefghijklmnopqrstuvwxyz";

    #[test]
    fn identical_spans_dedup() {
        let out = resolve_overlaps(TEXT, vec![span(2, 5, 0.5, "b"), span(2, 5, 0.5, "a")]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].detector_id, "a");
    }

    #[test]
    fn length_beats_confidence() {
        let out = resolve_overlaps(TEXT, vec![span(3, 8, 1.0, "x"), span(0, 10, 0.9, "y")]).unwrap();
        assert_eq!((out[0].start, out[0].end), (0, 10));
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn adjacent_spans_both_kept_and_sorted() {
        let out = resolve_overlaps(TEXT, vec![span(5, 9, 0.5, "a"), span(0, 5, 0.5, "b")]).unwrap();
        assert_eq!(out.iter().map(|s| s.start).collect::<Vec<_>>(), [0, 5]);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let mut s = span(0, 3, 0.5, "a");
        s.end = 40;
        assert!(matches!(
            resolve_overlaps(TEXT, vec![s]),
            Err(DetectorError::SpanOutOfBounds { .. })
        ));
        let mut t = span(0, 3, 0.5, "a");
        t.surface = "zzz".into();
        assert!(resolve_overlaps(TEXT, vec![t]).is_err());
    }

    #[test]
    fn rejects_non_char_boundary() {
        let text = "héllo";
        let s = EntitySpan {
            start: 0,
            end: 2,
            kind: EntityKind::Email,
            surface: String::new(),
            confidence: 0.5,
            detector_id: "a".into(),
        };
        assert!(resolve_overlaps(text, vec![s]).is_err());
    }
}
