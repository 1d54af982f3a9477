//! PII-screened knowledge base with BM25 retrieval.
//!
//! Documents are scanned on ingestion and rejected if the detector finds
//! anything, so the store only ever holds non-sensitive text. Bodies are cut
//! into overlapping term windows and indexed in an inverted index.
//!
//! ```text
//! score(q, c) = sum over unique t in q of
//!     idf(t) * tf(t,c) * (k1 + 1) / (tf(t,c) + k1 * (1 - b + b * len(c) / avglen))
//! idf(t) = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{Detector, EntitySpan};

pub const CHUNK_WINDOW: usize = 200;
pub const CHUNK_OVERLAP: usize = 40;

#[derive(Debug, Error)]
pub enum RagError {
    #[error("document {0:?} already exists")]
    DuplicateDocument(String),
    #[error("invalid document id {0:?}")]
    InvalidDocId(String),
    #[error("malformed document header: {0}")]
    MalformedHeader(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index file: {0}")]
    IndexFormat(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub tags: Vec<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            body: body.into(),
            tags: Vec::new(),
        }
    }

    /// Parses the knowledge-base source format:
    ///
    /// ```text
    /// id: refunds
    /// title: Refund policy
    /// tags: billing,returns
    ///
    /// Body text...
    /// ```
    ///
    /// The `tags` line is optional. The blank line is required.
    pub fn parse(source: &str) -> Result<Self, RagError> {
        let mut lines = source.split_inclusive('\n');
        let mut consumed = 0;
        let mut next = |what: &str| -> Result<String, RagError> {
            let line = lines
                .next()
                .ok_or_else(|| RagError::MalformedHeader(format!("missing {what} line")))?;
            consumed += line.len();
            Ok(line.trim_end_matches(['\n', '\r']).to_string())
        };
        let id_line = next("id")?;
        let doc_id = id_line
            .strip_prefix("id:")
            .map(str::trim)
            .ok_or_else(|| RagError::MalformedHeader("line 1 must start with `id:`".into()))?
            .to_string();
        let title_line = next("title")?;
        let title = title_line
            .strip_prefix("title:")
            .map(str::trim)
            .ok_or_else(|| RagError::MalformedHeader("line 2 must start with `title:`".into()))?
            .to_string();
        let mut tags = Vec::new();
        let mut line = next("blank")?;
        if let Some(t) = line.strip_prefix("tags:") {
            tags = t
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            line = next("blank")?;
        }
        if !line.trim().is_empty() {
            return Err(RagError::MalformedHeader(
                "expected a blank line after the header".into(),
            ));
        }
        validate_doc_id(&doc_id)?;
        Ok(Document {
            doc_id,
            title,
            body: source[consumed..].to_string(),
            tags,
        })
    }
}

fn validate_doc_id(id: &str) -> Result<(), RagError> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == '#') {
        return Err(RagError::InvalidDocId(id.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub term_count: usize,
}

impl Chunk {
    /// `doc_id#chunk_index`
    pub fn reference(&self) -> String {
        format!("{}#{}", self.doc_id, self.chunk_index)
    }
}

/// Byte ranges of index terms: maximal alphanumeric runs.
fn term_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            out.push((s, i));
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    out
}

/// Lowercased alphanumeric runs. No stemming, no stopwords.
pub fn tokenize_terms(text: &str) -> Vec<String> {
    term_ranges(text)
        .into_iter()
        .map(|(s, e)| text[s..e].to_lowercase())
        .collect()
}

/// Cuts a body into windows of [`CHUNK_WINDOW`] terms overlapping by
/// [`CHUNK_OVERLAP`]. Each chunk's text is the body slice from its first
/// term to its last.
pub fn chunk_document(doc: &Document) -> Vec<Chunk> {
    let ranges = term_ranges(&doc.body);
    let stride = CHUNK_WINDOW - CHUNK_OVERLAP;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < ranges.len() {
        let end = (start + CHUNK_WINDOW).min(ranges.len());
        chunks.push(Chunk {
            doc_id: doc.doc_id.clone(),
            chunk_index: chunks.len(),
            text: doc.body[ranges[start].0..ranges[end - 1].1].to_string(),
            term_count: end - start,
        });
        if end == ranges.len() {
            break;
        }
        start += stride;
    }
    chunks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Position of the chunk in [`KnowledgeBase::chunks`].
    pub chunk: usize,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InvertedIndex {
    pub postings: BTreeMap<String, Vec<Posting>>,
    pub chunk_lengths: Vec<usize>,
    pub n_chunks: usize,
    pub avg_chunk_length: f64,
}

impl InvertedIndex {
    pub fn build(chunks: &[Chunk]) -> Self {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut chunk_lengths = Vec::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            let terms = tokenize_terms(&chunk.text);
            chunk_lengths.push(terms.len());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { chunk: i, tf: count });
            }
        }
        let n_chunks = chunks.len();
        let avg_chunk_length = if n_chunks == 0 {
            0.0
        } else {
            chunk_lengths.iter().sum::<usize>() as f64 / n_chunks as f64
        };
        Self {
            postings,
            chunk_lengths,
            n_chunks,
            avg_chunk_length,
        }
    }

    fn tf(&self, term: &str, chunk: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&chunk, |x| x.chunk).ok().map(|i| p[i].tf))
            .unwrap_or(0)
    }

    fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

fn unique_in_order(terms: &[String]) -> Vec<&str> {
    let mut seen = std::collections::HashSet::new();
    terms.iter().map(String::as_str).filter(|t| seen.insert(*t)).collect()
}

/// BM25 score of the chunk at position `chunk` for `query_terms`.
pub fn bm25_score(query_terms: &[String], chunk: usize, index: &InvertedIndex, params: Bm25Params) -> f64 {
    let n = index.n_chunks as f64;
    let len = index.chunk_lengths[chunk] as f64;
    let mut score = 0.0;
    for term in unique_in_order(query_terms) {
        let tf = index.tf(term, chunk) as f64;
        if tf == 0.0 {
            continue;
        }
        let df = index.df(term) as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let norm = params.k1 * (1.0 - params.b + params.b * len / index.avg_chunk_length);
        score += idf * tf * (params.k1 + 1.0) / (tf + norm);
    }
    score
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub chunk: Chunk,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestOutcome {
    Accepted {
        chunks: usize,
    },
    /// Spans found in the title or body; offsets are relative to that field.
    Rejected(Vec<EntitySpan>),
}

/// Document store, chunk list and inverted index kept in step.
///
/// Documents are ordered by id, so rebuilding from the same sources always
/// yields the same index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    docs: BTreeMap<String, Document>,
    chunks: Vec<Chunk>,
    index: InvertedIndex,
    params: Bm25Params,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_params(params: Bm25Params) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Screens the document and, if clean, stores and indexes it.
    pub fn ingest(&mut self, doc: Document, detector: &Detector) -> Result<IngestOutcome, RagError> {
        validate_doc_id(&doc.doc_id)?;
        if self.docs.contains_key(&doc.doc_id) {
            return Err(RagError::DuplicateDocument(doc.doc_id));
        }
        let mut findings = detector.detect(&doc.title);
        findings.extend(detector.detect(&doc.body));
        if !findings.is_empty() {
            return Ok(IngestOutcome::Rejected(findings));
        }
        let n = chunk_document(&doc).len();
        self.docs.insert(doc.doc_id.clone(), doc);
        self.reindex();
        Ok(IngestOutcome::Accepted { chunks: n })
    }

    fn reindex(&mut self) {
        self.chunks = self.docs.values().flat_map(chunk_document).collect();
        self.index = InvertedIndex::build(&self.chunks);
    }

    /// Top `k` chunks by score, ties broken by doc id then chunk index.
    /// Chunks sharing no term with the query are never returned.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<Retrieved> {
        let terms = tokenize_terms(query);
        let mut candidates: Vec<usize> = unique_in_order(&terms)
            .into_iter()
            .filter_map(|t| self.index.postings.get(t))
            .flat_map(|p| p.iter().map(|x| x.chunk))
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        let mut scored: Vec<(usize, f64)> = candidates
            .into_iter()
            .map(|c| (c, bm25_score(&terms, c, &self.index, self.params)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        scored.sort_by(|(a, sa), (b, sb)| {
            sb.total_cmp(sa)
                .then_with(|| self.chunks[*a].doc_id.cmp(&self.chunks[*b].doc_id))
                .then_with(|| self.chunks[*a].chunk_index.cmp(&self.chunks[*b].chunk_index))
        });
        scored
            .into_iter()
            .take(k)
            .map(|(c, score)| Retrieved {
                chunk: self.chunks[c].clone(),
                score,
            })
            .collect()
    }

    /// Writes the document set, chunks and index as one JSON file.
    pub fn save(&self, path: &Path) -> Result<(), RagError> {
        let file = PersistedKb {
            documents: self.docs.values().cloned().collect(),
            chunks: self.chunks.clone(),
            index: self.index.clone(),
        };
        let json = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, json).map_err(|source| RagError::Io {
            path: path.into(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, RagError> {
        let raw = std::fs::read_to_string(path).map_err(|source| RagError::Io {
            path: path.into(),
            source,
        })?;
        let file: PersistedKb = serde_json::from_str(&raw)?;
        Ok(Self {
            docs: file.documents.into_iter().map(|d| (d.doc_id.clone(), d)).collect(),
            chunks: file.chunks,
            index: file.index,
            params: Bm25Params::default(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PersistedKb {
    documents: Vec<Document>,
    chunks: Vec<Chunk>,
    index: InvertedIndex,
}

/// One file from a knowledge-base directory and its parse result.
pub type KbFile = (PathBuf, Result<Document, RagError>);

/// Reads every regular file in `dir` (sorted by name) as a source document.
pub fn read_kb_dir(dir: &Path) -> Result<Vec<KbFile>, RagError> {
    let io = |source| RagError::Io {
        path: dir.into(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.is_file());
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| {
            let doc = std::fs::read_to_string(&p)
                .map_err(|source| RagError::Io {
                    path: p.clone(),
                    source,
                })
                .and_then(|s| Document::parse(&s));
            (p, doc)
        })
        .collect())
}

/// Concatenates chunks in rank order, each prefixed `SOURCE doc#i:`, and
/// stops before the first chunk that would exceed `budget` terms.
pub fn assemble_context(results: &[Retrieved], budget: usize) -> String {
    let mut used = 0;
    let mut parts = Vec::new();
    for r in results {
        if used + r.chunk.term_count > budget {
            break;
        }
        used += r.chunk.term_count;
        parts.push(format!("SOURCE {}: {}", r.chunk.reference(), r.chunk.text));
    }
    parts.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize_terms("Reset your PIN!"), ["reset", "your", "pin"]);
        assert!(tokenize_terms("").is_empty());
        assert_eq!(tokenize_terms("e-mail e mail"), ["e", "mail", "e", "mail"]);
    }

    #[test]
    fn short_doc_is_one_chunk() {
        let mut kb = KnowledgeBase::new();
        let out = kb
            .ingest(
                Document::new("refunds", "Refunds", "Refund policy: 30 days."),
                &Detector::with_defaults(),
            )
            .unwrap();
        assert_eq!(out, IngestOutcome::Accepted { chunks: 1 });
        assert_eq!(kb.chunks()[0].term_count, 4);
    }

    #[test]
    fn pii_doc_rejected_and_store_unchanged() {
        let mut kb = KnowledgeBase::new();
        let out = kb
            .ingest(
                Document::new("bad", "Contact", "write to a@b.co"),
                &Detector::with_defaults(),
            )
            .unwrap();
        match out {
            IngestOutcome::Rejected(spans) => {
                assert_eq!(spans.len(), 1);
                assert_eq!(spans[0].kind, crate::detector::EntityKind::Email);
            }
            other => panic!("{other:?}"),
        }
        assert!(kb.is_empty());
        assert_eq!(kb.documents().count(), 0);
    }

    #[test]
    fn window_arithmetic_for_450_terms() {
        let doc = Document::new("d", "t", words(450));
        let chunks = chunk_document(&doc);
        assert_eq!(chunks.len(), 3);
        let firsts: Vec<String> = chunks.iter().map(|c| tokenize_terms(&c.text)[0].clone()).collect();
        assert_eq!(firsts, ["w0", "w160", "w320"]);
        assert_eq!(chunks.iter().map(|c| c.term_count).collect::<Vec<_>>(), [200, 200, 130]);
    }

    #[test]
    fn window_edges() {
        assert_eq!(chunk_document(&Document::new("d", "t", words(200))).len(), 1);
        assert_eq!(chunk_document(&Document::new("d", "t", words(201))).len(), 2);
        assert!(chunk_document(&Document::new("d", "t", "  ...  ")).is_empty());
    }

    #[test]
    fn duplicate_doc_conflicts() {
        let d = Detector::with_defaults();
        let mut kb = KnowledgeBase::new();
        kb.ingest(Document::new("a", "t", "hello"), &d).unwrap();
        assert!(matches!(
            kb.ingest(Document::new("a", "t", "again"), &d),
            Err(RagError::DuplicateDocument(_))
        ));
    }

    #[test]
    fn single_chunk_hand_formula() {
        let d = Detector::with_defaults();
        let mut kb = KnowledgeBase::new();
        kb.ingest(Document::new("a", "t", "refund"), &d).unwrap();
        // N = 1, df = 1, tf = 1, len = avglen = 1
        let idf = (1.0f64 + (1.0 - 1.0 + 0.5) / (1.0 + 0.5)).ln();
        let expected = idf * 1.0 * 2.2 / (1.0 + 1.2);
        let got = bm25_score(&["refund".into()], 0, kb.index(), Bm25Params::default());
        assert!((got - expected).abs() < 1e-12);
        assert_eq!(
            bm25_score(&["absent".into()], 0, kb.index(), Bm25Params::default()),
            0.0
        );
    }

    #[test]
    fn retrieve_edge_cases() {
        let d = Detector::with_defaults();
        let mut kb = KnowledgeBase::new();
        assert!(kb.retrieve("anything", 3).is_empty());
        kb.ingest(Document::new("a", "t", "refund window"), &d).unwrap();
        kb.ingest(Document::new("b", "t", "password reset"), &d).unwrap();
        assert!(kb.retrieve("shipping", 3).is_empty());
        let all = kb.retrieve("refund password", 10);
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn context_budget() {
        let mk = |id: &str| Retrieved {
            chunk: Chunk {
                doc_id: id.into(),
                chunk_index: 0,
                text: words(200),
                term_count: 200,
            },
            score: 1.0,
        };
        let results = vec![mk("a"), mk("b"), mk("c")];
        assert_eq!(assemble_context(&[], 100), "");
        assert_eq!(assemble_context(&results, 0), "");
        let ctx = assemble_context(&results, 450);
        assert!(ctx.starts_with("SOURCE a#0: w0"));
        assert!(ctx.contains("SOURCE b#0:"));
        assert!(!ctx.contains("SOURCE c#0:"));
    }

    #[test]
    fn parse_document_header() {
        let d = Document::parse("id: refunds\ntitle: Refund policy\ntags: billing, returns\n\nBody here.\n").unwrap();
        assert_eq!(d.doc_id, "refunds");
        assert_eq!(d.title, "Refund policy");
        assert_eq!(d.tags, ["billing", "returns"]);
        assert_eq!(d.body, "Body here.\n");
        let d = Document::parse("id: x\ntitle: y\n\nbody").unwrap();
        assert!(d.tags.is_empty());
        assert!(Document::parse("title: y\nid: x\n\nbody").is_err());
        assert!(Document::parse("id: x\ntitle: y\nbody").is_err());
        assert!(Document::parse("id: a b\ntitle: y\n\nbody").is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let d = Detector::with_defaults();
        let mut kb = KnowledgeBase::new();
        kb.ingest(Document::new("a", "t", "refund window is thirty days"), &d)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.json");
        kb.save(&path).unwrap();
        assert_eq!(KnowledgeBase::load(&path).unwrap(), kb);
    }
}
