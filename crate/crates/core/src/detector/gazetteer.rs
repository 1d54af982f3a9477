use std::collections::HashSet;

use super::DetectorError;

/// A case-insensitive term list matched on whole words.
///
/// Terms may span several words separated by single spaces. Adjacent hits
/// separated by exactly one space are merged into one match, so a first name
/// followed by a surname yields a single span.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    name: String,
    terms: HashSet<String>,
    max_words: usize,
}

impl Gazetteer {
    pub fn new<I, S>(name: impl Into<String>, terms: I) -> Result<Self, DetectorError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let name = name.into();
        let mut set = HashSet::new();
        let mut max_words = 0;
        for term in terms {
            let term = term.as_ref();
            if term.is_empty() || term.trim() != term {
                return Err(DetectorError::Gazetteer {
                    name,
                    reason: format!("entry {term:?} is empty or has surrounding whitespace"),
                });
            }
            let folded = term.to_lowercase();
            max_words = max_words.max(folded.split(' ').count());
            set.insert(folded);
        }
        if set.is_empty() {
            return Err(DetectorError::Gazetteer {
                name,
                reason: "no terms".into(),
            });
        }
        Ok(Self {
            name,
            terms: set,
            max_words,
        })
    }

    /// Parses the one-term-per-line format. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn parse(name: impl Into<String>, source: &str) -> Result<Self, DetectorError> {
        let terms = source
            .lines()
            .map(str::trim)
            .filter(|line| !line.is_empty() && !line.starts_with('#'));
        Self::new(name, terms)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains(&term.to_lowercase())
    }

    /// Byte ranges of every match in `text`, in order.
    pub fn find_all(&self, text: &str) -> Vec<(usize, usize)> {
        let words = word_bounds(text);
        let mut hits: Vec<(usize, usize)> = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let mut matched = None;
            for len in (1..=self.max_words.min(words.len() - i)).rev() {
                let run = &words[i..i + len];
                if !single_space_separated(text, run) {
                    continue;
                }
                let (start, end) = (run[0].0, run[len - 1].1);
                if self.terms.contains(&text[start..end].to_lowercase()) {
                    matched = Some((len, start, end));
                    break;
                }
            }
            match matched {
                Some((len, start, end)) => {
                    match hits.last_mut() {
                        Some(last) if &text[last.1..start] == " " => last.1 = end,
                        _ => hits.push((start, end)),
                    }
                    i += len;
                }
                None => i += 1,
            }
        }
        hits
    }
}

fn single_space_separated(text: &str, run: &[(usize, usize)]) -> bool {
    run.windows(2).all(|w| &text[w[0].1..w[1].0] == " ")
}

/// Maximal runs of alphanumeric characters.
fn word_bounds(text: &str) -> Vec<(usize, usize)> {
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
