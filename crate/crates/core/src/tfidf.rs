//! TF-IDF statistics and the lexical first stage of retrieval.
//!
//! Terms are unigrams and, when `ngram_max == 2`, space-joined bigrams.
//! IDF is smoothed, `ln((1 + N) / (1 + df)) + 1`, so every weight is
//! strictly positive. Vectors are L2-normalized, making a dot product a cosine
//! in `[0, 1]`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::Token;

pub const TFIDF_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TfidfError {
    #[error("cannot fit a TF-IDF model on an empty corpus")]
    EmptyCorpus,
    #[error("ngram_max must be 1 or 2, got {0}")]
    InvalidNgram(u8),
    #[error("TF-IDF model file has version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("invalid TF-IDF model: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fitted vocabulary and document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    ngram_max: u8,
    n_docs: usize,
    terms: Vec<String>,
    vocab: HashMap<String, u32>,
    doc_freq: Vec<u32>,
    idf: Vec<f64>,
    min_idf: f64,
}

/// On-disk layout. `vocab[i]` is the term with id `i`.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct TfidfFile {
    pub version: u32,
    pub ngram_max: u8,
    pub n_docs: usize,
    pub vocab: Vec<String>,
    pub doc_freq: Vec<u32>,
}

fn smoothed_idf(n_docs: usize, df: u32) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + f64::from(df))).ln() + 1.0
}

/// Calls `f` for each term of `tokens`: unigrams first, then bigrams.
fn for_each_term(tokens: &[Token], ngram_max: u8, mut f: impl FnMut(&str)) {
    for t in tokens {
        f(t.as_str());
    }
    if ngram_max >= 2 {
        let mut buf = String::new();
        for pair in tokens.windows(2) {
            buf.clear();
            buf.push_str(pair[0].as_str());
            buf.push(' ');
            buf.push_str(pair[1].as_str());
            f(&buf);
        }
    }
}

impl TfidfModel {
    /// Fits on a corpus of token lists. Term ids follow first occurrence.
    pub fn fit<D: AsRef<[Token]>>(corpus: &[D], ngram_max: u8) -> Result<Self, TfidfError> {
        if !(1..=2).contains(&ngram_max) {
            return Err(TfidfError::InvalidNgram(ngram_max));
        }
        if corpus.is_empty() {
            return Err(TfidfError::EmptyCorpus);
        }
        let mut terms: Vec<String> = Vec::new();
        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut doc_freq: Vec<u32> = Vec::new();
        let mut last_seen: Vec<usize> = Vec::new();
        for (doc_idx, doc) in corpus.iter().enumerate() {
            for_each_term(doc.as_ref(), ngram_max, |term| {
                let id = match vocab.get(term) {
                    Some(&id) => id as usize,
                    None => {
                        let id = terms.len();
                        terms.push(term.to_string());
                        vocab.insert(term.to_string(), id as u32);
                        doc_freq.push(0);
                        last_seen.push(usize::MAX);
                        id
                    }
                };
                if last_seen[id] != doc_idx {
                    last_seen[id] = doc_idx;
                    doc_freq[id] += 1;
                }
            });
        }
        Ok(Self::from_parts(ngram_max, corpus.len(), terms, doc_freq))
    }

    fn from_parts(ngram_max: u8, n_docs: usize, terms: Vec<String>, doc_freq: Vec<u32>) -> Self {
        let vocab = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let idf: Vec<f64> = doc_freq.iter().map(|&df| smoothed_idf(n_docs, df)).collect();
        let min_idf = idf.iter().copied().fold(f64::INFINITY, f64::min);
        // An empty vocabulary only happens for a corpus of empty documents.
        let min_idf = if min_idf.is_finite() { min_idf } else { 1.0 };
        TfidfModel { ngram_max, n_docs, terms, vocab, doc_freq, idf, min_idf }
    }

    pub fn ngram_max(&self) -> u8 {
        self.ngram_max
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn vocab_len(&self) -> usize {
        self.terms.len()
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.vocab.get(term).copied()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn doc_freq(&self, term: &str) -> Option<u32> {
        self.term_id(term).map(|id| self.doc_freq[id as usize])
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.term_id(term).map(|id| self.idf[id as usize])
    }

    /// Smallest idf over the whole vocabulary.
    pub fn min_idf(&self) -> f64 {
        self.min_idf
    }

    /// idf of `term`, falling back to [`min_idf`](Self::min_idf) when unseen.
    pub fn idf_or_min(&self, term: &str) -> f64 {
        self.idf(term).unwrap_or(self.min_idf)
    }

    /// Raw-count TF times IDF, L2-normalized. Unknown terms are ignored.
    pub fn transform(&self, tokens: &[Token]) -> SparseVector {
        let mut counts: HashMap<u32, u32> = HashMap::new();
        for_each_term(tokens, self.ngram_max, |term| {
            if let Some(&id) = self.vocab.get(term) {
                *counts.entry(id).or_insert(0) += 1;
            }
        });
        let mut entries: Vec<(u32, f64)> = counts
            .into_iter()
            .map(|(id, tf)| (id, f64::from(tf) * self.idf[id as usize]))
            .collect();
        entries.sort_unstable_by_key(|e| e.0);
        let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        if norm > 0.0 {
            for e in &mut entries {
                e.1 /= norm;
            }
        }
        SparseVector { entries }
    }

    pub(crate) fn to_file(&self) -> TfidfFile {
        TfidfFile {
            version: TFIDF_FORMAT_VERSION,
            ngram_max: self.ngram_max,
            n_docs: self.n_docs,
            vocab: self.terms.clone(),
            doc_freq: self.doc_freq.clone(),
        }
    }

    pub(crate) fn from_file(file: TfidfFile) -> Result<Self, TfidfError> {
        if file.version != TFIDF_FORMAT_VERSION {
            return Err(TfidfError::VersionMismatch {
                found: file.version,
                expected: TFIDF_FORMAT_VERSION,
            });
        }
        if !(1..=2).contains(&file.ngram_max) {
            return Err(TfidfError::InvalidNgram(file.ngram_max));
        }
        if file.vocab.len() != file.doc_freq.len() {
            return Err(TfidfError::Corrupt(format!(
                "{} terms but {} document frequencies",
                file.vocab.len(),
                file.doc_freq.len()
            )));
        }
        if let Some(df) = file.doc_freq.iter().find(|&&df| df == 0 || df as usize > file.n_docs) {
            return Err(TfidfError::Corrupt(format!(
                "document frequency {df} outside 1..={}",
                file.n_docs
            )));
        }
        let model = Self::from_parts(file.ngram_max, file.n_docs, file.vocab, file.doc_freq);
        if model.vocab.len() != model.terms.len() {
            return Err(TfidfError::Corrupt("duplicate vocabulary term".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("TF-IDF model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, TfidfError> {
        let file: TfidfFile =
            serde_json::from_str(json).map_err(|e| TfidfError::Corrupt(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TfidfError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TfidfError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Sparse vector with strictly increasing term ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    /// Sum of products over shared ids, accumulated in ascending id order.
    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// Clamp of a unit-vector dot product to `[0, 1]`.
pub(crate) fn unit_score(raw: f64) -> f64 {
    raw.clamp(0.0, 1.0)
}

/// Descending score, then ascending index.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn select_top(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

/// Exhaustive top-k by dot product; ties go to the lower candidate index.
pub fn top_k(query: &SparseVector, candidates: &[SparseVector], k: usize) -> Vec<(usize, f64)> {
    let scored = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (i, unit_score(query.dot(c))))
        .collect();
    select_top(scored, k)
}

/// Term-at-a-time index over a fixed set of vectors. Produces exactly the
/// same ranking and scores as [`top_k`] over the same vectors.
#[derive(Debug, Clone, Default)]
pub struct InvertedIndex {
    n_docs: usize,
    postings: HashMap<u32, Vec<(u32, f64)>>,
}

impl InvertedIndex {
    pub fn build(vectors: &[SparseVector]) -> Self {
        let mut postings: HashMap<u32, Vec<(u32, f64)>> = HashMap::new();
        for (doc, v) in vectors.iter().enumerate() {
            for &(term, w) in v.entries() {
                postings.entry(term).or_default().push((doc as u32, w));
            }
        }
        InvertedIndex { n_docs: vectors.len(), postings }
    }

    pub fn len(&self) -> usize {
        self.n_docs
    }

    pub fn is_empty(&self) -> bool {
        self.n_docs == 0
    }

    pub fn top_k(&self, query: &SparseVector, k: usize) -> Vec<(usize, f64)> {
        let mut acc = vec![0.0f64; self.n_docs];
        // Query entries are in ascending term order, so each accumulator sums
        // in the same order as `SparseVector::dot`.
        for &(term, qw) in query.entries() {
            if let Some(list) = self.postings.get(&term) {
                for &(doc, dw) in list {
                    acc[doc as usize] += qw * dw;
                }
            }
        }
        let scored = acc.into_iter().enumerate().map(|(i, s)| (i, unit_score(s))).collect();
        select_top(scored, k)
    }
}
