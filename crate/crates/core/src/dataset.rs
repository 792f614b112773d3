//! Knowledge-based filtering of question-summarization pairs.
//!
//! Each pair's reference FAQ gets a matching score: its best TF-IDF cosine
//! against any KB question, under a model fitted on the pairs' reference FAQs
//! plus the KB questions. Pairs scoring below a cutoff are rejected and the
//! survivors are shuffled and split 80/10/10, remainders going to train.

use std::fmt;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{tokenize, Token};
use crate::tfidf::{unit_score, SparseVector, TfidfError, TfidfModel};

pub const HISTOGRAM_BUCKETS: usize = 20;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("cutoff must be finite and non-negative, got {0}")]
    InvalidCutoff(f64),
    #[error("pair {index} has no matching score")]
    Unscored { index: usize },
    #[error(transparent)]
    Tfidf(#[from] TfidfError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
    Rejected,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionPair {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub chq: String,
    pub ref_faq: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl QuestionPair {
    pub fn new(chq: impl Into<String>, ref_faq: impl Into<String>) -> Self {
        QuestionPair { id: None, chq: chq.into(), ref_faq: ref_faq.into(), match_score: None, split: None }
    }
}

pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<QuestionPair>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DatasetError::BadRecord { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

pub fn write_pairs<W: Write>(pairs: &[QuestionPair], mut out: W) -> io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Best dot product between `ref_faq` and any KB question vector, in `[0, 1]`.
/// An empty KB or an all-unknown reference scores 0.
pub fn matching_score(ref_faq: &[Token], tfidf: &TfidfModel, kb_question_vectors: &[SparseVector]) -> f64 {
    let q = tfidf.transform(ref_faq);
    if q.is_zero() {
        return 0.0;
    }
    kb_question_vectors.iter().map(|v| unit_score(q.dot(v))).fold(0.0, f64::max)
}

/// Fits the filtering TF-IDF model on the reference FAQs and KB questions and
/// fills in every pair's `match_score`.
pub fn score_pairs<S: AsRef<str>>(
    pairs: &mut [QuestionPair],
    kb_questions: &[S],
    ngram_max: u8,
) -> Result<TfidfModel, DatasetError> {
    let refs: Vec<Vec<Token>> = pairs.iter().map(|p| tokenize(&p.ref_faq)).collect();
    let kb: Vec<Vec<Token>> = kb_questions.iter().map(|q| tokenize(q.as_ref())).collect();
    let corpus: Vec<&[Token]> = refs.iter().chain(&kb).map(Vec::as_slice).collect();
    let model = TfidfModel::fit(&corpus, ngram_max)?;
    let kb_vectors: Vec<SparseVector> = kb.iter().map(|q| model.transform(q)).collect();
    for (pair, tokens) in pairs.iter_mut().zip(&refs) {
        pair.match_score = Some(matching_score(tokens, &model, &kb_vectors));
    }
    Ok(model)
}

/// `(dev, test)` sizes for `survivors`; train takes the rest.
pub fn split_sizes(survivors: usize) -> (usize, usize, usize) {
    let dev = survivors / 10;
    let test = survivors / 10;
    (survivors - dev - test, dev, test)
}

/// Marks pairs below `cutoff` as rejected, then shuffles the survivors with
/// a ChaCha8 generator seeded by `seed` and assigns train/dev/test. Input
/// order is preserved in the output.
pub fn filter_and_split(
    mut pairs: Vec<QuestionPair>,
    cutoff: f64,
    seed: u64,
) -> Result<Vec<QuestionPair>, DatasetError> {
    // a cutoff above one is allowed and simply rejects everything
    if !(cutoff >= 0.0 && cutoff.is_finite()) {
        return Err(DatasetError::InvalidCutoff(cutoff));
    }
    let mut survivors = Vec::new();
    for (index, p) in pairs.iter_mut().enumerate() {
        let score = p.match_score.ok_or(DatasetError::Unscored { index })?;
        if score < cutoff {
            p.split = Some(Split::Rejected);
        } else {
            survivors.push(index);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    survivors.shuffle(&mut rng);
    let (train, dev, _) = split_sizes(survivors.len());
    for (rank, &index) in survivors.iter().enumerate() {
        let split = if rank < train {
            Split::Train
        } else if rank < train + dev {
            Split::Dev
        } else {
            Split::Test
        };
        pairs[index].split = Some(split);
    }
    Ok(pairs)
}

/// Counts over [`HISTOGRAM_BUCKETS`] equal-width buckets on `[0, 1]`; the
/// last bucket is closed on the right.
pub fn score_histogram(scores: impl IntoIterator<Item = f64>) -> Vec<(f64, f64, usize)> {
    let width = 1.0 / HISTOGRAM_BUCKETS as f64;
    let mut counts = [0usize; HISTOGRAM_BUCKETS];
    for s in scores {
        let b = ((s.clamp(0.0, 1.0) / width) as usize).min(HISTOGRAM_BUCKETS - 1);
        counts[b] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (i as f64 * width, (i + 1) as f64 * width, c))
        .collect()
}

pub fn write_histogram<W: Write>(hist: &[(f64, f64, usize)], mut out: W) -> io::Result<()> {
    writeln!(out, "bucket_low,bucket_high,count")?;
    for (lo, hi, c) in hist {
        writeln!(out, "{lo:.2},{hi:.2},{c}")?;
    }
    Ok(())
}
