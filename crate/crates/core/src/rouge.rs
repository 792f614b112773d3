//! ROUGE-1, ROUGE-2 and ROUGE-L F1 over [`tokenize`]d text.
//!
//! N-gram overlap uses clipped counts. ROUGE-L uses the longest common
//! subsequence with the plain harmonic mean (β = 1). Any F1 whose precision
//! or recall denominator is zero is 0; in particular a one-token reference
//! always has ROUGE-2 of 0.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::text::{tokenize, Token};

#[derive(Debug, Error)]
pub enum RougeError {
    #[error("reference has no tokens")]
    EmptyReference,
    #[error("line {line}: reference has no tokens")]
    EmptyReferenceLine { line: usize },
    #[error("prediction file has {predictions} lines but reference file has {references}")]
    LineCountMismatch { predictions: usize, references: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RougeScores {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RougeReport {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
    pub n_examples: usize,
    #[serde(skip)]
    pub per_example: Vec<RougeScores>,
}

fn f1(overlap: usize, cand_total: usize, ref_total: usize) -> f64 {
    if cand_total == 0 || ref_total == 0 || overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

fn ngram_counts(tokens: &[Token], n: usize) -> HashMap<&[Token], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap: each candidate n-gram counts at most as often as
/// it appears in the reference.
pub fn clipped_overlap(candidate: &[Token], reference: &[Token], n: usize) -> usize {
    let refs = ngram_counts(reference, n);
    ngram_counts(candidate, n)
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum()
}

fn ngram_total(tokens: &[Token], n: usize) -> usize {
    (tokens.len() + 1).saturating_sub(n)
}

pub fn lcs_len(a: &[Token], b: &[Token]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_f1(candidate: &[Token], reference: &[Token]) -> Result<RougeScores, RougeError> {
    if reference.is_empty() {
        return Err(RougeError::EmptyReference);
    }
    let rn = |n| f1(clipped_overlap(candidate, reference, n), ngram_total(candidate, n), ngram_total(reference, n));
    Ok(RougeScores {
        r1: rn(1),
        r2: rn(2),
        rl: f1(lcs_len(candidate, reference), candidate.len(), reference.len()),
    })
}

pub fn rouge_text(candidate: &str, reference: &str) -> Result<RougeScores, RougeError> {
    rouge_f1(&tokenize(candidate), &tokenize(reference))
}

/// Unweighted corpus means over line-aligned predictions and references.
pub fn eval_lines<P, R>(predictions: &[P], references: &[R]) -> Result<RougeReport, RougeError>
where
    P: AsRef<str>,
    R: AsRef<str>,
{
    if predictions.len() != references.len() {
        return Err(RougeError::LineCountMismatch { predictions: predictions.len(), references: references.len() });
    }
    let per_example = predictions
        .iter()
        .zip(references)
        .enumerate()
        .map(|(i, (p, r))| {
            rouge_text(p.as_ref(), r.as_ref()).map_err(|e| match e {
                RougeError::EmptyReference => RougeError::EmptyReferenceLine { line: i + 1 },
                e => e,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = per_example.len();
    let mean = |f: fn(&RougeScores) -> f64| if n == 0 { 0.0 } else { per_example.iter().map(f).sum::<f64>() / n as f64 };
    Ok(RougeReport { r1: mean(|s| s.r1), r2: mean(|s| s.r2), rl: mean(|s| s.rl), n_examples: n, per_example })
}

fn read_lines(path: &Path) -> io::Result<Vec<String>> {
    BufReader::new(File::open(path)?).lines().collect()
}

pub fn eval_file(pred_file: impl AsRef<Path>, ref_file: impl AsRef<Path>) -> Result<RougeReport, RougeError> {
    let preds = read_lines(pred_file.as_ref())?;
    let refs = read_lines(ref_file.as_ref())?;
    eval_lines(&preds, &refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn migraine_fixture() {
        let s = rouge_text("what causes pain", "what causes migraine pain").unwrap();
        assert!((s.r1 - 6.0 / 7.0).abs() < 1e-12);
        assert!((s.r2 - 0.4).abs() < 1e-12);
        assert!((s.rl - 6.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn identity_and_disjoint() {
        let s = rouge_text("How is GERD treated?", "how is gerd treated").unwrap();
        assert_eq!((s.r1, s.r2, s.rl), (1.0, 1.0, 1.0));
        let s = rouge_text("acne skin", "asthma inhaler").unwrap();
        assert_eq!((s.r1, s.r2, s.rl), (0.0, 0.0, 0.0));
        let s = rouge_text("", "asthma").unwrap();
        assert_eq!((s.r1, s.r2, s.rl), (0.0, 0.0, 0.0));
        assert!(matches!(rouge_text("a", "!!"), Err(RougeError::EmptyReference)));
    }

    #[test]
    fn clipping() {
        // cand "the the the" vs ref "the cat": overlap 1, P = 1/3, R = 1/2
        let s = rouge_text("the the the", "the cat").unwrap();
        assert!((s.r1 - 0.4).abs() < 1e-12);
        assert_eq!(clipped_overlap(&tokenize("a b a b"), &tokenize("a b a"), 2), 2);
    }

    #[test]
    fn lcs() {
        assert_eq!(lcs_len(&tokenize("a b c d e"), &tokenize("a c e x")), 3);
        assert_eq!(lcs_len(&tokenize(""), &tokenize("a")), 0);
        assert_eq!(lcs_len(&tokenize("b a"), &tokenize("a b")), 1);
    }

    #[test]
    fn three_line_fixture() {
        let preds = ["what causes pain", "acne treatment", "is it contagious"];
        let refs = ["what causes migraine pain", "acne treatment", "how is it spread"];
        let r = eval_lines(&preds, &refs).unwrap();
        // line 3: unigrams {is, it} overlap 2, P = 2/3, R = 2/4 -> 4/7
        //         bigram "is it" overlap 1, P = 1/2, R = 1/3 -> 0.4; LCS 2 -> 4/7
        let r1 = (6.0 / 7.0 + 1.0 + 4.0 / 7.0) / 3.0;
        let r2 = (0.4 + 1.0 + 0.4) / 3.0;
        assert!((r.r1 - r1).abs() < 1e-12);
        assert!((r.r2 - r2).abs() < 1e-12);
        assert!((r.rl - r1).abs() < 1e-12);
        assert_eq!(r.n_examples, 3);
    }

    #[test]
    fn line_count_mismatch() {
        assert!(matches!(
            eval_lines(&["a"], &["a", "b"]),
            Err(RougeError::LineCountMismatch { predictions: 1, references: 2 })
        ));
        let r = eval_lines::<&str, &str>(&[], &[]).unwrap();
        assert_eq!(r.n_examples, 0);
    }

    #[test]
    fn report_json_shape() {
        let r = eval_lines(&["a b"], &["a b"]).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"r1":1.0,"r2":1.0,"rl":1.0,"n_examples":1}"#);
    }
}
