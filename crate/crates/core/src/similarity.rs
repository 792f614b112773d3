//! IDF-weighted greedy-match similarity and its ReLU-activated form.
//!
//! For query words `W_u` and candidate words `W_i`,
//!
//! ```text
//! sim(u, i) = sum_{w in W_u} idf(w) * max_{w' in W_i} cos(x_w, x_w') / sum_{w in W_u} idf(w)
//! ```
//!
//! The query side is a multiset: repeated words contribute once per
//! occurrence. Conventions used throughout:
//!
//! * cosine is 0 when either vector has norm below [`NORM_EPS`];
//! * an unseen word weighs the model's minimum idf;
//! * among equally good candidate tokens the earliest position is the match
//!   (this only affects gradients);
//! * the ReLU has subgradient 0 at 0.

use thiserror::Error;

use crate::encoder::{Encoder, RowGradient, TokenEmbeddings};
use crate::text::Token;
use crate::tfidf::TfidfModel;

pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimilarityError {
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("candidate has no tokens")]
    EmptyCandidate,
}

/// Similarity value in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SimScore(pub f64);

/// ReLU-activated similarity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RelevanceScore(pub f64);

impl SimScore {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn relu(self) -> RelevanceScore {
        RelevanceScore(self.0.max(0.0))
    }
}

impl RelevanceScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// A token list run through the encoder, with cached norms.
#[derive(Debug, Clone)]
pub struct EncodedText {
    rows: Vec<usize>,
    vectors: TokenEmbeddings,
    norms: Vec<f64>,
}

impl EncodedText {
    pub fn new(encoder: &Encoder, tokens: &[Token]) -> Self {
        let rows = encoder.rows_for(tokens);
        let vectors = encoder.encode_rows(&rows);
        let norms = vectors.iter().map(|v| dot(v, v).sqrt()).collect();
        EncodedText { rows, vectors, norms }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn vectors(&self) -> &TokenEmbeddings {
        &self.vectors
    }
}

/// Encoded query plus its normalized idf weights, reusable across many
/// candidates.
#[derive(Debug, Clone)]
pub struct QueryContext {
    encoded: EncodedText,
    weights: Vec<f64>,
}

impl QueryContext {
    pub fn new(encoder: &Encoder, idf: &TfidfModel, tokens: &[Token]) -> Result<Self, SimilarityError> {
        if tokens.is_empty() {
            return Err(SimilarityError::EmptyQuery);
        }
        let raw: Vec<f64> = tokens.iter().map(|t| idf.idf_or_min(t.as_str())).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.into_iter().map(|w| w / total).collect();
        Ok(QueryContext { encoded: EncodedText::new(encoder, tokens), weights })
    }

    pub fn encoded(&self) -> &EncodedText {
        &self.encoded
    }

    /// Normalized idf weight per query position; sums to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sim(&self, candidate: &EncodedText) -> Result<SimScore, SimilarityError> {
        Ok(SimScore(self.matches(candidate)?.value))
    }

    pub fn sim_tokens(&self, encoder: &Encoder, candidate: &[Token]) -> Result<SimScore, SimilarityError> {
        self.sim(&EncodedText::new(encoder, candidate))
    }

    /// Forward pass keeping, for every query position, the matched candidate
    /// position and cosine.
    pub fn matches(&self, candidate: &EncodedText) -> Result<GreedyMatch, SimilarityError> {
        if candidate.is_empty() {
            return Err(SimilarityError::EmptyCandidate);
        }
        let q = &self.encoded;
        let mut best = Vec::with_capacity(q.len());
        let mut runner_up_gap = f64::INFINITY;
        let mut value = 0.0;
        for (u, &weight) in self.weights.iter().enumerate() {
            let cos_at = |m: usize| {
                cosine(q.vectors.vector(u), q.norms[u], candidate.vectors.vector(m), candidate.norms[m])
            };
            let mut top = (0usize, cos_at(0));
            let mut second = f64::NEG_INFINITY;
            for m in 1..candidate.len() {
                let c = cos_at(m);
                if c > top.1 {
                    second = top.1;
                    top = (m, c);
                } else if c > second {
                    second = c;
                }
            }
            runner_up_gap = runner_up_gap.min(top.1 - second);
            value += weight * top.1;
            best.push(top);
        }
        Ok(GreedyMatch { value, best, runner_up_gap })
    }

    /// `sim` and its gradient with respect to every touched table row.
    pub fn sim_grad(
        &self,
        encoder: &Encoder,
        candidate: &EncodedText,
    ) -> Result<(SimScore, RowGradient), SimilarityError> {
        let matched = self.matches(candidate)?;
        let mut grad = RowGradient::new(encoder.dim());
        self.backward(encoder, candidate, &matched, 1.0, &mut grad);
        Ok((SimScore(matched.value), grad))
    }

    /// Accumulates `upstream * d sim / d table` into `grad`.
    pub fn backward(
        &self,
        encoder: &Encoder,
        candidate: &EncodedText,
        matched: &GreedyMatch,
        upstream: f64,
        grad: &mut RowGradient,
    ) {
        if upstream == 0.0 {
            return;
        }
        let d = encoder.dim();
        let q = &self.encoded;
        let mut gq = vec![0.0; q.len() * d];
        let mut gc = vec![0.0; candidate.len() * d];
        for (u, &(m, c)) in matched.best.iter().enumerate() {
            let (nx, ny) = (q.norms[u], candidate.norms[m]);
            if nx < NORM_EPS || ny < NORM_EPS {
                continue;
            }
            let beta = upstream * self.weights[u];
            let x = q.vectors.vector(u);
            let y = candidate.vectors.vector(m);
            let inv = 1.0 / (nx * ny);
            for k in 0..d {
                gq[u * d + k] += beta * (y[k] * inv - c * x[k] / (nx * nx));
                gc[m * d + k] += beta * (x[k] * inv - c * y[k] / (ny * ny));
            }
        }
        encoder.backprop(&q.rows, &gq, grad);
        encoder.backprop(&candidate.rows, &gc, grad);
    }
}

/// Result of the greedy matching step.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyMatch {
    pub value: f64,
    /// Per query position: (matched candidate position, cosine).
    pub best: Vec<(usize, f64)>,
    /// Smallest gap between the best and second-best cosine over all query
    /// positions; infinite for single-token candidates.
    pub runner_up_gap: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(x: &[f64], nx: f64, y: &[f64], ny: f64) -> f64 {
    if nx < NORM_EPS || ny < NORM_EPS {
        0.0
    } else {
        (dot(x, y) / (nx * ny)).clamp(-1.0, 1.0)
    }
}

/// Cosine similarity, 0 when either vector is (near) zero.
pub fn cos_sim(x: &[f64], y: &[f64]) -> f64 {
    cosine(x, dot(x, x).sqrt(), y, dot(y, y).sqrt())
}

pub fn sim(
    query: &[Token],
    candidate: &[Token],
    encoder: &Encoder,
    idf: &TfidfModel,
) -> Result<SimScore, SimilarityError> {
    if candidate.is_empty() && !query.is_empty() {
        return Err(SimilarityError::EmptyCandidate);
    }
    QueryContext::new(encoder, idf, query)?.sim_tokens(encoder, candidate)
}

pub fn relu_sim(
    query: &[Token],
    answer: &[Token],
    encoder: &Encoder,
    idf: &TfidfModel,
) -> Result<RelevanceScore, SimilarityError> {
    sim(query, answer, encoder, idf).map(SimScore::relu)
}

pub fn sim_grad(
    query: &[Token],
    candidate: &[Token],
    encoder: &Encoder,
    idf: &TfidfModel,
) -> Result<(SimScore, RowGradient), SimilarityError> {
    let ctx = QueryContext::new(encoder, idf, query)?;
    ctx.sim_grad(encoder, &EncodedText::new(encoder, candidate))
}
