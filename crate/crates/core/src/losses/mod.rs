//! Self-supervised matching, similarity and selection losses.
//!
//! With `s = sim(ref, matched)` and `S_i = relu(sim(ref, a_i))` over the
//! matched answer document `A`:
//!
//! ```text
//! L_mat = 1 - relu(s)
//! L_sim = sum_i S_i * (1 - S_i)
//! L_sel = | min(n, |A|) - sum_i S_i |
//! L     = L_sum + lambda * L_mat + gamma * (L_sim + L_sel)
//! ```
//!
//! `L_sum` comes from an external summarizer and is carried through as a
//! scalar. Gradients use subgradient 0 at every kink (ReLU at 0, the absolute
//! value at 0).

mod train;

pub use train::{train_encoder, write_loss_log, EpochLoss, TrainConfig, TrainError, TrainOutcome, TrainingPair};

use thiserror::Error;

use crate::encoder::{Encoder, RowGradient};
use crate::pipeline::sentence_scores;
use crate::similarity::{EncodedText, QueryContext, SimilarityError};
use crate::text::Token;
use crate::tfidf::TfidfModel;

/// Tolerance on the `[0, 1]` score range.
pub const SCORE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("relevance score {value} at position {index} is outside [0, 1]")]
    ScoreOutOfRange { index: usize, value: f64 },
    #[error("relevance score list is empty")]
    EmptyScores,
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("external summarization loss must be finite and non-negative, got {0}")]
    InvalidExternalLoss(f64),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
    pub n_select: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 0.01, gamma: 0.01, n_select: 3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(LossError::InvalidWeights(format!("lambda = {}", self.lambda)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(LossError::InvalidWeights(format!("gamma = {}", self.gamma)));
        }
        if self.n_select == 0 {
            return Err(LossError::InvalidWeights("n_select = 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_sum: f64,
    pub l_mat: f64,
    pub l_sim: f64,
    pub l_sel: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn assemble(l_sum: f64, l_mat: f64, l_sim: f64, l_sel: f64, w: &LossWeights) -> Self {
        LossBreakdown { l_sum, l_mat, l_sim, l_sel, total: l_sum + w.lambda * l_mat + w.gamma * (l_sim + l_sel) }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_sum, self.l_mat, self.l_sim, self.l_sel, self.total].iter().all(|v| v.is_finite())
    }
}

fn check_scores(scores: &[f64]) -> Result<(), LossError> {
    if scores.is_empty() {
        return Err(LossError::EmptyScores);
    }
    for (index, &value) in scores.iter().enumerate() {
        if !(value >= 0.0 && value <= 1.0 + SCORE_TOLERANCE) {
            return Err(LossError::ScoreOutOfRange { index, value });
        }
    }
    Ok(())
}

pub fn loss_mat(
    ref_faq: &[Token],
    matched_faq: &[Token],
    encoder: &Encoder,
    idf: &TfidfModel,
) -> Result<f64, LossError> {
    let s = crate::similarity::sim(ref_faq, matched_faq, encoder, idf)?;
    Ok(1.0 - s.relu().0.min(1.0))
}

pub fn loss_sim(scores: &[f64]) -> Result<f64, LossError> {
    check_scores(scores)?;
    Ok(scores.iter().map(|s| s * (1.0 - s)).sum())
}

pub fn loss_sel(scores: &[f64], n: usize) -> Result<f64, LossError> {
    check_scores(scores)?;
    let target = n.min(scores.len()) as f64;
    Ok((target - scores.iter().sum::<f64>()).abs())
}

/// Inputs shared by [`total_loss`] and [`loss_grad`].
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a, A: AsRef<[Token]>> {
    pub l_sum: f64,
    pub ref_faq: &'a [Token],
    pub matched_faq: &'a [Token],
    pub answer_sentences: &'a [A],
    pub weights: LossWeights,
}

pub fn total_loss<A: AsRef<[Token]>>(
    inputs: &LossInputs<'_, A>,
    encoder: &Encoder,
    idf: &TfidfModel,
) -> Result<LossBreakdown, LossError> {
    evaluate(inputs, encoder, idf, false).map(|(b, _)| b)
}

/// Breakdown plus the gradient of `lambda * L_mat + gamma * (L_sim + L_sel)`
/// with respect to the encoder table.
pub fn loss_grad<A: AsRef<[Token]>>(
    inputs: &LossInputs<'_, A>,
    encoder: &Encoder,
    idf: &TfidfModel,
) -> Result<(LossBreakdown, RowGradient), LossError> {
    evaluate(inputs, encoder, idf, true)
}

fn evaluate<A: AsRef<[Token]>>(
    inputs: &LossInputs<'_, A>,
    encoder: &Encoder,
    idf: &TfidfModel,
    want_grad: bool,
) -> Result<(LossBreakdown, RowGradient), LossError> {
    let w = inputs.weights;
    w.validate()?;
    if !(inputs.l_sum >= 0.0 && inputs.l_sum.is_finite()) {
        return Err(LossError::InvalidExternalLoss(inputs.l_sum));
    }
    if inputs.answer_sentences.is_empty() {
        return Err(LossError::EmptyScores);
    }
    let ctx = QueryContext::new(encoder, idf, inputs.ref_faq)?;
    if inputs.matched_faq.is_empty() {
        return Err(SimilarityError::EmptyCandidate.into());
    }
    let matched_enc = EncodedText::new(encoder, inputs.matched_faq);
    let matched = ctx.matches(&matched_enc)?;
    let l_mat = 1.0 - matched.value.clamp(0.0, 1.0);

    let scores: Vec<f64> = sentence_scores(&ctx, encoder, inputs.answer_sentences).into_iter().map(|s| s.0).collect();
    let l_sim = loss_sim(&scores)?;
    let l_sel = loss_sel(&scores, w.n_select)?;
    let breakdown = LossBreakdown::assemble(inputs.l_sum, l_mat, l_sim, l_sel, &w);

    let mut grad = RowGradient::new(encoder.dim());
    if !want_grad {
        return Ok((breakdown, grad));
    }
    if matched.value > 0.0 {
        ctx.backward(encoder, &matched_enc, &matched, -w.lambda, &mut grad);
    }
    let target = w.n_select.min(scores.len()) as f64;
    let excess = scores.iter().sum::<f64>() - target;
    let sel_slope = if excess > 0.0 {
        1.0
    } else if excess < 0.0 {
        -1.0
    } else {
        0.0
    };
    for (sentence, &s) in inputs.answer_sentences.iter().zip(&scores) {
        // S = relu(sim) is flat for sim <= 0, which also covers token-less
        // sentences scored 0.
        if s <= 0.0 {
            continue;
        }
        let upstream = w.gamma * ((1.0 - 2.0 * s) + sel_slope);
        let enc = EncodedText::new(encoder, sentence.as_ref());
        let m = ctx.matches(&enc)?;
        ctx.backward(encoder, &enc, &m, upstream, &mut grad);
    }
    Ok((breakdown, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    #[test]
    fn loss_sim_examples() {
        assert_eq!(loss_sim(&[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(loss_sim(&[0.5]).unwrap(), 0.25);
        assert!((loss_sim(&[0.2, 0.9]).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn loss_sel_examples() {
        assert_eq!(loss_sel(&[1.0, 1.0, 1.0, 0.0], 3).unwrap(), 0.0);
        assert_eq!(loss_sel(&[1.0, 0.0, 0.0, 0.0], 3).unwrap(), 2.0);
        assert_eq!(loss_sel(&[1.0, 1.0], 3).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_scores_rejected() {
        assert_eq!(loss_sim(&[0.5, 1.2]), Err(LossError::ScoreOutOfRange { index: 1, value: 1.2 }));
        assert!(matches!(loss_sel(&[-0.1], 3), Err(LossError::ScoreOutOfRange { index: 0, .. })));
        assert!(matches!(loss_sim(&[f64::NAN]), Err(LossError::ScoreOutOfRange { .. })));
        assert_eq!(loss_sim(&[]), Err(LossError::EmptyScores));
    }

    fn toy() -> (Encoder, TfidfModel) {
        let enc = Encoder::from_rows(
            &[
                ("fever", vec![1.0, 0.0, 0.0]),
                ("child", vec![0.0, 1.0, 0.0]),
                ("rash", vec![0.0, 0.0, 1.0]),
                ("down", vec![-1.0, 0.0, 0.0]),
            ],
            3,
            0.0,
        )
        .unwrap();
        let idf = TfidfModel::fit(&[tokenize("fever child rash down")], 1).unwrap();
        (enc, idf)
    }

    #[test]
    fn loss_mat_examples() {
        let (enc, idf) = toy();
        assert!(loss_mat(&tokenize("fever child"), &tokenize("fever child"), &enc, &idf).unwrap().abs() < 1e-12);
        assert_eq!(loss_mat(&tokenize("fever"), &tokenize("child"), &enc, &idf).unwrap(), 1.0);
        assert_eq!(loss_mat(&tokenize("fever"), &tokenize("down"), &enc, &idf).unwrap(), 1.0);
    }

    #[test]
    fn total_at_minimum_is_zero() {
        let (enc, idf) = toy();
        let answers = [tokenize("fever"), tokenize("child"), tokenize("fever child"), tokenize("rash")];
        let ref_faq = tokenize("fever");
        // S = [1, 0, 1, 0], so the selection target is met with n = 2
        let inputs = LossInputs {
            l_sum: 0.0,
            ref_faq: &ref_faq,
            matched_faq: &ref_faq,
            answer_sentences: &answers,
            weights: LossWeights { n_select: 2, ..LossWeights::default() },
        };
        let b = total_loss(&inputs, &enc, &idf).unwrap();
        assert!(b.total.abs() < 1e-12, "{b:?}");
        let (_, g) = loss_grad(&inputs, &enc, &idf).unwrap();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn weights_and_validation() {
        let w = LossWeights::default();
        assert_eq!((w.lambda, w.gamma, w.n_select), (0.01, 0.01, 3));
        assert!(LossWeights { n_select: 0, ..w }.validate().is_err());
        assert!(LossWeights { gamma: -1.0, ..w }.validate().is_err());
        let (enc, idf) = toy();
        let t = tokenize("fever");
        let answers = [tokenize("rash")];
        let inputs = LossInputs { l_sum: -1.0, ref_faq: &t, matched_faq: &t, answer_sentences: &answers, weights: w };
        assert!(matches!(total_loss(&inputs, &enc, &idf), Err(LossError::InvalidExternalLoss(_))));
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let enc = Encoder::init(4, 5, ["a", "b", "c", "d"], 0.3).unwrap();
        let idf = TfidfModel::fit(&[tokenize("a b"), tokenize("c d")], 1).unwrap();
        let (r, m) = (tokenize("a b c"), tokenize("b d"));
        let answers = [tokenize("a c"), tokenize("d b a")];
        let w = LossWeights { lambda: 0.0, gamma: 0.0, n_select: 3 };
        let inputs = LossInputs { l_sum: 0.7, ref_faq: &r, matched_faq: &m, answer_sentences: &answers, weights: w };
        let (b, g) = loss_grad(&inputs, &enc, &idf).unwrap();
        assert_eq!(g.norm(), 0.0);
        assert_eq!(b.total, 0.7);
    }

    #[test]
    fn doubling_gamma_doubles_its_contribution() {
        let enc = Encoder::init(9, 4, ["a", "b", "c", "d"], 0.0).unwrap();
        let idf = TfidfModel::fit(&[tokenize("a b"), tokenize("c d")], 1).unwrap();
        let (r, m) = (tokenize("a b"), tokenize("c d"));
        let answers = [tokenize("a c"), tokenize("d")];
        let w = LossWeights { lambda: 0.3, gamma: 0.2, n_select: 1 };
        let base = LossInputs { l_sum: 0.0, ref_faq: &r, matched_faq: &m, answer_sentences: &answers, weights: w };
        let b1 = total_loss(&base, &enc, &idf).unwrap();
        let b2 = total_loss(&LossInputs { weights: LossWeights { gamma: 0.4, ..w }, ..base }, &enc, &idf).unwrap();
        let c1 = b1.total - 0.3 * b1.l_mat;
        let c2 = b2.total - 0.3 * b2.l_mat;
        assert!((c2 - 2.0 * c1).abs() < 1e-12);
    }
}
