//! Finite-difference check of the analytic gradients.
//!
//! Each trial draws a small random encoder, IDF model and token lists, then
//! compares the analytic gradient of `sim` and of the weighted auxiliary
//! losses with central differences over every table row the trial touches.
//! The numeric side only calls the forward functions.
//!
//! The objective is piecewise smooth. Trials that land within `margin` of a
//! kink (an argmax near-tie, a ReLU or clamp boundary, the selection target,
//! or a near-zero vector) are skipped and replaced.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoder::{Encoder, RowGradient};
use crate::losses::{loss_grad, total_loss, LossError, LossInputs, LossWeights};
use crate::similarity::{sim, sim_grad, EncodedText, QueryContext, SimilarityError};
use crate::text::Token;
use crate::tfidf::TfidfModel;

const VOCAB: usize = 12;

#[derive(Debug, Error)]
pub enum GradcheckError {
    #[error("only {found} smooth configurations found in {attempts} attempts")]
    TooManyKinks { found: usize, attempts: usize },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub tol: f64,
    pub seed: u64,
    pub h: f64,
    pub margin: f64,
    pub weights: LossWeights,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { trials: 100, tol: 1e-4, seed: 0, h: 1e-5, margin: 1e-3, weights: LossWeights::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialResult {
    /// Index of the attempt that produced this trial.
    pub attempt: usize,
    pub sim_error: f64,
    pub loss_error: f64,
}

impl TrialResult {
    pub fn max_error(&self) -> f64 {
        self.sim_error.max(self.loss_error)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tol: f64,
    pub trials: Vec<TrialResult>,
    pub skipped_kinks: usize,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.trials.iter().map(TrialResult::max_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> usize {
        self.trials.iter().filter(|t| !(t.max_error() <= self.tol)).count()
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }
}

/// `|a - n| / max(|a|, |n|)`, or 0 when both vectors vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` with respect to every entry of `rows`,
/// flattened row by row.
pub fn numeric_gradient<F>(encoder: &Encoder, rows: &[usize], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&Encoder) -> f64,
{
    let mut probe = encoder.clone();
    let mut out = Vec::with_capacity(rows.len() * encoder.dim());
    for &r in rows {
        for k in 0..encoder.dim() {
            let orig = probe.row(r)[k];
            probe.row_mut(r)[k] = orig + h;
            let up = f(&probe);
            probe.row_mut(r)[k] = orig - h;
            let down = f(&probe);
            probe.row_mut(r)[k] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

fn flatten(grad: &RowGradient, rows: &[usize]) -> Vec<f64> {
    let d = grad.dim();
    rows.iter().flat_map(|&r| (0..d).map(move |k| grad.get(r, k))).collect()
}

/// One random configuration.
#[derive(Debug, Clone)]
pub struct Trial {
    pub encoder: Encoder,
    pub idf: TfidfModel,
    pub query: Vec<Token>,
    pub candidate: Vec<Token>,
    pub answers: Vec<Vec<Token>>,
}

fn word(i: usize) -> String {
    format!("w{i}")
}

fn token_list(rng: &mut ChaCha8Rng) -> Vec<Token> {
    // distinct words within a list; occasionally one unknown word
    let len = rng.gen_range(1..=6);
    let mut ids: Vec<usize> = (0..=VOCAB).collect();
    ids.shuffle(rng);
    ids.truncate(len);
    ids.iter()
        .map(|&i| Token::new(if i == VOCAB { "oov".to_string() } else { word(i) }).unwrap())
        .collect()
}

impl Trial {
    pub fn random(rng: &mut ChaCha8Rng) -> Trial {
        let dim = rng.gen_range(3..=8);
        let alpha = rng.gen_range(0.0..=0.8);
        let encoder = Encoder::init(rng.gen(), dim, (0..VOCAB).map(word), alpha).unwrap();
        let docs: Vec<Vec<Token>> = (0..6).map(|_| token_list(rng)).collect();
        let idf = TfidfModel::fit(&docs, 1).unwrap();
        let query = token_list(rng);
        let candidate = token_list(rng);
        let answers = (0..rng.gen_range(1..=5)).map(|_| token_list(rng)).collect();
        Trial { encoder, idf, query, candidate, answers }
    }

    fn rows(&self) -> Vec<usize> {
        let all = [&self.query, &self.candidate].into_iter().chain(&self.answers);
        let set: BTreeSet<usize> = all.flat_map(|t| self.encoder.rows_for(t)).collect();
        set.into_iter().collect()
    }

    fn inputs(&self, weights: LossWeights) -> LossInputs<'_, Vec<Token>> {
        LossInputs {
            l_sum: 0.0,
            ref_faq: &self.query,
            matched_faq: &self.candidate,
            answer_sentences: &self.answers,
            weights,
        }
    }

    /// True when the configuration sits within `margin` of a non-smooth
    /// point of either objective.
    pub fn near_kink(&self, weights: LossWeights, margin: f64) -> Result<bool, SimilarityError> {
        let ctx = QueryContext::new(&self.encoder, &self.idf, &self.query)?;
        let small_vector = |e: &EncodedText| e.vectors().iter().any(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt() < margin);
        if small_vector(ctx.encoded()) {
            return Ok(true);
        }
        let cand = EncodedText::new(&self.encoder, &self.candidate);
        let m = ctx.matches(&cand)?;
        if small_vector(&cand) || m.runner_up_gap < margin || m.value.abs() < margin || (1.0 - m.value).abs() < margin {
            return Ok(true);
        }
        let mut total = 0.0;
        for a in &self.answers {
            let enc = EncodedText::new(&self.encoder, a);
            let m = ctx.matches(&enc)?;
            if small_vector(&enc) || m.runner_up_gap < margin || m.value.abs() < margin {
                return Ok(true);
            }
            total += m.value.max(0.0);
        }
        let target = weights.n_select.min(self.answers.len()) as f64;
        Ok((total - target).abs() < margin)
    }

    pub fn check(&self, weights: LossWeights, h: f64) -> Result<(f64, f64), GradcheckError> {
        let rows = self.rows();
        let (_, g) = sim_grad(&self.query, &self.candidate, &self.encoder, &self.idf)?;
        let num = numeric_gradient(&self.encoder, &rows, h, |e| {
            sim(&self.query, &self.candidate, e, &self.idf).map_or(f64::NAN, |s| s.0)
        });
        let sim_error = relative_error(&flatten(&g, &rows), &num);

        let inputs = self.inputs(weights);
        let (_, g) = loss_grad(&inputs, &self.encoder, &self.idf)?;
        let num = numeric_gradient(&self.encoder, &rows, h, |e| {
            total_loss(&inputs, e, &self.idf).map_or(f64::NAN, |b| b.total)
        });
        let loss_error = relative_error(&flatten(&g, &rows), &num);
        Ok((sim_error, loss_error))
    }
}

pub fn run_gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport, GradcheckError> {
    config.weights.validate()?;
    let max_attempts = config.trials.saturating_mul(50).max(100);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trials = Vec::with_capacity(config.trials);
    let mut skipped = 0;
    let mut attempt = 0;
    while trials.len() < config.trials {
        if attempt == max_attempts {
            return Err(GradcheckError::TooManyKinks { found: trials.len(), attempts: attempt });
        }
        let trial = Trial::random(&mut rng);
        attempt += 1;
        if trial.near_kink(config.weights, config.margin)? {
            skipped += 1;
            continue;
        }
        let (sim_error, loss_error) = trial.check(config.weights, config.h)?;
        trials.push(TrialResult { attempt: attempt - 1, sim_error, loss_error });
    }
    Ok(GradcheckReport { tol: config.tol, trials, skipped_kinks: skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 1.0]) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn numeric_gradient_of_a_quadratic() {
        let enc = Encoder::from_rows(&[("a", vec![1.0, 2.0])], 2, 0.0).unwrap();
        let g = numeric_gradient(&enc, &[1], 1e-5, |e| e.row(1).iter().map(|x| x * x).sum());
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        assert_eq!(enc.row(1), &[1.0, 2.0]);
    }

    #[test]
    fn small_run_passes() {
        let report = run_gradcheck(&GradcheckConfig { trials: 20, seed: 11, ..Default::default() }).unwrap();
        assert_eq!(report.trials.len(), 20);
        assert!(report.passed(), "max error {}", report.max_error());
    }

    #[test]
    fn kink_detector_flags_ties() {
        // duplicate candidate rows with no context mixing tie exactly
        let encoder = Encoder::from_rows(&[("a", vec![1.0, 0.2, 0.0]), ("b", vec![0.3, 1.0, 0.1])], 3, 0.0).unwrap();
        let tok = |s: &str| Token::new(s).unwrap();
        let trial = Trial {
            idf: TfidfModel::fit(&[vec![tok("a"), tok("b")]], 1).unwrap(),
            encoder,
            query: vec![tok("a")],
            candidate: vec![tok("b"), tok("b")],
            answers: vec![vec![tok("b")]],
        };
        assert!(trial.near_kink(LossWeights::default(), 1e-3).unwrap());
    }
}
