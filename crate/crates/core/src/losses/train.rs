//! Plain SGD over the self-supervised objective.
//!
//! Each step matches the pair's reference FAQ against the knowledge base with
//! the current parameters, evaluates the losses on the matched FAQ and its
//! answer document, and moves the touched rows against the gradient.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{loss_grad, LossError, LossInputs, LossWeights};
use crate::encoder::Encoder;
use crate::kb::KnowledgeBase;
use crate::pipeline::{match_question, PipelineError};
use crate::text::Token;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training pairs")]
    NoPairs,
    #[error("pair '{pair_id}' has an empty reference FAQ")]
    EmptyReference { pair_id: String },
    #[error("non-finite loss on pair '{pair_id}'")]
    NonFiniteLoss { pair_id: String },
    #[error("learning rate must be finite and positive, got {0}")]
    InvalidLearningRate(f64),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// A consumer question with its reference FAQ. Only the reference FAQ drives
/// matching during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub id: String,
    pub chq: Vec<Token>,
    pub ref_faq: Vec<Token>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub k: usize,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, learning_rate: 0.05, k: 32, seed: 0, weights: LossWeights::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    /// 1-based.
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_mat: f64,
    pub mean_sim: f64,
    pub mean_sel: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: Encoder,
    pub log: Vec<EpochLoss>,
}

pub fn train_encoder(
    pairs: &[TrainingPair],
    kb: &KnowledgeBase,
    mut encoder: Encoder,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::NoPairs);
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(TrainError::InvalidLearningRate(config.learning_rate));
    }
    config.weights.validate()?;
    if let Some(p) = pairs.iter().find(|p| p.ref_faq.is_empty()) {
        return Err(TrainError::EmptyReference { pair_id: p.id.clone() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for &i in &order {
            let pair = &pairs[i];
            let matched = match_question(kb, &pair.ref_faq, &encoder, config.k)?;
            let entry = kb.entry(matched.matched_index);
            let inputs = LossInputs {
                l_sum: 0.0,
                ref_faq: &pair.ref_faq,
                matched_faq: entry.question.tokens(),
                answer_sentences: &entry.answer_sentences,
                weights: config.weights,
            };
            let (breakdown, grad) = loss_grad(&inputs, &encoder, kb.tfidf())?;
            if !breakdown.is_finite() || !grad.is_finite() {
                return Err(TrainError::NonFiniteLoss { pair_id: pair.id.clone() });
            }
            encoder.apply_gradient(&grad, config.learning_rate);
            sums[0] += breakdown.total;
            sums[1] += breakdown.l_mat;
            sums[2] += breakdown.l_sim;
            sums[3] += breakdown.l_sel;
        }
        let n = pairs.len() as f64;
        log.push(EpochLoss {
            epoch,
            mean_total: sums[0] / n,
            mean_mat: sums[1] / n,
            mean_sim: sums[2] / n,
            mean_sel: sums[3] / n,
        });
    }
    Ok(TrainOutcome { encoder, log })
}

/// Writes `epoch,mean_total,mean_mat,mean_sim,mean_sel` CSV.
pub fn write_loss_log<W: Write>(log: &[EpochLoss], mut out: W) -> io::Result<()> {
    writeln!(out, "epoch,mean_total,mean_mat,mean_sim,mean_sel")?;
    for e in log {
        writeln!(out, "{},{},{},{},{}", e.epoch, e.mean_total, e.mean_mat, e.mean_sim, e.mean_sel)?;
    }
    Ok(())
}
