//! Two-stage question matching followed by fixed-size answer selection.
//!
//! Stage one ranks every KB question by TF-IDF cosine and keeps the top `k`.
//! Stage two re-scores that pool with [`sim`](crate::similarity) and keeps
//! the best FAQ. Its answer document is then scored sentence by sentence with
//! the ReLU-activated similarity; the `min(n, |A|)` best sentences are
//! returned in document order.

use std::time::Instant;

use thiserror::Error;

use crate::encoder::Encoder;
use crate::kb::KnowledgeBase;
use crate::similarity::{EncodedText, QueryContext, RelevanceScore, SimScore, SimilarityError};
use crate::text::{tokenize, Sentence, Token};
use crate::tfidf::TfidfModel;

pub const DEFAULT_K: usize = 32;
pub const DEFAULT_N: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error("answer document has no sentences")]
    EmptyAnswerDoc,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("n must be at least 1")]
    InvalidN,
}

impl From<SimilarityError> for PipelineError {
    fn from(e: SimilarityError) -> Self {
        match e {
            SimilarityError::EmptyQuery => PipelineError::EmptyQuery,
            // KB questions are validated non-empty at ingestion and load
            SimilarityError::EmptyCandidate => PipelineError::EmptyKnowledgeBase,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub id: String,
    pub tfidf_score: f64,
    pub sim_score: SimScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub matched_index: usize,
    pub matched_id: String,
    pub matched_score: SimScore,
    /// The TF-IDF pool in lexical rank order.
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedSentence {
    pub index: usize,
    pub text: String,
    pub score: RelevanceScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerSelection {
    /// In document order.
    pub selected: Vec<SelectedSentence>,
    pub all_scores: Vec<RelevanceScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTiming {
    pub match_ms: f64,
    pub select_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub matched: MatchResult,
    pub selection: AnswerSelection,
    pub timing: StageTiming,
}

/// Picks the candidate with the highest similarity, lowest KB index on ties.
fn best_candidate(candidates: &[Candidate]) -> &Candidate {
    let mut best = &candidates[0];
    for c in &candidates[1..] {
        if c.sim_score.0 > best.sim_score.0 || (c.sim_score.0 == best.sim_score.0 && c.index < best.index) {
            best = c;
        }
    }
    best
}

pub fn match_question(
    kb: &KnowledgeBase,
    query: &[Token],
    encoder: &Encoder,
    k: usize,
) -> Result<MatchResult, PipelineError> {
    if k == 0 {
        return Err(PipelineError::InvalidK);
    }
    if kb.is_empty() {
        return Err(PipelineError::EmptyKnowledgeBase);
    }
    if query.is_empty() {
        return Err(PipelineError::EmptyQuery);
    }
    let ctx = QueryContext::new(encoder, kb.tfidf(), query)?;
    let candidates = kb
        .lexical_top_k(query, k)
        .into_iter()
        .map(|(index, tfidf_score)| {
            let entry = kb.entry(index);
            let sim_score = ctx.sim_tokens(encoder, entry.question.tokens())?;
            Ok(Candidate { index, id: entry.id.clone(), tfidf_score, sim_score })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let best = best_candidate(&candidates);
    Ok(MatchResult {
        matched_index: best.index,
        matched_id: best.id.clone(),
        matched_score: best.sim_score,
        candidates,
    })
}

/// ReLU similarity of each sentence to the query. Sentences without any
/// word token score 0.
pub fn sentence_scores<S: AsRef<[Token]>>(
    ctx: &QueryContext,
    encoder: &Encoder,
    sentences: &[S],
) -> Vec<RelevanceScore> {
    sentences
        .iter()
        .map(|s| {
            let tokens = s.as_ref();
            if tokens.is_empty() {
                RelevanceScore(0.0)
            } else {
                ctx.sim(&EncodedText::new(encoder, tokens)).map_or(RelevanceScore(0.0), SimScore::relu)
            }
        })
        .collect()
}

/// Indices of the `min(n, len)` highest scores (earlier index wins ties),
/// returned in ascending order.
pub fn top_n_in_document_order(scores: &[RelevanceScore], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].0.total_cmp(&scores[a].0).then(a.cmp(&b)));
    order.truncate(n.min(scores.len()));
    order.sort_unstable();
    order
}

pub fn select_answers(
    answer_doc: &[Sentence],
    query: &[Token],
    encoder: &Encoder,
    idf: &TfidfModel,
    n: usize,
) -> Result<AnswerSelection, PipelineError> {
    if n == 0 {
        return Err(PipelineError::InvalidN);
    }
    if answer_doc.is_empty() {
        return Err(PipelineError::EmptyAnswerDoc);
    }
    let ctx = QueryContext::new(encoder, idf, query)?;
    let all_scores = sentence_scores(&ctx, encoder, answer_doc);
    let selected = top_n_in_document_order(&all_scores, n)
        .into_iter()
        .map(|i| SelectedSentence { index: i, text: answer_doc[i].text().to_string(), score: all_scores[i] })
        .collect();
    Ok(AnswerSelection { selected, all_scores })
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

pub fn answer(
    kb: &KnowledgeBase,
    query_text: &str,
    encoder: &Encoder,
    k: usize,
    n: usize,
) -> Result<Answer, PipelineError> {
    let start = Instant::now();
    let tokens = tokenize(query_text);
    let matched = match_question(kb, &tokens, encoder, k)?;
    let match_ms = elapsed_ms(start);
    let select_start = Instant::now();
    let doc = &kb.entry(matched.matched_index).answer_sentences;
    let selection = select_answers(doc, &tokens, encoder, kb.tfidf(), n)?;
    let select_ms = elapsed_ms(select_start);
    Ok(Answer { matched, selection, timing: StageTiming { match_ms, select_ms, total_ms: elapsed_ms(start) } })
}

/// A loaded knowledge base and frozen encoder.
#[derive(Debug, Clone)]
pub struct Engine {
    pub kb: KnowledgeBase,
    pub encoder: Encoder,
}

impl Engine {
    pub fn new(kb: KnowledgeBase, encoder: Encoder) -> Self {
        Engine { kb, encoder }
    }

    pub fn answer(&self, query_text: &str, k: usize, n: usize) -> Result<Answer, PipelineError> {
        answer(&self.kb, query_text, &self.encoder, k, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{IngestOptions, RawRecord};

    fn kb_of(items: &[(&str, &str)]) -> KnowledgeBase {
        let records = items.iter().enumerate().map(|(i, (q, a))| RawRecord {
            id: format!("faq{i}"),
            question: q.to_string(),
            answer: Some(a.to_string()),
            answer_sentences: None,
            source: None,
        });
        KnowledgeBase::ingest(records, Vec::<String>::new(), &IngestOptions::default()).unwrap().0
    }

    fn encoder_for(kb: &KnowledgeBase, seed: u64) -> Encoder {
        let mut words: Vec<String> = Vec::new();
        for e in kb.entries() {
            words.extend(e.question.tokens().iter().map(|t| t.to_string()));
            for s in &e.answer_sentences {
                words.extend(s.tokens().iter().map(|t| t.to_string()));
            }
        }
        Encoder::init(seed, 8, words, 0.2).unwrap()
    }

    #[test]
    fn verbatim_question_wins() {
        let kb = kb_of(&[
            ("What causes Fabry disease?", "Mutations in GLA. It is inherited."),
            ("What are the symptoms of GERD?", "Heartburn. Regurgitation."),
            ("How is migraine treated?", "Rest helps. Drugs help too."),
        ]);
        let enc = encoder_for(&kb, 1);
        let m = match_question(&kb, &tokenize("How is migraine treated?"), &enc, 32).unwrap();
        assert_eq!(m.matched_id, "faq2");
        assert!((m.matched_score.0 - 1.0).abs() < 1e-12);
        assert_eq!(m.candidates.len(), 3);
    }

    #[test]
    fn single_entry_always_matches() {
        let kb = kb_of(&[("Is it contagious?", "No.")]);
        let enc = encoder_for(&kb, 2);
        for q in ["completely unrelated words", "zzz"] {
            let a = answer(&kb, q, &enc, 32, 3).unwrap();
            assert_eq!(a.matched.matched_id, "faq0");
            assert_eq!(a.selection.selected.len(), 1);
            assert_eq!(a.selection.selected[0].text, "No.");
        }
    }

    #[test]
    fn selection_clamps_and_breaks_ties_by_position() {
        let scores = [0.5, 0.5, 0.5, 0.5].map(RelevanceScore);
        assert_eq!(top_n_in_document_order(&scores, 3), [0, 1, 2]);
        let scores = [0.1, 0.9, 0.3, 0.9, 0.0].map(RelevanceScore);
        assert_eq!(top_n_in_document_order(&scores, 3), [1, 2, 3]);
        assert_eq!(top_n_in_document_order(&scores[..2], 3), [0, 1]);
    }

    #[test]
    fn two_sentence_document_returns_both() {
        let kb = kb_of(&[("What is acne?", "Acne is a skin condition. It is common.")]);
        let enc = encoder_for(&kb, 3);
        let doc = &kb.entry(0).answer_sentences;
        let sel = select_answers(doc, &tokenize("acne"), &enc, kb.tfidf(), 3).unwrap();
        assert_eq!(sel.selected.iter().map(|s| s.index).collect::<Vec<_>>(), [0, 1]);
        assert_eq!(sel.all_scores.len(), 2);
    }

    #[test]
    fn punctuation_only_sentence_scores_zero() {
        let kb = kb_of(&[("What is acne?", "Acne is common. ... It clears.")]);
        let enc = encoder_for(&kb, 4);
        let doc: Vec<Sentence> = ["Acne is common.", "...", "It clears."].iter().filter_map(|s| Sentence::new(*s)).collect();
        let sel = select_answers(&doc, &tokenize("acne common"), &enc, kb.tfidf(), 2).unwrap();
        assert_eq!(sel.all_scores[1].0, 0.0);
    }

    #[test]
    fn errors() {
        let kb = kb_of(&[("What is acne?", "It is common.")]);
        let enc = encoder_for(&kb, 5);
        assert_eq!(match_question(&kb, &[], &enc, 4).unwrap_err(), PipelineError::EmptyQuery);
        assert_eq!(match_question(&kb, &tokenize("acne"), &enc, 0).unwrap_err(), PipelineError::InvalidK);
        assert_eq!(answer(&kb, "?!", &enc, 4, 3).unwrap_err(), PipelineError::EmptyQuery);
        assert_eq!(
            select_answers(&[], &tokenize("acne"), &enc, kb.tfidf(), 3).unwrap_err(),
            PipelineError::EmptyAnswerDoc
        );
        let doc = &kb.entry(0).answer_sentences;
        assert_eq!(select_answers(doc, &tokenize("acne"), &enc, kb.tfidf(), 0).unwrap_err(), PipelineError::InvalidN);
    }
}
