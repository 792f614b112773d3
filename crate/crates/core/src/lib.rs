//! FAQ retrieval grounded in a knowledge base.
//!
//! A short query (a consumer question summary or a reference FAQ) is matched
//! to a knowledge-base question in two stages: a TF-IDF cosine prefilter,
//! then an IDF-weighted greedy token-alignment similarity over a small
//! contextual encoder. The matched FAQ's answer is reduced to the few
//! sentences most similar to the query.
//!
//! ```
//! use groundqa::{Encoder, IngestOptions, KnowledgeBase, RawRecord};
//!
//! let records = vec![
//!     RawRecord::new("f1", "What causes migraines?", "Triggers vary. Stress is common. So is poor sleep."),
//!     RawRecord::new("f2", "How is acne treated?", "Creams help. Antibiotics are used for severe cases."),
//! ];
//! let (kb, _) = KnowledgeBase::ingest(records, Vec::<String>::new(), &IngestOptions::default()).unwrap();
//! let encoder = Encoder::init(7, 16, kb.vocabulary(), 0.2).unwrap();
//! let answer = groundqa::answer(&kb, "how is acne treated", &encoder, 32, 1).unwrap();
//! assert_eq!(answer.matched.matched_id, "f2");
//! assert_eq!(answer.selection.selected.len(), 1);
//! ```

pub mod dataset;
pub mod encoder;
pub mod gradcheck;
pub mod kb;
pub mod losses;
pub mod pipeline;
pub mod rouge;
pub mod similarity;
pub mod text;
pub mod tfidf;

pub use encoder::{init_params, load_static_embeddings, Encoder, EncoderError, EncoderParams, RowGradient, TokenEmbeddings};
pub use kb::{FaqEntry, IngestOptions, IngestReport, KbError, KnowledgeBase, RawRecord};
pub use losses::{
    loss_grad, loss_sel, loss_sim, total_loss, train_encoder, LossBreakdown, LossError, LossInputs, LossWeights,
    TrainConfig, TrainingPair,
};
pub use pipeline::{answer, match_question, select_answers, Answer, Engine, PipelineError, DEFAULT_K, DEFAULT_N};
pub use rouge::{rouge_f1, RougeScores};
pub use similarity::{cos_sim, relu_sim, sim, sim_grad, RelevanceScore, SimScore, SimilarityError};
pub use text::{split_sentences, tokenize, Sentence, SentenceSplitter, Token};
pub use tfidf::{top_k, InvertedIndex, SparseVector, TfidfModel};

// The guide's code blocks run as doctests so the book cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/text.md")]
    mod text {}
    #[doc = include_str!("../../../book/src/knowledge-base.md")]
    mod knowledge_base {}
    #[doc = include_str!("../../../book/src/similarity.md")]
    mod similarity {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
