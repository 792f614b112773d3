//! FAQ knowledge base: ingestion from JSONL, validation and persistence.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{tokenize, Sentence, SentenceSplitter, Token};
use crate::tfidf::{InvertedIndex, SparseVector, TfidfError, TfidfFile, TfidfModel};

pub const KB_FORMAT: &str = "groundqa-kb";
pub const KB_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("duplicate record id '{id}'")]
    DuplicateId { id: String },
    #[error("record '{id}' has an empty answer")]
    EmptyAnswer { id: String },
    #[error("record '{id}' has an empty question")]
    EmptyQuestion { id: String },
    #[error("no valid records to build a knowledge base from")]
    NoEntries,
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("corrupt knowledge base file: {0}")]
    CorruptFile(String),
    #[error("knowledge base file has version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Tfidf(#[from] TfidfError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One JSONL input record. Either `answer` (split into sentences during
/// ingestion) or `answer_sentences` (taken as-is) must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_sentences: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl RawRecord {
    pub fn new(id: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        RawRecord { id: id.into(), question: question.into(), answer: Some(answer.into()), answer_sentences: None, source: None }
    }
}

/// A reference-FAQ line used only to widen the TF-IDF fit. Accepts the
/// dataset-prep output shape; lines carrying a `split` other than `train`
/// are ignored.
#[derive(Debug, Clone, Deserialize)]
struct ReferenceLine {
    #[serde(default)]
    ref_faq: Option<String>,
    #[serde(default)]
    question: Option<String>,
    #[serde(default)]
    split: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaqEntry {
    pub id: String,
    pub question: Sentence,
    pub answer_sentences: Vec<Sentence>,
    pub source: Option<String>,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub splitter: SentenceSplitter,
    pub ngram_max: u8,
    /// Turn skipped records (empty question or answer) into hard errors.
    pub strict: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { splitter: SentenceSplitter::default(), ngram_max: 2, strict: false }
    }
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<KbError>,
    pub reference_faqs: usize,
    pub total_sentences: usize,
}

impl IngestReport {
    pub fn mean_sentences(&self) -> f64 {
        if self.accepted == 0 {
            0.0
        } else {
            self.total_sentences as f64 / self.accepted as f64
        }
    }
}

/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    entries: Vec<FaqEntry>,
    tfidf: TfidfModel,
    question_vectors: Vec<SparseVector>,
    index: InvertedIndex,
}

#[derive(Serialize, Deserialize)]
struct KbFile {
    format: String,
    version: u32,
    tfidf: TfidfFile,
    entries: Vec<EntryFile>,
}

#[derive(Deserialize)]
struct KbHeader {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct EntryFile {
    id: String,
    question: String,
    answer_sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

fn to_entry(record: RawRecord, splitter: &SentenceSplitter) -> Result<FaqEntry, KbError> {
    let question = match Sentence::new(record.question) {
        Some(q) if !q.tokens().is_empty() => q,
        _ => return Err(KbError::EmptyQuestion { id: record.id }),
    };
    let answer_sentences: Vec<Sentence> = match (record.answer_sentences, record.answer) {
        (Some(list), _) => list.into_iter().filter_map(Sentence::new).collect(),
        (None, Some(text)) => splitter.split(&text),
        (None, None) => Vec::new(),
    };
    if answer_sentences.is_empty() {
        return Err(KbError::EmptyAnswer { id: record.id });
    }
    Ok(FaqEntry { id: record.id, question, answer_sentences, source: record.source })
}

/// Parses JSONL records, skipping blank lines. Line numbers are 1-based.
pub fn read_records<R: BufRead>(reader: R) -> impl Iterator<Item = Result<RawRecord, KbError>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(KbError::Io(e))),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(
            serde_json::from_str::<RawRecord>(&l)
                .map_err(|e| KbError::BadRecord { line: i + 1, message: e.to_string() }),
        ),
    })
}

/// Reads reference FAQ texts from JSONL (`ref_faq` or `question` field).
pub fn read_reference_faqs<R: BufRead>(reader: R) -> Result<Vec<String>, KbError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReferenceLine = serde_json::from_str(&line)
            .map_err(|e| KbError::BadRecord { line: i + 1, message: e.to_string() })?;
        if rec.split.as_deref().is_some_and(|s| s != "train") {
            continue;
        }
        match rec.ref_faq.or(rec.question) {
            Some(text) => out.push(text),
            None => {
                return Err(KbError::BadRecord {
                    line: i + 1,
                    message: "expected a 'ref_faq' or 'question' field".into(),
                })
            }
        }
    }
    Ok(out)
}

impl KnowledgeBase {
    /// Builds a knowledge base. Records with an empty question or answer are
    /// logged and skipped (or rejected when `options.strict`); duplicate ids
    /// always abort. The TF-IDF model is fitted on every accepted question
    /// plus `reference_faqs`.
    pub fn ingest<I, R, S>(
        records: I,
        reference_faqs: R,
        options: &IngestOptions,
    ) -> Result<(Self, IngestReport), KbError>
    where
        I: IntoIterator<Item = RawRecord>,
        R: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut report = IngestReport::default();
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for record in records {
            if !seen.insert(record.id.clone()) {
                return Err(KbError::DuplicateId { id: record.id });
            }
            match to_entry(record, &options.splitter) {
                Ok(entry) => {
                    report.total_sentences += entry.answer_sentences.len();
                    entries.push(entry);
                }
                Err(e) if options.strict => return Err(e),
                Err(e) => {
                    warn!("skipping record: {e}");
                    report.rejected.push(e);
                }
            }
        }
        let references: Vec<Vec<Token>> = reference_faqs
            .into_iter()
            .map(|t| tokenize(t.as_ref()))
            .filter(|t| !t.is_empty())
            .collect();
        report.accepted = entries.len();
        report.reference_faqs = references.len();
        let kb = Self::from_entries(entries, &references, options.ngram_max)?;
        Ok((kb, report))
    }

    /// Builds from already-validated entries.
    pub fn from_entries(
        entries: Vec<FaqEntry>,
        reference_faqs: &[Vec<Token>],
        ngram_max: u8,
    ) -> Result<Self, KbError> {
        if entries.is_empty() {
            return Err(KbError::NoEntries);
        }
        let corpus: Vec<&[Token]> = entries
            .iter()
            .map(|e| e.question.tokens())
            .chain(reference_faqs.iter().map(Vec::as_slice))
            .collect();
        let tfidf = TfidfModel::fit(&corpus, ngram_max)?;
        Ok(Self::with_model(entries, tfidf))
    }

    fn with_model(entries: Vec<FaqEntry>, tfidf: TfidfModel) -> Self {
        let question_vectors: Vec<SparseVector> =
            entries.iter().map(|e| tfidf.transform(e.question.tokens())).collect();
        let index = InvertedIndex::build(&question_vectors);
        KnowledgeBase { entries, tfidf, question_vectors, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FaqEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> &FaqEntry {
        &self.entries[index]
    }

    pub fn tfidf(&self) -> &TfidfModel {
        &self.tfidf
    }

    pub fn question_vectors(&self) -> &[SparseVector] {
        &self.question_vectors
    }

    pub fn total_sentences(&self) -> usize {
        self.entries.iter().map(|e| e.answer_sentences.len()).sum()
    }

    /// Distinct word tokens of all questions and answer sentences, in first
    /// occurrence order. A convenient vocabulary for a fresh encoder.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for e in &self.entries {
            let words = e.question.tokens().iter().chain(e.answer_sentences.iter().flat_map(|s| s.tokens()));
            for t in words {
                if seen.insert(t.as_str()) {
                    out.push(t.to_string());
                }
            }
        }
        out
    }

    /// First retrieval stage: TF-IDF top-k over KB questions as
    /// `(entry index, score)`, ties to the lower index.
    pub fn lexical_top_k(&self, query: &[Token], k: usize) -> Vec<(usize, f64)> {
        self.index.top_k(&self.tfidf.transform(query), k)
    }

    pub fn to_json(&self) -> String {
        let file = KbFile {
            format: KB_FORMAT.to_string(),
            version: KB_FORMAT_VERSION,
            tfidf: self.tfidf.to_file(),
            entries: self
                .entries
                .iter()
                .map(|e| EntryFile {
                    id: e.id.clone(),
                    question: e.question.text().to_string(),
                    answer_sentences: e.answer_sentences.iter().map(|s| s.text().to_string()).collect(),
                    source: e.source.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("knowledge base serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, KbError> {
        let header: KbHeader =
            serde_json::from_str(json).map_err(|e| KbError::CorruptFile(e.to_string()))?;
        if header.format != KB_FORMAT {
            return Err(KbError::CorruptFile(format!("unexpected format tag '{}'", header.format)));
        }
        if header.version != KB_FORMAT_VERSION {
            return Err(KbError::VersionMismatch { found: header.version, expected: KB_FORMAT_VERSION });
        }
        let file: KbFile = serde_json::from_str(json).map_err(|e| KbError::CorruptFile(e.to_string()))?;
        let tfidf = TfidfModel::from_file(file.tfidf).map_err(|e| match e {
            TfidfError::VersionMismatch { found, expected } => KbError::VersionMismatch { found, expected },
            other => KbError::CorruptFile(other.to_string()),
        })?;
        if file.entries.is_empty() {
            return Err(KbError::CorruptFile("no entries".into()));
        }
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(file.entries.len());
        for e in file.entries {
            if !seen.insert(e.id.clone()) {
                return Err(KbError::CorruptFile(format!("duplicate id '{}'", e.id)));
            }
            let sentence = |text: String| match Sentence::new(text.clone()) {
                Some(s) if s.text() == text => Ok(s),
                _ => Err(KbError::CorruptFile(format!("entry '{}' has an untrimmed or empty sentence", e.id))),
            };
            let question = sentence(e.question.clone())?;
            if question.tokens().is_empty() {
                return Err(KbError::CorruptFile(format!("entry '{}' has an empty question", e.id)));
            }
            let answer_sentences = e.answer_sentences.iter().cloned().map(sentence).collect::<Result<Vec<_>, _>>()?;
            if answer_sentences.is_empty() {
                return Err(KbError::CorruptFile(format!("entry '{}' has no answer sentences", e.id)));
            }
            entries.push(FaqEntry { id: e.id, question, answer_sentences, source: e.source });
        }
        Ok(Self::with_model(entries, tfidf))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KbError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, q: &str, a: &str) -> RawRecord {
        RawRecord { id: id.into(), question: q.into(), answer: Some(a.into()), answer_sentences: None, source: None }
    }

    fn three() -> Vec<RawRecord> {
        vec![
            rec("1", "What causes Fabry disease?", "Mutations cause it. It is inherited."),
            rec("2", "What are the symptoms of GERD?", "Heartburn is common. So is reflux! Ask Dr. Lee."),
            rec("3", "How is migraine treated?", "A. B. C."),
        ]
    }

    #[test]
    fn ingest_counts_and_splits() {
        let (kb, report) = KnowledgeBase::ingest(three(), Vec::<String>::new(), &IngestOptions::default()).unwrap();
        assert_eq!(kb.len(), 3);
        assert_eq!(kb.question_vectors().len(), 3);
        assert_eq!(kb.entry(2).answer_sentences.len(), 3);
        assert_eq!(kb.entry(1).answer_sentences.len(), 3);
        assert_eq!(report.total_sentences, 2 + 3 + 3);
        assert_eq!(kb.total_sentences(), report.total_sentences);
        assert_eq!(kb.tfidf().n_docs(), 3);
    }

    #[test]
    fn reference_faqs_widen_the_fit() {
        let refs = ["what causes fabry", "is gerd dangerous"];
        let (kb, report) = KnowledgeBase::ingest(three(), refs, &IngestOptions::default()).unwrap();
        assert_eq!(report.reference_faqs, 2);
        assert_eq!(kb.tfidf().n_docs(), 5);
        assert!(kb.tfidf().idf("dangerous").is_some());
    }

    #[test]
    fn presplit_sentences_are_kept() {
        let r = RawRecord {
            id: "x".into(),
            question: "What is it?".into(),
            answer: None,
            answer_sentences: Some(vec!["One. Two.".into(), "  ".into(), "Three".into()]),
            source: Some("nih".into()),
        };
        let (kb, _) = KnowledgeBase::ingest([r], Vec::<String>::new(), &IngestOptions::default()).unwrap();
        let texts: Vec<&str> = kb.entry(0).answer_sentences.iter().map(|s| s.text()).collect();
        assert_eq!(texts, ["One. Two.", "Three"]);
    }

    #[test]
    fn rejections_keep_order_and_name_ids() {
        let mut records = three();
        records.insert(1, rec("bad-q", "???", "Fine."));
        records.insert(2, rec("bad-a", "Is this ok?", "   "));
        let (kb, report) = KnowledgeBase::ingest(records.clone(), Vec::<String>::new(), &IngestOptions::default()).unwrap();
        let ids: Vec<&str> = kb.entries().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["1", "2", "3"]);
        assert!(matches!(&report.rejected[0], KbError::EmptyQuestion { id } if id == "bad-q"));
        assert!(matches!(&report.rejected[1], KbError::EmptyAnswer { id } if id == "bad-a"));

        let strict = IngestOptions { strict: true, ..Default::default() };
        let err = KnowledgeBase::ingest(records, Vec::<String>::new(), &strict).unwrap_err();
        assert!(matches!(err, KbError::EmptyQuestion { id } if id == "bad-q"));
    }

    #[test]
    fn duplicate_ids_abort() {
        let mut records = three();
        records.push(rec("2", "Another?", "Yes."));
        let err = KnowledgeBase::ingest(records, Vec::<String>::new(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, KbError::DuplicateId { ref id } if id == "2"));
        assert!(err.to_string().contains("'2'"));
    }

    #[test]
    fn empty_input_is_an_error() {
        let err = KnowledgeBase::ingest(Vec::new(), Vec::<String>::new(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, KbError::NoEntries));
    }

    #[test]
    fn jsonl_readers() {
        let text = "{\"id\":\"a\",\"question\":\"Q?\",\"answer\":\"A.\"}\n\n{\"id\":\"b\"}\n";
        let parsed: Vec<_> = read_records(text.as_bytes()).collect();
        assert_eq!(parsed.len(), 2);
        assert!(parsed[0].is_ok());
        assert!(matches!(parsed[1], Err(KbError::BadRecord { line: 3, .. })));

        let refs = "{\"ref_faq\":\"what is x\",\"split\":\"train\"}\n{\"ref_faq\":\"dev one\",\"split\":\"dev\"}\n{\"question\":\"plain\"}\n";
        assert_eq!(read_reference_faqs(refs.as_bytes()).unwrap(), ["what is x", "plain"]);
    }

    #[test]
    fn save_load_round_trip() {
        let (kb, _) = KnowledgeBase::ingest(three(), ["extra reference"], &IngestOptions::default()).unwrap();
        let json = kb.to_json();
        let back = KnowledgeBase::from_json(&json).unwrap();
        assert_eq!(back.to_json(), json);
        assert_eq!(back.entries(), kb.entries());
        for q in ["fabry disease", "gerd symptoms", "migraine", "what"] {
            let t = tokenize(q);
            assert_eq!(back.lexical_top_k(&t, 3), kb.lexical_top_k(&t, 3));
        }
    }

    #[test]
    fn load_errors() {
        let (kb, _) = KnowledgeBase::ingest(three(), Vec::<String>::new(), &IngestOptions::default()).unwrap();
        let json = kb.to_json();
        assert!(matches!(KnowledgeBase::from_json(&json[..json.len() / 2]), Err(KbError::CorruptFile(_))));
        let bumped = json.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            KnowledgeBase::from_json(&bumped),
            Err(KbError::VersionMismatch { found: 2, expected: 1 })
        ));
        assert!(matches!(KnowledgeBase::from_json("[]"), Err(KbError::CorruptFile(_))));
    }
}
