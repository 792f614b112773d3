//! Tokenization, normalization and rule-based sentence splitting.
//!
//! Every other module sees text only through [`tokenize`] and
//! [`SentenceSplitter`], so the TF-IDF statistics, the encoder vocabulary and
//! the ROUGE scorer all agree on what a word is.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, BufRead};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Abbreviations that never end a sentence unless configured otherwise.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "dr", "e.g", "i.e", "vs", "mr", "mrs", "ms", "etc", "prof", "st", "jr", "sr", "fig",
    "approx", "inc",
];

/// A single lowercased word. Never empty, never contains whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    /// Builds a token from a surface string, returning `None` if the string
    /// is empty or contains whitespace.
    pub fn new(surface: impl Into<String>) -> Option<Self> {
        let surface = surface.into();
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            None
        } else {
            Some(Token(surface))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Splits text into lowercase word tokens.
///
/// The input is NFC-normalized and lowercased; any character that is not
/// alphanumeric acts as a boundary and is dropped. Digits are kept.
///
/// ```
/// use groundqa::text::tokenize;
/// let words: Vec<String> = tokenize("COVID-19 risk").iter().map(|t| t.to_string()).collect();
/// assert_eq!(words, ["covid", "19", "risk"]);
/// ```
pub fn tokenize(text: &str) -> Vec<Token> {
    let normalized: String = text.nfc().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in normalized.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(Token(std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        tokens.push(Token(current));
    }
    tokens
}

/// Joins tokens with single spaces.
pub fn join_tokens(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_str());
    }
    out
}

/// A sentence and its tokens. `tokens` is always `tokenize(text)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    text: String,
    tokens: Vec<Token>,
}

impl Sentence {
    /// Returns `None` when `text` is blank.
    pub fn new(text: impl Into<String>) -> Option<Self> {
        let text = text.into();
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return None;
        }
        let text = if trimmed.len() == text.len() { text } else { trimmed.to_string() };
        let tokens = tokenize(&text);
        Some(Sentence { text, tokens })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }
}

impl AsRef<[Token]> for Sentence {
    fn as_ref(&self) -> &[Token] {
        &self.tokens
    }
}

/// Rule-based sentence boundary detector.
///
/// A boundary is a run of `.`, `!` or `?` followed either by the end of the
/// text or by whitespace and then an uppercase letter (closing quotes and
/// brackets directly after the terminator stay with the sentence). A period
/// closing a known abbreviation never splits.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: HashSet<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl SentenceSplitter {
    pub fn with_abbreviations<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let abbreviations = abbreviations
            .into_iter()
            .map(|a| a.as_ref().trim().trim_end_matches('.').to_lowercase())
            .filter(|a| !a.is_empty())
            .collect();
        SentenceSplitter { abbreviations }
    }

    /// Reads one abbreviation per line. Blank lines and lines starting with
    /// `#` are ignored.
    pub fn from_reader<R: BufRead>(reader: R) -> io::Result<Self> {
        let mut list = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            list.push(line.to_string());
        }
        Ok(Self::with_abbreviations(list))
    }

    pub fn from_file(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(io::BufReader::new(file))
    }

    pub fn is_abbreviation(&self, word: &str) -> bool {
        self.abbreviations.contains(word)
    }

    /// Byte ranges of each sentence, trimmed of surrounding whitespace.
    pub fn spans(&self, text: &str) -> Vec<(usize, usize)> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut spans = Vec::new();
        let mut start = 0usize;
        let mut i = 0usize;
        while i < chars.len() {
            let (_, ch) = chars[i];
            if !is_terminator(ch) {
                i += 1;
                continue;
            }
            let run_start = i;
            let mut j = i;
            while j < chars.len() && is_terminator(chars[j].1) {
                j += 1;
            }
            while j < chars.len() && is_closer(chars[j].1) {
                j += 1;
            }
            let end_byte = chars.get(j).map_or(text.len(), |c| c.0);
            let splits = if j == chars.len() {
                true
            } else if chars[j].1.is_whitespace() {
                let mut k = j;
                while k < chars.len() && chars[k].1.is_whitespace() {
                    k += 1;
                }
                k == chars.len() || starts_sentence(chars[k].1)
            } else {
                false
            };
            let guarded = chars[run_start].1 == '.'
                && j - run_start == 1 + count_closers(&chars[run_start + 1..j])
                && self.is_abbreviation(&preceding_word(text, chars[run_start].0));
            if splits && !guarded {
                push_span(text, start, end_byte, &mut spans);
                start = end_byte;
            }
            i = j.max(i + 1);
        }
        push_span(text, start, text.len(), &mut spans);
        spans
    }

    pub fn split(&self, text: &str) -> Vec<Sentence> {
        self.spans(text)
            .into_iter()
            .filter_map(|(s, e)| Sentence::new(&text[s..e]))
            .collect()
    }
}

/// Splits with the default abbreviation list.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    SentenceSplitter::default().split(text)
}

fn is_terminator(ch: char) -> bool {
    matches!(ch, '.' | '!' | '?')
}

fn is_closer(ch: char) -> bool {
    matches!(ch, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn count_closers(chars: &[(usize, char)]) -> usize {
    chars.iter().filter(|(_, c)| is_closer(*c)).count()
}

fn starts_sentence(ch: char) -> bool {
    ch.is_uppercase()
}

/// The lowercased word immediately before byte offset `end`, without leading
/// brackets or quotes.
fn preceding_word(text: &str, end: usize) -> String {
    let before = &text[..end];
    let start = before
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map_or(0, |(i, c)| i + c.len_utf8());
    before[start..]
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

fn push_span(text: &str, start: usize, end: usize, spans: &mut Vec<(usize, usize)>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if !trimmed.is_empty() {
        spans.push((start + lead, start + lead + trimmed.len()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(text: &str) -> Vec<String> {
        tokenize(text).into_iter().map(|t| t.0).collect()
    }

    fn texts(text: &str) -> Vec<String> {
        split_sentences(text).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(words("What causes Fabry disease?"), ["what", "causes", "fabry", "disease"]);
        assert!(words("").is_empty());
        assert_eq!(words("COVID-19 risk"), ["covid", "19", "risk"]);
        assert_eq!(words("  ...  "), Vec::<String>::new());
    }

    #[test]
    fn tokenize_normalizes_to_nfc() {
        // "e" + combining acute vs precomposed
        assert_eq!(words("Cafe\u{301}"), words("Caf\u{e9}"));
    }

    #[test]
    fn token_rejects_whitespace() {
        assert!(Token::new("a b").is_none());
        assert!(Token::new("").is_none());
        assert!(Token::new("ab").is_some());
    }

    #[test]
    fn split_examples() {
        assert_eq!(texts("It is rare. See a doctor."), ["It is rare.", "See a doctor."]);
        assert_eq!(texts("Ask Dr. Smith today."), ["Ask Dr. Smith today."]);
        assert_eq!(
            texts("What is GERD? It is reflux! Yes."),
            ["What is GERD?", "It is reflux!", "Yes."]
        );
    }

    #[test]
    fn split_edge_cases() {
        assert!(texts("").is_empty());
        assert!(texts("   ").is_empty());
        assert_eq!(texts("no terminator here"), ["no terminator here"]);
        assert_eq!(texts("A. B. C."), ["A.", "B.", "C."]);
        // lowercase continuation never splits
        assert_eq!(texts("take 5 mg. then rest."), ["take 5 mg. then rest."]);
        assert_eq!(texts("Use e.g. Tylenol daily."), ["Use e.g. Tylenol daily."]);
        assert_eq!(texts("Really?! Yes."), ["Really?!", "Yes."]);
        assert_eq!(texts("He said \"Stop.\" Then left."), ["He said \"Stop.\"", "Then left."]);
        assert_eq!(texts("Doses vary (see below). Ask first."), ["Doses vary (see below).", "Ask first."]);
    }

    #[test]
    fn custom_abbreviations_from_reader() {
        let splitter =
            SentenceSplitter::from_reader("# comment\nmg\n\nApprox.\n".as_bytes()).unwrap();
        assert!(splitter.is_abbreviation("approx"));
        assert!(!splitter.is_abbreviation("dr"));
        let s: Vec<_> = splitter.split("Take 5 mg. Then rest. Ask Dr. Who.").into_iter().map(|s| s.text).collect();
        assert_eq!(s, ["Take 5 mg. Then rest.", "Ask Dr.", "Who."]);
    }

    proptest! {
        #[test]
        fn tokenize_idempotent_on_join(text in "\\PC{0,60}") {
            let once = tokenize(&text);
            prop_assert_eq!(tokenize(&join_tokens(&once)), once.clone());
            prop_assert_eq!(tokenize(&text), once);
        }

        #[test]
        fn sentences_cover_all_tokens(text in "([A-Za-z]{1,6}[ .!?,]{1,3}){0,15}") {
            let joined = split_sentences(&text)
                .iter()
                .map(|s| s.text().to_string())
                .collect::<Vec<_>>()
                .join(" ");
            prop_assert_eq!(tokenize(&joined), tokenize(&text));
        }

        #[test]
        fn spans_partition_input(text in "\\PC{0,80}") {
            let splitter = SentenceSplitter::default();
            let spans = splitter.spans(&text);
            let mut last = 0;
            for &(s, e) in &spans {
                prop_assert!(s >= last && e > s);
                prop_assert!(text[last..s].trim().is_empty());
                prop_assert_eq!(text[s..e].trim(), &text[s..e]);
                last = e;
            }
            prop_assert!(text[last..].trim().is_empty());
            for sentence in splitter.split(&text) {
                prop_assert_eq!(sentence.tokens(), &tokenize(sentence.text())[..]);
            }
        }
    }
}
