//! Lightweight trainable token encoder.
//!
//! Each vocabulary word owns one row of an embedding table. A token's
//! contextual vector mixes its own row with the mean of its immediate
//! neighbours:
//!
//! ```text
//! x_i = (1 - alpha) * T[tok_i] + alpha * mean(T[tok_{i-1}], T[tok_{i+1}])
//! ```
//!
//! Missing neighbours are dropped from the mean, so a single token always
//! encodes to its own row. The map is linear in the table, which keeps the
//! similarity gradients hand-derivable (see [`Encoder::backprop`]).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{self, BufRead};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::text::Token;

/// Reserved word for the shared out-of-vocabulary row. `tokenize` can never
/// produce it.
pub const UNK_TOKEN: &str = "<unk>";
/// Row index of [`UNK_TOKEN`].
pub const UNK_ROW: usize = 0;
/// Half-width of the uniform initialisation interval.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("embedding dimension must be at least 2, got {0}")]
    InvalidDimension(usize),
    #[error("context alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("header declares dimension {declared}, which is unusable (need >= 2)")]
    DimensionMismatch { declared: usize },
    #[error("header declares {declared} vectors but the file holds {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("table has non-finite entry in row {row}")]
    NonFinite { row: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Trainable encoder parameters: one row per word plus the UNK row.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    dim: usize,
    context_alpha: f64,
    words: Vec<String>,
    index: HashMap<String, usize>,
    table: Vec<f64>,
}

/// Alias matching the parameter view used by the loss code.
pub type EncoderParams = Encoder;

/// One vector per input token, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    dim: usize,
    data: Vec<f64>,
}

impl TokenEmbeddings {
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

fn check_shape(dim: usize, alpha: f64) -> Result<(), EncoderError> {
    if dim < 2 {
        return Err(EncoderError::InvalidDimension(dim));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(EncoderError::InvalidAlpha(alpha));
    }
    Ok(())
}

fn vocabulary<I, S>(words: I) -> (Vec<String>, HashMap<String, usize>)
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut list = vec![UNK_TOKEN.to_string()];
    let mut index = HashMap::from([(UNK_TOKEN.to_string(), UNK_ROW)]);
    for w in words {
        let w = w.as_ref();
        if !index.contains_key(w) {
            index.insert(w.to_string(), list.len());
            list.push(w.to_string());
        }
    }
    (list, index)
}

impl Encoder {
    /// Random table drawn i.i.d. from `U[-0.1, 0.1]` with a seeded ChaCha8
    /// generator. Duplicate words are collapsed; the UNK row is row 0 and is
    /// initialised like any other row.
    pub fn init<I, S>(seed: u64, dim: usize, vocab: I, context_alpha: f64) -> Result<Self, EncoderError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        check_shape(dim, context_alpha)?;
        let (words, index) = vocabulary(vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..words.len() * dim).map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)).collect();
        Ok(Encoder { dim, context_alpha, words, index, table })
    }

    /// Builds an encoder from explicit rows. The UNK row is zero unless
    /// `rows` contains an entry for [`UNK_TOKEN`].
    pub fn from_rows<S: AsRef<str>>(
        rows: &[(S, Vec<f64>)],
        dim: usize,
        context_alpha: f64,
    ) -> Result<Self, EncoderError> {
        check_shape(dim, context_alpha)?;
        let (words, index) = vocabulary(rows.iter().map(|(w, _)| w.as_ref()));
        let mut table = vec![0.0; words.len() * dim];
        for (line, (w, v)) in rows.iter().enumerate() {
            if v.len() != dim {
                return Err(EncoderError::MalformedLine {
                    line: line + 1,
                    reason: format!("expected {dim} values, found {}", v.len()),
                });
            }
            let r = index[w.as_ref()];
            table[r * dim..(r + 1) * dim].copy_from_slice(v);
        }
        let enc = Encoder { dim, context_alpha, words, index, table };
        enc.check_finite()?;
        Ok(enc)
    }

    fn check_finite(&self) -> Result<(), EncoderError> {
        match self.table.iter().position(|v| !v.is_finite()) {
            Some(pos) => Err(EncoderError::NonFinite { row: pos / self.dim }),
            None => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn context_alpha(&self) -> f64 {
        self.context_alpha
    }

    pub fn set_context_alpha(&mut self, alpha: f64) -> Result<(), EncoderError> {
        check_shape(self.dim, alpha)?;
        self.context_alpha = alpha;
        Ok(())
    }

    /// Number of rows, UNK included.
    pub fn n_rows(&self) -> usize {
        self.words.len()
    }

    /// Vocabulary size, excluding UNK.
    pub fn vocab_len(&self) -> usize {
        self.words.len() - 1
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        word != UNK_TOKEN && self.index.contains_key(word)
    }

    pub fn row_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ROW)
    }

    pub fn rows_for(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().map(|t| self.row_of(t.as_str())).collect()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.table[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.table[r * self.dim..(r + 1) * self.dim]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    /// Multiplies every table entry by `c`.
    pub fn scale(&mut self, c: f64) {
        self.table.iter_mut().for_each(|v| *v *= c);
    }

    /// `table -= lr * grad`.
    pub fn apply_gradient(&mut self, grad: &RowGradient, lr: f64) {
        for (&r, g) in &grad.rows {
            for (t, gv) in self.row_mut(r).iter_mut().zip(g) {
                *t -= lr * gv;
            }
        }
    }

    pub fn encode(&self, tokens: &[Token]) -> TokenEmbeddings {
        self.encode_rows(&self.rows_for(tokens))
    }

    pub fn encode_rows(&self, rows: &[usize]) -> TokenEmbeddings {
        let d = self.dim;
        let a = self.context_alpha;
        let n = rows.len();
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let out = &mut data[i * d..(i + 1) * d];
            let own = self.row(rows[i]);
            let neighbours = neighbours(i, n);
            if neighbours.is_empty() || a == 0.0 {
                out.copy_from_slice(own);
                continue;
            }
            let share = a / neighbours.len() as f64;
            for k in 0..d {
                out[k] = (1.0 - a) * own[k];
            }
            for &j in &neighbours {
                for (o, v) in out.iter_mut().zip(self.row(rows[j])) {
                    *o += share * v;
                }
            }
        }
        TokenEmbeddings { dim: d, data }
    }

    /// Transposes the encode map: given `d loss / d x_i` for every position,
    /// accumulates `d loss / d T[row]` into `out`.
    pub fn backprop(&self, rows: &[usize], position_grads: &[f64], out: &mut RowGradient) {
        let d = self.dim;
        let a = self.context_alpha;
        let n = rows.len();
        debug_assert_eq!(position_grads.len(), n * d);
        for i in 0..n {
            let g = &position_grads[i * d..(i + 1) * d];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let neighbours = neighbours(i, n);
            if neighbours.is_empty() || a == 0.0 {
                out.add_scaled(rows[i], 1.0, g);
                continue;
            }
            out.add_scaled(rows[i], 1.0 - a, g);
            let share = a / neighbours.len() as f64;
            for &j in &neighbours {
                out.add_scaled(rows[j], share, g);
            }
        }
    }

    /// Writes the word-vector text format: a `<count> <dim> <alpha>` header,
    /// then one `<word> <v1> ... <vd>` line per row (UNK included).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {}", self.words.len(), self.dim, self.context_alpha);
        for (r, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for v in self.row(r) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Reads the word-vector text format. The header's third field (alpha)
    /// is optional and defaults to 0. Words missing from the file fall back
    /// to the UNK row, which is zero unless the file defines it.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, EncoderError> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line?,
            None => {
                return Err(EncoderError::MalformedLine { line: 1, reason: "missing header".into() })
            }
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(EncoderError::MalformedLine {
                line: 1,
                reason: "header must be '<count> <dim> [alpha]'".into(),
            });
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>().map_err(|e| EncoderError::MalformedLine { line: 1, reason: e.to_string() })
        };
        let declared = parse_usize(fields[0])?;
        let dim = parse_usize(fields[1])?;
        if dim < 2 {
            return Err(EncoderError::DimensionMismatch { declared: dim });
        }
        let alpha = match fields.get(2) {
            Some(s) => s
                .parse::<f64>()
                .map_err(|e| EncoderError::MalformedLine { line: 1, reason: e.to_string() })?,
            None => 0.0,
        };
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ').filter(|p| !p.is_empty());
            let word = parts.next().unwrap_or_default().to_string();
            let values = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| EncoderError::MalformedLine { line: line_no, reason: e.to_string() })?;
            if values.len() != dim {
                return Err(EncoderError::MalformedLine {
                    line: line_no,
                    reason: format!("expected {dim} values, found {}", values.len()),
                });
            }
            if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                return Err(EncoderError::MalformedLine {
                    line: line_no,
                    reason: format!("non-finite value {bad}"),
                });
            }
            if seen.insert(word.clone(), line_no).is_some() {
                return Err(EncoderError::MalformedLine {
                    line: line_no,
                    reason: format!("duplicate word '{word}'"),
                });
            }
            rows.push((word, values));
        }
        if rows.len() != declared {
            return Err(EncoderError::CountMismatch { declared, found: rows.len() });
        }
        Self::from_rows(&rows, dim, alpha)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(io::BufReader::new(file))
    }
}

/// Free-function form of [`Encoder::init`].
pub fn init_params<I, S>(seed: u64, dim: usize, vocab: I) -> Result<Encoder, EncoderError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    Encoder::init(seed, dim, vocab, 0.0)
}

/// Free-function form of [`Encoder::load`].
pub fn load_static_embeddings(path: impl AsRef<Path>) -> Result<Encoder, EncoderError> {
    Encoder::load(path)
}

fn neighbours(i: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2);
    if i > 0 {
        out.push(i - 1);
    }
    if i + 1 < n {
        out.push(i + 1);
    }
    out
}

/// Sparse gradient over table rows, keyed by row index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RowGradient {
    dim: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl RowGradient {
    pub fn new(dim: usize) -> Self {
        RowGradient { dim, rows: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add_scaled(&mut self, row: usize, scale: f64, g: &[f64]) {
        let dim = self.dim;
        let entry = self.rows.entry(row).or_insert_with(|| vec![0.0; dim]);
        for (e, v) in entry.iter_mut().zip(g) {
            *e += scale * v;
        }
    }

    /// `self += scale * other`.
    pub fn accumulate(&mut self, other: &RowGradient, scale: f64) {
        for (&r, g) in &other.rows {
            self.add_scaled(r, scale, g);
        }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        for g in self.rows.values_mut() {
            g.iter_mut().for_each(|v| *v *= c);
        }
        self
    }

    /// Gradient for `row`, or `None` when the row was never touched.
    pub fn row(&self, row: usize) -> Option<&[f64]> {
        self.rows.get(&row).map(Vec::as_slice)
    }

    /// Entry for `(row, col)`, zero when untouched.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.rows.get(&row).map_or(0.0, |g| g[col])
    }

    pub fn touched_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(&r, g)| (r, g.as_slice()))
    }

    pub fn norm(&self) -> f64 {
        self.rows.values().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().flatten().all(|v| v.is_finite())
    }

    /// Inner product with a full table laid out like [`Encoder::table`].
    pub fn dot_table(&self, table: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|(&r, g)| g.iter().zip(&table[r * self.dim..(r + 1) * self.dim]).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }
}
