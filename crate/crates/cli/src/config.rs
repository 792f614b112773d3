//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Values given on the
//! command line win over the file, which wins over built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use groundqa::{LossWeights, DEFAULT_K, DEFAULT_N};

use crate::CliError;

const KNOWN_KEYS: &[&str] = &[
    "k", "n", "lambda", "gamma", "ngram_max", "abbreviations", "index", "params", "seed", "epochs",
    "learning_rate", "dim", "alpha", "port", "host",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::validation(format!("config line {}: expected key = value", i + 1)))?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::validation(format!("config line {}: unknown key '{key}'", i + 1)));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse().map_err(|e| CliError::validation(format!("config key '{key}': {e}"))))
            .transpose()
    }

    /// `flag`, else the file's `key`, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn pick_path(&self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>, CliError> {
        Ok(flag.or(self.get::<PathBuf>(key)?))
    }
}

/// Hyperparameters shared by the query, serve and train commands.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub k: usize,
    pub n: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub ngram_max: u8,
    pub abbreviations: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub params: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        EngineConfig {
            k: DEFAULT_K,
            n: DEFAULT_N,
            lambda: w.lambda,
            gamma: w.gamma,
            ngram_max: 2,
            abbreviations: None,
            index: None,
            params: None,
        }
    }
}

/// Command-line overrides; `None` defers to the file.
#[derive(Debug, Clone, Default)]
pub struct EngineFlags {
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub ngram_max: Option<u8>,
    pub abbreviations: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub params: Option<PathBuf>,
}

impl EngineConfig {
    pub fn resolve(flags: EngineFlags, file: &ConfigFile) -> Result<Self, CliError> {
        let d = EngineConfig::default();
        let cfg = EngineConfig {
            k: file.pick(flags.k, "k", d.k)?,
            n: file.pick(flags.n, "n", d.n)?,
            lambda: file.pick(flags.lambda, "lambda", d.lambda)?,
            gamma: file.pick(flags.gamma, "gamma", d.gamma)?,
            ngram_max: file.pick(flags.ngram_max, "ngram_max", d.ngram_max)?,
            abbreviations: file.pick_path(flags.abbreviations, "abbreviations")?,
            index: file.pick_path(flags.index, "index")?,
            params: file.pick_path(flags.params, "params")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.k == 0 {
            return Err(CliError::validation("k must be at least 1"));
        }
        if self.n == 0 {
            return Err(CliError::validation("n must be at least 1"));
        }
        self.weights().validate().map_err(|e| CliError::validation(e.to_string()))?;
        if !(1..=2).contains(&self.ngram_max) {
            return Err(CliError::validation("ngram_max must be 1 or 2"));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda: self.lambda, gamma: self.gamma, n_select: self.n }
    }

    pub fn index_path(&self) -> Result<&Path, CliError> {
        self.index.as_deref().ok_or_else(|| CliError::validation("no index path given (--index or config 'index')"))
    }

    pub fn params_path(&self) -> Result<&Path, CliError> {
        self.params.as_deref().ok_or_else(|| CliError::validation("no params path given (--params or config 'params')"))
    }
}
