//! Token vocabulary, embedding matrix and the two similarity measures used to
//! compare token vectors.
//!
//! Embedding files are plain text: one token per line followed by its vector
//! components, with an optional `count dim` header line.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};

/// Ordered set of unique, lowercased tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens in order. Tokens are lowercased and
    /// the first occurrence of each one wins.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary::default();
        for t in tokens {
            vocab.insert(&t.as_ref().to_lowercase());
        }
        vocab
    }

    /// Inserts an already-normalized token, returning false on duplicates.
    fn insert(&mut self, token: &str) -> bool {
        if self.index.contains_key(token) {
            return false;
        }
        self.index.insert(token.to_owned(), self.tokens.len() as u32);
        self.tokens.push(token.to_owned());
        true
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, ordinal: u32) -> &str {
        &self.tokens[ordinal as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// One finite vector per vocabulary token, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from rows; all rows must share one dimensionality and
    /// be finite.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimMismatch(dim, row.len()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    line: i + 1,
                    token: format!("#{i}"),
                });
            }
            data.extend(row);
        }
        Ok(EmbeddingMatrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, ordinal: u32) -> &[f64] {
        let start = ordinal as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Fails with the first zero-norm token when the metric cannot handle it.
    pub fn check_metric(&self, metric: Metric, vocab: &Vocabulary) -> Result<()> {
        if metric == Metric::Cosine {
            for i in 0..self.len() as u32 {
                if norm(self.row(i)) == 0.0 {
                    return Err(Error::ZeroNorm(vocab.token(i).to_owned()));
                }
            }
        }
        Ok(())
    }
}

/// Similarity measure between token vectors.
///
/// Euclidean distance correlates negatively with semantic closeness, cosine
/// similarity positively.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    /// Closeness in a form where larger always means semantically closer:
    /// negated distance for Euclidean, similarity for cosine.
    pub fn closeness(self, a: &[f64], b: &[f64]) -> Result<f64> {
        let d = distance(self, a, b)?;
        Ok(match self {
            Metric::Euclidean => -d,
            Metric::Cosine => d,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean distance or cosine similarity between two vectors.
pub fn distance(metric: Metric, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(a.len(), b.len()));
    }
    match metric {
        Metric::Euclidean => Ok(euclidean(a, b)),
        Metric::Cosine => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroNorm(String::from("<vector>")));
            }
            Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
        }
    }
}

/// Counters gathered while parsing an embedding file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub header_skipped: bool,
    pub duplicates_skipped: usize,
}

/// Result of [`load_embeddings`].
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub vocab: Vocabulary,
    pub matrix: EmbeddingMatrix,
    pub stats: LoadStats,
    /// SHA-256 of the raw file bytes.
    pub digest: String,
}

/// Loads a whitespace-separated embedding file, keeping at most `limit`
/// unique tokens in file order.
pub fn load_embeddings(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Embeddings> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Malformed {
        path: path.to_owned(),
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;
    let digest = sha256_hex(text.as_bytes());
    let (vocab, matrix, stats) = parse_embeddings(&text, limit)?;
    if vocab.is_empty() {
        return Err(Error::EmptyEmbeddings(path.to_owned()));
    }
    Ok(Embeddings {
        vocab,
        matrix,
        stats,
        digest,
    })
}

fn is_header(line: &str) -> bool {
    let fields: Vec<&str> = line.split_whitespace().collect();
    fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok())
}

/// Parses embedding text. An empty result is returned as-is; callers decide
/// whether that is an error.
pub fn parse_embeddings(
    text: &str,
    limit: Option<usize>,
) -> Result<(Vocabulary, EmbeddingMatrix, LoadStats)> {
    let mut vocab = Vocabulary::default();
    let mut data = Vec::new();
    let mut dim = None;
    let mut stats = LoadStats::default();

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if limit.is_some_and(|n| vocab.len() >= n) {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && is_header(line) {
            stats.header_skipped = true;
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-blank line").to_lowercase();
        let mut row = Vec::with_capacity(dim.unwrap_or(0));
        for f in fields {
            let v: f64 = f.parse().map_err(|_| Error::BadFloat {
                line: lineno,
                value: f.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    line: lineno,
                    token: token.clone(),
                });
            }
            row.push(v);
        }
        let expected = *dim.get_or_insert(row.len());
        if row.len() != expected || expected == 0 {
            return Err(Error::InconsistentDim {
                line: lineno,
                expected,
                found: row.len(),
            });
        }
        if vocab.insert(&token) {
            data.extend(row);
        } else {
            stats.duplicates_skipped += 1;
        }
    }

    let matrix = EmbeddingMatrix {
        dim: dim.unwrap_or(0),
        data,
    };
    Ok((vocab, matrix, stats))
}
