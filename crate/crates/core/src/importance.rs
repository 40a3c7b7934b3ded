//! Token-importance records and the sensitive lists selected from them.
//!
//! Importance files are JSON lines, one record per line:
//!
//! ```text
//! {"record_id": "17", "tokens": ["a", "fine", "film"], "scores": [0.2, 0.5, 0.3]}
//! ```
//!
//! Sentence-pair records carry both fields' tokens concatenated, with the
//! index of the first second-field token in an optional `boundary` field.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRecord {
    pub record_id: String,
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

/// Records read from an importance file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImportanceFile {
    pub records: Vec<ImportanceRecord>,
    /// Records whose scores did not sum to 1 and were rescaled.
    pub renormalized: usize,
}

pub fn load_importance(path: impl AsRef<Path>) -> Result<ImportanceFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_importance(&text, path)
}

pub fn parse_importance(text: &str, path: &Path) -> Result<ImportanceFile> {
    let mut out = ImportanceFile::default();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: String| Error::Malformed {
            path: path.to_owned(),
            line: i + 1,
            msg,
        };
        let mut rec: ImportanceRecord =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if rec.tokens.len() != rec.scores.len() {
            return Err(Error::LengthMismatch {
                record_id: rec.record_id,
                tokens: rec.tokens.len(),
                scores: rec.scores.len(),
            });
        }
        if rec.scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(malformed(format!("record {:?} has a negative or non-finite score", rec.record_id)));
        }
        if rec.boundary.is_some_and(|b| b > rec.tokens.len()) {
            return Err(malformed(format!("record {:?} boundary past its tokens", rec.record_id)));
        }
        if !seen.insert(rec.record_id.clone()) {
            return Err(Error::DuplicateRecord(rec.record_id));
        }
        let sum: f64 = rec.scores.iter().sum();
        if !rec.scores.is_empty() && (sum - 1.0).abs() > SUM_TOLERANCE {
            if sum == 0.0 {
                return Err(malformed(format!("record {:?} has all-zero scores", rec.record_id)));
            }
            rec.scores.iter_mut().for_each(|s| *s /= sum);
            out.renormalized += 1;
        }
        out.records.push(rec);
    }
    Ok(out)
}

pub fn write_importance<W: Write>(records: &[ImportanceRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<importance>", e))?;
    }
    Ok(())
}

/// Inverse corpus frequency, normalized within each record.
pub fn fallback_scores(corpus: &Document) -> Vec<ImportanceRecord> {
    let records: Vec<(String, Vec<Vec<String>>)> = corpus
        .records
        .iter()
        .map(|r| {
            let fields = r
                .field_tokens()
                .into_iter()
                .map(|f| f.into_iter().map(|t| t.text).collect())
                .collect();
            (r.record_id.clone(), fields)
        })
        .collect();
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for (_, fields) in &records {
        for t in fields.iter().flatten() {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    records
        .iter()
        .map(|(id, fields)| {
            let tokens: Vec<String> = fields.iter().flatten().cloned().collect();
            let boundary = (fields.len() > 1).then(|| fields[0].len());
            ImportanceRecord {
                record_id: id.clone(),
                scores: inverse_frequency(&tokens, &counts),
                tokens,
                boundary,
                truncated: false,
            }
        })
        .collect()
}

/// Scores 1/count per token, rescaled to sum to 1.
pub fn inverse_frequency(tokens: &[String], counts: &HashMap<&str, u64>) -> Vec<f64> {
    let raw: Vec<f64> = tokens
        .iter()
        .map(|t| 1.0 / counts.get(t.as_str()).copied().unwrap_or(1).max(1) as f64)
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / sum).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Top,
    Bottom,
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Selection::Top => "top",
            Selection::Bottom => "bottom",
        })
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(Selection::Top),
            "bottom" => Ok(Selection::Bottom),
            other => Err(Error::Config(format!("unknown selection {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    #[default]
    PerRecord,
    Global,
}

/// Selected positions of one record, ascending, with their surface forms.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecordSelection {
    pub record_id: String,
    pub positions: Vec<usize>,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Members {
    PerRecord(Vec<RecordSelection>),
    /// Surface forms in rank order.
    Global(Vec<String>),
}

/// The sensitive list S: token positions (or surface forms) to perturb.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitiveList {
    pub selection: Selection,
    pub percent: f64,
    pub members: Members,
}

impl SensitiveList {
    /// A per-record list that selects nothing.
    pub fn empty(selection: Selection) -> Self {
        SensitiveList {
            selection,
            percent: 0.0,
            members: Members::PerRecord(Vec::new()),
        }
    }

    pub fn scope(&self) -> Scope {
        match self.members {
            Members::PerRecord(_) => Scope::PerRecord,
            Members::Global(_) => Scope::Global,
        }
    }

    /// Total selected positions (per-record) or forms (global).
    pub fn len(&self) -> usize {
        match &self.members {
            Members::PerRecord(r) => r.iter().map(|s| s.positions.len()).sum(),
            Members::Global(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tab-separated export: `record_id, position, token` per line, or one
    /// token per line for global lists.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match &self.members {
            Members::PerRecord(records) => {
                for r in records {
                    for (p, t) in r.positions.iter().zip(&r.tokens) {
                        writeln!(w, "{}\t{}\t{}", r.record_id, p, t)?;
                    }
                }
            }
            Members::Global(tokens) => {
                for t in tokens {
                    writeln!(w, "{t}")?;
                }
            }
        }
        Ok(())
    }
}

/// Options for [`select_sensitive`].
#[derive(Clone, Debug, Default)]
pub struct SelectOptions {
    pub scope: Scope,
    /// Tokens never selected.
    pub stoplist: HashSet<String>,
}

/// Number of items a p% cut keeps out of n.
pub fn cut_size(percent: f64, n: usize) -> usize {
    // Guard against 0.1 + 0.2 style representation error pushing an exact
    // product over an integer.
    let exact = percent * n as f64 / 100.0;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(n)
}

fn rank(selection: Selection, a: (usize, f64), b: (usize, f64)) -> std::cmp::Ordering {
    let by_score = match selection {
        Selection::Top => b.1.total_cmp(&a.1),
        Selection::Bottom => a.1.total_cmp(&b.1),
    };
    by_score.then(a.0.cmp(&b.0))
}

/// Ranks tokens by importance and keeps the top or bottom p%.
pub fn select_sensitive(
    records: &[ImportanceRecord],
    selection: Selection,
    percent: f64,
    opts: &SelectOptions,
) -> Result<SensitiveList> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::InvalidPercent(percent));
    }
    let members = match opts.scope {
        Scope::PerRecord => Members::PerRecord(
            records
                .iter()
                .map(|r| select_in_record(r, selection, percent, &opts.stoplist))
                .collect(),
        ),
        Scope::Global => Members::Global(select_global(records, selection, percent, &opts.stoplist)),
    };
    Ok(SensitiveList {
        selection,
        percent,
        members,
    })
}

fn select_in_record(
    r: &ImportanceRecord,
    selection: Selection,
    percent: f64,
    stoplist: &HashSet<String>,
) -> RecordSelection {
    let mut candidates: Vec<(usize, f64)> = r
        .scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !stoplist.contains(&r.tokens[*i]))
        .map(|(i, &s)| (i, s))
        .collect();
    let keep = cut_size(percent, candidates.len());
    candidates.sort_by(|a, b| rank(selection, *a, *b));
    let mut positions: Vec<usize> = candidates[..keep].iter().map(|c| c.0).collect();
    positions.sort_unstable();
    RecordSelection {
        record_id: r.record_id.clone(),
        tokens: positions.iter().map(|&p| r.tokens[p].clone()).collect(),
        positions,
    }
}

fn select_global(
    records: &[ImportanceRecord],
    selection: Selection,
    percent: f64,
    stoplist: &HashSet<String>,
) -> Vec<String> {
    // (first occurrence order, running sum, count)
    let mut stats: HashMap<&str, (usize, f64, usize)> = HashMap::new();
    for (t, s) in records
        .iter()
        .flat_map(|r| r.tokens.iter().zip(&r.scores))
        .filter(|(t, _)| !stoplist.contains(*t))
    {
        let next = stats.len();
        let e = stats.entry(t.as_str()).or_insert((next, 0.0, 0));
        e.1 += s;
        e.2 += 1;
    }
    let mut forms: Vec<(&str, usize, f64)> = stats
        .into_iter()
        .map(|(t, (first, sum, n))| (t, first, sum / n as f64))
        .collect();
    forms.sort_by(|a, b| rank(selection, (a.1, a.2), (b.1, b.2)));
    let keep = cut_size(percent, forms.len());
    forms[..keep].iter().map(|f| f.0.to_owned()).collect()
}

/// Reads a stoplist: one token per line, lowercased, `#` comments allowed.
pub fn load_stoplist(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}
