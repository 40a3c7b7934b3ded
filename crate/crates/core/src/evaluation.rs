//! Corpus-level measurement: parameter sweeps, exhaustive privacy audits of
//! built tables, and ingestion of mask-inference attack reports.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::MappingCache;
use crate::corpus::Document;
use crate::digest::stable_hash64;
use crate::error::{Error, Result};
use crate::importance::{select_sensitive, ImportanceRecord, SelectOptions, Selection};
use crate::sampler::{audit_dp_log, SamplerConfig};
use crate::sanitizer::{sanitize, SanitizationReport, SanitizerConfig, Strategy};
use crate::vocab::Metric;

/// Floating slack allowed on top of e^ε.
pub const AUDIT_SLACK: f64 = 1e-9;

/// Vocabularies up to this size are audited over every adjacent pair.
pub const EXHAUSTIVE_AUDIT_LIMIT: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub selection: Selection,
    pub percent: f64,
    pub strategy: Strategy,
}

impl SweepCell {
    pub fn descriptor(&self) -> String {
        format!("{}-{}-{}", self.selection, self.percent, self.strategy)
    }

    /// Seed for this cell: the master seed xor a stable hash of the cell.
    pub fn seed(&self, master: u64) -> u64 {
        master ^ stable_hash64(&self.descriptor())
    }
}

/// Cartesian product, in selection-major order.
pub fn grid(selections: &[Selection], percents: &[f64], strategies: &[Strategy]) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &selection in selections {
        for &percent in percents {
            for &strategy in strategies {
                cells.push(SweepCell {
                    selection,
                    percent,
                    strategy,
                });
            }
        }
    }
    cells
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub selection: Selection,
    pub percent: f64,
    pub strategy: Strategy,
    pub epsilon: f64,
    pub k: usize,
    pub metric: Metric,
    pub seed: u64,
    pub tokens_total: u64,
    pub tokens_in_vocab: u64,
    pub tokens_sensitive: u64,
    pub tokens_sensitive_oov: u64,
    pub tokens_perturbed: u64,
    pub tokens_self_retained: u64,
    pub tokens_passed_through: u64,
}

impl SweepRow {
    pub fn report(&self) -> SanitizationReport {
        SanitizationReport {
            tokens_total: self.tokens_total,
            tokens_in_vocab: self.tokens_in_vocab,
            tokens_sensitive: self.tokens_sensitive,
            tokens_sensitive_oov: self.tokens_sensitive_oov,
            tokens_perturbed: self.tokens_perturbed,
            tokens_self_retained: self.tokens_self_retained,
            tokens_passed_through: self.tokens_passed_through,
        }
    }
}

pub struct SweepOutcome {
    pub cell: SweepCell,
    pub config: SanitizerConfig,
    pub row: SweepRow,
    pub sanitized: Document,
}

/// Runs one sanitization per grid cell. `base` supplies ε, K, metric and the
/// master seed; selection, percent and strategy come from each cell.
pub fn sweep(
    doc: &Document,
    base: &SanitizerConfig,
    cells: &[SweepCell],
    cache: &MappingCache,
    importance: &[ImportanceRecord],
    opts: &SelectOptions,
) -> Result<Vec<SweepOutcome>> {
    if cells.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    cells
        .par_iter()
        .map(|cell| {
            let cfg = SanitizerConfig {
                selection: cell.selection,
                percent: cell.percent,
                strategy: cell.strategy,
                seed: cell.seed(base.seed),
                ..base.clone()
            };
            let s = select_sensitive(importance, cell.selection, cell.percent, opts)?;
            let (sanitized, r) = sanitize(doc, &cfg, cache, &s)?;
            let row = SweepRow {
                selection: cell.selection,
                percent: cell.percent,
                strategy: cell.strategy,
                epsilon: cfg.epsilon,
                k: cfg.k,
                metric: cfg.metric,
                seed: cfg.seed,
                tokens_total: r.tokens_total,
                tokens_in_vocab: r.tokens_in_vocab,
                tokens_sensitive: r.tokens_sensitive,
                tokens_sensitive_oov: r.tokens_sensitive_oov,
                tokens_perturbed: r.tokens_perturbed,
                tokens_self_retained: r.tokens_self_retained,
                tokens_passed_through: r.tokens_passed_through,
            };
            Ok(SweepOutcome {
                cell: *cell,
                config: cfg,
                row,
                sanitized,
            })
        })
        .collect()
}

pub fn write_results<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<results>", e))?;
    Ok(())
}

pub fn read_results<R: Read>(r: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditMode {
    /// Every unordered pair of distinct tokens within every output set.
    Exhaustive,
    /// Up to `pairs_per_set` random pairs per output set.
    Sampled { pairs_per_set: usize, seed: u64 },
}

impl AuditMode {
    /// Exhaustive for small vocabularies, sampled beyond.
    pub fn auto(vocab_len: usize, seed: u64) -> Self {
        if vocab_len <= EXHAUSTIVE_AUDIT_LIMIT {
            AuditMode::Exhaustive
        } else {
            AuditMode::Sampled {
                pairs_per_set: 64,
                seed,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub epsilon: f64,
    /// e^ε
    pub bound: f64,
    pub max_ratio: f64,
    pub max_log_ratio: f64,
    pub pairs_checked: u64,
    pub exhaustive: bool,
    pub worst_pair: Option<(String, String)>,
    pub passed: bool,
}

/// Audits the probability ratio of every checked adjacent pair.
pub fn audit_table(cache: &MappingCache, epsilon: f64, mode: AuditMode) -> Result<AuditSummary> {
    let cfg = SamplerConfig::new(epsilon, 0)?;
    let vocab = cache.mapping.vocab();
    let mut rng = match mode {
        AuditMode::Sampled { seed, .. } => Some(ChaCha20Rng::seed_from_u64(seed)),
        AuditMode::Exhaustive => None,
    };
    let mut worst = (0.0f64, None);
    let mut pairs_checked = 0u64;

    for set in cache.mapping.sets() {
        let n = set.len();
        let all_pairs = n * (n - 1) / 2;
        let pairs: Vec<(u32, u32)> = match (&mut rng, mode) {
            (Some(rng), AuditMode::Sampled { pairs_per_set, .. }) if all_pairs > pairs_per_set => {
                sample_indices(rng, all_pairs, pairs_per_set)
                    .into_iter()
                    .map(|idx| unrank_pair(idx, n))
                    .map(|(i, j)| (set[i], set[j]))
                    .collect()
            }
            _ => (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (set[i], set[j])))
                .collect(),
        };
        for (x, y) in pairs {
            let l = audit_dp_log(&cache.scores.row(x), &cache.scores.row(y), &cfg)?;
            pairs_checked += 1;
            if l > worst.0 || worst.1.is_none() {
                worst = (l.max(worst.0), Some((x, y)));
            }
        }
    }

    let bound = epsilon.exp();
    let max_ratio = worst.0.exp();
    Ok(AuditSummary {
        epsilon,
        bound,
        max_ratio,
        max_log_ratio: worst.0,
        pairs_checked,
        exhaustive: mode == AuditMode::Exhaustive,
        worst_pair: worst
            .1
            .map(|(x, y)| (vocab.token(x).to_owned(), vocab.token(y).to_owned())),
        passed: max_ratio <= bound + AUDIT_SLACK,
    })
}

/// Maps a linear index in 0..n(n-1)/2 to the pair (i, j), i < j.
fn unrank_pair(mut idx: usize, n: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - i - 1;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
    }
    unreachable!("pair index out of range")
}

/// Outcome of a mask-inference attack run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attempts: u64,
    pub successes: u64,
    pub rmask: f64,
    pub privacy_score: f64,
    /// No attack positions; rmask is reported as 0.
    pub empty: bool,
}

impl AttackReport {
    pub fn new(attempts: u64, successes: u64) -> Result<Self> {
        if successes > attempts {
            return Err(Error::SuccessesExceedAttempts {
                attempts,
                successes,
            });
        }
        let rmask = if attempts == 0 {
            0.0
        } else {
            successes as f64 / attempts as f64
        };
        Ok(AttackReport {
            attempts,
            successes,
            rmask,
            privacy_score: 1.0 - rmask,
            empty: attempts == 0,
        })
    }
}

/// Reads an attack report: one `field value` pair per line (separated by
/// whitespace, `=` or `:`), with required fields `attempts` and `successes`.
/// Other fields and `#` comments are ignored.
pub fn ingest_attack_report(path: impl AsRef<Path>) -> Result<AttackReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_attack_report(&text, path)
}

pub fn parse_attack_report(text: &str, path: &Path) -> Result<AttackReport> {
    let mut attempts = None;
    let mut successes = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |msg: String| Error::Malformed {
            path: path.to_owned(),
            line: i + 1,
            msg,
        };
        let (key, value) = line
            .split_once(|c: char| c == '=' || c == ':' || c.is_whitespace())
            .ok_or_else(|| malformed(format!("expected `field value`, got {line:?}")))?;
        let slot = match key.trim() {
            "attempts" => &mut attempts,
            "successes" => &mut successes,
            _ => continue,
        };
        if slot.is_some() {
            return Err(malformed(format!("duplicate field {key:?}")));
        }
        let v = value.trim();
        *slot = Some(
            v.parse::<u64>()
                .map_err(|_| malformed(format!("{key} must be a non-negative integer, got {v:?}")))?,
        );
    }
    let missing = |f: &str| Error::Malformed {
        path: path.to_owned(),
        line: 0,
        msg: format!("missing field {f:?}"),
    };
    AttackReport::new(
        attempts.ok_or_else(|| missing("attempts"))?,
        successes.ok_or_else(|| missing("successes"))?,
    )
}
