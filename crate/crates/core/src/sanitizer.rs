//! Selective sanitization of a corpus.
//!
//! Only positions in the sensitive list whose token is in the vocabulary are
//! resampled through the exponential mechanism; every other position is
//! copied through. Under the conservative strategy the first replacement
//! drawn for a surface form is reused for its later occurrences.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::MappingCache;
use crate::corpus::{Document, Record};
use crate::error::{Error, Result};
use crate::importance::{Members, RecordSelection, Selection, SensitiveList};
use crate::sampler::{distribution, sample, SamplerConfig, TokenDistribution};
use crate::text::detokenize;
use crate::vocab::Metric;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Every sensitive occurrence is sampled independently.
    Aggressive,
    /// Repeated sensitive surface forms share one replacement.
    Conservative,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Aggressive => "aggressive",
            Strategy::Conservative => "conservative",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aggressive" => Ok(Strategy::Aggressive),
            "conservative" => Ok(Strategy::Conservative),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Lifetime of the conservative replacement cache.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheScope {
    #[default]
    Record,
    Document,
}

/// How the random stream is laid out over records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Seeding {
    /// One generator consumed in document order.
    #[default]
    Sequential,
    /// One generator per record, seeded with `seed ^ record ordinal`;
    /// records run in parallel. Produces a different (but reproducible)
    /// output than sequential seeding.
    PerRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanitizerConfig {
    pub epsilon: f64,
    pub k: usize,
    pub metric: Metric,
    pub strategy: Strategy,
    pub selection: Selection,
    pub percent: f64,
    pub seed: u64,
    pub stoplist: Option<PathBuf>,
    #[serde(default)]
    pub cache_scope: CacheScope,
    #[serde(default)]
    pub seeding: Seeding,
}

impl SanitizerConfig {
    pub fn validate(&self) -> Result<()> {
        SamplerConfig::new(self.epsilon, self.seed)?;
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if !(self.percent > 0.0 && self.percent <= 100.0) {
            return Err(Error::InvalidPercent(self.percent));
        }
        if self.cache_scope == CacheScope::Document && self.seeding == Seeding::PerRecord {
            return Err(Error::Config(
                "a document-scope cache needs sequential seeding".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizationReport {
    pub tokens_total: u64,
    pub tokens_in_vocab: u64,
    pub tokens_sensitive: u64,
    /// Sensitive positions left unchanged because the token is not in the
    /// vocabulary. These leak the original word.
    pub tokens_sensitive_oov: u64,
    pub tokens_perturbed: u64,
    pub tokens_self_retained: u64,
    pub tokens_passed_through: u64,
}

impl SanitizationReport {
    pub fn sampled(&self) -> u64 {
        self.tokens_perturbed + self.tokens_self_retained
    }

    /// Checks that the counters partition the token positions.
    pub fn reconciles(&self) -> bool {
        self.sampled() + self.tokens_passed_through == self.tokens_total
            && self.sampled() + self.tokens_sensitive_oov == self.tokens_sensitive
            && self.tokens_sensitive <= self.tokens_total
            && self.tokens_in_vocab <= self.tokens_total
            && self.sampled() <= self.tokens_in_vocab
    }

    fn merge(&mut self, o: &SanitizationReport) {
        self.tokens_total += o.tokens_total;
        self.tokens_in_vocab += o.tokens_in_vocab;
        self.tokens_sensitive += o.tokens_sensitive;
        self.tokens_sensitive_oov += o.tokens_sensitive_oov;
        self.tokens_perturbed += o.tokens_perturbed;
        self.tokens_self_retained += o.tokens_self_retained;
        self.tokens_passed_through += o.tokens_passed_through;
    }
}

/// Which positions of a record are sensitive.
enum Selector<'a> {
    Positions(Option<&'a RecordSelection>),
    Forms(&'a HashSet<&'a str>),
}

enum SelectorSource<'a> {
    Positions(HashMap<&'a str, &'a RecordSelection>),
    Forms(HashSet<&'a str>),
}

impl SelectorSource<'_> {
    fn for_record(&self, r: &Record) -> Selector<'_> {
        match self {
            SelectorSource::Positions(by_id) => {
                Selector::Positions(by_id.get(r.record_id.as_str()).copied())
            }
            SelectorSource::Forms(forms) => Selector::Forms(forms),
        }
    }
}

struct Run<'a> {
    cache: &'a MappingCache,
    sampler: SamplerConfig,
    strategy: Strategy,
}

impl Run<'_> {
    fn distribution(&self, ordinal: u32) -> TokenDistribution {
        distribution(&self.cache.scores.row(ordinal), &self.sampler)
    }

    fn record(
        &self,
        record: &Record,
        selector: Selector<'_>,
        rng: &mut ChaCha20Rng,
        memo: &mut HashMap<String, u32>,
        dists: &mut HashMap<u32, TokenDistribution>,
    ) -> Result<(Record, SanitizationReport)> {
        let vocab = self.cache.mapping.vocab();
        let fields = record.field_tokens();
        let total: usize = fields.iter().map(Vec::len).sum();

        let mut selected = vec![false; total];
        match selector {
            Selector::Positions(Some(sel)) => {
                let flat: Vec<&str> = fields.iter().flatten().map(|t| t.text.as_str()).collect();
                for (&p, expected) in sel.positions.iter().zip(&sel.tokens) {
                    let found = flat.get(p).copied().unwrap_or("<end of record>");
                    if found != expected {
                        return Err(Error::TokenMismatch {
                            record_id: record.record_id.clone(),
                            position: p,
                            expected: expected.clone(),
                            found: found.to_owned(),
                        });
                    }
                    selected[p] = true;
                }
            }
            Selector::Positions(None) => {}
            Selector::Forms(forms) => {
                for (s, t) in selected.iter_mut().zip(fields.iter().flatten()) {
                    *s = forms.contains(t.text.as_str());
                }
            }
        }

        let mut report = SanitizationReport {
            tokens_total: total as u64,
            ..Default::default()
        };
        let mut new_fields = Vec::with_capacity(fields.len());
        let mut pos = 0;
        for (field, text) in fields.iter().zip(&record.fields) {
            let mut replacements = Vec::with_capacity(field.len());
            for tok in field {
                let ordinal = vocab.get(&tok.text);
                report.tokens_in_vocab += ordinal.is_some() as u64;
                let replacement = match (selected[pos], ordinal) {
                    (true, Some(x)) => {
                        report.tokens_sensitive += 1;
                        let y = match self.strategy {
                            Strategy::Conservative => match memo.get(&tok.text) {
                                Some(&y) => y,
                                None => {
                                    let d = dists.entry(x).or_insert_with(|| self.distribution(x));
                                    let y = sample(d, rng);
                                    memo.insert(tok.text.clone(), y);
                                    y
                                }
                            },
                            Strategy::Aggressive => {
                                let d = dists.entry(x).or_insert_with(|| self.distribution(x));
                                sample(d, rng)
                            }
                        };
                        if y == x {
                            report.tokens_self_retained += 1;
                            None
                        } else {
                            report.tokens_perturbed += 1;
                            Some(vocab.token(y).to_owned())
                        }
                    }
                    (true, None) => {
                        report.tokens_sensitive += 1;
                        report.tokens_sensitive_oov += 1;
                        report.tokens_passed_through += 1;
                        None
                    }
                    (false, _) => {
                        report.tokens_passed_through += 1;
                        None
                    }
                };
                replacements.push(replacement);
                pos += 1;
            }
            new_fields.push(detokenize(text, field, &replacements)?);
        }

        let mut out = record.clone();
        out.fields = new_fields;
        Ok((out, report))
    }
}

/// Sanitizes every record of `doc`, returning the new document and counters.
pub fn sanitize(
    doc: &Document,
    cfg: &SanitizerConfig,
    cache: &MappingCache,
    sensitive: &SensitiveList,
) -> Result<(Document, SanitizationReport)> {
    cfg.validate()?;
    if cfg.k != cache.mapping.k() || cfg.metric != cache.mapping.metric() {
        return Err(Error::Config(format!(
            "config asks for K={} {} but the mapping was built with K={} {}",
            cfg.k,
            cfg.metric,
            cache.mapping.k(),
            cache.mapping.metric()
        )));
    }
    let run = Run {
        cache,
        sampler: SamplerConfig::new(cfg.epsilon, cfg.seed)?,
        strategy: cfg.strategy,
    };

    let source = match &sensitive.members {
        Members::PerRecord(sel) => {
            let known: HashSet<&str> = doc.records.iter().map(|r| r.record_id.as_str()).collect();
            if let Some(bad) = sel.iter().find(|s| !known.contains(s.record_id.as_str())) {
                return Err(Error::UnknownRecord(bad.record_id.clone()));
            }
            SelectorSource::Positions(sel.iter().map(|s| (s.record_id.as_str(), s)).collect())
        }
        Members::Global(g) => SelectorSource::Forms(g.iter().map(String::as_str).collect()),
    };
    let selector_for = |r: &Record| source.for_record(r);

    let results: Vec<(Record, SanitizationReport)> = match cfg.seeding {
        Seeding::Sequential => {
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
            let mut memo = HashMap::new();
            let mut dists = HashMap::new();
            let mut out = Vec::with_capacity(doc.records.len());
            for r in &doc.records {
                if cfg.cache_scope == CacheScope::Record {
                    memo.clear();
                }
                out.push(run.record(r, selector_for(r), &mut rng, &mut memo, &mut dists)?);
            }
            out
        }
        Seeding::PerRecord => doc
            .records
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ i as u64);
                run.record(r, selector_for(r), &mut rng, &mut HashMap::new(), &mut HashMap::new())
            })
            .collect::<Result<_>>()?,
    };

    let mut report = SanitizationReport::default();
    let mut records = Vec::with_capacity(results.len());
    for (r, rep) in results {
        report.merge(&rep);
        records.push(r);
    }
    debug_assert!(report.reconciles());
    Ok((doc.with_records(records), report))
}
