//! Normalized scores u(x, y) over each token's output set.
//!
//! Raw closeness (cosine similarity, or negated Euclidean distance) is
//! min-max normalized per input token, so every score lies in [0, 1] and the
//! sensitivity of the scoring function is at most 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{Closeness, MappingTable};
use crate::vocab::{EmbeddingMatrix, Metric};

/// Sensitivity assumed by the sampler. Never smaller than the measured one.
pub const DELTA_U: f64 = 1.0;

/// One input token's scores, aligned with its output set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreRow<'a> {
    pub set_id: usize,
    pub support: &'a [u32],
    pub scores: &'a [f64],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringTable {
    metric: Metric,
    sets: Vec<Vec<u32>>,
    set_of: Vec<u32>,
    rows: Vec<Vec<f64>>,
}

/// Min-max normalizes raw closeness values; a flat row becomes all ones.
pub fn normalize_row(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    if max == min {
        return vec![1.0; raw.len()];
    }
    raw.iter().map(|r| (r - min) / (max - min)).collect()
}

impl ScoringTable {
    /// Reassembles a table from stored rows (one per token, in ordinal order).
    pub fn from_rows(mapping: &MappingTable, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = mapping.vocab().len();
        if rows.len() != n {
            return Err(Error::VocabMismatch(format!("{n} tokens but {} score rows", rows.len())));
        }
        for (x, row) in rows.iter().enumerate() {
            if row.len() != mapping.set_for(x as u32).len() {
                return Err(Error::Cache(format!("score row {x} misaligned with its output set")));
            }
            if row.iter().any(|u| !(0.0..=1.0).contains(u)) {
                return Err(Error::Cache(format!("score row {x} leaves [0, 1]")));
            }
        }
        Ok(ScoringTable {
            metric: mapping.metric(),
            sets: mapping.sets().to_vec(),
            set_of: (0..n as u32).map(|x| mapping.set_id(x) as u32).collect(),
            rows,
        })
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn delta_u(&self) -> f64 {
        DELTA_U
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, ordinal: u32) -> ScoreRow<'_> {
        let set_id = self.set_of[ordinal as usize] as usize;
        ScoreRow {
            set_id,
            support: &self.sets[set_id],
            scores: &self.rows[ordinal as usize],
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn sets(&self) -> &[Vec<u32>] {
        &self.sets
    }
}

/// Scores every token against its own output set.
pub fn build_scores(table: &MappingTable, emb: &EmbeddingMatrix) -> Result<ScoringTable> {
    let n = table.vocab().len();
    if emb.len() != n {
        return Err(Error::VocabMismatch(format!(
            "mapping has {n} tokens but embeddings have {} vectors",
            emb.len()
        )));
    }
    emb.check_metric(table.metric(), table.vocab())?;
    let closeness = Closeness::new(emb, table.metric());
    let rows = (0..n as u32)
        .map(|x| {
            let raw: Vec<f64> = table
                .set_for(x)
                .iter()
                .map(|&y| closeness.get(x, y))
                .collect();
            normalize_row(&raw)
        })
        .collect();
    ScoringTable::from_rows(table, rows)
}

/// Measured sensitivity: the largest score gap for a common output across
/// any two tokens sharing an output set.
pub fn sensitivity(table: &ScoringTable) -> f64 {
    let mut delta: f64 = 0.0;
    for set in &table.sets {
        for col in 0..set.len() {
            let column = set.iter().map(|&x| table.rows[x as usize][col]);
            let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| {
                (lo.min(u), hi.max(u))
            });
            delta = delta.max(hi - lo);
        }
    }
    delta
}
