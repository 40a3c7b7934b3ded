//! Partition of the vocabulary into customized output sets.
//!
//! Tokens are visited in pivot order. Each unassigned pivot is grouped with
//! its K-1 closest unassigned tokens, and the group becomes the shared output
//! set of every member. Tokens left over once fewer than K remain form one
//! final, smaller set.

use std::cmp::Ordering;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{dot, euclidean, norm, EmbeddingMatrix, Metric, Vocabulary};

/// Order in which tokens are taken as pivots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PivotOrder {
    /// Vocabulary (file) order.
    #[default]
    File,
    /// A seeded shuffle of the vocabulary.
    Seeded { seed: u64 },
}

impl PivotOrder {
    fn ordinals(self, n: usize) -> Vec<u32> {
        let mut order: Vec<u32> = (0..n as u32).collect();
        if let PivotOrder::Seeded { seed } = self {
            order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        }
        order
    }
}

impl fmt::Display for PivotOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PivotOrder::File => f.write_str("file"),
            PivotOrder::Seeded { seed } => write!(f, "seeded:{seed}"),
        }
    }
}

/// Closeness of two tokens where larger means semantically closer.
///
/// Shared by the mapping and scoring code so that rankings agree bit for bit.
pub(crate) struct Closeness<'a> {
    emb: &'a EmbeddingMatrix,
    metric: Metric,
    norms: Vec<f64>,
}

impl<'a> Closeness<'a> {
    pub(crate) fn new(emb: &'a EmbeddingMatrix, metric: Metric) -> Self {
        let norms = match metric {
            Metric::Cosine => (0..emb.len() as u32).map(|i| norm(emb.row(i))).collect(),
            Metric::Euclidean => Vec::new(),
        };
        Closeness { emb, metric, norms }
    }

    pub(crate) fn get(&self, a: u32, b: u32) -> f64 {
        let (va, vb) = (self.emb.row(a), self.emb.row(b));
        match self.metric {
            Metric::Euclidean => -euclidean(va, vb),
            Metric::Cosine => {
                if a == b {
                    return 1.0;
                }
                let denom = self.norms[a as usize] * self.norms[b as usize];
                (dot(va, vb) / denom).clamp(-1.0, 1.0)
            }
        }
    }
}

/// Descending closeness, ties by lower ordinal.
fn by_closeness(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The mapping function: every vocabulary token's output set.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingTable {
    vocab: Vocabulary,
    k: usize,
    metric: Metric,
    pivot_order: PivotOrder,
    sets: Vec<Vec<u32>>,
    set_of: Vec<u32>,
}

/// Summary of a finished build.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub sets: usize,
    pub full_sets: usize,
    /// Size of the final short set, 0 when the vocabulary divides evenly.
    pub remainder_size: usize,
    /// Tokens whose output set is only themselves although K > 1. Such a
    /// token is never replaced by anything else.
    pub self_only_tokens: Vec<String>,
}

impl MappingTable {
    /// Reassembles a table from stored sets, checking every partition
    /// invariant.
    pub fn from_sets(
        vocab: Vocabulary,
        k: usize,
        metric: Metric,
        pivot_order: PivotOrder,
        sets: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let n = vocab.len();
        if k == 0 || k > n {
            return Err(Error::InvalidK { k, vocab: n });
        }
        let mut set_of = vec![u32::MAX; n];
        let mut short = 0;
        for (id, set) in sets.iter().enumerate() {
            if set.is_empty() || set.len() > k {
                return Err(Error::Cache(format!("set {id} has size {}", set.len())));
            }
            if set.len() < k {
                short += 1;
            }
            for &t in set {
                let slot = set_of
                    .get_mut(t as usize)
                    .ok_or_else(|| Error::Cache(format!("ordinal {t} out of range")))?;
                if *slot != u32::MAX {
                    return Err(Error::Cache(format!("ordinal {t} in two sets")));
                }
                *slot = id as u32;
            }
        }
        if short > 1 {
            return Err(Error::Cache(format!("{short} sets smaller than K")));
        }
        if let Some(t) = set_of.iter().position(|&s| s == u32::MAX) {
            return Err(Error::Cache(format!("token {:?} unassigned", vocab.token(t as u32))));
        }
        Ok(MappingTable {
            vocab,
            k,
            metric,
            pivot_order,
            sets,
            set_of,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn pivot_order(&self) -> PivotOrder {
        self.pivot_order
    }

    pub fn sets(&self) -> &[Vec<u32>] {
        &self.sets
    }

    pub fn set_id(&self, ordinal: u32) -> usize {
        self.set_of[ordinal as usize] as usize
    }

    /// Output set of a token ordinal: pivot first, then companions by
    /// descending closeness to the pivot.
    pub fn set_for(&self, ordinal: u32) -> &[u32] {
        &self.sets[self.set_id(ordinal)]
    }

    /// Output set of a surface token, or `None` when the token is outside
    /// the vocabulary and must pass through unchanged.
    pub fn output_set(&self, token: &str) -> Option<Vec<&str>> {
        let ordinal = self.vocab.get(token)?;
        Some(self.set_for(ordinal).iter().map(|&t| self.vocab.token(t)).collect())
    }

    pub fn report(&self) -> BuildReport {
        let full_sets = self.sets.iter().filter(|s| s.len() == self.k).count();
        let remainder_size = self
            .sets
            .iter()
            .find(|s| s.len() < self.k)
            .map_or(0, Vec::len);
        let self_only_tokens = if self.k > 1 {
            self.sets
                .iter()
                .filter(|s| s.len() == 1)
                .map(|s| self.vocab.token(s[0]).to_owned())
                .collect()
        } else {
            Vec::new()
        };
        BuildReport {
            sets: self.sets.len(),
            full_sets,
            remainder_size,
            self_only_tokens,
        }
    }
}

/// Builds the mapping table by exact full scans over the unassigned pool.
pub fn build_mapping(
    vocab: &Vocabulary,
    emb: &EmbeddingMatrix,
    k: usize,
    metric: Metric,
    pivot_order: PivotOrder,
) -> Result<MappingTable> {
    let n = vocab.len();
    if emb.len() != n {
        return Err(Error::VocabMismatch(format!(
            "{n} tokens but {} vectors",
            emb.len()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, vocab: n });
    }
    emb.check_metric(metric, vocab)?;

    let closeness = Closeness::new(emb, metric);
    let order = pivot_order.ordinals(n);
    let mut assigned = vec![false; n];
    // Unassigned ordinals, ascending.
    let mut pool: Vec<u32> = (0..n as u32).collect();
    let mut cursor = 0;
    let mut sets = Vec::with_capacity(n.div_ceil(k));

    while !pool.is_empty() {
        while assigned[order[cursor] as usize] {
            cursor += 1;
        }
        let pivot = order[cursor];
        // Full set while at least K remain, otherwise the remainder.
        let take = if pool.len() >= k { k - 1 } else { pool.len() - 1 };

        let mut scored: Vec<(u32, f64)> = pool
            .par_iter()
            .filter(|&&t| t != pivot)
            .map(|&t| (t, closeness.get(pivot, t)))
            .collect();
        if take < scored.len() {
            if take > 0 {
                scored.select_nth_unstable_by(take - 1, by_closeness);
            }
            scored.truncate(take);
        }
        scored.sort_unstable_by(by_closeness);

        let mut set = Vec::with_capacity(take + 1);
        set.push(pivot);
        set.extend(scored.iter().map(|&(t, _)| t));
        for &t in &set {
            assigned[t as usize] = true;
        }
        pool.retain(|&t| !assigned[t as usize]);
        sets.push(set);
    }

    MappingTable::from_sets(vocab.clone(), k, metric, pivot_order, sets)
}
