//! On-disk cache holding a mapping table together with its scoring table.
//!
//! The cache is JSON. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every score bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{BuildReport, MappingTable, PivotOrder};
use crate::scoring::ScoringTable;
use crate::vocab::{Metric, Vocabulary};

pub const CACHE_VERSION: u32 = 1;

/// Everything the mapping depends on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub embedding_digest: String,
    pub k: usize,
    pub metric: Metric,
    pub pivot_order: PivotOrder,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    key: CacheKey,
    report: BuildReport,
    tokens: Vec<String>,
    sets: Vec<Vec<u32>>,
    scores: Vec<Vec<f64>>,
}

/// A loaded or freshly built pair of tables.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingCache {
    pub key: CacheKey,
    pub mapping: MappingTable,
    pub scores: ScoringTable,
}

impl MappingCache {
    pub fn new(embedding_digest: String, mapping: MappingTable, scores: ScoringTable) -> Self {
        let key = CacheKey {
            embedding_digest,
            k: mapping.k(),
            metric: mapping.metric(),
            pivot_order: mapping.pivot_order(),
        };
        MappingCache {
            key,
            mapping,
            scores,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CacheFile {
            version: CACHE_VERSION,
            key: self.key.clone(),
            report: self.mapping.report(),
            tokens: self.mapping.vocab().tokens().to_vec(),
            sets: self.mapping.sets().to_vec(),
            scores: self.scores.rows().to_vec(),
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CacheFile = serde_json::from_str(text)?;
        if file.version != CACHE_VERSION {
            return Err(Error::Cache(format!(
                "unsupported version {} (expected {CACHE_VERSION})",
                file.version
            )));
        }
        let vocab = Vocabulary::from_tokens(&file.tokens);
        if vocab.len() != file.tokens.len() {
            return Err(Error::Cache("duplicate tokens".into()));
        }
        let mapping = MappingTable::from_sets(
            vocab,
            file.key.k,
            file.key.metric,
            file.key.pivot_order,
            file.sets,
        )?;
        let scores = ScoringTable::from_rows(&mapping, file.scores)?;
        Ok(MappingCache {
            key: file.key,
            mapping,
            scores,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
