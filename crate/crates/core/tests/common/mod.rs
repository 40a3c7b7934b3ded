#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use textsan::cache::MappingCache;
use textsan::mapping::{build_mapping, PivotOrder};
use textsan::scoring::build_scores;
use textsan::vocab::{EmbeddingMatrix, Metric, Vocabulary};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

/// Random vocabulary of `n` tokens. Small integer coordinates make exact
/// similarity ties common.
pub fn random_embeddings(n: usize, dim: usize, seed: u64) -> (Vocabulary, EmbeddingMatrix) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let vocab = Vocabulary::from_tokens((0..n).map(|i| format!("tok{i}")));
    let rows = (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-4i32..=4) as f64).collect();
            if v.iter().all(|x| *x == 0.0) {
                v[0] = 1.0;
            }
            v
        })
        .collect();
    (vocab, EmbeddingMatrix::from_rows(rows).unwrap())
}

pub fn random_cache(n: usize, k: usize, metric: Metric, seed: u64) -> MappingCache {
    let (vocab, emb) = random_embeddings(n, 8, seed);
    let map = build_mapping(&vocab, &emb, k, metric, PivotOrder::File).unwrap();
    let scores = build_scores(&map, &emb).unwrap();
    MappingCache::new(format!("random-{seed}"), map, scores)
}
