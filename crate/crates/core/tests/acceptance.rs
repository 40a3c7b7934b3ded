//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::{data, random_embeddings};
use textsan::cache::MappingCache;
use textsan::corpus::{Document, Record};
use textsan::evaluation::{audit_table, AuditMode};
use textsan::importance::{cut_size, fallback_scores, select_sensitive, ImportanceRecord, Members, SelectOptions, Selection};
use textsan::manifest::RunManifest;
use textsan::mapping::{build_mapping, PivotOrder};
use textsan::sampler::{distribution, sample, SamplerConfig};
use textsan::sanitizer::{sanitize, CacheScope, SanitizationReport, SanitizerConfig, Seeding, Strategy};
use textsan::scoring::{build_scores, ScoreRow};
use textsan::vocab::{distance, load_embeddings, EmbeddingMatrix, Metric};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    check(took < limit, format!("took {took:.2?}, limit {limit:?}"))
}

fn closeness(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    let d = distance(metric, a, b).unwrap();
    match metric {
        Metric::Euclidean => -d,
        Metric::Cosine => d,
    }
}

/// Probabilities of the mechanism for input `x` over `set`, computed from
/// the raw embeddings without going through the library's tables.
fn oracle_probs(emb: &EmbeddingMatrix, metric: Metric, set: &[u32], x: u32, eps: f64) -> Vec<f64> {
    let raw: Vec<f64> = set
        .iter()
        .map(|&y| if y == x { f64::INFINITY } else { closeness(metric, emb.row(x), emb.row(y)) })
        .collect();
    let finite: Vec<f64> = raw.iter().copied().filter(|r| r.is_finite()).collect();
    let self_c = if metric == Metric::Euclidean { 0.0 } else { 1.0 };
    let lo = finite.iter().copied().fold(self_c, f64::min);
    let hi = finite.iter().copied().fold(self_c, f64::max);
    let u: Vec<f64> = raw
        .iter()
        .map(|&r| {
            let r = if r.is_infinite() { self_c } else { r };
            if hi > lo {
                (r - lo) / (hi - lo)
            } else {
                1.0
            }
        })
        .collect();
    let w: Vec<f64> = u.iter().map(|u| (eps * u / 2.0).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|w| w / z).collect()
}

fn dp_guarantee() -> Outcome {
    let start = Instant::now();
    let bundled = load_embeddings(data("sample_embeddings.txt"), None).map_err(|e| e.to_string())?;
    let (rv, re) = random_embeddings(200, 8, 2024);
    let mut worst: f64 = 0.0;
    let mut pairs = 0u64;
    for (vocab, emb) in [(&bundled.vocab, &bundled.matrix), (&rv, &re)] {
        for metric in [Metric::Euclidean, Metric::Cosine] {
            for k in [2, 5, 20] {
                let map = build_mapping(vocab, emb, k, metric, PivotOrder::File).map_err(|e| e.to_string())?;
                let scores = build_scores(&map, emb).map_err(|e| e.to_string())?;
                let sets = map.sets().to_vec();
                let cache = MappingCache::new("acceptance".into(), map, scores);
                for eps in [0.5, 1.0, 3.0] {
                    let summary = audit_table(&cache, eps, AuditMode::Exhaustive).map_err(|e| e.to_string())?;
                    let mut oracle_max: f64 = 1.0;
                    for set in &sets {
                        let dists: Vec<Vec<f64>> = set.iter().map(|&x| oracle_probs(emb, metric, set, x, eps)).collect();
                        for a in &dists {
                            for b in &dists {
                                for (pa, pb) in a.iter().zip(b) {
                                    oracle_max = oracle_max.max(pa / pb);
                                }
                            }
                        }
                    }
                    check(
                        (summary.max_ratio - oracle_max).abs() <= 1e-9 * oracle_max,
                        format!("K={k} eps={eps} {metric}: audit {} vs oracle {oracle_max}", summary.max_ratio),
                    )?;
                    check(
                        oracle_max <= eps.exp() + 1e-9,
                        format!("K={k} eps={eps} {metric}: ratio {oracle_max} > e^eps"),
                    )?;
                    worst = worst.max(oracle_max / eps.exp());
                    pairs += summary.pairs_checked;
                }
            }
        }
    }
    within(Duration::from_secs(10), start)?;
    Ok(format!(
        "{pairs} pairs, worst ratio/e^eps = {worst:.4}, {:.2?}",
        start.elapsed()
    ))
}

fn exponential_mechanism() -> Outcome {
    let start = Instant::now();
    let support = [0u32, 1, 2];
    let scores = [1.0, 0.5, 0.0];
    let row = ScoreRow { set_id: 0, support: &support, scores: &scores };
    let cfg = SamplerConfig::new(2.0, 0).unwrap();
    let dist = distribution(&row, &cfg);
    // exp(u) / (e + e^0.5 + 1)
    let z = 1f64.exp() + 0.5f64.exp() + 1.0;
    let closed = [1f64.exp() / z, 0.5f64.exp() / z, 1.0 / z];
    let expected = [0.50648, 0.30719, 0.18632];
    for i in 0..3 {
        check((closed[i] - expected[i]).abs() <= 1e-5, format!("closed form {i}: {}", closed[i]))?;
        check((dist.probs[i] - expected[i]).abs() <= 1e-5, format!("p[{i}] = {}", dist.probs[i]))?;
    }
    let n = 100_000;
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let mut counts = [0u64; 3];
    for _ in 0..n {
        counts[sample(&dist, &mut rng) as usize] += 1;
    }
    let mut zmax: f64 = 0.0;
    for i in 0..3 {
        let p = closed[i];
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let z = (counts[i] as f64 - n as f64 * p).abs() / sigma;
        check(z <= 3.0, format!("outcome {i}: {} draws, z = {z:.2}", counts[i]))?;
        zmax = zmax.max(z);
    }
    within(Duration::from_secs(5), start)?;
    Ok(format!("probs {:.5?}, counts {counts:?}, max |z| {zmax:.2}", dist.probs))
}

/// Full sort of unassigned tokens by (closeness desc, ordinal asc).
fn oracle_sets(emb: &EmbeddingMatrix, k: usize, metric: Metric) -> Vec<Vec<u32>> {
    let mut unassigned: Vec<u32> = (0..emb.len() as u32).collect();
    let mut sets = Vec::new();
    while let Some(&pivot) = unassigned.first() {
        let take = (k - 1).min(unassigned.len() - 1);
        let mut rest: Vec<(f64, u32)> = unassigned[1..]
            .iter()
            .map(|&t| (closeness(metric, emb.row(pivot), emb.row(t)), t))
            .collect();
        rest.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut set = vec![pivot];
        set.extend(rest[..take].iter().map(|r| r.1));
        unassigned.retain(|t| !set.contains(t));
        sets.push(set);
    }
    sets
}

fn mapping_partition() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut remainders = 0;
    for instance in 0..50 {
        let n = rng.gen_range(1..=200);
        let dim = rng.gen_range(2..=12);
        let k = rng.gen_range(1..=n.min(25));
        let metric = if instance % 2 == 0 { Metric::Euclidean } else { Metric::Cosine };
        let (vocab, emb) = random_embeddings(n, dim, 1000 + instance);
        let map = build_mapping(&vocab, &emb, k, metric, PivotOrder::File).map_err(|e| e.to_string())?;
        let tag = format!("instance {instance} (n={n} K={k} {metric})");

        let mut seen = vec![0u32; n];
        let mut short = 0;
        for set in map.sets() {
            for &x in set {
                seen[x as usize] += 1;
            }
            if set.len() != k {
                check(set.len() < k, format!("{tag}: oversize set"))?;
                short += 1;
            }
        }
        check(seen.iter().all(|&c| c == 1), format!("{tag}: not a partition"))?;
        check(short <= 1, format!("{tag}: {short} short sets"))?;
        check(short == usize::from(n % k != 0), format!("{tag}: remainder count"))?;
        remainders += short;
        for x in 0..n as u32 {
            let own = map.set_for(x);
            check(own.contains(&x), format!("{tag}: {x} not in its own set"))?;
            check(own.iter().all(|&y| map.set_for(y) == own), format!("{tag}: set not shared"))?;
        }
        check(map.sets() == oracle_sets(&emb, k, metric).as_slice(), format!("{tag}: differs from oracle"))?;
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!("50 instances, {remainders} with a remainder set, {:.2?}", start.elapsed()))
}

fn identity_composition() -> Outcome {
    let emb = load_embeddings(data("sample_embeddings.txt"), None).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (corpus, importance) in [
        ("sample_sst2.tsv", "sample_sst2_importance.jsonl"),
        ("sample_qnli.tsv", "sample_qnli_importance.jsonl"),
    ] {
        let original = fs::read_to_string(data(corpus)).unwrap();
        let doc = Document::load(data(corpus)).map_err(|e| e.to_string())?;
        let imp = textsan::importance::load_importance(data(importance)).map_err(|e| e.to_string())?;
        for k in [1, 5] {
            let map = build_mapping(&emb.vocab, &emb.matrix, k, Metric::Euclidean, PivotOrder::File).unwrap();
            let scores = build_scores(&map, &emb.matrix).unwrap();
            let cache = MappingCache::new(emb.digest.clone(), map, scores);
            let lists = if k == 1 {
                vec![select_sensitive(&imp.records, Selection::Top, 100.0, &SelectOptions::default()).unwrap()]
            } else {
                vec![textsan::SensitiveList::empty(Selection::Top)]
            };
            for list in lists {
                for eps in [0.0, 1.0, 8.0] {
                    for strategy in [Strategy::Aggressive, Strategy::Conservative] {
                        let cfg = SanitizerConfig {
                            epsilon: eps,
                            k,
                            metric: Metric::Euclidean,
                            strategy,
                            selection: Selection::Top,
                            percent: 100.0,
                            seed: 31,
                            stoplist: None,
                            cache_scope: CacheScope::Record,
                            seeding: Seeding::Sequential,
                        };
                        let (out, report) = sanitize(&doc, &cfg, &cache, &list).map_err(|e| e.to_string())?;
                        let text = out.to_string_lossless().map_err(|e| e.to_string())?;
                        check(text == original, format!("{corpus} K={k} eps={eps} {strategy}: output differs"))?;
                        check(report.tokens_perturbed == 0, format!("{corpus} K={k}: perturbed {}", report.tokens_perturbed))?;
                        checked += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{checked} runs byte-identical with zero perturbations"))
}

fn strategy_contract() -> Outcome {
    let start = Instant::now();
    let emb = load_embeddings(data("sample_embeddings.txt"), None).map_err(|e| e.to_string())?;
    let map = build_mapping(&emb.vocab, &emb.matrix, 20, Metric::Cosine, PivotOrder::File).unwrap();
    let scores = build_scores(&map, &emb.matrix).unwrap();
    let cache = MappingCache::new(emb.digest.clone(), map, scores);
    let words = ["movie", "good", "bad", "story", "actor"];
    for w in words {
        check(emb.vocab.get(w).is_some(), format!("{w} missing from the bundled vocabulary"))?;
    }
    let records = (0..4)
        .map(|i| {
            let (a, b) = (words[i], words[i + 1]);
            Record::new(i.to_string(), vec![format!("{a} {b} {a} , {a} and {b} . {a}")], None)
        })
        .collect();
    let doc = Document::from_records(records).unwrap();
    let all = select_sensitive(&fallback_scores(&doc), Selection::Top, 100.0, &SelectOptions::default()).unwrap();
    let cfg = |strategy, seed, eps| SanitizerConfig {
        epsilon: eps,
        k: 20,
        metric: Metric::Cosine,
        strategy,
        selection: Selection::Top,
        percent: 100.0,
        seed,
        stoplist: None,
        cache_scope: CacheScope::Record,
        seeding: Seeding::Sequential,
    };

    let runs = 10_000u64;
    let mut inconsistent = 0;
    for seed in 0..runs {
        let (out, _) = sanitize(&doc, &cfg(Strategy::Conservative, seed, 1.0), &cache, &all).map_err(|e| e.to_string())?;
        for (before, after) in doc.records.iter().zip(&out.records) {
            let mut seen: HashMap<String, String> = HashMap::new();
            // Every position is replaced, so the output is the draws joined
            // by single spaces, one per input token.
            let draws: Vec<String> = after.fields[0].split(' ').map(String::from).collect();
            if draws.len() != before.tokens().len() {
                return Err(format!("record {}: {} draws for {} tokens", before.record_id, draws.len(), before.tokens().len()));
            }
            for (x, y) in before.tokens().into_iter().zip(draws) {
                if seen.entry(x).or_insert_with(|| y.clone()) != &y {
                    inconsistent += 1;
                }
            }
        }
    }
    check(inconsistent == 0, format!("conservative: {inconsistent} inconsistent replacements"))?;

    // One pair of occurrences per run keeps the trials independent.
    let pair_doc = Document::from_records(vec![Record::new("0", vec!["movie movie".into()], None)]).unwrap();
    let pair_s = select_sensitive(&fallback_scores(&pair_doc), Selection::Top, 100.0, &SelectOptions::default()).unwrap();
    let mut collisions = 0u64;
    for seed in 0..runs {
        let (out, _) = sanitize(&pair_doc, &cfg(Strategy::Aggressive, seed, 0.0), &cache, &pair_s).map_err(|e| e.to_string())?;
        // Both positions are replaced, so the output is the two draws
        // joined by one space.
        let (a, b) = out.records[0].fields[0].split_once(' ').ok_or("unexpected output shape")?;
        collisions += (a == b) as u64;
    }
    let p = 1.0 / 20.0;
    let rate = collisions as f64 / runs as f64;
    let sigma = (p * (1.0 - p) / runs as f64).sqrt();
    check(
        (rate - p).abs() <= 3.0 * sigma,
        format!("aggressive collision rate {rate:.4}, expected {p} ± {:.4}", 3.0 * sigma),
    )?;
    Ok(format!(
        "conservative 0/{runs} inconsistent; aggressive collision {rate:.4} (1/20 ± {:.4}), {:.2?}",
        3.0 * sigma,
        start.elapsed()
    ))
}

fn selection_grid() -> Outcome {
    let emb = load_embeddings(data("sample_embeddings.txt"), None).map_err(|e| e.to_string())?;
    let cache = MappingCache::load(data("sample_map_k5_euclidean.json")).map_err(|e| e.to_string())?;
    let words = emb.vocab.tokens();
    let mut rng = ChaCha20Rng::seed_from_u64(1000);
    let mut records = Vec::new();
    let mut importance = Vec::new();
    for i in 0..1000 {
        let len = rng.gen_range(1..=40);
        let text: Vec<&str> = (0..len)
            .map(|_| {
                // a few out-of-vocabulary words too
                if rng.gen_bool(0.05) {
                    "qwxz"
                } else {
                    words[rng.gen_range(0..words.len())].as_str()
                }
            })
            .filter(|w| w.chars().all(char::is_alphanumeric))
            .collect();
        let rec = Record::new(format!("s{i}"), vec![text.join(" ")], None);
        let tokens = rec.tokens();
        let raw: Vec<f64> = tokens.iter().map(|_| rng.gen::<f64>() + 1e-6).collect();
        let total: f64 = raw.iter().sum();
        importance.push(ImportanceRecord {
            record_id: rec.record_id.clone(),
            tokens,
            scores: raw.iter().map(|r| r / total).collect(),
            boundary: None,
            truncated: false,
        });
        records.push(rec);
    }
    let doc = Document::from_records(records).unwrap();
    let opts = SelectOptions::default();
    let percents = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0];
    let positions = |sel, p| -> Vec<Vec<usize>> {
        match select_sensitive(&importance, sel, p, &opts).unwrap().members {
            Members::PerRecord(r) => r.into_iter().map(|r| r.positions).collect(),
            Members::Global(_) => unreachable!(),
        }
    };
    let base = SanitizerConfig {
        epsilon: 1.0,
        k: 5,
        metric: Metric::Euclidean,
        strategy: Strategy::Aggressive,
        selection: Selection::Top,
        percent: 10.0,
        seed: 8,
        stoplist: None,
        cache_scope: CacheScope::Record,
        seeding: Seeding::Sequential,
    };
    let mut prev: HashMap<Selection, Vec<Vec<usize>>> = HashMap::new();
    let mut disjoint_checked = 0;
    let mut forced_overlaps = 0;
    let mut sensitive = BTreeMap::new();
    for &p in &percents {
        let top = positions(Selection::Top, p);
        let bottom = positions(Selection::Bottom, p);
        for (r, imp) in importance.iter().enumerate() {
            let n = imp.scores.len();
            let keep = cut_size(p, n);
            check(top[r].len() == keep && bottom[r].len() == keep, format!("p={p} record {r}: cardinality"))?;
            let overlap = top[r].iter().filter(|q| bottom[r].contains(q)).count();
            // Scores are distinct, so the cuts overlap only when they
            // cannot fit side by side.
            let forced = (2 * keep).saturating_sub(n);
            check(overlap == forced, format!("p={p} record {r}: overlap {overlap}, forced {forced}"))?;
            if forced == 0 {
                disjoint_checked += 1;
            } else {
                forced_overlaps += 1;
            }
        }
        for (sel, cur) in [(Selection::Top, &top), (Selection::Bottom, &bottom)] {
            if let Some(before) = prev.get(&sel) {
                for (small, large) in before.iter().zip(cur.iter()) {
                    check(small.iter().all(|q| large.contains(q)), format!("{sel} p={p}: nesting broken"))?;
                }
            }
            prev.insert(sel, cur.clone());
        }
        let mut counts = Vec::new();
        for sel in [Selection::Top, Selection::Bottom] {
            let s = select_sensitive(&importance, sel, p, &opts).unwrap();
            let cfg = SanitizerConfig { selection: sel, percent: p, ..base.clone() };
            let (_, report): (_, SanitizationReport) = sanitize(&doc, &cfg, &cache, &s).map_err(|e| e.to_string())?;
            check(report.reconciles(), format!("{sel} p={p}: counters do not reconcile"))?;
            counts.push(report.tokens_sensitive);
        }
        check(counts[0] == counts[1], format!("p={p}: tokens_sensitive top {} vs bottom {}", counts[0], counts[1]))?;
        sensitive.insert(p as u32, counts[0]);
    }
    Ok(format!(
        "1000 records; tokens_sensitive by p {sensitive:?}; {disjoint_checked} disjoint cuts, {forced_overlaps} with overlap forced by 2*cut > n"
    ))
}

fn epsilon_monotonicity() -> Outcome {
    let cache = MappingCache::load(data("sample_map_k5_euclidean.json")).map_err(|e| e.to_string())?;
    let epsilons = [0.0, 0.5, 1.0, 2.0, 3.0, 8.0];
    let mut worst_step = f64::INFINITY;
    for x in 0..cache.mapping.vocab().len() as u32 {
        let row = cache.scores.row(x);
        let own = row.support.iter().position(|&y| y == x).unwrap();
        let p: Vec<f64> = epsilons
            .iter()
            .map(|&e| distribution(&row, &SamplerConfig::new(e, 0).unwrap()).probs[own])
            .collect();
        for w in p.windows(2) {
            // flat rows give 1/K at every ε; allow last-bit rounding only
            check(w[1] >= w[0] - 1e-15, format!("row {x}: {:?}", p))?;
            worst_step = worst_step.min(w[1] - w[0]);
        }
    }
    Ok(format!(
        "{} rows, smallest step {worst_step:.3e}",
        cache.mapping.vocab().len()
    ))
}

fn digests(dir: &Path) -> BTreeMap<String, String> {
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m.outputs
}

fn end_to_end_replay() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut all = Vec::new();
    for run in ["first", "second"] {
        let out = tmp.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_textsan"))
            .args(["sanitize", "--input"])
            .arg(data("sample_sst2.tsv"))
            .arg("--map")
            .arg(data("sample_map_k5_euclidean.json"))
            .arg("--importance")
            .arg(data("sample_sst2_importance.jsonl"))
            .args(["--epsilon", "3", "--percent", "20", "--selection", "top", "--strategy", "aggressive", "--seed", "42"])
            .arg("--out-dir")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        check(status.status.success(), String::from_utf8_lossy(&status.stderr).into_owned())?;
        all.push(digests(&out));
    }
    check(all[0] == all[1], format!("digests differ: {:?} vs {:?}", all[0], all[1]))?;
    check(all[0].len() >= 3, format!("too few outputs: {:?}", all[0].keys()))?;
    Ok(format!("{} output files, identical digests", all[0].len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("dp-guarantee", dp_guarantee),
        ("exponential-mechanism", exponential_mechanism),
        ("mapping-partition", mapping_partition),
        ("identity-composition", identity_composition),
        ("strategy-contract", strategy_contract),
        ("selection-grid", selection_grid),
        ("epsilon-monotonicity", epsilon_monotonicity),
        ("end-to-end-replay", end_to_end_replay),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", 8 - failed, 8);
    if failed > 0 {
        std::process::exit(1);
    }
}
