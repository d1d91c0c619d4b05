#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reid_forge::data::{ActionRef, Dataset, FeatureStore, MatchMeta, Role, Sample, Split};
use reid_forge::numerics::{Graph, Tensor2, Var};
use reid_forge::sampler::{Batch, BatchEntry, BatchSpec, Level, LevelKey};
use reid_forge::Result;

pub mod gradcases;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor2::new(rows, cols, data).unwrap()
}

/// `sum(v ⊙ W)` for a fixed pseudo-random `W`, so every output entry gets a
/// distinct weight in the gradient.
pub fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.value(v).shape();
    let w = uniform(&mut rng(seed), r, c, -1.0, 1.0);
    let wv = g.constant(w);
    let p = g.mul(v, wv)?;
    Ok(g.sum(p))
}

/// One match `m0` between `a` and `b` in 2020.
pub fn one_match() -> BTreeMap<String, MatchMeta> {
    let mut matches = BTreeMap::new();
    matches.insert(
        "m0".to_string(),
        MatchMeta {
            match_id: "m0".into(),
            year: 2020,
            team_a: "a".into(),
            team_b: "b".into(),
        },
    );
    matches
}

/// Test-split dataset from `(action, player, role, feature row)` tuples;
/// all actions belong to match `m0`.
pub fn eval_dataset(rows: &[(&str, u64, Role, Vec<f64>)]) -> Dataset {
    let mut actions = BTreeMap::new();
    let mut samples = Vec::new();
    let mut feats = Vec::new();
    for (i, (action, player, role, x)) in rows.iter().enumerate() {
        actions.insert(
            action.to_string(),
            ActionRef {
                action_id: action.to_string(),
                match_id: "m0".into(),
            },
        );
        samples.push(Sample {
            sample_id: format!("s{i}"),
            player_id: *player,
            action_id: action.to_string(),
            role: *role,
            feature_index: i,
            split: Split::Test,
        });
        feats.push(x.clone());
    }
    let features = if feats.is_empty() {
        FeatureStore::new(0, 2, Vec::new()).unwrap()
    } else {
        FeatureStore::from_tensor(&Tensor2::from_rows(&feats).unwrap())
    };
    Dataset::new(samples, actions, one_match(), features).unwrap()
}

/// Random evaluation instance: up to `max_actions` actions, each with a few
/// identities seen once as query and 1-3 times in the gallery.
pub fn random_eval_dataset(
    seed: u64,
    max_samples: usize,
    max_actions: usize,
    dim: usize,
) -> Dataset {
    let mut r = rng(seed);
    let n_actions = r.random_range(1..=max_actions);
    let mut rows = Vec::new();
    let names: Vec<String> = (0..n_actions).map(|a| format!("a{a}")).collect();
    'outer: for name in &names {
        let n_ids = r.random_range(1..=5u64);
        for id in 0..n_ids {
            let center: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let jitter = |r: &mut ChaCha8Rng| -> Vec<f64> {
                center
                    .iter()
                    .map(|c| c + r.random_range(-0.8..0.8))
                    .collect()
            };
            if r.random_bool(0.8) {
                rows.push((name.as_str(), id, Role::Query, jitter(&mut r)));
            }
            for _ in 0..r.random_range(0..=3) {
                rows.push((name.as_str(), id, Role::Gallery, jitter(&mut r)));
            }
            if rows.len() >= max_samples {
                rows.truncate(max_samples);
                break 'outer;
            }
        }
    }
    eval_dataset(&rows)
}

/// Train-split dataset from `(match_id, year, team_a, team_b)` fixtures and
/// `(action_id, match_id, player_id)` samples; sample `i` has feature row
/// `[i, 0]`.
pub fn train_dataset(fixtures: &[(&str, i32, &str, &str)], rows: &[(&str, &str, u64)]) -> Dataset {
    let matches = fixtures
        .iter()
        .map(|&(id, year, a, b)| {
            let meta = MatchMeta {
                match_id: id.into(),
                year,
                team_a: a.into(),
                team_b: b.into(),
            };
            (id.to_string(), meta)
        })
        .collect();
    let mut actions = BTreeMap::new();
    let mut samples = Vec::new();
    for (i, &(action, m, player)) in rows.iter().enumerate() {
        actions.insert(
            action.to_string(),
            ActionRef {
                action_id: action.into(),
                match_id: m.into(),
            },
        );
        samples.push(Sample {
            sample_id: format!("t{i}"),
            player_id: player,
            action_id: action.into(),
            role: Role::Train,
            feature_index: i,
            split: Split::Train,
        });
    }
    let feats: Vec<[f64; 2]> = (0..rows.len()).map(|i| [i as f64, 0.0]).collect();
    let features = FeatureStore::from_tensor(&Tensor2::from_rows(&feats).unwrap());
    Dataset::new(samples, actions, matches, features).unwrap()
}

/// `k * m` entries in `m` contiguous runs of one identity each, all from
/// the train split.
pub fn check_batch_shape(
    ds: &Dataset,
    batch: &Batch,
    spec: BatchSpec,
) -> std::result::Result<(), String> {
    let BatchSpec { k, m } = spec;
    if batch.entries.len() != k * m {
        return Err(format!(
            "batch has {} entries, want {}",
            batch.entries.len(),
            k * m
        ));
    }
    let mut ids = BTreeSet::new();
    for run in batch.entries.chunks(k) {
        let id = run[0].player_id;
        if run.iter().any(|e| e.player_id != id) || !ids.insert(id) {
            return Err(format!("identity {id} is not one contiguous run of {k}"));
        }
        for e in run {
            let s = &ds.samples()[e.sample];
            if s.player_id != e.player_id || s.split != Split::Train {
                return Err(format!("entry {} does not match its sample", e.sample));
            }
        }
    }
    if ids.len() != m {
        return Err(format!("{} identities, want {m}", ids.len()));
    }
    Ok(())
}

/// Every identity's distinct samples number `min(k, available)`, i.e.
/// duplicates appear only when the identity ran out.
fn check_replacement(
    batch: &Batch,
    k: usize,
    available: impl Fn(u64) -> usize,
) -> std::result::Result<(), String> {
    for run in batch.entries.chunks(k) {
        let distinct: BTreeSet<usize> = run.iter().map(|e| e.sample).collect();
        let want = k.min(available(run[0].player_id));
        if distinct.len() != want {
            return Err(format!(
                "identity {} has {} distinct samples, want {want}",
                run[0].player_id,
                distinct.len()
            ));
        }
    }
    Ok(())
}

/// Checks one random-sampler epoch: batch count, shape, no identity reuse.
pub fn check_random_epoch(
    ds: &Dataset,
    spec: BatchSpec,
    batches: &[Batch],
) -> std::result::Result<(), String> {
    let mut per_id: BTreeMap<u64, usize> = BTreeMap::new();
    for i in ds.train_indices() {
        *per_id.entry(ds.samples()[i].player_id).or_default() += 1;
    }
    let want = per_id.len() / spec.m;
    if batches.len() != want {
        return Err(format!("{} batches, want {want}", batches.len()));
    }
    let mut used = BTreeSet::new();
    for b in batches {
        check_batch_shape(ds, b, spec)?;
        check_replacement(b, spec.k, |id| per_id[&id])?;
        for run in b.entries.chunks(spec.k) {
            if !used.insert(run[0].player_id) {
                return Err(format!(
                    "identity {} reused within the epoch",
                    run[0].player_id
                ));
            }
        }
    }
    Ok(())
}

/// Replays one hierarchical epoch against an independently tracked pool:
/// shape, no cross-batch reuse, seed handling, level minimality, sample
/// preference, and the stopping rule.
pub fn check_hier_epoch(
    ds: &Dataset,
    spec: BatchSpec,
    batches: &[Batch],
) -> std::result::Result<(), String> {
    let BatchSpec { k, m } = spec;
    let keys: Vec<LevelKey> = ds
        .samples()
        .iter()
        .map(|s| LevelKey::new(s, ds.match_of(s)))
        .collect();
    let key = |i: usize| &keys[i];
    let mut pool: BTreeMap<u64, BTreeSet<usize>> = BTreeMap::new();
    for i in ds.train_indices() {
        pool.entry(ds.samples()[i].player_id).or_default().insert(i);
    }
    for (bi, b) in batches.iter().enumerate() {
        let ctx = |msg: String| format!("batch {bi}: {msg}");
        check_batch_shape(ds, b, spec).map_err(ctx)?;
        if b.level_trace.len() != k * m {
            return Err(ctx("level_trace length".into()));
        }
        let seed = b.seed_sample.ok_or_else(|| ctx("no seed sample".into()))?;
        let seed_id = ds.samples()[seed].player_id;
        if !pool.get(&seed_id).is_some_and(|s| s.contains(&seed)) {
            return Err(ctx("seed not in pool".into()));
        }
        let seed_key = key(seed);
        let level_of: BTreeMap<usize, Level> = pool
            .values()
            .flatten()
            .map(|&s| (s, seed_key.lowest_level(key(s))))
            .collect();
        let id_level = |id: u64| pool[&id].iter().map(|s| level_of[s]).min().unwrap();

        let runs: Vec<&[BatchEntry]> = b.entries.chunks(k).collect();
        let tags: Vec<Level> = b.level_trace.chunks(k).map(|t| t[0]).collect();
        if b.level_trace
            .chunks(k)
            .any(|t| t.iter().any(|&l| l != t[0]))
        {
            return Err(ctx("mixed level tags within an identity".into()));
        }
        if runs[0][0].player_id != seed_id || tags[0] != Level::I || runs[0][0].sample != seed {
            return Err(ctx(
                "seed identity must come first, tagged I, seed sample first".into(),
            ));
        }
        for (run, &tag) in runs.iter().zip(&tags).skip(1) {
            let id = run[0].player_id;
            if !pool.contains_key(&id) {
                return Err(ctx(format!("identity {id} has no pool samples")));
            }
            if id_level(id) != tag {
                return Err(ctx(format!(
                    "identity {id} tagged {tag} but joins at {}",
                    id_level(id)
                )));
            }
        }
        if tags.windows(2).skip(1).any(|w| w[1] < w[0]) {
            return Err(ctx(format!("tags not ascending: {tags:?}")));
        }
        let highest = *tags[1..].iter().max().unwrap_or(&Level::I);
        let chosen: BTreeSet<u64> = runs.iter().map(|r| r[0].player_id).collect();
        for &id in pool.keys() {
            if !chosen.contains(&id) && id_level(id) < highest {
                return Err(ctx(format!(
                    "skipped identity {id} at {} for {highest}",
                    id_level(id)
                )));
            }
        }
        for run in &runs {
            let own = &pool[&run[0].player_id];
            let taken: BTreeSet<usize> = run.iter().map(|e| e.sample).collect();
            if !taken.is_subset(own) {
                return Err(ctx("sample reused across batches".into()));
            }
            if taken.len() != k.min(own.len()) {
                return Err(ctx("duplicates before the identity ran out".into()));
            }
            // The seed sample is at level I, so "seed first, then lowest
            // level" never leaves a lower-level sample behind.
            let worst_taken = taken.iter().map(|s| level_of[s]).max().unwrap();
            let best_left = own
                .iter()
                .filter(|s| !taken.contains(s))
                .map(|s| level_of[s])
                .min();
            if best_left.is_some_and(|l| l < worst_taken) {
                return Err(ctx(
                    "a lower-level sample of a chosen identity was left".into()
                ));
            }
        }
        for e in &b.entries {
            if let Some(set) = pool.get_mut(&e.player_id) {
                set.remove(&e.sample);
                if set.is_empty() {
                    pool.remove(&e.player_id);
                }
            }
        }
    }
    if pool.len() >= m {
        return Err(format!(
            "epoch ended with {} identities left (m = {m})",
            pool.len()
        ));
    }
    Ok(())
}
