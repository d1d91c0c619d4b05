use std::collections::{BTreeMap, BTreeSet};

use reid_forge::data::{index_by_action, Role, Split};
use reid_forge::sampler::{Level, LevelKey};
use reid_forge::synth::{generate, GenConfig};

fn quiet(seed: u64) -> GenConfig {
    GenConfig {
        view_noise: 0.0,
        occlusion_prob: 0.0,
        seed,
        ..GenConfig::default()
    }
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn same_seed_gives_identical_datasets() {
    let a = generate(&GenConfig::default()).unwrap();
    let b = generate(&GenConfig::default()).unwrap();
    assert_eq!(a, b);
    let c = generate(&GenConfig {
        seed: 8,
        ..GenConfig::default()
    })
    .unwrap();
    assert_ne!(a.features(), c.features());
}

#[test]
fn zero_noise_player_samples_identical_within_match() {
    let ds = generate(&quiet(3)).unwrap();
    let mut first: BTreeMap<u64, usize> = BTreeMap::new();
    for s in ds.samples() {
        let f = *first.entry(s.player_id).or_insert(s.feature_index);
        assert_eq!(ds.features().row(f), ds.features().row(s.feature_index));
    }
}

#[test]
fn hand_count_single_match() {
    let cfg = GenConfig {
        n_teams: 2,
        players_per_team: 3,
        actions_per_match: 1,
        replays_per_action: 2,
        matches_per_pair: 1,
        test_fraction: 1.0,
        ..GenConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    assert_eq!(ds.matches().len(), 1);
    let ids: BTreeSet<u64> = ds.samples().iter().map(|s| s.player_id).collect();
    assert_eq!(ids.len(), 6);
    let count = |role| ds.samples().iter().filter(|s| s.role == role).count();
    assert_eq!(count(Role::Query), 6);
    assert_eq!(count(Role::Gallery), 12);
}

#[test]
fn splits_use_disjoint_matches_and_identities() {
    let ds = generate(&GenConfig::default()).unwrap();
    let mut split_of: BTreeMap<&str, Split> = BTreeMap::new();
    let mut id_split: BTreeMap<u64, Split> = BTreeMap::new();
    for s in ds.samples() {
        let m = ds.match_of(s).match_id.as_str();
        assert_eq!(*split_of.entry(m).or_insert(s.split), s.split);
        assert_eq!(*id_split.entry(s.player_id).or_insert(s.split), s.split);
    }
    let n_test = split_of.values().filter(|&&s| s == Split::Test).count();
    assert!(n_test > 0 && n_test < split_of.len());
}

#[test]
fn within_team_closer_than_between_team() {
    // Players are numbered per match with team_a's players first.
    let cfg = quiet(11);
    let ds = generate(&cfg).unwrap();
    let ppt = cfg.players_per_team as u64;
    let mut appearance: BTreeMap<u64, (String, usize)> = BTreeMap::new();
    let mut first_in_match: BTreeMap<String, u64> = BTreeMap::new();
    for s in ds.samples() {
        let meta = ds.match_of(s);
        let base = *first_in_match
            .entry(meta.match_id.clone())
            .or_insert(s.player_id);
        let team = if s.player_id - base < ppt {
            &meta.team_a
        } else {
            &meta.team_b
        };
        appearance
            .entry(s.player_id)
            .or_insert((team.clone(), s.feature_index));
    }
    let players: Vec<&(String, usize)> = appearance.values().collect();
    let (mut within, mut between) = (Vec::new(), Vec::new());
    for i in 0..players.len() {
        for j in (i + 1)..players.len() {
            let d = dist(
                ds.features().row(players[i].1),
                ds.features().row(players[j].1),
            );
            if players[i].0 == players[j].0 {
                within.push(d);
            } else {
                between.push(d);
            }
        }
    }
    assert!(within.len() + between.len() >= 1000);
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    let (mw, sw) = stats(&within);
    let (mb, sb) = stats(&between);
    assert!(
        mw + 3.0 * (sw * sw + sb * sb).sqrt() < mb,
        "within {mw} between {mb}"
    );
}

#[test]
fn nearest_centroid_within_action_is_perfect_at_low_noise() {
    let cfg = GenConfig {
        view_noise: 0.05,
        view_rank: 0,
        occlusion_prob: 0.0,
        seed: 21,
        ..GenConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let mut by_action: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples().iter().enumerate() {
        by_action.entry(s.action_id.as_str()).or_default().push(i);
    }
    let dim = ds.feature_dim();
    for members in by_action.values() {
        let mut centroids: BTreeMap<u64, (Vec<f64>, usize)> = BTreeMap::new();
        for &i in members {
            let s = &ds.samples()[i];
            let e = centroids.entry(s.player_id).or_insert((vec![0.0; dim], 0));
            for (c, &x) in e.0.iter_mut().zip(ds.features().row(s.feature_index)) {
                *c += f64::from(x);
            }
            e.1 += 1;
        }
        for &i in members {
            let s = &ds.samples()[i];
            let x = ds.features().row(s.feature_index);
            let nearest = centroids
                .iter()
                .map(|(&id, (sum, n))| {
                    let d: f64 = sum
                        .iter()
                        .zip(x)
                        .map(|(c, &v)| (c / *n as f64 - f64::from(v)).powi(2))
                        .sum();
                    (d, id)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap()
                .1;
            assert_eq!(nearest, s.player_id, "sample {}", s.sample_id);
        }
    }
}

#[test]
fn team_pairs_repeat_within_and_across_years() {
    let cfg = GenConfig {
        n_teams: 3,
        matches_per_pair: 3,
        ..GenConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let keys: Vec<LevelKey> = ds
        .matches()
        .values()
        .map(|m| {
            let s = ds
                .samples()
                .iter()
                .find(|s| ds.match_of(s).match_id == m.match_id)
                .unwrap();
            LevelKey::new(s, m)
        })
        .collect();
    let mut lowest = BTreeSet::new();
    for (i, a) in keys.iter().enumerate() {
        for b in &keys[i + 1..] {
            lowest.insert(a.lowest_level(b));
        }
    }
    for level in [Level::III, Level::IV, Level::V, Level::VI] {
        assert!(
            lowest.contains(&level),
            "no match pair first joins at {level}"
        );
    }
}

#[test]
fn every_test_action_has_queries_and_gallery() {
    let ds = generate(&GenConfig::default()).unwrap();
    let index = index_by_action(&ds);
    assert!(!index.is_empty());
    for split in index.values() {
        assert_eq!(split.gallery.len(), split.query.len() * 2);
    }
}
