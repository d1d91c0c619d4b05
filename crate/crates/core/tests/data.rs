mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::{eval_dataset, one_match};
use proptest::prelude::*;
use reid_forge::data::{
    index_by_action, load_dataset, save_dataset, ActionRef, Dataset, FeatureStore, Role, Sample,
    Split, ACTIONS_FILE, FEATURES_FILE, MATCHES_FILE, SAMPLES_FILE,
};
use reid_forge::numerics::Tensor2;
use reid_forge::synth::{generate, GenConfig};
use reid_forge::Error;
use tempfile::tempdir;

fn small_config(seed: u64) -> GenConfig {
    GenConfig {
        n_teams: 3,
        matches_per_pair: 1,
        actions_per_match: 1,
        players_per_team: 2,
        replays_per_action: 1,
        feature_dim: 3,
        test_fraction: 0.34,
        seed,
        ..GenConfig::default()
    }
}

fn four_samples() -> Dataset {
    let mut actions = BTreeMap::new();
    for a in ["a1", "a2"] {
        actions.insert(
            a.to_string(),
            ActionRef {
                action_id: a.into(),
                match_id: "m0".into(),
            },
        );
    }
    let samples = (0..4)
        .map(|i| Sample {
            sample_id: format!("s{i}"),
            player_id: i as u64 % 2,
            action_id: if i < 2 { "a1" } else { "a2" }.into(),
            role: if i % 2 == 0 {
                Role::Query
            } else {
                Role::Gallery
            },
            feature_index: i,
            split: Split::Test,
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..8).map(|j| (i * 8 + j) as f64 * 0.25).collect())
        .collect();
    let features = FeatureStore::from_tensor(&Tensor2::from_rows(&rows).unwrap());
    Dataset::new(samples, actions, one_match(), features).unwrap()
}

#[test]
fn round_trip_four_samples() {
    let ds = four_samples();
    let dir = tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.samples().len(), 4);
    assert_eq!(back.feature_dim(), 8);
    for s in back.samples() {
        assert!(s.feature_index < back.features().rows());
    }
}

#[test]
fn dangling_action_is_named() {
    let dir = tempdir().unwrap();
    save_dataset(&four_samples(), dir.path()).unwrap();
    let path = dir.path().join(SAMPLES_FILE);
    let text = fs::read_to_string(&path)
        .unwrap()
        .replace("\ta2\t", "\ta9\t");
    fs::write(&path, text).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(
        matches!(&err, Error::DanglingRef { id, .. } if id == "a9"),
        "{err}"
    );
    assert!(err.to_string().contains("a9"));
}

#[test]
fn empty_samples_file_loads_empty_dataset() {
    let dir = tempdir().unwrap();
    save_dataset(&four_samples(), dir.path()).unwrap();
    fs::write(dir.path().join(SAMPLES_FILE), "").unwrap();
    FeatureStore::new(0, 8, Vec::new())
        .unwrap()
        .write(&dir.path().join(FEATURES_FILE))
        .unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    assert!(ds.samples().is_empty());
    assert!(index_by_action(&ds).is_empty());
}

#[test]
fn empty_dataset_round_trips() {
    let ds = eval_dataset(&[]);
    let dir = tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn save_into_unwritable_location_fails() {
    let dir = tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let err = save_dataset(&four_samples(), &blocker.join("sub")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn missing_directory_is_missing_file() {
    let dir = tempdir().unwrap();
    let err = load_dataset(&dir.path().join("nope")).unwrap_err();
    assert!(matches!(err, Error::MissingFile(_)));
}

#[test]
fn index_partition_examples() {
    let rows = [
        ("a1", 1, Role::Query, vec![0.0, 0.0]),
        ("a1", 1, Role::Gallery, vec![0.0, 1.0]),
        ("a1", 2, Role::Gallery, vec![1.0, 0.0]),
        ("a2", 3, Role::Query, vec![2.0, 0.0]),
        ("a2", 3, Role::Gallery, vec![2.0, 1.0]),
        ("a2", 4, Role::Gallery, vec![3.0, 0.0]),
        ("a3", 5, Role::Gallery, vec![4.0, 0.0]),
    ];
    let index = index_by_action(&eval_dataset(&rows));
    assert_eq!(index.len(), 3);
    assert_eq!((index["a1"].query.len(), index["a1"].gallery.len()), (1, 2));
    assert_eq!((index["a2"].query.len(), index["a2"].gallery.len()), (1, 2));
    assert!(index["a3"].query.is_empty());
    assert_eq!(index["a3"].gallery, vec![6]);
}

#[test]
fn train_only_dataset_has_empty_index() {
    let cfg = GenConfig {
        test_fraction: 0.0,
        ..small_config(1)
    };
    let ds = generate(&cfg).unwrap();
    assert!(!ds.samples().is_empty());
    assert!(index_by_action(&ds).is_empty());
}

/// Rewrites field `field` of record `record` (0-based, comments skipped).
fn mutate_tsv(dir: &Path, file: &str, record: usize, field: usize, value: &str) {
    let path = dir.join(file);
    let text = fs::read_to_string(&path).unwrap();
    let mut seen = 0;
    let lines: Vec<String> = text
        .lines()
        .map(|line| {
            if line.starts_with('#') {
                return line.to_string();
            }
            let mut fields: Vec<&str> = line.split('\t').collect();
            if seen == record {
                fields[field] = value;
            }
            seen += 1;
            fields.join("\t")
        })
        .collect();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
}

fn record(dir: &Path, file: &str, record: usize) -> Vec<String> {
    let text = fs::read_to_string(dir.join(file)).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .nth(record)
        .unwrap()
        .split('\t')
        .map(str::to_string)
        .collect()
}

#[test]
fn every_single_field_corruption_is_rejected() {
    let ds = generate(&small_config(5)).unwrap();
    let clean = tempdir().unwrap();
    save_dataset(&ds, clean.path()).unwrap();
    let n_samples = ds.samples().len();
    let n_actions = ds.actions().len();
    let n_matches = ds.matches().len();

    let check = |file: &str, rec: usize, field: usize, value: &str| {
        let dir = tempdir().unwrap();
        for f in [MATCHES_FILE, ACTIONS_FILE, SAMPLES_FILE, FEATURES_FILE] {
            fs::copy(clean.path().join(f), dir.path().join(f)).unwrap();
        }
        mutate_tsv(dir.path(), file, rec, field, value);
        assert!(
            load_dataset(dir.path()).is_err(),
            "{file} record {rec} field {field} = {value:?} was accepted"
        );
    };

    for rec in 0..n_samples {
        let fields = record(clean.path(), SAMPLES_FILE, rec);
        let other = if rec == 0 { 1 } else { 0 };
        let other_id = record(clean.path(), SAMPLES_FILE, other)[0].clone();
        check(SAMPLES_FILE, rec, 0, &other_id);
        check(SAMPLES_FILE, rec, 0, "");
        check(SAMPLES_FILE, rec, 1, "player");
        check(SAMPLES_FILE, rec, 2, "no-such-action");
        let wrong_role = if fields[5] == "train" {
            "query"
        } else {
            "train"
        };
        check(SAMPLES_FILE, rec, 3, wrong_role);
        check(SAMPLES_FILE, rec, 3, "spectator");
        check(SAMPLES_FILE, rec, 4, &n_samples.to_string());
        check(SAMPLES_FILE, rec, 4, "-1");
        check(SAMPLES_FILE, rec, 5, "validation");
    }
    for rec in 0..n_actions {
        check(ACTIONS_FILE, rec, 0, "renamed-action");
        check(ACTIONS_FILE, rec, 1, "no-such-match");
    }
    for rec in 0..n_matches {
        let fields = record(clean.path(), MATCHES_FILE, rec);
        check(MATCHES_FILE, rec, 0, "renamed-match");
        check(MATCHES_FILE, rec, 1, "0");
        check(MATCHES_FILE, rec, 1, "year");
        check(MATCHES_FILE, rec, 3, &fields[2].to_uppercase());
        check(MATCHES_FILE, rec, 2, " ");
    }

    let bin = fs::read(clean.path().join(FEATURES_FILE)).unwrap();
    for cut in [1, 4] {
        let dir = tempdir().unwrap();
        for f in [MATCHES_FILE, ACTIONS_FILE, SAMPLES_FILE] {
            fs::copy(clean.path().join(f), dir.path().join(f)).unwrap();
        }
        fs::write(dir.path().join(FEATURES_FILE), &bin[..bin.len() - cut]).unwrap();
        assert!(load_dataset(dir.path()).is_err(), "truncated by {cut}");
    }
}

#[test]
fn malformed_line_reports_file_and_line() {
    let dir = tempdir().unwrap();
    save_dataset(&four_samples(), dir.path()).unwrap();
    let path = dir.path().join(ACTIONS_FILE);
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("lonely\n");
    fs::write(&path, text).unwrap();
    match load_dataset(dir.path()).unwrap_err() {
        Error::Malformed { file, line, .. } => {
            assert_eq!(file, ACTIONS_FILE);
            assert_eq!(line, 4);
        }
        other => panic!("unexpected {other}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_datasets_round_trip(
        seed in any::<u64>(),
        teams in 2usize..4,
        actions in 1usize..3,
        dim in 2usize..6,
        test_fraction in 0.0f64..1.0,
    ) {
        let cfg = GenConfig {
            n_teams: teams,
            actions_per_match: actions,
            feature_dim: dim,
            test_fraction,
            ..small_config(seed)
        };
        let ds = generate(&cfg).unwrap();
        let dir = tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(&back, &ds);

        // Query/gallery index partitions exactly the non-train samples.
        let index = index_by_action(&back);
        let mut covered: Vec<usize> = index
            .values()
            .flat_map(|s| s.query.iter().chain(&s.gallery).copied())
            .collect();
        covered.sort_unstable();
        let expected: Vec<usize> = (0..back.samples().len())
            .filter(|&i| back.samples()[i].role != Role::Train)
            .collect();
        prop_assert_eq!(covered, expected);
    }
}
