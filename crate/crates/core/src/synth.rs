//! Synthetic datasets with team/match/action structure.
//!
//! Every team owns a base vector on a sphere of radius `team_scale`, so
//! players of one team look alike. Each match draws fresh players: a
//! player's appearance is the team base, plus an optional per-match kit
//! offset for the team, plus a Gaussian player offset. An action shows
//! every player of the match once in its action frame and again in each
//! replay frame; replay features perturb the action-frame feature.
//! Occlusion blends a detection with another player of the same frame.
//!
//! `team_scale`, `player_scale`, `kit_scale` and `view_noise` are RMS
//! vector norms: an isotropic Gaussian term of scale `s` has per-coordinate
//! standard deviation `s / sqrt(feature_dim)`. With `view_rank > 0` the
//! frame noise is confined to that many fixed random directions (camera
//! angle and pose change appearance along a few dominant axes), which is
//! what makes a learned metric beat raw distances.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{ActionRef, Dataset, FeatureStore, MatchMeta, Role, Sample, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor2;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_teams: usize,
    pub matches_per_pair: usize,
    pub actions_per_match: usize,
    pub players_per_team: usize,
    pub replays_per_action: usize,
    pub feature_dim: usize,
    pub team_scale: f64,
    pub player_scale: f64,
    /// RMS norm of a per-(match, team) kit offset shared by that team's
    /// players in that match; 0 keeps teams identical across matches.
    pub kit_scale: f64,
    pub view_noise: f64,
    /// Number of directions view noise lives in; 0 means isotropic.
    pub view_rank: usize,
    pub occlusion_prob: f64,
    pub occlusion_blend: f64,
    /// Fraction of matches assigned to the test split.
    pub test_fraction: f64,
    /// Referee identities per match; they carry their own "referee" base.
    pub referees_per_match: usize,
    pub base_year: i32,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_teams: 6,
            matches_per_pair: 2,
            actions_per_match: 4,
            players_per_team: 5,
            replays_per_action: 2,
            feature_dim: 32,
            team_scale: 3.0,
            player_scale: 1.0,
            kit_scale: 0.0,
            view_noise: 4.0,
            view_rank: 6,
            occlusion_prob: 0.2,
            occlusion_blend: 0.35,
            test_fraction: 0.25,
            referees_per_match: 0,
            base_year: 2015,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_teams", self.n_teams, 2),
            ("matches_per_pair", self.matches_per_pair, 1),
            ("actions_per_match", self.actions_per_match, 1),
            ("players_per_team", self.players_per_team, 1),
            ("replays_per_action", self.replays_per_action, 1),
            ("feature_dim", self.feature_dim, 2),
        ];
        for (name, value, min) in counts {
            if value < min {
                return Err(Error::Config(format!(
                    "{name} must be >= {min}, got {value}"
                )));
            }
        }
        let nonneg = [
            ("team_scale", self.team_scale),
            ("player_scale", self.player_scale),
            ("kit_scale", self.kit_scale),
            ("view_noise", self.view_noise),
        ];
        for (name, value) in nonneg {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0, got {value}")));
            }
        }
        let unit = [
            ("occlusion_prob", self.occlusion_prob),
            ("occlusion_blend", self.occlusion_blend),
            ("test_fraction", self.test_fraction),
        ];
        for (name, value) in unit {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!(
                    "{name} must be in [0, 1], got {value}"
                )));
            }
        }
        if self.base_year <= 0 {
            return Err(Error::Config(format!(
                "base_year must be > 0, got {}",
                self.base_year
            )));
        }
        Ok(())
    }

    pub fn n_matches(&self) -> usize {
        self.n_teams * (self.n_teams - 1) / 2 * self.matches_per_pair
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    let sd = scale / (dim as f64).sqrt();
    (0..dim)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn on_sphere(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| radius * x / norm).collect();
        }
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Year of the `k`-th meeting of a team pair. Meetings 0 and 1 fall in
/// different years, later meetings share years pairwise.
fn meeting_year(base_year: i32, k: usize) -> i32 {
    base_year + k.div_ceil(2) as i32
}

/// Generates a dataset. Deterministic in `config.seed`.
pub fn generate(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let dim = config.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let team_names: Vec<String> = (0..config.n_teams)
        .map(|t| format!("team-{t:02}"))
        .collect();
    let team_bases: Vec<Vec<f64>> = (0..config.n_teams)
        .map(|_| on_sphere(&mut rng, dim, config.team_scale))
        .collect();
    let referee_base = on_sphere(&mut rng, dim, config.team_scale);
    let view_dirs: Vec<Vec<f64>> = (0..config.view_rank.min(dim))
        .map(|_| on_sphere(&mut rng, dim, 1.0))
        .collect();
    let view = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        if view_dirs.is_empty() {
            return gaussian(rng, dim, config.view_noise);
        }
        let sd = config.view_noise / (view_dirs.len() as f64).sqrt();
        let mut v = vec![0.0; dim];
        for u in &view_dirs {
            let z = sd * rng.sample::<f64, _>(StandardNormal);
            for (x, ui) in v.iter_mut().zip(u) {
                *x += z * ui;
            }
        }
        v
    };

    let mut fixtures = Vec::new();
    for a in 0..config.n_teams {
        for b in (a + 1)..config.n_teams {
            for k in 0..config.matches_per_pair {
                fixtures.push((a, b, meeting_year(config.base_year, k)));
            }
        }
    }
    let n_matches = fixtures.len();
    let mut n_test = (config.test_fraction * n_matches as f64).round() as usize;
    if config.test_fraction > 0.0 {
        n_test = n_test.max(1);
    }
    n_test = n_test.min(n_matches);
    let mut order: Vec<usize> = (0..n_matches).collect();
    order.shuffle(&mut rng);
    let mut is_test = vec![false; n_matches];
    for &m in &order[..n_test] {
        is_test[m] = true;
    }

    let mut matches = BTreeMap::new();
    let mut actions = BTreeMap::new();
    let mut samples = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut next_player = 0u64;

    for (mi, &(a, b, year)) in fixtures.iter().enumerate() {
        let match_id = format!("m{mi:03}");
        matches.insert(
            match_id.clone(),
            MatchMeta {
                match_id: match_id.clone(),
                year,
                team_a: team_names[a].clone(),
                team_b: team_names[b].clone(),
            },
        );
        let split = if is_test[mi] {
            Split::Test
        } else {
            Split::Train
        };

        // (player_id, appearance) for everyone on the pitch in this match.
        let mut players: Vec<(u64, Vec<f64>)> = Vec::new();
        for &team in &[a, b] {
            let kit = add(
                &team_bases[team],
                &gaussian(&mut rng, dim, config.kit_scale),
            );
            for _ in 0..config.players_per_team {
                let offset = gaussian(&mut rng, dim, config.player_scale);
                players.push((next_player, add(&kit, &offset)));
                next_player += 1;
            }
        }
        for _ in 0..config.referees_per_match {
            let offset = gaussian(&mut rng, dim, config.player_scale);
            players.push((next_player, add(&referee_base, &offset)));
            next_player += 1;
        }

        for ai in 0..config.actions_per_match {
            let action_id = format!("{match_id}-a{ai:02}");
            actions.insert(
                action_id.clone(),
                ActionRef {
                    action_id: action_id.clone(),
                    match_id: match_id.clone(),
                },
            );

            let action_frame: Vec<Vec<f64>> = players
                .iter()
                .map(|(_, look)| add(look, &view(&mut rng)))
                .collect();
            let mut frames = vec![action_frame.clone()];
            for _ in 0..config.replays_per_action {
                frames.push(
                    action_frame
                        .iter()
                        .map(|x| add(x, &view(&mut rng)))
                        .collect(),
                );
            }

            for (fi, frame) in frames.iter().enumerate() {
                let role = match (split, fi) {
                    (Split::Train, _) => Role::Train,
                    (Split::Test, 0) => Role::Query,
                    (Split::Test, _) => Role::Gallery,
                };
                for (pi, (player_id, _)) in players.iter().enumerate() {
                    let mut x = frame[pi].clone();
                    if players.len() > 1 && rng.random::<f64>() < config.occlusion_prob {
                        let mut other = rng.random_range(0..players.len() - 1);
                        if other >= pi {
                            other += 1;
                        }
                        let w = config.occlusion_blend;
                        for (v, o) in x.iter_mut().zip(&frame[other]) {
                            *v = (1.0 - w) * *v + w * o;
                        }
                    }
                    let index = samples.len();
                    samples.push(Sample {
                        sample_id: format!("s{index:06}"),
                        player_id: *player_id,
                        action_id: action_id.clone(),
                        role,
                        feature_index: index,
                        split,
                    });
                    rows.push(x);
                }
            }
        }
    }

    let features = if rows.is_empty() {
        FeatureStore::new(0, dim, Vec::new())?
    } else {
        FeatureStore::from_tensor(&Tensor2::from_rows(&rows)?)
    };
    Dataset::new(samples, actions, matches, features)
}
