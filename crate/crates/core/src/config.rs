//! Flat `key=value` experiment configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Unknown keys and repeated keys are errors. [`ExperimentConfig::to_text`]
//! writes every key with its current value, so an echoed config reproduces
//! the run on its own.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sampler::BatchSpec;
use crate::synth::GenConfig;
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "REIDFORGE_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub gen: GenConfig,
    pub train: TrainConfig,
    /// Dataset directory for `train` and `ablate`; `ablate` generates one
    /// from the `gen` keys when unset.
    pub dataset: Option<PathBuf>,
    pub ablate_seeds: usize,
    /// Centroid weight used by ablation cells that enable the centroid loss.
    pub ablate_gamma: f64,
    /// Triplet-centroid weight used by cells that enable it.
    pub ablate_delta: f64,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            gen: GenConfig::default(),
            train: TrainConfig::default(),
            dataset: None,
            ablate_seeds: 5,
            ablate_gamma: 0.5,
            ablate_delta: 0.5,
            jobs: 4,
        }
    }
}

/// `(key, description)` for every recognised key, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("n_teams", "number of teams"),
    ("matches_per_pair", "matches played by each team pair"),
    ("actions_per_match", "actions per match"),
    ("players_per_team", "players per team and match"),
    ("replays_per_action", "replay frames per action"),
    ("feature_dim", "raw feature dimension"),
    ("team_scale", "RMS norm of team base vectors"),
    ("player_scale", "RMS norm of per-player offsets"),
    ("kit_scale", "RMS norm of per-match team kit offsets"),
    ("view_noise", "RMS norm of per-frame noise"),
    (
        "view_rank",
        "directions spanned by frame noise (0: isotropic)",
    ),
    ("occlusion_prob", "probability that a detection is occluded"),
    ("occlusion_blend", "weight of the occluding player"),
    ("test_fraction", "fraction of matches in the test split"),
    ("referees_per_match", "referee identities per match"),
    ("base_year", "year of the first meeting of every pair"),
    ("gen_seed", "generator seed"),
    ("dataset", "dataset directory (empty: none)"),
    ("out_dir", "training output directory (empty: none)"),
    ("sampler", "random | hier"),
    ("k", "samples per identity"),
    ("m", "identities per batch"),
    (
        "hidden_dims",
        "comma separated hidden layer widths (may be empty)",
    ),
    ("embedding_dim", "embedding width"),
    ("alpha", "triplet loss weight"),
    ("beta", "classification loss weight"),
    ("gamma", "centroid loss weight"),
    ("delta", "triplet-centroid loss weight"),
    ("margin", "triplet margin"),
    ("margin_tc", "triplet-centroid margin"),
    ("centroid_mode", "separation | as_written"),
    (
        "separation_margin",
        "margin of the separation-mode centroid loss",
    ),
    ("epochs", "training epochs"),
    ("lr", "base learning rate"),
    ("momentum", "momentum coefficient"),
    ("lr_floor", "final learning rate as a fraction of lr"),
    ("checkpoint_period", "epochs between checkpoints"),
    ("eval_period", "epochs between test evaluations"),
    ("metric", "euclidean | cosine (evaluation)"),
    ("seed", "training seed (sampling and initialisation)"),
    ("ablate_seeds", "training seeds per ablation cell"),
    (
        "ablate_gamma",
        "centroid weight in ablation cells that use it",
    ),
    (
        "ablate_delta",
        "triplet-centroid weight in ablation cells that use it",
    ),
    ("jobs", "concurrent ablation runs"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let g = &mut self.gen;
        let t = &mut self.train;
        let w = &mut t.weights;
        match key {
            "n_teams" => g.n_teams = parse(key, value)?,
            "matches_per_pair" => g.matches_per_pair = parse(key, value)?,
            "actions_per_match" => g.actions_per_match = parse(key, value)?,
            "players_per_team" => g.players_per_team = parse(key, value)?,
            "replays_per_action" => g.replays_per_action = parse(key, value)?,
            "feature_dim" => g.feature_dim = parse(key, value)?,
            "team_scale" => g.team_scale = parse(key, value)?,
            "player_scale" => g.player_scale = parse(key, value)?,
            "kit_scale" => g.kit_scale = parse(key, value)?,
            "view_noise" => g.view_noise = parse(key, value)?,
            "view_rank" => g.view_rank = parse(key, value)?,
            "occlusion_prob" => g.occlusion_prob = parse(key, value)?,
            "occlusion_blend" => g.occlusion_blend = parse(key, value)?,
            "test_fraction" => g.test_fraction = parse(key, value)?,
            "referees_per_match" => g.referees_per_match = parse(key, value)?,
            "base_year" => g.base_year = parse(key, value)?,
            "gen_seed" => g.seed = parse(key, value)?,
            "dataset" => self.dataset = opt_path(value),
            "out_dir" => t.out_dir = opt_path(value),
            "sampler" => t.sampler = parse(key, value)?,
            "k" => t.batch.k = parse(key, value)?,
            "m" => t.batch.m = parse(key, value)?,
            "hidden_dims" => {
                t.hidden_dims = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "embedding_dim" => t.embedding_dim = parse(key, value)?,
            "alpha" => w.alpha = parse(key, value)?,
            "beta" => w.beta = parse(key, value)?,
            "gamma" => w.gamma = parse(key, value)?,
            "delta" => w.delta = parse(key, value)?,
            "margin" => w.margin = parse(key, value)?,
            "margin_tc" => w.margin_tc = parse(key, value)?,
            "centroid_mode" => w.centroid_mode = parse(key, value)?,
            "separation_margin" => w.separation_margin = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "lr_floor" => t.lr_floor = parse(key, value)?,
            "checkpoint_period" => t.checkpoint_period = parse(key, value)?,
            "eval_period" => t.eval_period = parse(key, value)?,
            "metric" => t.metric = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "ablate_seeds" => self.ablate_seeds = parse(key, value)?,
            "ablate_gamma" => self.ablate_gamma = parse(key, value)?,
            "ablate_delta" => self.ablate_delta = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let g = &self.gen;
        let t = &self.train;
        let w = &t.weights;
        Some(match key {
            "n_teams" => g.n_teams.to_string(),
            "matches_per_pair" => g.matches_per_pair.to_string(),
            "actions_per_match" => g.actions_per_match.to_string(),
            "players_per_team" => g.players_per_team.to_string(),
            "replays_per_action" => g.replays_per_action.to_string(),
            "feature_dim" => g.feature_dim.to_string(),
            "team_scale" => format!("{:?}", g.team_scale),
            "player_scale" => format!("{:?}", g.player_scale),
            "kit_scale" => format!("{:?}", g.kit_scale),
            "view_noise" => format!("{:?}", g.view_noise),
            "view_rank" => g.view_rank.to_string(),
            "occlusion_prob" => format!("{:?}", g.occlusion_prob),
            "occlusion_blend" => format!("{:?}", g.occlusion_blend),
            "test_fraction" => format!("{:?}", g.test_fraction),
            "referees_per_match" => g.referees_per_match.to_string(),
            "base_year" => g.base_year.to_string(),
            "gen_seed" => g.seed.to_string(),
            "dataset" => path_text(&self.dataset),
            "out_dir" => path_text(&t.out_dir),
            "sampler" => t.sampler.to_string(),
            "k" => t.batch.k.to_string(),
            "m" => t.batch.m.to_string(),
            "hidden_dims" => t
                .hidden_dims
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "embedding_dim" => t.embedding_dim.to_string(),
            "alpha" => format!("{:?}", w.alpha),
            "beta" => format!("{:?}", w.beta),
            "gamma" => format!("{:?}", w.gamma),
            "delta" => format!("{:?}", w.delta),
            "margin" => format!("{:?}", w.margin),
            "margin_tc" => format!("{:?}", w.margin_tc),
            "centroid_mode" => w.centroid_mode.to_string(),
            "separation_margin" => format!("{:?}", w.separation_margin),
            "epochs" => t.epochs.to_string(),
            "lr" => format!("{:?}", t.lr),
            "momentum" => format!("{:?}", t.momentum),
            "lr_floor" => format!("{:?}", t.lr_floor),
            "checkpoint_period" => t.checkpoint_period.to_string(),
            "eval_period" => t.eval_period.to_string(),
            "metric" => t.metric.to_string(),
            "seed" => t.seed.to_string(),
            "ablate_seeds" => self.ablate_seeds.to_string(),
            "ablate_gamma" => format!("{:?}", self.ablate_gamma),
            "ablate_delta" => format!("{:?}", self.ablate_delta),
            "jobs" => self.jobs.to_string(),
            _ => return None,
        })
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    n + 1
                )));
            }
            config
                .set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `REIDFORGE_SEED` when set. `gen` selects which seed it
    /// replaces.
    pub fn apply_seed_env(&mut self, gen: bool) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed: u64 = parse(SEED_ENV, v.trim())?;
            if gen {
                self.gen.seed = seed;
            } else {
                self.train.seed = seed;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        BatchSpec::new(self.train.batch.k, self.train.batch.m)?;
        if self.ablate_seeds == 0 || self.jobs == 0 {
            return Err(Error::Config("ablate_seeds and jobs must be >= 1".into()));
        }
        for (name, v) in [
            ("ablate_gamma", self.ablate_gamma),
            ("ablate_delta", self.ablate_delta),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Every key with its value, one per line, each preceded by its
    /// description.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            let value = self.get(key).expect("listed key");
            let _ = writeln!(out, "# {doc}\n{key}={value}");
        }
        out
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = ExperimentConfig::default();
        c.set("hidden_dims", "16,8").unwrap();
        c.set("dataset", "/tmp/x").unwrap();
        c.set("sampler", "random").unwrap();
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_is_settable() {
        let c = ExperimentConfig::default();
        for (key, _) in KEYS {
            let mut d = ExperimentConfig::default();
            d.set(key, &c.get(key).unwrap()).unwrap();
            assert_eq!(d, c, "{key}");
        }
    }

    #[test]
    fn comments_and_blanks() {
        let c = ExperimentConfig::parse("# header\n\nepochs = 3  # short\n").unwrap();
        assert_eq!(c.train.epochs, 3);
    }

    #[test]
    fn rejects_unknown_and_duplicate() {
        assert!(ExperimentConfig::parse("bogus=1").unwrap_err().is_config());
        assert!(ExperimentConfig::parse("k=2\nk=3").unwrap_err().is_config());
        assert!(ExperimentConfig::parse("k").unwrap_err().is_config());
        assert!(ExperimentConfig::parse("k=two").unwrap_err().is_config());
    }

    #[test]
    fn empty_hidden_dims() {
        let c = ExperimentConfig::parse("hidden_dims=").unwrap();
        assert!(c.train.hidden_dims.is_empty());
    }
}
