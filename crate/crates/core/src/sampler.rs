//! Training batch construction.
//!
//! Both samplers emit batches of `k` samples for each of `m` distinct
//! identities, the structure batch-hard mining needs.
//!
//! [`RandomSampler`] draws identities uniformly. [`HierarchicalSampler`]
//! starts every batch from a random seed sample and fills the batch with
//! identities that share increasingly coarse metadata with the seed:
//!
//! | level | candidate shares with the seed                     |
//! |-------|----------------------------------------------------|
//! | I     | the action                                         |
//! | II    | the match                                          |
//! | III   | the same two teams, same year                      |
//! | IV    | the same two teams, any year                       |
//! | V     | at least one team, same year                       |
//! | VI    | at least one team, any year                        |
//! | VII   | nothing (every sample qualifies)                   |
//!
//! Samples used by a hierarchical batch leave the epoch pool; the pool is
//! rebuilt at the start of every epoch.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, MatchMeta, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    I = 1,
    II,
    III,
    IV,
    V,
    VI,
    VII,
}

impl Level {
    pub const ALL: [Level; 7] = [
        Level::I,
        Level::II,
        Level::III,
        Level::IV,
        Level::V,
        Level::VI,
        Level::VII,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::I => "I",
            Level::II => "II",
            Level::III => "III",
            Level::IV => "IV",
            Level::V => "V",
            Level::VI => "VI",
            Level::VII => "VII",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Grouping keys of one sample, with team names normalized once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelKey {
    action_id: String,
    match_id: String,
    year: i32,
    teams: (String, String),
}

impl LevelKey {
    pub fn new(sample: &Sample, meta: &MatchMeta) -> Self {
        Self {
            action_id: sample.action_id.clone(),
            match_id: meta.match_id.clone(),
            year: meta.year,
            teams: meta.team_pair(),
        }
    }

    fn shares_team(&self, other: &LevelKey) -> bool {
        let (a, b) = &self.teams;
        let (c, d) = &other.teams;
        a == c || a == d || b == c || b == d
    }

    /// Whether `other` matches the description of row `level` alone. Rows
    /// IV and V are not nested: a repeat fixture in another year matches IV
    /// but not V.
    pub fn matches_row(&self, level: Level, other: &LevelKey) -> bool {
        match level {
            Level::I => self.action_id == other.action_id,
            Level::II => self.match_id == other.match_id,
            Level::III => self.teams == other.teams && self.year == other.year,
            Level::IV => self.teams == other.teams,
            Level::V => self.shares_team(other) && self.year == other.year,
            Level::VI => self.shares_team(other),
            Level::VII => true,
        }
    }

    /// Lowest level at which `other` joins this key's group.
    pub fn lowest_level(&self, other: &LevelKey) -> Level {
        Level::ALL
            .into_iter()
            .find(|&l| self.matches_row(l, other))
            .unwrap_or(Level::VII)
    }

    /// Whether `other` has joined the escalation by `level`, i.e. matches
    /// some row at or below it. Monotone in `level`.
    pub fn reaches(&self, level: Level, other: &LevelKey) -> bool {
        self.lowest_level(other) <= level
    }
}

/// Metadata predicate of the hierarchical grouping: whether `candidate`
/// is collected once escalation from `seed` has reached `level`.
pub fn level_predicate(
    level: Level,
    seed: (&Sample, &MatchMeta),
    candidate: (&Sample, &MatchMeta),
) -> bool {
    LevelKey::new(seed.0, seed.1).reaches(level, &LevelKey::new(candidate.0, candidate.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpec {
    /// Samples per identity.
    pub k: usize,
    /// Identities per batch.
    pub m: usize,
}

impl BatchSpec {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        let spec = Self { k, m };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config(format!("k must be >= 1, got {}", self.k)));
        }
        if self.m < 2 {
            return Err(Error::Config(format!("m must be >= 2, got {}", self.m)));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.k * self.m
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchEntry {
    /// Position of the sample in [`Dataset::samples`].
    pub sample: usize,
    pub player_id: u64,
}

/// `k * m` entries grouped by identity, identities in selection order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub entries: Vec<BatchEntry>,
    pub seed_sample: Option<usize>,
    /// Level at which each entry's identity was selected (hierarchical only).
    pub level_trace: Vec<Level>,
}

impl Batch {
    pub fn sample_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.sample).collect()
    }

    pub fn labels(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.player_id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    Random,
    Hierarchical,
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Random => "random",
            SamplerKind::Hierarchical => "hier",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(SamplerKind::Random),
            "hier" | "hierarchical" => Ok(SamplerKind::Hierarchical),
            other => Err(format!("unknown sampler \"{other}\" (random|hier)")),
        }
    }
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

/// Picks `k` of `pool` in order, padding with uniform draws from `pool`
/// when it holds fewer than `k` samples.
fn take_k(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out: Vec<usize> = pool.iter().copied().take(k).collect();
    while out.len() < k {
        out.push(*pool.choose(rng).expect("identity has at least one sample"));
    }
    out
}

/// Training samples grouped by identity, ascending by player id.
fn train_groups(dataset: &Dataset) -> BTreeMap<u64, Vec<usize>> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for i in dataset.train_indices() {
        groups
            .entry(dataset.samples()[i].player_id)
            .or_default()
            .push(i);
    }
    groups
}

/// Uniform identity sampling.
#[derive(Debug, Clone)]
pub struct RandomSampler {
    spec: BatchSpec,
    seed: u64,
    groups: Vec<(u64, Vec<usize>)>,
}

impl RandomSampler {
    pub fn new(dataset: &Dataset, spec: BatchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let groups: Vec<_> = train_groups(dataset).into_iter().collect();
        if groups.len() < spec.m {
            return Err(Error::NotEnoughIdentities {
                needed: spec.m,
                available: groups.len(),
            });
        }
        Ok(Self { spec, seed, groups })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.groups.len() / self.spec.m
    }

    /// Batches of one epoch; no identity repeats within the epoch.
    pub fn epoch(&self, epoch: u64) -> RandomEpoch<'_> {
        let mut rng = epoch_rng(self.seed, epoch);
        let mut order: Vec<usize> = (0..self.groups.len()).collect();
        order.shuffle(&mut rng);
        RandomEpoch {
            sampler: self,
            order,
            next: 0,
            rng,
        }
    }
}

pub struct RandomEpoch<'a> {
    sampler: &'a RandomSampler,
    order: Vec<usize>,
    next: usize,
    rng: ChaCha8Rng,
}

impl Iterator for RandomEpoch<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let BatchSpec { k, m } = self.sampler.spec;
        if self.next + m > self.order.len() {
            return None;
        }
        let chosen = &self.order[self.next..self.next + m];
        self.next += m;
        let mut entries = Vec::with_capacity(k * m);
        for &g in chosen {
            let (player_id, samples) = &self.sampler.groups[g];
            let mut pool = samples.clone();
            pool.shuffle(&mut self.rng);
            for sample in take_k(&pool, k, &mut self.rng) {
                entries.push(BatchEntry {
                    sample,
                    player_id: *player_id,
                });
            }
        }
        Some(Batch {
            entries,
            seed_sample: None,
            level_trace: Vec::new(),
        })
    }
}

/// Metadata-driven sampling with a per-epoch pool.
#[derive(Debug, Clone)]
pub struct HierarchicalSampler {
    spec: BatchSpec,
    seed: u64,
    train: Vec<usize>,
    player_of: Vec<u64>,
    /// Indexed by sample position; `None` for non-train samples.
    keys: Vec<Option<LevelKey>>,
}

impl HierarchicalSampler {
    pub fn new(dataset: &Dataset, spec: BatchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let n_ids = dataset.train_identities().len();
        if n_ids < spec.m {
            return Err(Error::NotEnoughIdentities {
                needed: spec.m,
                available: n_ids,
            });
        }
        let train = dataset.train_indices();
        let mut keys = vec![None; dataset.samples().len()];
        for &i in &train {
            let s = &dataset.samples()[i];
            keys[i] = Some(LevelKey::new(s, dataset.match_of(s)));
        }
        let player_of = dataset.samples().iter().map(|s| s.player_id).collect();
        Ok(Self {
            spec,
            seed,
            train,
            player_of,
            keys,
        })
    }

    pub fn spec(&self) -> BatchSpec {
        self.spec
    }

    pub fn key(&self, sample: usize) -> Option<&LevelKey> {
        self.keys[sample].as_ref()
    }

    pub fn epoch(&self, epoch: u64) -> HierarchicalEpoch<'_> {
        HierarchicalEpoch {
            sampler: self,
            pool: EpochPool::new(&self.train, &self.player_of),
            rng: epoch_rng(self.seed, epoch),
        }
    }
}

/// Samples still available in the current epoch.
#[derive(Debug, Clone)]
pub struct EpochPool {
    available: Vec<usize>,
    /// Position in `available`, `usize::MAX` when absent.
    slot: Vec<usize>,
    by_id: BTreeMap<u64, Vec<usize>>,
}

impl EpochPool {
    fn new(train: &[usize], player_of: &[u64]) -> Self {
        let mut slot = vec![usize::MAX; player_of.len()];
        let mut by_id: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (pos, &s) in train.iter().enumerate() {
            slot[s] = pos;
            by_id.entry(player_of[s]).or_default().push(s);
        }
        Self {
            available: train.to_vec(),
            slot,
            by_id,
        }
    }

    pub fn len(&self) -> usize {
        self.available.len()
    }

    pub fn is_empty(&self) -> bool {
        self.available.is_empty()
    }

    pub fn contains(&self, sample: usize) -> bool {
        self.slot[sample] != usize::MAX
    }

    pub fn n_identities(&self) -> usize {
        self.by_id.len()
    }

    fn remove(&mut self, sample: usize, player_id: u64) {
        let pos = self.slot[sample];
        if pos == usize::MAX {
            return;
        }
        self.available.swap_remove(pos);
        if let Some(&moved) = self.available.get(pos) {
            self.slot[moved] = pos;
        }
        self.slot[sample] = usize::MAX;
        if let Some(list) = self.by_id.get_mut(&player_id) {
            list.retain(|&s| s != sample);
            if list.is_empty() {
                self.by_id.remove(&player_id);
            }
        }
    }
}

pub struct HierarchicalEpoch<'a> {
    sampler: &'a HierarchicalSampler,
    pool: EpochPool,
    rng: ChaCha8Rng,
}

impl HierarchicalEpoch<'_> {
    pub fn pool(&self) -> &EpochPool {
        &self.pool
    }
}

impl Iterator for HierarchicalEpoch<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let BatchSpec { k, m } = self.sampler.spec;
        if self.pool.n_identities() < m {
            return None;
        }
        let keys = &self.sampler.keys;
        let player_of = &self.sampler.player_of;
        let seed = *self.pool.available.choose(&mut self.rng)?;
        let seed_key = keys[seed].as_ref().expect("pool holds train samples");
        let seed_id = player_of[seed];

        // Level of each pool sample relative to the seed, and of each
        // identity (its best sample).
        let mut id_level: BTreeMap<u64, Level> = BTreeMap::new();
        let mut sample_level: BTreeMap<usize, Level> = BTreeMap::new();
        for (&id, samples) in &self.pool.by_id {
            let mut best = Level::VII;
            for &s in samples {
                let key = keys[s].as_ref().expect("pool holds train samples");
                let level = seed_key.lowest_level(key);
                sample_level.insert(s, level);
                best = best.min(level);
            }
            id_level.insert(id, best);
        }

        let mut selected: Vec<(u64, Level)> = vec![(seed_id, Level::I)];
        for level in Level::ALL {
            if selected.len() == m {
                break;
            }
            let mut candidates: Vec<u64> = id_level
                .iter()
                .filter(|&(&id, &l)| l == level && id != seed_id)
                .map(|(&id, _)| id)
                .collect();
            candidates.shuffle(&mut self.rng);
            for id in candidates.into_iter().take(m - selected.len()) {
                selected.push((id, level));
            }
        }
        debug_assert_eq!(selected.len(), m);

        let mut entries = Vec::with_capacity(k * m);
        let mut level_trace = Vec::with_capacity(k * m);
        for &(id, level) in &selected {
            let mut own = self.pool.by_id[&id].clone();
            own.shuffle(&mut self.rng);
            own.sort_by_key(|s| (*s != seed, sample_level[s]));
            for sample in take_k(&own, k, &mut self.rng) {
                entries.push(BatchEntry {
                    sample,
                    player_id: id,
                });
                level_trace.push(level);
            }
        }
        for e in &entries {
            self.pool.remove(e.sample, e.player_id);
        }
        Some(Batch {
            entries,
            seed_sample: Some(seed),
            level_trace,
        })
    }
}

/// Either sampler behind one interface.
#[derive(Debug, Clone)]
pub enum Sampler {
    Random(RandomSampler),
    Hierarchical(HierarchicalSampler),
}

impl Sampler {
    pub fn new(kind: SamplerKind, dataset: &Dataset, spec: BatchSpec, seed: u64) -> Result<Self> {
        Ok(match kind {
            SamplerKind::Random => Sampler::Random(RandomSampler::new(dataset, spec, seed)?),
            SamplerKind::Hierarchical => {
                Sampler::Hierarchical(HierarchicalSampler::new(dataset, spec, seed)?)
            }
        })
    }

    pub fn epoch(&self, epoch: u64) -> Box<dyn Iterator<Item = Batch> + '_> {
        match self {
            Sampler::Random(s) => Box::new(s.epoch(epoch)),
            Sampler::Hierarchical(s) => Box::new(s.epoch(epoch)),
        }
    }
}

/// Fractions of within-batch sample pairs sharing metadata, averaged over
/// batches. `cross_*` fields only count pairs of different identities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub batches: usize,
    pub same_action: f64,
    pub same_match: f64,
    pub shared_team: f64,
    pub cross_same_action: f64,
    pub cross_same_match: f64,
    pub cross_shared_team: f64,
}

impl BatchStats {
    pub fn to_key_values(&self) -> String {
        format!(
            "batches={}\nsame_action={:.6}\nsame_match={:.6}\nshared_team={:.6}\n\
             cross_same_action={:.6}\ncross_same_match={:.6}\ncross_shared_team={:.6}\n",
            self.batches,
            self.same_action,
            self.same_match,
            self.shared_team,
            self.cross_same_action,
            self.cross_same_match,
            self.cross_shared_team
        )
    }
}

pub fn batch_stats<'a>(
    batches: impl IntoIterator<Item = &'a Batch>,
    dataset: &Dataset,
) -> Result<BatchStats> {
    let mut acc = [0.0f64; 6];
    let mut n = 0usize;
    for batch in batches {
        let metas: Vec<(&Sample, &MatchMeta)> = batch
            .entries
            .iter()
            .map(|e| {
                let s = &dataset.samples()[e.sample];
                (s, dataset.match_of(s))
            })
            .collect();
        let mut counts = [0usize; 6];
        let (mut pairs, mut cross) = (0usize, 0usize);
        for i in 0..metas.len() {
            for j in (i + 1)..metas.len() {
                let (si, mi) = metas[i];
                let (sj, mj) = metas[j];
                let hits = [
                    si.action_id == sj.action_id,
                    mi.match_id == mj.match_id,
                    mi.shares_team(mj),
                ];
                pairs += 1;
                let is_cross = si.player_id != sj.player_id;
                cross += usize::from(is_cross);
                for (h, &hit) in hits.iter().enumerate() {
                    if hit {
                        counts[h] += 1;
                        if is_cross {
                            counts[h + 3] += 1;
                        }
                    }
                }
            }
        }
        for h in 0..3 {
            if pairs > 0 {
                acc[h] += counts[h] as f64 / pairs as f64;
            }
            if cross > 0 {
                acc[h + 3] += counts[h + 3] as f64 / cross as f64;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Config("batch_stats needs at least one batch".into()));
    }
    let avg = |v: f64| v / n as f64;
    Ok(BatchStats {
        batches: n,
        same_action: avg(acc[0]),
        same_match: avg(acc[1]),
        shared_team: avg(acc[2]),
        cross_same_action: avg(acc[3]),
        cross_same_match: avg(acc[4]),
        cross_shared_team: avg(acc[5]),
    })
}
