//! Dataset model and its on-disk interchange format.
//!
//! A dataset directory holds four files:
//!
//! | file           | content                                                        |
//! |----------------|----------------------------------------------------------------|
//! | `matches.tsv`  | `match_id  year  team_a  team_b`                               |
//! | `actions.tsv`  | `action_id  match_id`                                          |
//! | `samples.tsv`  | `sample_id  player_id  action_id  role  feature_index  split`  |
//! | `features.bin` | ASCII header `RF1 <rows> <dim>\n`, then `rows*dim` LE `f32`    |
//!
//! TSV files are tab separated, one record per line. Lines starting with `#`
//! and blank lines are ignored. The writer emits a `#` header line naming
//! the columns.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

pub const MATCHES_FILE: &str = "matches.tsv";
pub const ACTIONS_FILE: &str = "actions.tsv";
pub const SAMPLES_FILE: &str = "samples.tsv";
pub const FEATURES_FILE: &str = "features.bin";

const FEATURE_MAGIC: &str = "RF1";

/// Lowercased, trimmed team name used for every team comparison.
pub fn normalize_team(name: &str) -> String {
    name.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchMeta {
    pub match_id: String,
    pub year: i32,
    pub team_a: String,
    pub team_b: String,
}

impl MatchMeta {
    /// Normalized team names in sorted order, so `(a, b)` and `(b, a)` agree.
    pub fn team_pair(&self) -> (String, String) {
        let (a, b) = (normalize_team(&self.team_a), normalize_team(&self.team_b));
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn same_team_pair(&self, other: &MatchMeta) -> bool {
        self.team_pair() == other.team_pair()
    }

    pub fn shares_team(&self, other: &MatchMeta) -> bool {
        let (a, b) = self.team_pair();
        let (c, d) = other.team_pair();
        a == c || a == d || b == c || b == d
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionRef {
    pub action_id: String,
    pub match_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Train,
    Query,
    Gallery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(format!(
                        "unknown {} \"{}\"", stringify!($ty).to_lowercase(), other
                    )),
                }
            }
        }
    };
}

text_enum!(Role { Train => "train", Query => "query", Gallery => "gallery" });
text_enum!(Split { Train => "train", Test => "test" });

/// One player detection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub sample_id: String,
    pub player_id: u64,
    pub action_id: String,
    pub role: Role,
    pub feature_index: usize,
    pub split: Split,
}

/// Row-major `f32` matrix; the raw feature store and the embedding file
/// share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureStore {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::FeatureDim(format!(
                "{} values for {rows} rows of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    /// Converts from `f64`, rounding each value to `f32`.
    pub fn from_tensor(t: &Tensor2) -> Self {
        Self {
            rows: t.rows(),
            dim: t.cols(),
            data: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Gathers the given rows into an `f64` matrix.
    pub fn gather(&self, rows: &[usize]) -> Tensor2 {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend(self.row(r).iter().map(|&v| v as f64));
        }
        Tensor2::new(rows.len(), self.dim, data).expect("gather shape")
    }

    pub fn to_tensor(&self) -> Tensor2 {
        let data = self.data.iter().map(|&v| v as f64).collect();
        Tensor2::new(self.rows, self.dim, data).expect("store shape")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = format!("{FEATURE_MAGIC} {} {}\n", self.rows, self.dim).into_bytes();
        bytes.reserve(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file = path.display().to_string();
        let malformed = |msg: String| Error::Malformed {
            file: file.clone(),
            line: 1,
            msg,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| malformed("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| malformed("header is not ASCII".into()))?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 3 || parts[0] != FEATURE_MAGIC {
            return Err(malformed(format!("bad header \"{header}\"")));
        }
        let rows: usize = parts[1]
            .parse()
            .map_err(|_| malformed(format!("bad row count \"{}\"", parts[1])))?;
        let dim: usize = parts[2]
            .parse()
            .map_err(|_| malformed(format!("bad dim \"{}\"", parts[2])))?;
        let body = &bytes[nl + 1..];
        if body.len() != rows * dim * 4 {
            return Err(Error::FeatureDim(format!(
                "{file}: header says {rows}x{dim} ({} bytes) but body has {} bytes",
                rows * dim * 4,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { rows, dim, data })
    }
}

/// Query and gallery sample indices of one action.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionSplit {
    pub query: Vec<usize>,
    pub gallery: Vec<usize>,
}

/// A validated dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    actions: BTreeMap<String, ActionRef>,
    matches: BTreeMap<String, MatchMeta>,
    features: FeatureStore,
}

fn check_id(kind: &'static str, id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidDataset(format!(
            "{kind} id {id:?} is empty or contains a tab/newline"
        )));
    }
    Ok(())
}

impl Dataset {
    /// Builds a dataset, checking every cross-reference and invariant.
    pub fn new(
        samples: Vec<Sample>,
        actions: BTreeMap<String, ActionRef>,
        matches: BTreeMap<String, MatchMeta>,
        features: FeatureStore,
    ) -> Result<Self> {
        for (key, m) in &matches {
            check_id("match", &m.match_id)?;
            if key != &m.match_id {
                return Err(Error::InvalidDataset(format!(
                    "match keyed \"{key}\" has id \"{}\"",
                    m.match_id
                )));
            }
            if m.year <= 0 {
                return Err(Error::InvalidDataset(format!(
                    "match \"{}\" has non-positive year {}",
                    m.match_id, m.year
                )));
            }
            for team in [&m.team_a, &m.team_b] {
                if normalize_team(team).is_empty() || team.contains(['\t', '\n', '\r']) {
                    return Err(Error::InvalidDataset(format!(
                        "match \"{}\" has an invalid team name {team:?}",
                        m.match_id
                    )));
                }
            }
            if normalize_team(&m.team_a) == normalize_team(&m.team_b) {
                return Err(Error::InvalidDataset(format!(
                    "match \"{}\" has the same team on both sides",
                    m.match_id
                )));
            }
        }
        for (key, a) in &actions {
            check_id("action", &a.action_id)?;
            if key != &a.action_id {
                return Err(Error::InvalidDataset(format!(
                    "action keyed \"{key}\" has id \"{}\"",
                    a.action_id
                )));
            }
            if !matches.contains_key(&a.match_id) {
                return Err(Error::DanglingRef {
                    kind: "match",
                    id: a.match_id.clone(),
                });
            }
        }
        if features.rows() != samples.len() {
            return Err(Error::FeatureDim(format!(
                "feature store has {} rows for {} samples",
                features.rows(),
                samples.len()
            )));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            check_id("sample", &s.sample_id)?;
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::Duplicate {
                    kind: "sample",
                    id: s.sample_id.clone(),
                });
            }
            if !actions.contains_key(&s.action_id) {
                return Err(Error::DanglingRef {
                    kind: "action",
                    id: s.action_id.clone(),
                });
            }
            if s.feature_index >= features.rows() {
                return Err(Error::FeatureDim(format!(
                    "sample \"{}\" has feature_index {} but the store has {} rows",
                    s.sample_id,
                    s.feature_index,
                    features.rows()
                )));
            }
            let role_ok = match s.split {
                Split::Train => s.role == Role::Train,
                Split::Test => s.role != Role::Train,
            };
            if !role_ok {
                return Err(Error::InvalidDataset(format!(
                    "sample \"{}\" has role {} in split {}",
                    s.sample_id, s.role, s.split
                )));
            }
        }
        Ok(Self {
            samples,
            actions,
            matches,
            features,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn actions(&self) -> &BTreeMap<String, ActionRef> {
        &self.actions
    }

    pub fn matches(&self) -> &BTreeMap<String, MatchMeta> {
        &self.matches
    }

    pub fn features(&self) -> &FeatureStore {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dim()
    }

    /// Match metadata of a sample. Always resolves on a validated dataset.
    pub fn match_of(&self, sample: &Sample) -> &MatchMeta {
        let action = &self.actions[&sample.action_id];
        &self.matches[&action.match_id]
    }

    /// Raw features of the given sample indices.
    pub fn features_of(&self, sample_indices: &[usize]) -> Tensor2 {
        let rows: Vec<usize> = sample_indices
            .iter()
            .map(|&i| self.samples[i].feature_index)
            .collect();
        self.features.gather(&rows)
    }

    /// Indices of samples in the training split.
    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == Split::Train)
            .collect()
    }

    /// Distinct training identities in ascending order.
    pub fn train_identities(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .samples
            .iter()
            .filter(|s| s.split == Split::Train)
            .map(|s| s.player_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn sample_position(&self) -> HashMap<&str, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sample_id.as_str(), i))
            .collect()
    }
}

/// Groups query and gallery samples by action. Train samples are skipped
/// and actions with no query/gallery samples do not appear.
pub fn index_by_action(dataset: &Dataset) -> BTreeMap<String, ActionSplit> {
    let mut out: BTreeMap<String, ActionSplit> = BTreeMap::new();
    for (i, s) in dataset.samples().iter().enumerate() {
        match s.role {
            Role::Train => {}
            Role::Query => out.entry(s.action_id.clone()).or_default().query.push(i),
            Role::Gallery => out.entry(s.action_id.clone()).or_default().gallery.push(i),
        }
    }
    out
}

struct TsvReader {
    file: String,
    text: String,
}

impl TsvReader {
    fn open(dir: &Path, name: &str) -> Result<Self> {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            file: name.to_string(),
            text,
        })
    }

    /// Yields `(line_number, fields)` for each record line.
    fn records(&self, arity: usize) -> impl Iterator<Item = Result<(usize, Vec<&str>)>> {
        self.text.lines().enumerate().filter_map(move |(i, line)| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || line.starts_with('#') {
                return None;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != arity {
                return Some(Err(Error::Malformed {
                    file: self.file.clone(),
                    line: i + 1,
                    msg: format!("expected {arity} fields, found {}", fields.len()),
                }));
            }
            Some(Ok((i + 1, fields)))
        })
    }

    fn parse<T: FromStr>(&self, line: usize, field: &str, what: &str) -> Result<T> {
        field.parse().map_err(|_| Error::Malformed {
            file: self.file.clone(),
            line,
            msg: format!("bad {what} \"{field}\""),
        })
    }
}

/// Reads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let reader = TsvReader::open(dir, MATCHES_FILE)?;
    let mut matches = BTreeMap::new();
    for rec in reader.records(4) {
        let (line, f) = rec?;
        let year: i32 = reader.parse(line, f[1], "year")?;
        let m = MatchMeta {
            match_id: f[0].to_string(),
            year,
            team_a: f[2].to_string(),
            team_b: f[3].to_string(),
        };
        if matches.insert(m.match_id.clone(), m).is_some() {
            return Err(Error::Duplicate {
                kind: "match",
                id: f[0].to_string(),
            });
        }
    }

    let reader = TsvReader::open(dir, ACTIONS_FILE)?;
    let mut actions = BTreeMap::new();
    for rec in reader.records(2) {
        let (_, f) = rec?;
        let a = ActionRef {
            action_id: f[0].to_string(),
            match_id: f[1].to_string(),
        };
        if actions.insert(a.action_id.clone(), a).is_some() {
            return Err(Error::Duplicate {
                kind: "action",
                id: f[0].to_string(),
            });
        }
    }

    let reader = TsvReader::open(dir, SAMPLES_FILE)?;
    let mut samples = Vec::new();
    for rec in reader.records(6) {
        let (line, f) = rec?;
        samples.push(Sample {
            sample_id: f[0].to_string(),
            player_id: reader.parse(line, f[1], "player_id")?,
            action_id: f[2].to_string(),
            role: reader.parse(line, f[3], "role")?,
            feature_index: reader.parse(line, f[4], "feature_index")?,
            split: reader.parse(line, f[5], "split")?,
        });
    }

    let features = FeatureStore::read(&dir.join(FEATURES_FILE))?;
    Dataset::new(samples, actions, matches, features)
}

/// Writes a dataset directory, creating it if needed.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut text = String::from("#match_id\tyear\tteam_a\tteam_b\n");
    for m in dataset.matches().values() {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            m.match_id, m.year, m.team_a, m.team_b
        ));
    }
    write_text(&dir.join(MATCHES_FILE), &text)?;

    let mut text = String::from("#action_id\tmatch_id\n");
    for a in dataset.actions().values() {
        text.push_str(&format!("{}\t{}\n", a.action_id, a.match_id));
    }
    write_text(&dir.join(ACTIONS_FILE), &text)?;

    let mut text = String::from("#sample_id\tplayer_id\taction_id\trole\tfeature_index\tsplit\n");
    for s in dataset.samples() {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            s.sample_id, s.player_id, s.action_id, s.role, s.feature_index, s.split
        ));
    }
    write_text(&dir.join(SAMPLES_FILE), &text)?;

    dataset.features().write(&dir.join(FEATURES_FILE))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
