//! Ablation grid: sampler kind × loss combination, medians over seeds.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::sampler::SamplerKind;
use crate::trainer::{train, TrainConfig};

/// One grid cell. The triplet and classification terms are always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub sampler: SamplerKind,
    pub centroid: bool,
    pub triplet_centroid: bool,
}

impl Cell {
    pub fn losses(&self) -> &'static str {
        match (self.centroid, self.triplet_centroid) {
            (false, false) => "triplet",
            (true, false) => "triplet+centroid",
            (false, true) => "triplet+tc",
            (true, true) => "triplet+centroid+tc",
        }
    }

    pub fn name(&self) -> String {
        format!("{}-{}", self.sampler, self.losses())
    }

    /// `base` with this cell's sampler and loss weights.
    pub fn apply(&self, base: &TrainConfig, gamma: f64, delta: f64) -> TrainConfig {
        let mut c = base.clone();
        c.sampler = self.sampler;
        c.weights.gamma = if self.centroid { gamma } else { 0.0 };
        c.weights.delta = if self.triplet_centroid { delta } else { 0.0 };
        c
    }
}

/// The full grid in report order.
pub fn grid() -> Vec<Cell> {
    let mut out = Vec::new();
    for sampler in [SamplerKind::Random, SamplerKind::Hierarchical] {
        for (centroid, triplet_centroid) in
            [(false, false), (true, false), (false, true), (true, true)]
        {
            out.push(Cell {
                sampler,
                centroid,
                triplet_centroid,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub result: std::result::Result<(f64, f64), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub runs: Vec<RunOutcome>,
    /// Median best-epoch test mAP over successful runs.
    pub map: Option<f64>,
    /// Median R1 at the best-mAP epoch over successful runs.
    pub r1: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone)]
pub struct AblationSpec<'a> {
    pub base: &'a TrainConfig,
    pub cells: Vec<Cell>,
    /// Training seeds; every cell runs each of them.
    pub seeds: Vec<u64>,
    pub gamma: f64,
    pub delta: f64,
    pub jobs: usize,
    /// Each run writes to `<out_dir>/<cell>/seed-<s>` when set.
    pub out_dir: Option<&'a Path>,
}

/// Runs every (cell, seed) pair, at most `jobs` at a time. A failing run is
/// recorded and does not stop the others.
pub fn ablate(dataset: &Dataset, spec: &AblationSpec<'_>) -> Result<Vec<CellResult>> {
    if spec.jobs == 0 || spec.seeds.is_empty() {
        return Err(Error::Config(
            "ablation needs jobs >= 1 and at least one seed".into(),
        ));
    }
    let jobs: Vec<(usize, u64)> = (0..spec.cells.len())
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<RunOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let cell = spec.cells[c];
                let mut config = cell.apply(spec.base, spec.gamma, spec.delta);
                config.seed = seed;
                config.out_dir = spec
                    .out_dir
                    .map(|d| d.join(cell.name()).join(format!("seed-{seed}")));
                let result =
                    train(dataset, &config)
                        .map_err(|e| e.to_string())
                        .and_then(|r| match (r.best_map, r.best_r1) {
                            (Some(m), Some(r1)) => Ok((m, r1)),
                            _ => Err("no test evaluation".to_string()),
                        });
                RunOutcome { seed, result }
            })
            .collect()
    });

    let per_cell = spec.seeds.len();
    Ok(spec
        .cells
        .iter()
        .zip(outcomes.chunks(per_cell))
        .map(|(&cell, runs)| {
            let ok: Vec<(f64, f64)> = runs.iter().filter_map(|r| r.result.clone().ok()).collect();
            let maps: Vec<f64> = ok.iter().map(|r| r.0).collect();
            let r1s: Vec<f64> = ok.iter().map(|r| r.1).collect();
            CellResult {
                cell,
                runs: runs.to_vec(),
                map: median(&maps),
                r1: median(&r1s),
            }
        })
        .collect())
}

pub fn ablation_tsv(results: &[CellResult]) -> String {
    let mut out = String::from("#sampler\tlosses\tmAP\tR1\truns\tfailed\n");
    for r in results {
        let failed = r.runs.iter().filter(|o| o.result.is_err()).count();
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.cell.sampler,
            r.cell.losses(),
            fmt(r.map),
            fmt(r.r1),
            r.runs.len(),
            failed
        );
    }
    out
}
