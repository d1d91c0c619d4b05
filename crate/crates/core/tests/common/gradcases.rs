//! Gradient-check instances for every loss, kept away from hinge and
//! mining kinks so finite differences are meaningful.

use reid_forge::losses::{
    centroid_loss, classification_loss, combined_loss, triplet_centroid_loss, triplet_loss,
    CentroidMode, LossWeights,
};
use reid_forge::numerics::{grad_check, Tensor2};

use super::{rng, uniform};

pub const GRAD_TOL: f64 = 1e-5;
pub const GRAD_EPS: f64 = 1e-5;
/// Minimum distance of every hinge argument and mining choice from a kink.
pub const KINK_GAP: f64 = 1e-3;
pub const INSTANCES: u64 = 10;

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn mean_of(x: &Tensor2, rows: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; x.cols()];
    for &r in rows {
        for (ci, v) in c.iter_mut().zip(x.row(r)) {
            *ci += v;
        }
    }
    c.iter().map(|v| v / rows.len() as f64).collect()
}

/// `(own rows, other rows)` per identity, brute force.
pub fn groups(labels: &[u64]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut ids = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.iter()
        .map(|&id| (0..labels.len()).partition(|&i| labels[i] == id))
        .collect()
}

/// Smallest distance from a triplet-loss kink: hinge arguments and the gap
/// between the chosen and runner-up positive/negative.
pub fn triplet_kink_gap(x: &Tensor2, labels: &[u64], margin: f64) -> (f64, usize) {
    let n = x.rows();
    let mut gap = f64::INFINITY;
    let mut active = 0;
    for a in 0..n {
        let mut pos: Vec<f64> = (0..n)
            .filter(|&j| j != a && labels[j] == labels[a])
            .map(|j| dist(x.row(a), x.row(j)))
            .collect();
        let mut neg: Vec<f64> = (0..n)
            .filter(|&j| labels[j] != labels[a])
            .map(|j| dist(x.row(a), x.row(j)))
            .collect();
        pos.sort_by(|p, q| q.total_cmp(p));
        neg.sort_by(f64::total_cmp);
        let d_ap = pos.first().copied().unwrap_or(0.0);
        let arg = margin + d_ap - neg[0];
        gap = gap.min(arg.abs());
        if arg > 0.0 {
            active += 1;
        }
        if pos.len() > 1 {
            gap = gap.min(pos[0] - pos[1]);
        }
        if neg.len() > 1 {
            gap = gap.min(neg[1] - neg[0]);
        }
        if pos.is_empty() {
            gap = 0.0;
        }
    }
    (gap, active)
}

pub fn tc_kink_gap(x: &Tensor2, labels: &[u64], margin: f64) -> (f64, usize) {
    let mut gap = f64::INFINITY;
    let mut active = 0;
    for (own, rest) in groups(labels) {
        let cp = mean_of(x, &own);
        let cn = mean_of(x, &rest);
        for &a in &own {
            let dp = dist(x.row(a), &cp);
            let arg = margin + dp - dist(x.row(a), &cn);
            gap = gap.min(arg.abs()).min(dp);
            if arg > 0.0 {
                active += 1;
            }
        }
    }
    (gap, active)
}

pub fn centroid_kink_gap(x: &Tensor2, labels: &[u64], margin: f64) -> (f64, usize) {
    let mut gap = f64::INFINITY;
    let mut active = 0;
    for (own, rest) in groups(labels) {
        let d = dist(&mean_of(x, &own), &mean_of(x, &rest));
        gap = gap.min((margin - d).abs());
        if d < margin {
            active += 1;
        }
    }
    (gap, active)
}

/// Random `n × dim` embeddings with `ids` identities (every identity has at
/// least two rows), redrawn until `accept` holds.
pub fn random_instance(
    seed: u64,
    n: usize,
    ids: u64,
    dim: usize,
    accept: impl Fn(&Tensor2, &[u64]) -> bool,
) -> (Tensor2, Vec<u64>) {
    let mut r = rng(seed);
    for _ in 0..1000 {
        let labels: Vec<u64> = (0..n as u64).map(|i| i % ids).collect();
        let x = uniform(&mut r, n, dim, -1.0, 1.0);
        if accept(&x, &labels) {
            return (x, labels);
        }
    }
    panic!("no instance away from kinks for seed {seed}");
}

pub fn triplet_errors() -> Vec<f64> {
    (0..INSTANCES)
        .map(|trial| {
            let (x, labels) = random_instance(100 + trial, 9, 3, 3, |x, l| {
                let (gap, active) = triplet_kink_gap(x, l, 1.0);
                gap > KINK_GAP && active > 0
            });
            grad_check(|g, v| triplet_loss(g, v, &labels, 1.0), &x, GRAD_EPS).unwrap()
        })
        .collect()
}

pub fn triplet_centroid_errors() -> Vec<f64> {
    (0..INSTANCES)
        .map(|trial| {
            let (x, labels) = random_instance(200 + trial, 9, 3, 3, |x, l| {
                let (gap, active) = tc_kink_gap(x, l, 0.5);
                gap > KINK_GAP && active > 0
            });
            grad_check(
                |g, v| triplet_centroid_loss(g, v, &labels, 0.5),
                &x,
                GRAD_EPS,
            )
            .unwrap()
        })
        .collect()
}

pub fn centroid_errors(mode: CentroidMode) -> Vec<f64> {
    (0..INSTANCES)
        .map(|trial| {
            let (x, labels) = random_instance(300 + trial, 8, 2, 3, |x, l| {
                let (gap, active) = centroid_kink_gap(x, l, 1.5);
                gap > KINK_GAP && active > 0
            });
            grad_check(|g, v| centroid_loss(g, v, &labels, mode, 1.5), &x, GRAD_EPS).unwrap()
        })
        .collect()
}

pub fn classification_errors() -> Vec<f64> {
    (0..INSTANCES)
        .map(|trial| {
            let x = uniform(&mut rng(400 + trial), 5, 4, -3.0, 3.0);
            let classes = [0, 3, 1, 1, 2];
            grad_check(|g, v| classification_loss(g, v, &classes), &x, GRAD_EPS).unwrap()
        })
        .collect()
}

/// Combined loss with every term on; logits are a fixed linear head of the
/// embeddings so the classification gradient flows into them too.
pub fn combined_errors() -> Vec<f64> {
    let w = LossWeights {
        delta: 0.7,
        margin: 1.0,
        margin_tc: 0.5,
        separation_margin: 1.5,
        ..LossWeights::default()
    };
    (0..INSTANCES)
        .map(|trial| {
            let (x, labels) = random_instance(500 + trial, 9, 3, 3, |x, l| {
                triplet_kink_gap(x, l, w.margin).0 > KINK_GAP
                    && tc_kink_gap(x, l, w.margin_tc).0 > KINK_GAP
                    && centroid_kink_gap(x, l, w.separation_margin).0 > KINK_GAP
            });
            let classes: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
            let head = uniform(&mut rng(600 + trial), 3, 3, -1.0, 1.0);
            grad_check(
                |g, v| {
                    let h = g.constant(head.clone());
                    let logits = g.matmul(v, h)?;
                    Ok(combined_loss(g, v, logits, &labels, &classes, &w)?.0)
                },
                &x,
                GRAD_EPS,
            )
            .unwrap()
        })
        .collect()
}

/// `(name, per-instance errors)` for every loss.
pub fn all_families() -> Vec<(&'static str, Vec<f64>)> {
    vec![
        ("triplet", triplet_errors()),
        ("triplet_centroid", triplet_centroid_errors()),
        (
            "centroid_as_written",
            centroid_errors(CentroidMode::AsWritten),
        ),
        (
            "centroid_separation",
            centroid_errors(CentroidMode::Separation),
        ),
        ("classification", classification_errors()),
        ("combined", combined_errors()),
    ]
}
