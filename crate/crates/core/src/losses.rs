//! Embedding losses built on [`Graph`].
//!
//! * batch-hard triplet loss: per anchor, the farthest same-identity sample
//!   and the nearest other-identity sample, hinged at margin `m`;
//! * triplet-centroid loss: the same hinge against the anchor's own
//!   identity centroid and the centroid of all other samples;
//! * centroid loss: per identity, the distance between the centroid of its
//!   samples and the centroid of the rest of the batch;
//! * cross-entropy over training identities;
//! * their weighted sum.
//!
//! Euclidean distances use `sqrt(d² + 1e-12)` off the diagonal so that
//! duplicated samples (possible with with-replacement sampling) still have
//! finite gradients. The diagonal of a distance matrix is exactly zero.
//!
//! The centroid loss exists in two modes. [`CentroidMode::AsWritten`] is the
//! squared distance between the two centroids, summed over identities.
//! Minimizing it pulls each identity's centroid towards the rest of the
//! batch, which is the opposite of separating identities.
//! [`CentroidMode::Separation`] instead hinges the centroid distance below
//! `separation_margin`, which pushes clusters apart. Separation is the
//! default.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor2, Var, SQRT_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(format!("unknown metric \"{other}\" (euclidean|cosine)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CentroidMode {
    AsWritten,
    Separation,
}

impl CentroidMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CentroidMode::AsWritten => "as_written",
            CentroidMode::Separation => "separation",
        }
    }
}

impl fmt::Display for CentroidMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CentroidMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "as_written" => Ok(CentroidMode::AsWritten),
            "separation" => Ok(CentroidMode::Separation),
            other => Err(format!(
                "unknown centroid mode \"{other}\" (as_written|separation)"
            )),
        }
    }
}

/// Weights and margins of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Batch-hard triplet loss.
    pub alpha: f64,
    /// Classification loss.
    pub beta: f64,
    /// Centroid loss.
    pub gamma: f64,
    /// Triplet-centroid loss; 0 disables it.
    pub delta: f64,
    pub margin: f64,
    pub margin_tc: f64,
    pub centroid_mode: CentroidMode,
    pub separation_margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 0.5,
            gamma: 0.5,
            delta: 0.0,
            margin: 0.3,
            margin_tc: 0.3,
            centroid_mode: CentroidMode::Separation,
            separation_margin: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("margin", self.margin),
            ("margin_tc", self.margin_tc),
            ("separation_margin", self.separation_margin),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn offdiag_mask(n: usize) -> Tensor2 {
    let mut m = Tensor2::filled(n, n, 1.0);
    for i in 0..n {
        m.set(i, i, 0.0);
    }
    m
}

/// All-pairs distance matrix with an exactly zero diagonal.
///
/// Cosine distance is `1 - cos`; a zero-norm row is an error.
pub fn pairwise_distances(g: &mut Graph, emb: Var, metric: Metric) -> Result<Var> {
    let n = g.value(emb).rows();
    if n == 0 {
        return Err(Error::Shape {
            op: "pairwise_distances",
            left: g.value(emb).shape(),
            right: (1, 0),
        });
    }
    let raw = match metric {
        Metric::Euclidean => {
            let sq = g.pairwise_sq_dist(emb);
            g.sqrt_eps(sq, SQRT_EPS)
        }
        Metric::Cosine => {
            let sq = g.squared_norm_rows(emb);
            if let Some(row) = g.value(sq).data().iter().position(|&v| v == 0.0) {
                return Err(Error::ZeroNorm { row });
            }
            let inv = g.powf(sq, -0.5);
            let unit = g.mul_col(emb, inv)?;
            let unit_t = g.transpose(unit);
            let sim = g.matmul(unit, unit_t)?;
            let neg = g.scale(sim, -1.0);
            g.add_scalar(neg, 1.0)
        }
    };
    let mask = g.constant(offdiag_mask(n));
    g.mul(raw, mask)
}

/// Hardest positive and negative of every anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningResult {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    pub d_ap: Vec<f64>,
    pub d_an: Vec<f64>,
}

fn count_identities(labels: &[u64]) -> usize {
    let mut ids = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.len()
}

fn check_labels(rows: usize, labels: &[u64]) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape {
            op: "labels",
            left: (rows, 1),
            right: (labels.len(), 1),
        });
    }
    let n_ids = count_identities(labels);
    if n_ids < 2 {
        return Err(Error::SingleIdentity(n_ids));
    }
    Ok(())
}

/// Batch-hard mining on a distance matrix. Ties go to the lowest index; an
/// anchor without another same-identity sample is its own positive.
pub fn batch_hard_mine(d: &Tensor2, labels: &[u64]) -> Result<MiningResult> {
    let n = d.rows();
    if d.cols() != n {
        return Err(Error::Shape {
            op: "batch_hard_mine",
            left: d.shape(),
            right: (n, n),
        });
    }
    check_labels(n, labels)?;
    let mut out = MiningResult {
        positive: Vec::with_capacity(n),
        negative: Vec::with_capacity(n),
        d_ap: Vec::with_capacity(n),
        d_an: Vec::with_capacity(n),
    };
    for a in 0..n {
        let mut pos: Option<usize> = None;
        let mut neg: Option<usize> = None;
        for j in 0..n {
            let dj = d.get(a, j);
            if labels[j] == labels[a] {
                if j != a && pos.is_none_or(|p| dj > d.get(a, p)) {
                    pos = Some(j);
                }
            } else if neg.is_none_or(|q| dj < d.get(a, q)) {
                neg = Some(j);
            }
        }
        let p = pos.unwrap_or(a);
        let q = neg.expect("at least two identities");
        out.positive.push(p);
        out.negative.push(q);
        out.d_ap.push(d.get(a, p));
        out.d_an.push(d.get(a, q));
    }
    Ok(out)
}

/// `sum_A max(0, m + D(A,P) - D(A,N))` with batch-hard mining.
pub fn triplet_loss(g: &mut Graph, emb: Var, labels: &[u64], margin: f64) -> Result<Var> {
    check_labels(g.value(emb).rows(), labels)?;
    let d = pairwise_distances(g, emb, Metric::Euclidean)?;
    let mined = batch_hard_mine(g.value(d), labels)?;
    let ap: Vec<(usize, usize)> = mined.positive.iter().copied().enumerate().collect();
    let an: Vec<(usize, usize)> = mined.negative.iter().copied().enumerate().collect();
    let d_ap = g.gather_elems(d, &ap)?;
    let d_an = g.gather_elems(d, &an)?;
    let diff = g.sub(d_ap, d_an)?;
    let shifted = g.add_scalar(diff, margin);
    let hinge = g.relu(shifted);
    Ok(g.sum(hinge))
}

/// Row groups of each identity in order of first appearance.
fn identity_groups(labels: &[u64]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut order: Vec<u64> = Vec::new();
    for &l in labels {
        if !order.contains(&l) {
            order.push(l);
        }
    }
    order
        .into_iter()
        .map(|id| {
            let (own, rest): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| labels[i] == id);
            (own, rest)
        })
        .collect()
}

/// Centroids of an identity's rows and of all other rows, both `1 × d`.
fn centroid_pair(g: &mut Graph, emb: Var, own: &[usize], rest: &[usize]) -> Result<(Var, Var)> {
    let own_rows = g.gather_rows(emb, own)?;
    let rest_rows = g.gather_rows(emb, rest)?;
    Ok((g.mean_rows(own_rows), g.mean_rows(rest_rows)))
}

/// `sum_A max(0, m_tc + D(A, C_own) - D(A, C_rest))`.
pub fn triplet_centroid_loss(
    g: &mut Graph,
    emb: Var,
    labels: &[u64],
    margin_tc: f64,
) -> Result<Var> {
    check_labels(g.value(emb).rows(), labels)?;
    let mut terms = Vec::new();
    for (own, rest) in identity_groups(labels) {
        let (c_pos, c_neg) = centroid_pair(g, emb, &own, &rest)?;
        let anchors = g.gather_rows(emb, &own)?;
        let to_pos = g.sub(anchors, c_pos)?;
        let to_neg = g.sub(anchors, c_neg)?;
        let sq_pos = g.squared_norm_rows(to_pos);
        let sq_neg = g.squared_norm_rows(to_neg);
        let d_pos = g.sqrt_eps(sq_pos, SQRT_EPS);
        let d_neg = g.sqrt_eps(sq_neg, SQRT_EPS);
        let diff = g.sub(d_pos, d_neg)?;
        let shifted = g.add_scalar(diff, margin_tc);
        terms.push(g.relu(shifted));
    }
    let all = g.concat_rows(&terms)?;
    Ok(g.sum(all))
}

/// Per-identity centroid loss summed over the identities of the batch.
pub fn centroid_loss(
    g: &mut Graph,
    emb: Var,
    labels: &[u64],
    mode: CentroidMode,
    separation_margin: f64,
) -> Result<Var> {
    check_labels(g.value(emb).rows(), labels)?;
    let mut terms = Vec::new();
    for (own, rest) in identity_groups(labels) {
        let (c_own, c_rest) = centroid_pair(g, emb, &own, &rest)?;
        let diff = g.sub(c_own, c_rest)?;
        let sq = g.squared_norm_rows(diff);
        let term = match mode {
            CentroidMode::AsWritten => sq,
            CentroidMode::Separation => {
                let dist = g.sqrt_eps(sq, SQRT_EPS);
                let neg = g.scale(dist, -1.0);
                let gap = g.add_scalar(neg, separation_margin);
                g.relu(gap)
            }
        };
        terms.push(term);
    }
    let all = g.concat_rows(&terms)?;
    Ok(g.sum(all))
}

/// Mean cross-entropy of `logits` against class indices.
pub fn classification_loss(g: &mut Graph, logits: Var, classes: &[usize]) -> Result<Var> {
    let (n, c) = g.value(logits).shape();
    if classes.len() != n {
        return Err(Error::Shape {
            op: "classification_loss",
            left: (n, c),
            right: (classes.len(), 1),
        });
    }
    if let Some(&bad) = classes.iter().find(|&&y| y >= c) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: c,
        });
    }
    let log_p = g.log_softmax_rows(logits);
    let picks: Vec<(usize, usize)> = classes.iter().copied().enumerate().collect();
    let picked = g.gather_elems(log_p, &picks)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0 / n.max(1) as f64))
}

/// Unweighted value of each loss term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub triplet: f64,
    pub classification: f64,
    pub centroid: f64,
    pub triplet_centroid: f64,
    pub total: f64,
}

/// `alpha*L_T + beta*L_C + gamma*L_centroid + delta*L_TC`.
///
/// `labels` are identity labels for the metric losses; `classes` are the
/// matching classifier indices.
pub fn combined_loss(
    g: &mut Graph,
    emb: Var,
    logits: Var,
    labels: &[u64],
    classes: &[usize],
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    w.validate()?;
    let t = triplet_loss(g, emb, labels, w.margin)?;
    let c = classification_loss(g, logits, classes)?;
    let cen = centroid_loss(g, emb, labels, w.centroid_mode, w.separation_margin)?;
    let tc = triplet_centroid_loss(g, emb, labels, w.margin_tc)?;

    let parts = [
        g.scale(t, w.alpha),
        g.scale(c, w.beta),
        g.scale(cen, w.gamma),
        g.scale(tc, w.delta),
    ];
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    let breakdown = LossBreakdown {
        triplet: g.scalar(t),
        classification: g.scalar(c),
        centroid: g.scalar(cen),
        triplet_centroid: g.scalar(tc),
        total: g.scalar(total),
    };
    Ok((total, breakdown))
}
