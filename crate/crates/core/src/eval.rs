//! Per-action retrieval evaluation.
//!
//! Identity labels of query and gallery samples are only meaningful inside
//! their action, so every query is ranked against the gallery of its own
//! action and nothing else. Metrics are the usual re-identification ones:
//! average precision per query, its mean (mAP), and rank-1 accuracy (R1),
//! both on a 0-100 scale.
//!
//! [`oracle_evaluate`] is a deliberately naive second implementation used
//! to cross-check [`evaluate_split`].

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::data::{index_by_action, Dataset};
use crate::error::{Error, Result};
use crate::losses::Metric;
use crate::numerics::Tensor2;

/// Gallery positions ordered by ascending distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub order: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Ranked gallery of one query, with relevance marks.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    /// Sample position of the query.
    pub query: usize,
    /// Sample positions of the gallery, nearest first.
    pub gallery: Vec<usize>,
    pub distances: Vec<f64>,
    pub relevant: Vec<bool>,
}

impl RankingResult {
    pub fn average_precision(&self) -> Result<f64> {
        average_precision(&self.relevant).ok_or_else(|| Error::NoRelevant(self.query.to_string()))
    }
}

/// Distance between two embeddings.
pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "distance",
            left: (1, a.len()),
            right: (1, b.len()),
        });
    }
    match metric {
        Metric::Euclidean => Ok(a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()),
        Metric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroNorm {
                    row: usize::from(na != 0.0),
                });
            }
            Ok(1.0 - dot / (na * nb))
        }
    }
}

/// Ranks gallery rows by distance to `query`. Equal distances keep gallery
/// order.
pub fn rank_action(query: &[f64], gallery: &Tensor2, metric: Metric) -> Result<Ranking> {
    if gallery.rows() == 0 {
        return Err(Error::Shape {
            op: "rank_action",
            left: gallery.shape(),
            right: (1, query.len()),
        });
    }
    let distances = (0..gallery.rows())
        .map(|r| distance(query, gallery.row(r), metric))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..gallery.rows()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let sorted = order.iter().map(|&i| distances[i]).collect();
    Ok(Ranking {
        order,
        distances: sorted,
    })
}

/// `(1/R) * sum_k precision@k * rel(k)`; `None` when nothing is relevant.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (k, &rel) in relevant.iter().enumerate() {
        if rel {
            hits += 1;
            acc += hits as f64 / (k + 1) as f64;
        }
    }
    (hits > 0).then(|| acc / hits as f64)
}

/// Order-independent sum: values are added in ascending order.
fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionMetrics {
    pub queries: usize,
    pub excluded: usize,
    pub map: f64,
    pub r1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Mean average precision, 0-100.
    pub map: f64,
    /// Rank-1 accuracy, 0-100.
    pub r1: f64,
    pub queries: usize,
    /// Queries without any relevant gallery item in their action.
    pub excluded: usize,
    pub per_action: BTreeMap<String, ActionMetrics>,
    pub rankings: Vec<RankingResult>,
}

impl EvalReport {
    /// `key=value` lines; metrics shown to 0.1 and at full precision.
    pub fn to_key_values(&self, metric: Metric) -> String {
        format!(
            "metric={metric}\nmAP={:.1}\nR1={:.1}\nmAP_exact={:?}\nR1_exact={:?}\nqueries={}\nexcluded={}\n",
            self.map, self.r1, self.map, self.r1, self.queries, self.excluded
        )
    }

    pub fn rankings_tsv(&self, dataset: &Dataset) -> String {
        let mut out = String::from("#query\trank\tgallery\tdistance\trelevant\n");
        for r in &self.rankings {
            let q = &dataset.samples()[r.query].sample_id;
            for (rank, ((&g, d), rel)) in r
                .gallery
                .iter()
                .zip(&r.distances)
                .zip(&r.relevant)
                .enumerate()
            {
                out.push_str(&format!(
                    "{q}\t{}\t{}\t{d:?}\t{}\n",
                    rank + 1,
                    dataset.samples()[g].sample_id,
                    u8::from(*rel)
                ));
            }
        }
        out
    }
}

fn check_coverage(dataset: &Dataset, embeddings: &Tensor2) -> Result<()> {
    for s in dataset.samples() {
        if s.role != crate::data::Role::Train && s.feature_index >= embeddings.rows() {
            return Err(Error::MissingEmbedding(s.sample_id.clone()));
        }
    }
    Ok(())
}

struct QueryOutcome {
    ap: Option<f64>,
    top1: bool,
    ranking: RankingResult,
}

fn summarize(aps: Vec<f64>, top1: usize) -> (f64, f64) {
    let n = aps.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    (
        100.0 * sorted_sum(aps) / n as f64,
        100.0 * top1 as f64 / n as f64,
    )
}

/// Evaluates every query against its own action's gallery.
///
/// `embeddings` rows are indexed by each sample's `feature_index`.
pub fn evaluate_split(
    dataset: &Dataset,
    embeddings: &Tensor2,
    metric: Metric,
) -> Result<EvalReport> {
    check_coverage(dataset, embeddings)?;
    let index = index_by_action(dataset);
    let samples = dataset.samples();

    // Actions without queries contribute nothing and are not reported.
    let per_action: Vec<(String, Vec<QueryOutcome>)> = index
        .into_par_iter()
        .filter(|(_, split)| !split.query.is_empty())
        .map(|(action, split)| -> Result<(String, Vec<QueryOutcome>)> {
            if split.gallery.is_empty() {
                let outcomes = split
                    .query
                    .iter()
                    .map(|&q| QueryOutcome {
                        ap: None,
                        top1: false,
                        ranking: RankingResult {
                            query: q,
                            gallery: Vec::new(),
                            distances: Vec::new(),
                            relevant: Vec::new(),
                        },
                    })
                    .collect();
                return Ok((action, outcomes));
            }
            let rows: Vec<usize> = split
                .gallery
                .iter()
                .map(|&s| samples[s].feature_index)
                .collect();
            let gallery = embeddings.gather_rows(&rows);
            let mut outcomes = Vec::with_capacity(split.query.len());
            for &q in &split.query {
                let qrow = embeddings.row(samples[q].feature_index);
                let ranking = rank_action(qrow, &gallery, metric)?;
                let ordered: Vec<usize> = ranking.order.iter().map(|&i| split.gallery[i]).collect();
                let relevant: Vec<bool> = ordered
                    .iter()
                    .map(|&g| samples[g].player_id == samples[q].player_id)
                    .collect();
                let ap = average_precision(&relevant);
                outcomes.push(QueryOutcome {
                    ap,
                    top1: relevant[0],
                    ranking: RankingResult {
                        query: q,
                        gallery: ordered,
                        distances: ranking.distances,
                        relevant,
                    },
                });
            }
            Ok((action, outcomes))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut all_aps = Vec::new();
    let mut all_top1 = 0;
    let mut excluded = 0;
    let mut actions = BTreeMap::new();
    let mut rankings = Vec::new();
    for (action, outcomes) in per_action {
        let mut aps = Vec::new();
        let mut top1 = 0;
        let mut skipped = 0;
        for o in outcomes {
            match o.ap {
                Some(ap) => {
                    aps.push(ap);
                    top1 += usize::from(o.top1);
                }
                None => skipped += 1,
            }
            rankings.push(o.ranking);
        }
        all_aps.extend_from_slice(&aps);
        all_top1 += top1;
        excluded += skipped;
        let queries = aps.len();
        let (map, r1) = summarize(aps, top1);
        actions.insert(
            action,
            ActionMetrics {
                queries,
                excluded: skipped,
                map,
                r1,
            },
        );
    }
    let queries = all_aps.len();
    let (map, r1) = summarize(all_aps, all_top1);
    Ok(EvalReport {
        map,
        r1,
        queries,
        excluded,
        per_action: actions,
        rankings,
    })
}

/// Brute-force evaluation: full distance table over all query/gallery
/// samples, selection sort per query, AP from its definition.
pub fn oracle_evaluate(
    dataset: &Dataset,
    embeddings: &Tensor2,
    metric: Metric,
) -> Result<EvalReport> {
    check_coverage(dataset, embeddings)?;
    let samples = dataset.samples();
    let eval: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].role != crate::data::Role::Train)
        .collect();

    let n = eval.len();
    let mut table = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            let ra = embeddings.row(samples[eval[a]].feature_index);
            let rb = embeddings.row(samples[eval[b]].feature_index);
            table[a][b] = distance(ra, rb, metric)?;
        }
    }

    let mut per_action: BTreeMap<String, (Vec<f64>, usize, usize)> = BTreeMap::new();
    let mut all_aps = Vec::new();
    let mut all_top1 = 0;
    let mut excluded = 0;
    let mut rankings = Vec::new();
    for a in 0..n {
        let q = eval[a];
        if samples[q].role != crate::data::Role::Query {
            continue;
        }
        let entry = per_action
            .entry(samples[q].action_id.clone())
            .or_insert((Vec::new(), 0, 0));
        // Gallery of the same action, in sample order.
        let mut cand: Vec<usize> = (0..n)
            .filter(|&b| {
                let s = &samples[eval[b]];
                s.role == crate::data::Role::Gallery && s.action_id == samples[q].action_id
            })
            .collect();
        // Selection sort: smallest distance first, earliest sample on ties.
        for i in 0..cand.len() {
            let mut best = i;
            for j in (i + 1)..cand.len() {
                if table[a][cand[j]] < table[a][cand[best]] {
                    best = j;
                }
            }
            let picked = cand.remove(best);
            cand.insert(i, picked);
        }
        let relevant: Vec<bool> = cand
            .iter()
            .map(|&b| samples[eval[b]].player_id == samples[q].player_id)
            .collect();
        let r_total = relevant.iter().filter(|&&r| r).count();
        if r_total == 0 {
            excluded += 1;
            entry.2 += 1;
        } else {
            let mut ap = 0.0;
            for k in 0..relevant.len() {
                if relevant[k] {
                    let hits = relevant[..=k].iter().filter(|&&r| r).count();
                    ap += hits as f64 / (k + 1) as f64;
                }
            }
            let ap = ap / r_total as f64;
            entry.0.push(ap);
            all_aps.push(ap);
            if relevant[0] {
                entry.1 += 1;
                all_top1 += 1;
            }
        }
        rankings.push(RankingResult {
            query: q,
            gallery: cand.iter().map(|&b| eval[b]).collect(),
            distances: cand.iter().map(|&b| table[a][b]).collect(),
            relevant,
        });
    }

    let mean = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let len = v.len();
        let mut s = 0.0;
        for x in v {
            s += x;
        }
        if len == 0 {
            0.0
        } else {
            100.0 * s / len as f64
        }
    };
    let pct = |hits: usize, len: usize| {
        if len == 0 {
            0.0
        } else {
            100.0 * hits as f64 / len as f64
        }
    };
    let queries = all_aps.len();
    let map = mean(all_aps);
    let r1 = pct(all_top1, queries);
    let per_action = per_action
        .into_iter()
        .map(|(action, (aps, top1, skipped))| {
            let q = aps.len();
            (
                action,
                ActionMetrics {
                    queries: q,
                    excluded: skipped,
                    map: mean(aps),
                    r1: pct(top1, q),
                },
            )
        })
        .collect();
    Ok(EvalReport {
        map,
        r1,
        queries,
        excluded,
        per_action,
        rankings,
    })
}
