//! Training loop: sampler, forward pass, combined loss, momentum step.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::save_checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, EvalReport};
use crate::losses::{combined_loss, LossWeights, Metric};
use crate::model::{EmbeddingNet, Mode, ModelConfig};
use crate::numerics::{Graph, Tensor2};
use crate::sampler::{BatchSpec, Sampler, SamplerKind};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sampler: SamplerKind,
    pub batch: BatchSpec,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub weights: LossWeights,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Final learning rate as a fraction of `lr`.
    pub lr_floor: f64,
    pub checkpoint_period: usize,
    pub eval_period: usize,
    pub metric: Metric,
    pub seed: u64,
    /// Where checkpoints and the metrics log go; `None` keeps everything in
    /// memory.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerKind::Hierarchical,
            batch: BatchSpec { k: 4, m: 8 },
            hidden_dims: vec![64],
            embedding_dim: 32,
            weights: LossWeights::default(),
            epochs: 40,
            lr: 3e-4,
            momentum: 0.9,
            lr_floor: 0.1,
            checkpoint_period: 10,
            eval_period: 1,
            metric: Metric::Euclidean,
            seed: 1,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.batch.validate()?;
        self.weights.validate()?;
        if self.epochs == 0 || self.checkpoint_period == 0 || self.eval_period == 0 {
            return Err(Error::Config(
                "epochs, checkpoint_period and eval_period must be >= 1".into(),
            ));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(Error::Config(format!(
                "lr_floor must be in [0, 1], got {}",
                self.lr_floor
            )));
        }
        Ok(())
    }

    /// Learning rate used during zero-based epoch `e`.
    pub fn lr_at(&self, e: usize) -> f64 {
        self.lr * (1.0 - (1.0 - self.lr_floor) * e as f64 / self.epochs as f64)
    }
}

/// Classical momentum: `v <- mu*v - lr*g; p <- p + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum {
    pub momentum: f64,
    pub velocity: Vec<Tensor2>,
}

impl Momentum {
    pub fn new(momentum: f64, params: &[&Tensor2]) -> Self {
        Self {
            momentum,
            velocity: params
                .iter()
                .map(|p| Tensor2::zeros(p.rows(), p.cols()))
                .collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor2>, grads: &[Tensor2], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(Error::Shape {
                op: "momentum step",
                left: (params.len(), 1),
                right: (grads.len(), 1),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter block {i}")));
            }
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "momentum step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv - lr * gv;
                *pv += *vv;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    pub batches: usize,
    /// Epoch means of the unweighted terms and the weighted total.
    pub loss: f64,
    pub triplet: f64,
    pub classification: f64,
    pub centroid: f64,
    pub triplet_centroid: f64,
    pub map: Option<f64>,
    pub r1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the highest test mAP (earliest on ties).
    pub best_epoch: Option<usize>,
    pub best_map: Option<f64>,
    /// R1 of the best-mAP epoch.
    pub best_r1: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
    pub final_net: EmbeddingNet,
    pub best_net: Option<EmbeddingNet>,
}

impl RunReport {
    pub fn metrics_tsv(&self) -> String {
        metrics_tsv(&self.epochs)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:?}"))
}

fn metrics_tsv(epochs: &[EpochRecord]) -> String {
    let mut out = String::from(
        "#epoch\tlr\tbatches\tloss\ttriplet\tclassification\tcentroid\ttriplet_centroid\tmAP\tR1\n",
    );
    for r in epochs {
        let _ = writeln!(
            out,
            "{}\t{:?}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{}\t{}",
            r.epoch,
            r.lr,
            r.batches,
            r.loss,
            r.triplet,
            r.classification,
            r.centroid,
            r.triplet_centroid,
            opt(r.map),
            opt(r.r1)
        );
    }
    out
}

pub fn model_config(dataset: &Dataset, config: &TrainConfig) -> ModelConfig {
    ModelConfig {
        input_dim: dataset.feature_dim(),
        hidden_dims: config.hidden_dims.clone(),
        embedding_dim: config.embedding_dim,
        n_classes: dataset.train_identities().len(),
        init_seed: config.seed,
    }
}

/// Test-split metrics of `net`.
pub fn evaluate_net(net: &EmbeddingNet, dataset: &Dataset, metric: Metric) -> Result<EvalReport> {
    let emb = net.embed(&dataset.features().to_tensor())?;
    evaluate_split(dataset, &emb, metric)
}

fn has_test_queries(dataset: &Dataset) -> bool {
    dataset
        .samples()
        .iter()
        .any(|s| s.role == crate::data::Role::Query)
}

/// Trains on `dataset`. Deterministic in `config`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<RunReport> {
    config.validate()?;
    if dataset.train_indices().is_empty() {
        return Err(Error::InvalidDataset("train split is empty".into()));
    }
    let mut net = EmbeddingNet::init(model_config(dataset, config))?;
    let sampler = Sampler::new(config.sampler, dataset, config.batch, config.seed)?;
    let class_of: HashMap<u64, usize> = dataset
        .train_identities()
        .into_iter()
        .enumerate()
        .map(|(c, id)| (id, c))
        .collect();
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let evaluate = has_test_queries(dataset);

    let mut opt = Momentum::new(config.momentum, &net.parameters());
    let mut records: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, f64)> = None;
    let mut best_net = None;
    let mut best_checkpoint = None;

    for e in 0..config.epochs {
        let lr = config.lr_at(e);
        let mut sums = [0.0; 5];
        let mut batches = 0usize;
        for (b, batch) in sampler.epoch(e as u64).enumerate() {
            let indices = batch.sample_indices();
            let labels = batch.labels();
            let classes: Vec<usize> = labels.iter().map(|id| class_of[id]).collect();
            let x = dataset.features_of(&indices);

            let mut g = Graph::new();
            let xv = g.constant(x);
            let fwd = net.forward(&mut g, xv, Mode::Train)?;
            let (loss, parts) = combined_loss(
                &mut g,
                fwd.embeddings,
                fwd.logits,
                &labels,
                &classes,
                &config.weights,
            )?;
            if !parts.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {} at epoch {} batch {}",
                    parts.total,
                    e + 1,
                    b + 1
                )));
            }
            g.backward(loss)?;
            let grads: Vec<Tensor2> = fwd
                .params
                .iter()
                .map(|&p| {
                    let v = g.value(p);
                    g.grad(p)
                        .cloned()
                        .unwrap_or_else(|| Tensor2::zeros(v.rows(), v.cols()))
                })
                .collect();
            opt.step(net.parameters_mut(), &grads, lr)
                .map_err(|err| match err {
                    Error::NonFinite(msg) => {
                        Error::NonFinite(format!("{msg} at epoch {} batch {}", e + 1, b + 1))
                    }
                    other => other,
                })?;

            for (s, v) in sums.iter_mut().zip([
                parts.total,
                parts.triplet,
                parts.classification,
                parts.centroid,
                parts.triplet_centroid,
            ]) {
                *s += v;
            }
            batches += 1;
        }
        let mean = |s: f64| {
            if batches == 0 {
                0.0
            } else {
                s / batches as f64
            }
        };
        let epoch = e + 1;
        let mut record = EpochRecord {
            epoch,
            lr,
            batches,
            loss: mean(sums[0]),
            triplet: mean(sums[1]),
            classification: mean(sums[2]),
            centroid: mean(sums[3]),
            triplet_centroid: mean(sums[4]),
            map: None,
            r1: None,
        };

        let mut improved = false;
        if evaluate && (epoch % config.eval_period == 0 || epoch == config.epochs) {
            let report = evaluate_net(&net, dataset, config.metric)?;
            record.map = Some(report.map);
            record.r1 = Some(report.r1);
            if best.is_none_or(|(_, m, _)| report.map > m) {
                best = Some((epoch, report.map, report.r1));
                best_net = Some(net.clone());
                improved = true;
            }
        }
        records.push(record);

        if let Some(dir) = &config.out_dir {
            let meta = format!("checkpoint_epoch={epoch}\n{}", metrics_tsv(&records));
            if epoch % config.checkpoint_period == 0 || epoch == config.epochs {
                save_checkpoint(&net, &dir.join(format!("epoch-{epoch:03}.ckpt")), &meta)?;
            }
            if improved {
                let path = dir.join("best.ckpt");
                save_checkpoint(&net, &path, &meta)?;
                best_checkpoint = Some(path);
            }
        }
    }

    let report = RunReport {
        best_epoch: best.map(|b| b.0),
        best_map: best.map(|b| b.1),
        best_r1: best.map(|b| b.2),
        best_checkpoint,
        epochs: records,
        final_net: net,
        best_net,
    };
    if let Some(dir) = &config.out_dir {
        write_text(&dir.join("metrics.tsv"), &report.metrics_tsv())?;
    }
    Ok(report)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
