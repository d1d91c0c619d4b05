//! Feed-forward embedding network.
//!
//! `input -> [affine -> relu]* -> affine -> batchnorm -> embedding`, then a
//! classification layer `embedding -> logits`. The embedding is the
//! normalized pre-classifier activation; at inference the logits are
//! ignored.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor2, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub n_classes: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embedding_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "model dimensions must be >= 1: input {}, hidden {:?}, embedding {}",
                self.input_dim, self.hidden_dims, self.embedding_dim
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "n_classes must be >= 2, got {}",
                self.n_classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    /// `in × out`
    pub weight: Tensor2,
    /// `1 × out`
    pub bias: Tensor2,
}

impl Affine {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (3.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor2::new(fan_in, fan_out, data).expect("init shape"),
            bias: Tensor2::zeros(1, fan_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor2,
    pub beta: Tensor2,
    pub running_mean: Tensor2,
    /// Running estimate of the unbiased per-feature variance.
    pub running_var: Tensor2,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor2::filled(1, dim, 1.0),
            beta: Tensor2::zeros(1, dim),
            running_mean: Tensor2::zeros(1, dim),
            running_var: Tensor2::filled(1, dim, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    pub config: ModelConfig,
    pub layers: Vec<Affine>,
    pub norm: BatchNorm,
    pub classifier: Affine,
}

/// Nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub embeddings: Var,
    pub logits: Var,
    /// Parameter nodes in [`EmbeddingNet::parameters`] order.
    pub params: Vec<Var>,
    /// Input of the normalization layer.
    pub pre_norm: Var,
    /// Batch mean and biased variance (train mode only).
    pub batch_stats: Option<(Var, Var)>,
}

impl EmbeddingNet {
    /// Fresh network; deterministic in `config.init_seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut layers = Vec::new();
        let mut fan_in = config.input_dim;
        for &h in &config.hidden_dims {
            layers.push(Affine::init(fan_in, h, &mut rng));
            fan_in = h;
        }
        layers.push(Affine::init(fan_in, config.embedding_dim, &mut rng));
        let classifier = Affine::init(config.embedding_dim, config.n_classes, &mut rng);
        let norm = BatchNorm::new(config.embedding_dim);
        Ok(Self {
            config,
            layers,
            norm,
            classifier,
        })
    }

    /// Trainable tensors: each layer's weight and bias, the normalization
    /// scale and shift, then the classifier weight and bias.
    pub fn parameters(&self) -> Vec<&Tensor2> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.extend([
            &self.norm.gamma,
            &self.norm.beta,
            &self.classifier.weight,
            &self.classifier.bias,
        ]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.extend([
            &mut self.norm.gamma,
            &mut self.norm.beta,
            &mut self.classifier.weight,
            &mut self.classifier.bias,
        ]);
        out
    }

    /// Puts every parameter on the graph.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    /// Forward pass using caller-supplied parameter nodes. Does not touch
    /// running statistics.
    pub fn forward_with(
        &self,
        g: &mut Graph,
        x: Var,
        params: &[Var],
        mode: Mode,
    ) -> Result<Forward> {
        let expected = self.parameters().len();
        if params.len() != expected {
            return Err(Error::Shape {
                op: "forward_with params",
                left: (params.len(), 1),
                right: (expected, 1),
            });
        }
        let (rows, cols) = g.value(x).shape();
        if cols != self.config.input_dim {
            return Err(Error::Shape {
                op: "forward input",
                left: (rows, cols),
                right: (rows, self.config.input_dim),
            });
        }
        let n_layers = self.layers.len();
        let mut h = x;
        for i in 0..n_layers {
            let z = g.matmul(h, params[2 * i])?;
            let z = g.add(z, params[2 * i + 1])?;
            h = if i + 1 < n_layers { g.relu(z) } else { z };
        }
        let pre_norm = h;
        let gamma = params[2 * n_layers];
        let beta = params[2 * n_layers + 1];

        let (centered, inv_std, batch_stats) = match mode {
            Mode::Train => {
                let mean = g.mean_rows(h);
                let centered = g.sub(h, mean)?;
                let sq = g.mul(centered, centered)?;
                let var = g.mean_rows(sq);
                let shifted = g.add_scalar(var, BN_EPS);
                let inv = g.powf(shifted, -0.5);
                (centered, inv, Some((mean, var)))
            }
            Mode::Eval => {
                let mean = g.constant(self.norm.running_mean.clone());
                let inv = g.constant(self.norm.running_var.map(|v| 1.0 / (v + BN_EPS).sqrt()));
                (g.sub(h, mean)?, inv, None)
            }
        };
        let normed = g.mul(centered, inv_std)?;
        let scaled = g.mul(normed, gamma)?;
        let embeddings = g.add(scaled, beta)?;

        let logits = g.matmul(embeddings, params[2 * n_layers + 2])?;
        let logits = g.add(logits, params[2 * n_layers + 3])?;
        Ok(Forward {
            embeddings,
            logits,
            params: params.to_vec(),
            pre_norm,
            batch_stats,
        })
    }

    /// Forward pass with trainable parameters. In train mode the running
    /// statistics move towards the batch statistics.
    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: Mode) -> Result<Forward> {
        let params = self.register(g, true);
        let out = self.forward_with(g, x, &params, mode)?;
        if let Some((mean, var)) = out.batch_stats {
            let n = g.value(x).rows() as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let (mean, var) = (g.value(mean).clone(), g.value(var).clone());
            let rm = self.norm.running_mean.data_mut();
            for (r, m) in rm.iter_mut().zip(mean.data()) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            let rv = self.norm.running_var.data_mut();
            for (r, v) in rv.iter_mut().zip(var.data()) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
            }
        }
        Ok(out)
    }

    /// Eval-mode embeddings of raw feature rows.
    pub fn embed(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let params = self.register(&mut g, false);
        let out = self.forward_with(&mut g, xv, &params, Mode::Eval)?;
        Ok(g.value(out.embeddings).clone())
    }
}
