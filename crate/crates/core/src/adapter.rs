//! Residual two-layer adapter that specializes fused 2D embeddings, trained
//! with cosine-logit cross-entropy against pseudo labels.
//!
//! ```text
//! adapted = alpha * MLP(x) + (1 - alpha) * x,   MLP(x) = W2 relu(W1 x + b1) + b2
//! ```
//!
//! All arithmetic is f64; checkpoints store f32, and training returns
//! parameters already rounded to f32 so a reloaded checkpoint is identical to
//! the in-memory result.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::fusion::FusedEmbeddings;
use crate::labeling::TextEmbeddingBank;
use crate::loss::cosine_ce_sum;
use crate::optim::{step_decay, Adam, AdamConfig};
use crate::tensorio::{read_json, read_tensor, write_json, write_tensor, TensorFile};
use crate::{Error, Result, IGNORE};

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    /// h x d
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// d x h
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl AdapterGrads {
    pub fn norm(&self) -> f64 {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// N x d adapted embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedEmbeddings {
    pub matrix: Array2<f64>,
}

struct ForwardCache {
    pre: Array2<f64>,
    hidden: Array2<f64>,
    out: Array2<f64>,
}

impl AdapterParams {
    pub fn init(dim: usize, hidden: usize, alpha: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let he = Normal::new(0.0, (2.0 / dim.max(1) as f64).sqrt()).expect("finite std");
        // The second layer starts small so the adapter begins near the residual path.
        let small = Normal::new(0.0, 0.1 / (hidden.max(1) as f64).sqrt()).expect("finite std");
        let params = Self {
            w1: Array2::from_shape_simple_fn((hidden, dim), || he.sample(&mut rng)),
            b1: Array1::zeros(hidden),
            w2: Array2::from_shape_simple_fn((dim, hidden), || small.sample(&mut rng)),
            b2: Array1::zeros(dim),
            alpha,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d) = self.w1.dim();
        if self.b1.len() != h || self.w2.dim() != (d, h) || self.b2.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "adapter shapes W1 {:?} b1 {} W2 {:?} b2 {}",
                self.w1.dim(),
                self.b1.len(),
                self.w2.dim(),
                self.b2.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        let finite = self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Numeric("adapter parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// W1, b1, W2, b2 as flat row-major slices.
    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn round_to_f32(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    fn forward_cache(&self, x: &Array2<f64>) -> ForwardCache {
        let pre = x.dot(&self.w1.t()) + &self.b1;
        let hidden = pre.mapv(|z| z.max(0.0));
        let mlp = hidden.dot(&self.w2.t()) + &self.b2;
        let out = mlp * self.alpha + x * (1.0 - self.alpha);
        ForwardCache { pre, hidden, out }
    }

    /// Smallest |pre-activation| of the hidden ReLU over the rows of `x`.
    pub fn min_abs_relu_input(&self, x: &Array2<f64>) -> f64 {
        self.forward_cache(x).pre.iter().fold(f64::INFINITY, |m, &z| m.min(z.abs()))
    }

    /// Adapter applied to every row of `x`.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "adapter expects d={}, input has d={}",
                self.dim(),
                x.ncols()
            )));
        }
        if self.alpha == 0.0 {
            return Ok(x.clone());
        }
        Ok(self.forward_cache(x).out)
    }

    pub fn save(&self, dir: &Path, meta: &AdapterMeta) -> Result<()> {
        let f32s = |a: &[f64]| a.iter().map(|&x| x as f32).collect::<Vec<_>>();
        let (h, d) = self.w1.dim();
        write_tensor(dir.join("w1.tnsr"), &TensorFile::from_f32(vec![h, d], f32s(self.w1.as_slice().unwrap()))?)?;
        write_tensor(dir.join("b1.tnsr"), &TensorFile::from_f32(vec![h], f32s(self.b1.as_slice().unwrap()))?)?;
        write_tensor(dir.join("w2.tnsr"), &TensorFile::from_f32(vec![d, h], f32s(self.w2.as_slice().unwrap()))?)?;
        write_tensor(dir.join("b2.tnsr"), &TensorFile::from_f32(vec![d], f32s(self.b2.as_slice().unwrap()))?)?;
        write_json(&dir.join("adapter.json"), meta)
    }

    pub fn load(dir: &Path) -> Result<(Self, AdapterMeta)> {
        let meta_path = dir.join("adapter.json");
        if !meta_path.exists() {
            return Err(Error::MissingArtifact {
                path: meta_path,
                producer: "train-adapter".into(),
            });
        }
        let meta: AdapterMeta = read_json(&meta_path)?;
        let f64s2 = |name: &str| -> Result<Array2<f64>> {
            Ok(read_tensor(dir.join(name))?.into_array2()?.mapv(|x| x as f64))
        };
        let f64s1 = |name: &str| -> Result<Array1<f64>> {
            Ok(read_tensor(dir.join(name))?.into_array1()?.mapv(|x| x as f64))
        };
        let params = Self {
            w1: f64s2("w1.tnsr")?,
            b1: f64s1("b1.tnsr")?,
            w2: f64s2("w2.tnsr")?,
            b2: f64s1("b2.tnsr")?,
            alpha: meta.alpha,
        };
        params.validate()?;
        if params.dim() != meta.dim || params.hidden() != meta.hidden {
            return Err(Error::DimensionMismatch(format!(
                "adapter checkpoint tensors do not match metadata in {}",
                dir.display()
            )));
        }
        Ok((params, meta))
    }
}

/// Checkpoint metadata stored next to the parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterMeta {
    pub alpha: f64,
    pub hidden: usize,
    pub dim: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// Applies the adapter to fused embeddings; invalid rows stay zero.
pub fn adapter_forward(fused: &FusedEmbeddings, params: &AdapterParams) -> Result<AdaptedEmbeddings> {
    let x = fused.embeddings.mapv(|v| v as f64);
    let mut matrix = params.apply(&x)?;
    for (mut row, &valid) in matrix.rows_mut().into_iter().zip(&fused.valid) {
        if !valid {
            row.fill(0.0);
        }
    }
    Ok(AdaptedEmbeddings { matrix })
}

#[derive(Debug, Clone)]
pub struct SpecializationLoss {
    pub loss: f64,
    /// Cosine logits of adapted rows against the unit-norm bank.
    pub logits: Array2<f64>,
}

/// Mean cross-entropy over non-IGNORE points of `softmax(logits / temperature)`.
pub fn specialization_loss(
    adapted: &AdaptedEmbeddings,
    bank: &TextEmbeddingBank,
    labels: &[i32],
    temperature: f64,
) -> Result<SpecializationLoss> {
    if labels.iter().all(|&l| l == IGNORE) {
        return Err(Error::InvalidInput("every point is IGNORE; nothing to supervise".into()));
    }
    let (sum, logits) = cosine_ce_sum(&adapted.matrix, &bank.normalized(), labels, temperature)?;
    Ok(SpecializationLoss {
        loss: sum.mean(),
        logits,
    })
}

/// Labeled rows of one or more scenes, IGNORE points already removed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterBatch {
    pub inputs: Array2<f64>,
    pub labels: Vec<i32>,
}

impl AdapterBatch {
    pub fn from_scene(fused: &FusedEmbeddings, labels: &[i32]) -> Result<Self> {
        if labels.len() != fused.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} fused points",
                labels.len(),
                fused.len()
            )));
        }
        let keep: Vec<usize> = (0..fused.len())
            .filter(|&i| fused.valid[i] && labels[i] != IGNORE)
            .collect();
        let inputs = fused.embeddings.select(Axis(0), &keep).mapv(|x| x as f64);
        Ok(Self {
            inputs,
            labels: keep.iter().map(|&i| labels[i]).collect(),
        })
    }

    pub fn concat(parts: &[&AdapterBatch]) -> Self {
        let views: Vec<_> = parts.iter().map(|b| b.inputs.view()).collect();
        let inputs = ndarray::concatenate(Axis(0), &views).expect("batches share d");
        Self {
            inputs,
            labels: parts.iter().flat_map(|b| b.labels.iter().copied()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mean specialization loss over the batch and its exact gradients. The text
/// bank enters only as the frozen unit-norm matrix.
pub fn adapter_backward(
    batch: &AdapterBatch,
    params: &AdapterParams,
    bank_unit: &Array2<f64>,
    temperature: f64,
) -> Result<(f64, AdapterGrads)> {
    if batch.inputs.ncols() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "adapter expects d={}, batch has d={}",
            params.dim(),
            batch.inputs.ncols()
        )));
    }
    let cache = params.forward_cache(&batch.inputs);
    let (sum, _) = cosine_ce_sum(&cache.out, bank_unit, &batch.labels, temperature)?;
    if sum.count == 0 {
        return Err(Error::InvalidInput("batch has no usable labeled points".into()));
    }
    let scale = 1.0 / sum.count as f64;
    let d_mlp = &sum.grad * (params.alpha * scale);
    let w2 = d_mlp.t().dot(&cache.hidden);
    let b2 = d_mlp.sum_axis(Axis(0));
    let mut d_pre = d_mlp.dot(&params.w2);
    d_pre.zip_mut_with(&cache.pre, |g, &z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    let w1 = d_pre.t().dot(&batch.inputs);
    let b1 = d_pre.sum_axis(Axis(0));
    Ok((sum.sum * scale, AdapterGrads { w1, b1, w2, b2 }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub alpha: f64,
    /// Hidden width; `None` uses the embedding dimension.
    pub hidden: Option<usize>,
    pub lr: f64,
    /// Scenes per optimization step.
    pub batch: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            hidden: None,
            lr: 0.003,
            batch: 16,
            decay_factor: 0.7,
            decay_every: 20,
            epochs: 80,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdapterTraining {
    pub params: AdapterParams,
    /// Mean loss of every optimization step, in order.
    pub losses: Vec<f64>,
}

/// Trains an adapter on per-scene labeled batches. Scene order is shuffled
/// every epoch from `seed`; the result is a pure function of the inputs.
pub fn train_adapter(
    scenes: &[AdapterBatch],
    bank: &TextEmbeddingBank,
    config: &AdapterConfig,
    temperature: f64,
    seed: u64,
) -> Result<AdapterTraining> {
    let scenes: Vec<&AdapterBatch> = scenes.iter().filter(|s| !s.is_empty()).collect();
    if scenes.is_empty() {
        return Err(Error::InvalidInput("no scene has labeled valid points".into()));
    }
    let dim = bank.dim();
    let hidden = config.hidden.unwrap_or(dim);
    let mut params = AdapterParams::init(dim, hidden, config.alpha, seed)?;
    let bank_unit = bank.normalized();
    let mut adam = Adam::new(config.adam, &[hidden * dim, hidden, dim * hidden, dim]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ada9);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut losses = Vec::new();

    for epoch in 0..config.epochs {
        let lr = step_decay(config.lr, config.decay_factor, config.decay_every, epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch.max(1)) {
            let parts: Vec<&AdapterBatch> = chunk.iter().map(|&i| scenes[i]).collect();
            let batch = AdapterBatch::concat(&parts);
            let (loss, grads) = adapter_backward(&batch, &params, &bank_unit, temperature)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "adapter loss became {loss} at epoch {epoch}, step {}",
                    adam.steps()
                )));
            }
            losses.push(loss);
            let grads_flat = [
                grads.w1.as_slice().unwrap(),
                grads.b1.as_slice().unwrap(),
                grads.w2.as_slice().unwrap(),
                grads.b2.as_slice().unwrap(),
            ];
            adam.step(lr, &mut params.slices_mut(), &grads_flat);
        }
    }
    params.round_to_f32();
    params.validate()?;
    Ok(AdapterTraining { params, losses })
}
