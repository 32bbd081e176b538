//! Point encoder and its training against frozen adapted embeddings.
//!
//! The reference encoder maps per-point features (bounding-box-normalized xyz
//! and rgb) through an affine+ReLU stack, appends the mean of each point's k
//! nearest neighbors' hidden features, and finishes with an affine stack whose
//! last layer is linear and has the text embedding dimension.
//!
//! Four training modes cover the ablation grid:
//!
//! | mode                    | target                              |
//! |-------------------------|-------------------------------------|
//! | `soft_guidance_adapter` | cosine to adapter(fused embeddings) |
//! | `soft_guidance_raw`     | cosine to fused embeddings          |
//! | `direct_ce_filtered`    | CE to scene-masked pseudo labels    |
//! | `direct_ce_unfiltered`  | CE to unmasked pseudo labels        |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{adapter_forward, AdapterParams};
use crate::fusion::FusedEmbeddings;
use crate::knn::{knn_grid, Neighbors};
use crate::labeling::TextEmbeddingBank;
use crate::loss::{cosine_alignment_sum, cosine_ce_sum, LossSum};
use crate::optim::{poly, Adam, AdamConfig};
use crate::tensorio::{read_json, read_tensor, write_json, write_tensor, PointCloud, TensorFile};
use crate::{Error, Result};

pub const INPUT_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    SoftGuidanceAdapter,
    SoftGuidanceRaw,
    DirectCeFiltered,
    DirectCeUnfiltered,
}

impl DistillMode {
    pub const ALL: [DistillMode; 4] = [
        DistillMode::DirectCeUnfiltered,
        DistillMode::SoftGuidanceRaw,
        DistillMode::DirectCeFiltered,
        DistillMode::SoftGuidanceAdapter,
    ];

    /// Row label in the ablation table.
    pub fn row(self) -> char {
        match self {
            DistillMode::DirectCeUnfiltered => 'a',
            DistillMode::SoftGuidanceRaw => 'b',
            DistillMode::DirectCeFiltered => 'c',
            DistillMode::SoftGuidanceAdapter => 'd',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DistillMode::SoftGuidanceAdapter => "soft_guidance_adapter",
            DistillMode::SoftGuidanceRaw => "soft_guidance_raw",
            DistillMode::DirectCeFiltered => "direct_ce_filtered",
            DistillMode::DirectCeUnfiltered => "direct_ce_unfiltered",
        }
    }

    pub fn needs_adapter(self) -> bool {
        self == DistillMode::SoftGuidanceAdapter
    }

    pub fn is_soft(self) -> bool {
        matches!(self, DistillMode::SoftGuidanceAdapter | DistillMode::SoftGuidanceRaw)
    }
}

impl fmt::Display for DistillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistillMode::ALL
            .into_iter()
            .find(|m| m.name() == s || m.row().to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown distill mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub pre_widths: Vec<usize>,
    pub post_widths: Vec<usize>,
    pub k: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            pre_widths: vec![32],
            post_widths: vec![32],
            k: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// out x in
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn init(inputs: usize, outputs: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (gain / inputs.max(1) as f64).sqrt()).expect("finite std");
        Self {
            w: Array2::from_shape_simple_fn((outputs, inputs), || normal.sample(rng)),
            b: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

/// Layer stack of the reference point encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEncoderParams {
    pub config: EncoderConfig,
    pub dim: usize,
    pub pre: Vec<Dense>,
    pub post: Vec<Dense>,
}

/// Gradients with the same layout as [`PointEncoderParams`].
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub pre: Vec<Dense>,
    pub post: Vec<Dense>,
}

impl EncoderGrads {
    fn zeros_like(p: &PointEncoderParams) -> Self {
        let z = |l: &Dense| Dense {
            w: Array2::zeros(l.w.raw_dim()),
            b: Array1::zeros(l.b.raw_dim()),
        };
        Self {
            pre: p.pre.iter().map(z).collect(),
            post: p.post.iter().map(z).collect(),
        }
    }

    fn add_assign(&mut self, other: &EncoderGrads) {
        for (a, b) in self.pre.iter_mut().chain(self.post.iter_mut()).zip(other.pre.iter().chain(&other.post)) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    fn scale(&mut self, s: f64) {
        for l in self.pre.iter_mut().chain(self.post.iter_mut()) {
            l.w *= s;
            l.b *= s;
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.pre
            .iter()
            .chain(&self.post)
            .flat_map(|l| [l.w.as_slice().unwrap(), l.b.as_slice().unwrap()])
            .collect()
    }
}

/// Per-scene encoder input: normalized features and the neighbor table.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub features: Array2<f64>,
    pub neighbors: Neighbors,
}

/// xyz mapped to [0, 1] per axis over the cloud's bounding box, then rgb.
/// Axes with zero extent map to 0.
pub fn point_features(cloud: &PointCloud) -> Array2<f64> {
    let pts = cloud.points.mapv(|x| x as f64);
    let mut feats = pts.clone();
    for a in 0..3 {
        let col = pts.column(a);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ext = hi - lo;
        feats
            .column_mut(a)
            .mapv_inplace(|x| if ext > 0.0 { (x - lo) / ext } else { 0.0 });
    }
    feats
}

impl EncoderInput {
    pub fn from_cloud(cloud: &PointCloud, k: usize) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::InvalidInput("cannot encode an empty point cloud".into()));
        }
        let xyz: Vec<[f64; 3]> = (0..cloud.len()).map(|i| cloud.position(i)).collect();
        Ok(Self {
            features: point_features(cloud),
            neighbors: knn_grid(&xyz, k.max(1)),
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

struct Cache {
    /// Input to every layer, in order: pre layers then post layers.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every layer.
    pre_act: Vec<Array2<f64>>,
    out: Array2<f64>,
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|x| x.max(0.0))
}

fn aggregate(h: &Array2<f64>, nb: &Neighbors) -> Array2<f64> {
    let mut g = Array2::zeros(h.raw_dim());
    let inv = 1.0 / nb.k() as f64;
    for (i, mut row) in g.rows_mut().into_iter().enumerate() {
        for &j in nb.row(i) {
            row.scaled_add(inv, &h.row(j as usize));
        }
    }
    g
}

impl PointEncoderParams {
    pub fn init(config: EncoderConfig, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("encoder output dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pre = Vec::new();
        let mut width = INPUT_DIM;
        for &w in &config.pre_widths {
            pre.push(Dense::init(width, w, 2.0, &mut rng));
            width = w;
        }
        width *= 2;
        let mut post = Vec::new();
        for &w in &config.post_widths {
            post.push(Dense::init(width, w, 2.0, &mut rng));
            width = w;
        }
        post.push(Dense::init(width, dim, 1.0, &mut rng));
        Ok(Self {
            config,
            dim,
            pre,
            post,
        })
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.pre.iter().chain(&self.post)
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.pre
            .iter_mut()
            .chain(self.post.iter_mut())
            .flat_map(|l| [l.w.as_slice_mut().unwrap(), l.b.as_slice_mut().unwrap()])
            .collect()
    }

    pub fn slice_sizes(&self) -> Vec<usize> {
        self.layers().flat_map(|l| [l.w.len(), l.b.len()]).collect()
    }

    pub fn round_to_f32(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    /// Visits every scalar parameter mutably, in checkpoint order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(&mut f);
        }
    }

    fn forward_cache(&self, input: &EncoderInput) -> Cache {
        let mut inputs = Vec::with_capacity(self.pre.len() + self.post.len());
        let mut pre_act = Vec::with_capacity(inputs.capacity());
        let mut h = input.features.clone();
        for l in &self.pre {
            let z = l.forward(&h);
            inputs.push(h);
            h = relu(&z);
            pre_act.push(z);
        }
        let g = aggregate(&h, &input.neighbors);
        h = concatenate(Axis(1), &[h.view(), g.view()]).expect("same row count");
        let last = self.post.len() - 1;
        for (i, l) in self.post.iter().enumerate() {
            let z = l.forward(&h);
            inputs.push(h);
            h = if i == last { z.clone() } else { relu(&z) };
            pre_act.push(z);
        }
        Cache {
            inputs,
            pre_act,
            out: h,
        }
    }

    pub fn forward(&self, input: &EncoderInput) -> Array2<f64> {
        self.forward_cache(input).out
    }

    /// Smallest |pre-activation| over all ReLU units, used to keep finite
    /// difference probes away from kinks.
    pub fn min_abs_relu_input(&self, input: &EncoderInput) -> f64 {
        let cache = self.forward_cache(input);
        let n_relu = cache.pre_act.len() - 1;
        cache.pre_act[..n_relu]
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, &x| m.min(x.abs()))
    }

    /// Gradients of `sum_i <d_out_i, out_i>` for the given upstream gradient.
    fn backward(&self, input: &EncoderInput, cache: &Cache, d_out: &Array2<f64>) -> EncoderGrads {
        let mut grads = EncoderGrads::zeros_like(self);
        let n_pre = self.pre.len();
        let last = self.post.len() - 1;
        let mut dh = d_out.clone();
        for i in (0..self.post.len()).rev() {
            let layer = &self.post[i];
            let mut dz = dh;
            if i != last {
                dz.zip_mut_with(&cache.pre_act[n_pre + i], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            grads.post[i].w = dz.t().dot(&cache.inputs[n_pre + i]);
            grads.post[i].b = dz.sum_axis(Axis(0));
            dh = dz.dot(&layer.w);
        }
        let width = dh.ncols() / 2;
        let dg = dh.slice(s![.., width..]).to_owned();
        let mut dh = dh.slice(s![.., ..width]).to_owned();
        let inv = 1.0 / input.neighbors.k() as f64;
        for i in 0..dg.nrows() {
            for &j in input.neighbors.row(i) {
                dh.row_mut(j as usize).scaled_add(inv, &dg.row(i));
            }
        }
        for i in (0..n_pre).rev() {
            let mut dz = dh;
            dz.zip_mut_with(&cache.pre_act[i], |g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
            grads.pre[i].w = dz.t().dot(&cache.inputs[i]);
            grads.pre[i].b = dz.sum_axis(Axis(0));
            dh = dz.dot(&self.pre[i].w);
        }
        grads
    }

    pub fn save(&self, dir: &Path, meta: &EncoderMeta) -> Result<()> {
        for (i, l) in self.layers().enumerate() {
            let w: Vec<f32> = l.w.iter().map(|&x| x as f32).collect();
            let b: Vec<f32> = l.b.iter().map(|&x| x as f32).collect();
            write_tensor(dir.join(format!("layer_{i:02}_w.tnsr")), &TensorFile::from_f32(l.w.shape().to_vec(), w)?)?;
            write_tensor(dir.join(format!("layer_{i:02}_b.tnsr")), &TensorFile::from_f32(vec![l.b.len()], b)?)?;
        }
        write_json(&dir.join("encoder.json"), meta)
    }

    pub fn load(dir: &Path) -> Result<(Self, EncoderMeta)> {
        let meta_path = dir.join("encoder.json");
        if !meta_path.exists() {
            return Err(Error::MissingArtifact {
                path: meta_path,
                producer: "train-3d".into(),
            });
        }
        let meta: EncoderMeta = read_json(&meta_path)?;
        let mut params = Self::init(meta.encoder.clone(), meta.dim, 0)?;
        for (i, l) in params.pre.iter_mut().chain(params.post.iter_mut()).enumerate() {
            let w = read_tensor(dir.join(format!("layer_{i:02}_w.tnsr")))?.into_array2()?;
            let b = read_tensor(dir.join(format!("layer_{i:02}_b.tnsr")))?.into_array1()?;
            if w.dim() != l.w.dim() || b.len() != l.b.len() {
                return Err(Error::DimensionMismatch(format!(
                    "encoder layer {i} in {} has shape {:?}, expected {:?}",
                    dir.display(),
                    w.dim(),
                    l.w.dim()
                )));
            }
            l.w = w.mapv(|x| x as f64);
            l.b = b.mapv(|x| x as f64);
        }
        Ok((params, meta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderMeta {
    pub encoder: EncoderConfig,
    pub dim: usize,
    pub mode: DistillMode,
    pub seed: u64,
    pub config_hash: String,
}

/// N x d point embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings3D {
    pub matrix: Array2<f64>,
}

pub fn encode_points(cloud: &PointCloud, params: &PointEncoderParams) -> Result<Embeddings3D> {
    let input = EncoderInput::from_cloud(cloud, params.config.k)?;
    Ok(Embeddings3D {
        matrix: params.forward(&input),
    })
}

#[derive(Debug, Clone)]
pub struct SoftGuidanceLoss {
    pub loss: f64,
    pub used: usize,
    /// Valid points skipped because one of the rows had zero norm.
    pub skipped: usize,
}

/// Mean of `1 - cos(f3d_i, adapted_i)` over valid points.
pub fn soft_guidance_loss(f3d: &Array2<f64>, adapted: &Array2<f64>, valid: &[bool]) -> Result<SoftGuidanceLoss> {
    let sum = cosine_alignment_sum(f3d, adapted, valid)?;
    Ok(SoftGuidanceLoss {
        loss: sum.mean(),
        used: sum.count,
        skipped: sum.skipped,
    })
}

/// Supervision for one scene.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Align { target: Array2<f64>, valid: Vec<bool> },
    Classify { labels: Vec<i32> },
}

/// Summed loss over one scene and the gradient of that sum.
pub fn scene_loss_and_grads(
    params: &PointEncoderParams,
    input: &EncoderInput,
    target: &Target,
    bank_unit: &Array2<f64>,
    temperature: f64,
) -> Result<(LossSum, EncoderGrads)> {
    let cache = params.forward_cache(input);
    let sum = match target {
        Target::Align { target, valid } => cosine_alignment_sum(&cache.out, target, valid)?,
        Target::Classify { labels } => cosine_ce_sum(&cache.out, bank_unit, labels, temperature)?.0,
    };
    let grads = params.backward(input, &cache, &sum.grad);
    Ok((sum, grads))
}

/// Mean loss over a set of scenes and its gradient.
pub fn batch_loss_and_grads(
    params: &PointEncoderParams,
    batch: &[(&EncoderInput, &Target)],
    bank_unit: &Array2<f64>,
    temperature: f64,
) -> Result<(f64, usize, EncoderGrads)> {
    // Scenes run in parallel; the reduction below is in scene order.
    let parts: Vec<(LossSum, EncoderGrads)> = batch
        .par_iter()
        .map(|(input, target)| scene_loss_and_grads(params, input, target, bank_unit, temperature))
        .collect::<Result<_>>()?;
    let mut total = EncoderGrads::zeros_like(params);
    let (mut sum, mut count) = (0.0, 0usize);
    for (s, g) in &parts {
        sum += s.sum;
        count += s.count;
        total.add_assign(g);
    }
    if count == 0 {
        return Err(Error::InvalidInput("batch has no supervised points".into()));
    }
    total.scale(1.0 / count as f64);
    Ok((sum / count as f64, count, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub mode: DistillMode,
    pub lr: f64,
    /// Scenes per optimization step.
    pub batch: usize,
    pub poly_power: f64,
    pub iters: usize,
    pub encoder: EncoderConfig,
    pub adam: AdamConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            mode: DistillMode::SoftGuidanceAdapter,
            lr: 0.0001,
            batch: 8,
            poly_power: 0.9,
            iters: 300,
            encoder: EncoderConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

/// Everything a training scene can offer; each mode uses part of it.
#[derive(Debug, Clone)]
pub struct DistillScene {
    pub input: EncoderInput,
    pub fused: FusedEmbeddings,
    pub labels_filtered: Vec<i32>,
    pub labels_unfiltered: Vec<i32>,
}

impl DistillScene {
    pub fn target(&self, mode: DistillMode, adapter: Option<&AdapterParams>) -> Result<Target> {
        Ok(match mode {
            DistillMode::SoftGuidanceAdapter => {
                let adapter = adapter.ok_or_else(|| Error::MissingArtifact {
                    path: "adapter checkpoint".into(),
                    producer: "train-adapter".into(),
                })?;
                Target::Align {
                    target: adapter_forward(&self.fused, adapter)?.matrix,
                    valid: self.fused.valid.clone(),
                }
            }
            DistillMode::SoftGuidanceRaw => Target::Align {
                target: self.fused.embeddings.mapv(|x| x as f64),
                valid: self.fused.valid.clone(),
            },
            DistillMode::DirectCeFiltered => Target::Classify {
                labels: self.labels_filtered.clone(),
            },
            DistillMode::DirectCeUnfiltered => Target::Classify {
                labels: self.labels_unfiltered.clone(),
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct DistillTraining {
    pub params: PointEncoderParams,
    pub losses: Vec<f64>,
}

/// Trains an encoder in the configured mode. The adapter is only read.
pub fn train_3d(
    scenes: &[DistillScene],
    adapter: Option<&AdapterParams>,
    bank: &TextEmbeddingBank,
    config: &DistillConfig,
    temperature: f64,
    seed: u64,
) -> Result<DistillTraining> {
    if scenes.is_empty() {
        return Err(Error::InvalidInput("no training scenes".into()));
    }
    let targets: Vec<Target> = scenes
        .iter()
        .map(|s| s.target(config.mode, adapter))
        .collect::<Result<_>>()?;
    let mut params = PointEncoderParams::init(config.encoder.clone(), bank.dim(), seed)?;
    for s in scenes {
        if s.input.neighbors.k() != config.encoder.k.min(s.input.len()) {
            return Err(Error::Config(format!(
                "scene prepared with k={}, encoder configured with k={}",
                s.input.neighbors.k(),
                config.encoder.k
            )));
        }
    }
    let bank_unit = bank.normalized();
    let mut adam = Adam::new(config.adam, &params.slice_sizes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3d_0e0c);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut cursor = order.len();
    let batch_size = config.batch.clamp(1, scenes.len());
    let mut losses = Vec::with_capacity(config.iters);

    for iter in 0..config.iters {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            batch.push((&scenes[i].input, &targets[i]));
        }
        let (loss, _, grads) = batch_loss_and_grads(&params, &batch, &bank_unit, temperature)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("encoder loss became {loss} at iteration {iter}")));
        }
        losses.push(loss);
        let lr = poly(config.lr, config.poly_power, iter, config.iters);
        let g = grads.slices();
        adam.step(lr, &mut params.slices_mut(), &g);
    }
    params.round_to_f32();
    Ok(DistillTraining { params, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cloud(rows: Array2<f32>) -> PointCloud {
        PointCloud::new(rows, None).unwrap()
    }

    #[test]
    fn single_point_aggregates_itself() {
        let c = cloud(array![[1.0, 2.0, 3.0, 0.2, 0.4, 0.6]]);
        let params = PointEncoderParams::init(EncoderConfig::default(), 4, 1).unwrap();
        let input = EncoderInput::from_cloud(&c, 16).unwrap();
        assert_eq!(input.neighbors.k(), 1);
        let out = params.forward(&input);
        assert_eq!(out.dim(), (1, 4));
        assert!(out.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn identical_points_identical_rows() {
        let c = cloud(array![
            [0.0, 0.0, 0.0, 0.1, 0.2, 0.3],
            [1.0, 1.0, 1.0, 0.5, 0.5, 0.5],
            [1.0, 1.0, 1.0, 0.5, 0.5, 0.5],
            [2.0, 0.0, 1.0, 0.9, 0.1, 0.0]
        ]);
        let params = PointEncoderParams::init(
            EncoderConfig {
                k: 2,
                ..Default::default()
            },
            3,
            5,
        )
        .unwrap();
        let f = encode_points(&c, &params).unwrap();
        assert_eq!(f.matrix.row(1), f.matrix.row(2));
    }

    #[test]
    fn soft_loss_examples() {
        let a = array![[1.0, 2.0, 0.0]];
        let l = soft_guidance_loss(&a, &a, &[true]).unwrap();
        assert!(l.loss.abs() < 1e-15);
        let l = soft_guidance_loss(&(a.clone() * 3.0), &a, &[true]).unwrap();
        assert!(l.loss.abs() < 1e-15);
        let l = soft_guidance_loss(&array![[0.0, 0.0, 1.0]], &a, &[true]).unwrap();
        assert!((l.loss - 1.0).abs() < 1e-15);
        let l = soft_guidance_loss(&(-a.clone()), &a, &[true]).unwrap();
        assert!((l.loss - 2.0).abs() < 1e-15);
        let l = soft_guidance_loss(&array![[0.0, 0.0, 0.0]], &a, &[true]).unwrap();
        assert_eq!((l.used, l.skipped), (0, 1));
        let l = soft_guidance_loss(&array![[0.0, 0.0, 1.0]], &a, &[false]).unwrap();
        assert_eq!(l.used, 0);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in DistillMode::ALL {
            assert_eq!(m.name().parse::<DistillMode>().unwrap(), m);
            assert_eq!(m.row().to_string().parse::<DistillMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("e".parse::<DistillMode>().is_err());
    }

    #[test]
    fn adapter_mode_requires_checkpoint() {
        let c = cloud(array![[0.0, 0.0, 0.0, 0.1, 0.2, 0.3]]);
        let scene = DistillScene {
            input: EncoderInput::from_cloud(&c, 1).unwrap(),
            fused: FusedEmbeddings {
                embeddings: array![[1.0, 0.0]],
                valid: vec![true],
                view_counts: vec![1],
            },
            labels_filtered: vec![0],
            labels_unfiltered: vec![0],
        };
        let err = scene.target(DistillMode::SoftGuidanceAdapter, None).unwrap_err();
        assert!(err.to_string().contains("train-adapter"));
        assert!(scene.target(DistillMode::SoftGuidanceRaw, None).is_ok());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = PointEncoderParams::init(EncoderConfig::default(), 5, 3).unwrap();
        p.round_to_f32();
        let meta = EncoderMeta {
            encoder: p.config.clone(),
            dim: 5,
            mode: DistillMode::SoftGuidanceRaw,
            seed: 3,
            config_hash: "h".into(),
        };
        p.save(dir.path(), &meta).unwrap();
        let (back, m) = PointEncoderParams::load(dir.path()).unwrap();
        assert_eq!(back, p);
        assert_eq!(m, meta);
    }
}
