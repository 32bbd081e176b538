//! Stage orchestration shared by the CLI, the ablation harness and the
//! end-to-end tests: fusion and pseudo labels per scene, one adapter per
//! seed, one encoder per training mode, held-out evaluation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{train_adapter, AdapterBatch, AdapterMeta, AdapterParams, AdapterTraining};
use crate::config::PipelineConfig;
use crate::distill::{train_3d, DistillConfig, DistillMode, DistillScene, EncoderInput, EncoderMeta, PointEncoderParams};
use crate::evalkit::{evaluate_scenes, MetricsReport};
use crate::fusion::{fuse, fuse_stats, CoverageReport, FusedEmbeddings};
use crate::labeling::{label_accuracy, label_points, PseudoLabels, SceneMask, TextEmbeddingBank};
use crate::synth::splitmix64;
use crate::tensorio::{write_json, PointCloud, Scene};
use crate::{Error, Result};

pub const TOOL: &str = "vlseg3d";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seed of the adapter initialization and scene shuffling.
pub fn adapter_seed(seed: u64) -> u64 {
    splitmix64(seed ^ 0xada9)
}

/// Seed of the encoder; shared by every mode so they start identically.
pub fn encoder_seed(seed: u64) -> u64 {
    splitmix64(seed ^ 0x3d)
}

/// Everything the training stages need from one scene.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub name: String,
    pub cloud: PointCloud,
    pub fused: FusedEmbeddings,
    pub mask: SceneMask,
    pub filtered: PseudoLabels,
    pub unfiltered: PseudoLabels,
}

pub fn prepare_scene(scene: &Scene, bank: &TextEmbeddingBank, tau: f64) -> Result<PreparedScene> {
    let fused = fuse(&scene.cloud, &scene.views, tau)?;
    let mask = SceneMask::from_scene_labels(bank, &scene.scene_labels)?;
    let filtered = label_points(&fused, bank, Some(&mask))?;
    let unfiltered = label_points(&fused, bank, None)?;
    Ok(PreparedScene {
        name: scene.name.clone(),
        cloud: scene.cloud.clone(),
        fused,
        mask,
        filtered,
        unfiltered,
    })
}

pub fn prepare_scenes(scenes: &[Scene], bank: &TextEmbeddingBank, tau: f64) -> Result<Vec<PreparedScene>> {
    scenes.par_iter().map(|s| prepare_scene(s, bank, tau)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoStats {
    pub coverage: f64,
    /// Accuracy of masked pseudo labels on labeled points with ground truth.
    pub filtered_accuracy: Option<f64>,
    pub unfiltered_accuracy: Option<f64>,
}

pub fn pseudo_stats(prepared: &[PreparedScene]) -> PseudoStats {
    let (mut f, mut u, mut gt) = (Vec::new(), Vec::new(), Vec::new());
    let (mut valid, mut total) = (0usize, 0usize);
    for p in prepared {
        valid += p.fused.valid_count();
        total += p.fused.len();
        if let Some(g) = &p.cloud.gt_labels {
            f.extend_from_slice(&p.filtered.labels);
            u.extend_from_slice(&p.unfiltered.labels);
            gt.extend_from_slice(g);
        }
    }
    let has_gt = !gt.is_empty();
    PseudoStats {
        coverage: if total == 0 { 0.0 } else { valid as f64 / total as f64 },
        filtered_accuracy: has_gt.then(|| label_accuracy(&f, &gt)),
        unfiltered_accuracy: has_gt.then(|| label_accuracy(&u, &gt)),
    }
}

pub fn coverage(prepared: &PreparedScene) -> CoverageReport {
    fuse_stats(&prepared.fused)
}

pub fn train_adapter_on(
    prepared: &[PreparedScene],
    bank: &TextEmbeddingBank,
    config: &PipelineConfig,
    seed: u64,
) -> Result<AdapterTraining> {
    let batches = prepared
        .iter()
        .map(|p| AdapterBatch::from_scene(&p.fused, &p.filtered.labels))
        .collect::<Result<Vec<_>>>()?;
    train_adapter(&batches, bank, &config.adapter, config.labeling.temperature, adapter_seed(seed))
}

pub fn distill_scenes(prepared: &[PreparedScene], k: usize) -> Result<Vec<DistillScene>> {
    prepared
        .par_iter()
        .map(|p| {
            Ok(DistillScene {
                input: EncoderInput::from_cloud(&p.cloud, k)?,
                fused: p.fused.clone(),
                labels_filtered: p.filtered.labels.clone(),
                labels_unfiltered: p.unfiltered.labels.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ModeOutcome {
    pub mode: DistillMode,
    pub encoder: PointEncoderParams,
    pub losses: Vec<f64>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub adapter: AdapterParams,
    pub adapter_losses: Vec<f64>,
    pub pseudo: PseudoStats,
    pub modes: Vec<ModeOutcome>,
}

/// Full pipeline on in-memory scenes: one adapter, then one encoder per mode,
/// each evaluated on `test` without a scene mask.
pub fn run_suite(
    train: &[Scene],
    test: &[Scene],
    bank: &TextEmbeddingBank,
    config: &PipelineConfig,
    modes: &[DistillMode],
    seed: u64,
) -> Result<SuiteOutcome> {
    let prepared = prepare_scenes(train, bank, config.geometry.tau)?;
    let adapter = train_adapter_on(&prepared, bank, config, seed)?;
    let inputs = distill_scenes(&prepared, config.distill.encoder.k)?;
    let modes = modes
        .iter()
        .map(|&mode| {
            let dc = DistillConfig {
                mode,
                ..config.distill.clone()
            };
            let trained = train_3d(
                &inputs,
                Some(&adapter.params),
                bank,
                &dc,
                config.labeling.temperature,
                encoder_seed(seed),
            )?;
            let metrics = evaluate_scenes(&trained.params, test, bank)?;
            Ok(ModeOutcome {
                mode,
                encoder: trained.params,
                losses: trained.losses,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteOutcome {
        adapter: adapter.params,
        adapter_losses: adapter.losses,
        pseudo: pseudo_stats(&prepared),
        modes,
    })
}

pub fn adapter_meta(params: &AdapterParams, config: &PipelineConfig, seed: u64) -> AdapterMeta {
    AdapterMeta {
        alpha: params.alpha,
        hidden: params.hidden(),
        dim: params.dim(),
        seed,
        config_hash: config.hash(),
    }
}

pub fn encoder_meta(params: &PointEncoderParams, mode: DistillMode, config: &PipelineConfig, seed: u64) -> EncoderMeta {
    EncoderMeta {
        encoder: params.config.clone(),
        dim: params.dim,
        mode,
        seed,
        config_hash: config.hash(),
    }
}

/// Writes the adapter, every encoder and its metrics under `dir`. Returns the
/// written paths.
pub fn save_outcome(dir: &Path, outcome: &SuiteOutcome, config: &PipelineConfig, seed: u64) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let adapter_dir = dir.join("adapter");
    outcome
        .adapter
        .save(&adapter_dir, &adapter_meta(&outcome.adapter, config, seed))?;
    paths.push(adapter_dir);
    for m in &outcome.modes {
        let enc = dir.join(format!("encoder_{}", m.mode));
        m.encoder.save(&enc, &encoder_meta(&m.encoder, m.mode, config, seed))?;
        let metrics = dir.join(format!("metrics_{}.json", m.mode));
        write_json(&metrics, &m.metrics)?;
        paths.push(enc);
        paths.push(metrics);
    }
    let pseudo = dir.join("pseudo_stats.json");
    write_json(&pseudo, &outcome.pseudo)?;
    paths.push(pseudo);
    Ok(paths)
}

/// Record of one CLI run. Contains nothing clock- or host-dependent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: PipelineConfig,
    /// Artifact paths relative to the output directory.
    pub artifacts: Vec<PathBuf>,
}

pub fn write_run_manifest(
    out: &Path,
    command: &str,
    config: &PipelineConfig,
    artifacts: &[PathBuf],
) -> Result<PathBuf> {
    let manifest = RunManifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        command: command.into(),
        config_hash: config.hash(),
        seed: config.seed,
        config: config.canonical(),
        artifacts: artifacts
            .iter()
            .map(|p| p.strip_prefix(out).unwrap_or(p).to_path_buf())
            .collect(),
    };
    let path = out.join(format!("run_{}.json", command.replace('-', "_")));
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads the adapter checkpoint a soft-guidance run depends on.
pub fn require_adapter(dir: &Path) -> Result<AdapterParams> {
    AdapterParams::load(dir).map(|(p, _)| p)
}

pub fn require_encoder(dir: &Path) -> Result<PointEncoderParams> {
    PointEncoderParams::load(dir).map(|(p, _)| p)
}

pub fn ensure_gt<'a>(scene: &'a Scene) -> Result<&'a [i32]> {
    scene
        .cloud
        .gt_labels
        .as_deref()
        .ok_or_else(|| Error::InvalidInput(format!("scene {} has no ground-truth labels", scene.name)))
}
