//! Command-line entry point. Every subcommand reads the shared JSON config,
//! applies `--section.key value` overrides, writes its artifacts under the
//! output directory together with a run manifest, and prints a one-line JSON
//! footer listing the artifact paths.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing artifact,
//! 4 numeric failure (divergence or a failed gradient check), 1 other errors.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::adapter::AdapterBatch;
use crate::config::PipelineConfig;
use crate::distill::{train_3d, DistillConfig, DistillMode, DistillScene, EncoderInput};
use crate::evalkit::{evaluate_scenes, infer, run_ablation};
use crate::fusion::{fuse, fuse_stats, FusedEmbeddings};
use crate::gradcheck::run_suite as gradcheck_suite;
use crate::labeling::{label_points, SceneMask, TextEmbeddingBank};
use crate::pipeline::{adapter_meta, adapter_seed, encoder_meta, encoder_seed, require_adapter, require_encoder, write_run_manifest};
use crate::synth::{generate, load_suite_index, write_suite};
use crate::tensorio::{load_scene, read_tensor, write_json, write_tensor, Scene, TensorFile};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "vlseg3d", version, about = "Weakly supervised 3D segmentation from 2D vision-language embeddings")]
pub struct Cli {
    /// JSON pipeline configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides paths.out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (overrides workers).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic suite described by the `synth` config section.
    SynthGen,
    /// Fuse multi-view embeddings onto every scene's points.
    Fuse,
    /// Scene-masked and unmasked pseudo labels from fused embeddings.
    Pseudo,
    /// Train the adapter on masked pseudo labels.
    TrainAdapter,
    /// Train the point encoder.
    #[command(name = "train-3d")]
    Train3d {
        #[arg(long)]
        mode: Option<DistillMode>,
    },
    /// Label the held-out scenes with a trained encoder.
    Infer {
        #[arg(long)]
        mode: Option<DistillMode>,
    },
    /// Metrics of a trained encoder on the held-out scenes.
    Eval {
        #[arg(long)]
        mode: Option<DistillMode>,
    },
    /// All four training modes on synthetic suites, one per seed.
    Ablate {
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Finite-difference checks of every analytic gradient.
    Gradcheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthGen => "synth-gen",
            Command::Fuse => "fuse",
            Command::Pseudo => "pseudo",
            Command::TrainAdapter => "train-adapter",
            Command::Train3d { .. } => "train-3d",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Gradcheck => "gradcheck",
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::MissingArtifact { .. } => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

/// Splits `--a.b value` and `--a.b=value` pairs out of the arguments.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--").filter(|f| f.split('=').next().unwrap().contains('.')) else {
            rest.push(a);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("--{flag} needs a value")))?;
                overrides.push((flag.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}

pub fn build_config(cli: &Cli, overrides: &[(String, String)]) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(p) if !p.exists() => return Err(Error::Config(format!("config file {} not found", p.display()))),
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for (k, v) in overrides {
        config.set(k, v)?;
    }
    if let Some(out) = &cli.out {
        config.paths.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    config.validate()?;
    Ok(config)
}

/// Parses, runs and reports; returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    let (rest, overrides) = match split_overrides(args) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = build_config(&cli, &overrides).and_then(|config| {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build_global();
        execute(&cli.command, &config)
    });
    match result {
        Ok(artifacts) => {
            let footer = json!({
                "command": cli.command.name(),
                "artifacts": artifacts,
            });
            println!("{footer}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct SceneSets {
    train: Vec<PathBuf>,
    test: Vec<PathBuf>,
    bank: PathBuf,
}

fn scene_sets(config: &PipelineConfig) -> Result<SceneSets> {
    let paths = &config.paths;
    if paths.suite.is_none() && !paths.scenes.is_empty() {
        let bank = paths
            .bank
            .clone()
            .ok_or_else(|| Error::Config("paths.bank is required with paths.scenes".into()))?;
        return Ok(SceneSets {
            train: paths.scenes.clone(),
            test: paths.test_scenes.clone(),
            bank,
        });
    }
    let suite = paths
        .suite
        .clone()
        .unwrap_or_else(|| paths.out.join("suite").join("suite.json"));
    let index = load_suite_index(suite)?;
    Ok(SceneSets {
        train: index.train,
        test: index.test,
        bank: paths.bank.clone().unwrap_or(index.bank),
    })
}

fn load_bank(path: &Path) -> Result<TextEmbeddingBank> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: "synth-gen".into(),
        });
    }
    TextEmbeddingBank::load(path)
}

fn load_scenes(paths: &[PathBuf]) -> Result<Vec<Scene>> {
    paths
        .iter()
        .map(|p| {
            if !p.exists() {
                return Err(Error::MissingArtifact {
                    path: p.clone(),
                    producer: "synth-gen".into(),
                });
            }
            load_scene(p)
        })
        .collect()
}

fn stage_dir(config: &PipelineConfig, stage: &str, scene: &str) -> PathBuf {
    config.paths.out.join(stage).join(scene)
}

fn require(path: PathBuf, producer: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            path,
            producer: producer.into(),
        })
    }
}

fn load_fused(config: &PipelineConfig, scene: &str) -> Result<FusedEmbeddings> {
    let dir = require(stage_dir(config, "fused", scene), "fuse")?;
    FusedEmbeddings::load(&dir)
}

fn load_labels(config: &PipelineConfig, scene: &str, which: &str) -> Result<Vec<i32>> {
    let path = require(stage_dir(config, "pseudo", scene).join(format!("{which}.tnsr")), "pseudo")?;
    read_tensor(path)?.into_i32()
}

fn encoder_dir(config: &PipelineConfig, mode: DistillMode) -> PathBuf {
    config.paths.out.join(format!("encoder_{mode}"))
}

fn execute(command: &Command, config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let out = &config.paths.out;
    let mut artifacts = Vec::new();
    match command {
        Command::SynthGen => {
            let suite = generate(&config.synth)?;
            artifacts.push(write_suite(out.join("suite"), &suite)?);
        }
        Command::Fuse => {
            let sets = scene_sets(config)?;
            for scene in load_scenes(&[sets.train, sets.test].concat())? {
                let fused = fuse(&scene.cloud, &scene.views, config.geometry.tau)?;
                let dir = stage_dir(config, "fused", &scene.name);
                fused.save(&dir)?;
                write_json(&dir.join("coverage.json"), &fuse_stats(&fused))?;
                artifacts.push(dir);
            }
        }
        Command::Pseudo => {
            let sets = scene_sets(config)?;
            let bank = load_bank(&sets.bank)?;
            for scene in load_scenes(&[sets.train, sets.test].concat())? {
                let fused = load_fused(config, &scene.name)?;
                let mask = SceneMask::from_scene_labels(&bank, &scene.scene_labels)?;
                let filtered = label_points(&fused, &bank, Some(&mask))?;
                let unfiltered = label_points(&fused, &bank, None)?;
                let dir = stage_dir(config, "pseudo", &scene.name);
                write_tensor(dir.join("labels_filtered.tnsr"), &TensorFile::from_labels(&filtered.labels))?;
                write_tensor(dir.join("labels_unfiltered.tnsr"), &TensorFile::from_labels(&unfiltered.labels))?;
                write_json(&dir.join("coverage.json"), &fuse_stats(&fused))?;
                artifacts.push(dir);
            }
        }
        Command::TrainAdapter => {
            let sets = scene_sets(config)?;
            let bank = load_bank(&sets.bank)?;
            let batches = load_scenes(&sets.train)?
                .iter()
                .map(|s| {
                    let fused = load_fused(config, &s.name)?;
                    AdapterBatch::from_scene(&fused, &load_labels(config, &s.name, "labels_filtered")?)
                })
                .collect::<Result<Vec<_>>>()?;
            let trained = crate::adapter::train_adapter(
                &batches,
                &bank,
                &config.adapter,
                config.labeling.temperature,
                adapter_seed(config.seed),
            )?;
            let dir = out.join("adapter");
            trained
                .params
                .save(&dir, &adapter_meta(&trained.params, config, config.seed))?;
            write_json(&dir.join("losses.json"), &trained.losses)?;
            artifacts.push(dir);
        }
        Command::Train3d { mode } => {
            let mode = mode.unwrap_or(config.distill.mode);
            let adapter = if mode.needs_adapter() {
                Some(require_adapter(&out.join("adapter"))?)
            } else {
                None
            };
            let sets = scene_sets(config)?;
            let bank = load_bank(&sets.bank)?;
            let scenes = load_scenes(&sets.train)?
                .iter()
                .map(|s| {
                    Ok(DistillScene {
                        input: EncoderInput::from_cloud(&s.cloud, config.distill.encoder.k)?,
                        fused: load_fused(config, &s.name)?,
                        labels_filtered: load_labels(config, &s.name, "labels_filtered")?,
                        labels_unfiltered: load_labels(config, &s.name, "labels_unfiltered")?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let dc = DistillConfig {
                mode,
                ..config.distill.clone()
            };
            let trained = train_3d(
                &scenes,
                adapter.as_ref(),
                &bank,
                &dc,
                config.labeling.temperature,
                encoder_seed(config.seed),
            )?;
            let dir = encoder_dir(config, mode);
            trained
                .params
                .save(&dir, &encoder_meta(&trained.params, mode, config, config.seed))?;
            write_json(&dir.join("losses.json"), &trained.losses)?;
            artifacts.push(dir);
        }
        Command::Infer { mode } => {
            let mode = mode.unwrap_or(config.distill.mode);
            let sets = scene_sets(config)?;
            let bank = load_bank(&sets.bank)?;
            let encoder = require_encoder(&encoder_dir(config, mode))?;
            for scene in load_scenes(&sets.test)? {
                let seg = infer(&scene.cloud, &encoder, &bank)?;
                let dir = out.join(format!("infer_{mode}")).join(&scene.name);
                write_tensor(dir.join("labels.tnsr"), &TensorFile::from_labels(&seg.labels))?;
                write_tensor(dir.join("logits.tnsr"), &TensorFile::from_array(&seg.logits))?;
                artifacts.push(dir);
            }
        }
        Command::Eval { mode } => {
            let mode = mode.unwrap_or(config.distill.mode);
            let sets = scene_sets(config)?;
            let bank = load_bank(&sets.bank)?;
            let encoder = require_encoder(&encoder_dir(config, mode))?;
            let metrics = evaluate_scenes(&encoder, &load_scenes(&sets.test)?, &bank)?;
            let path = out.join(format!("eval_{mode}.json"));
            write_json(&path, &metrics)?;
            eprintln!("{mode}: mIoU {:.4}  mAcc {:.4}", metrics.miou, metrics.macc);
            artifacts.push(path);
        }
        Command::Ablate { seeds } => {
            let seeds = seeds.clone().unwrap_or_else(|| config.ablation_seeds.clone());
            let dir = out.join("ablation");
            let report = run_ablation(config, &seeds, Some(&dir))?;
            let json_path = dir.join("ablation.json");
            let md_path = dir.join("ablation.md");
            write_json(&json_path, &report)?;
            let md = report.to_markdown();
            std::fs::write(&md_path, &md).map_err(|e| Error::io(&md_path, e))?;
            eprint!("{md}");
            artifacts.push(json_path);
            artifacts.push(md_path);
        }
        Command::Gradcheck => {
            let report = gradcheck_suite(config.seed)?;
            let path = out.join("gradcheck.json");
            write_json(&path, &report)?;
            for c in &report.cases {
                eprintln!(
                    "{} {:<32} max rel err {:.2e}",
                    if c.passed { "ok  " } else { "FAIL" },
                    c.name,
                    c.max_rel_err
                );
            }
            if !report.passed() {
                return Err(Error::Numeric(format!(
                    "gradient check failed; report in {}",
                    path.display()
                )));
            }
            artifacts.push(path);
        }
    }
    artifacts.push(write_run_manifest(out, command.name(), config, &artifacts)?);
    Ok(artifacts)
}
