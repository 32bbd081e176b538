//! Open-vocabulary inference, segmentation metrics, the ablation harness and
//! cross-domain evaluation.
//!
//! mIoU averages IoU over the classes that occur in the ground truth or the
//! prediction; classes absent from both have no IoU. mAcc averages per-class
//! recall over ground-truth classes. IGNORE ground truth is not scored.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::distill::{encode_points, DistillMode, PointEncoderParams};
use crate::labeling::{argmax, cosine_logits, TextEmbeddingBank};
use crate::pipeline::{run_suite, save_outcome};
use crate::synth::{generate, SynthSpec};
use crate::tensorio::{PointCloud, Scene};
use crate::{Error, Result, IGNORE};

pub const AVERAGING: &str = "mean over classes present in ground truth or prediction";

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub labels: Vec<i32>,
    /// N x K cosine logits.
    pub logits: Array2<f32>,
}

/// Cosine logits of arbitrary point embeddings against a bank, and their argmax.
pub fn classify(embeddings: &Array2<f64>, bank: &TextEmbeddingBank) -> Result<SegmentationResult> {
    if embeddings.ncols() != bank.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point embeddings have d={}, text bank has d={}",
            embeddings.ncols(),
            bank.dim()
        )));
    }
    let logits = cosine_logits(embeddings, &bank.normalized()).mapv(|x| x as f32);
    let labels = (0..logits.nrows())
        .into_par_iter()
        .map(|i| argmax(logits.row(i)) as i32)
        .collect();
    Ok(SegmentationResult { labels, logits })
}

/// Encodes the cloud and labels every point against `bank`. No scene mask.
pub fn infer(cloud: &PointCloud, encoder: &PointEncoderParams, bank: &TextEmbeddingBank) -> Result<SegmentationResult> {
    if encoder.dim != bank.dim() {
        return Err(Error::DimensionMismatch(format!(
            "encoder outputs d={}, text bank has d={}",
            encoder.dim,
            bank.dim()
        )));
    }
    classify(&encode_points(cloud, encoder)?.matrix, bank)
}

/// K x K confusion counts, rows ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<u64>>,
    pub ignored: u64,
}

impl Confusion {
    pub fn new(k: usize) -> Self {
        Self {
            counts: vec![vec![0; k]; k],
            ignored: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, pred: &[i32], gt: &[i32]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictions for {} ground-truth labels",
                pred.len(),
                gt.len()
            )));
        }
        let k = self.num_classes() as i32;
        for (&p, &g) in pred.iter().zip(gt) {
            if g == IGNORE {
                self.ignored += 1;
                continue;
            }
            if !(0..k).contains(&g) {
                return Err(Error::InvalidInput(format!("ground-truth label {g} outside [0, {k})")));
            }
            if !(0..k).contains(&p) {
                return Err(Error::InvalidInput(format!("predicted label {p} outside [0, {k})")));
            }
            self.counts[g as usize][p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.ignored += other.ignored;
    }

    pub fn scored(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    /// `None` for classes absent from both ground truth and prediction.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub macc: f64,
    pub confusion: Confusion,
    pub scored_points: u64,
    pub averaging: String,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Confusion, class_names: Vec<String>) -> Result<Self> {
        let k = confusion.num_classes();
        let scored = confusion.scored();
        if scored == 0 {
            return Err(Error::InvalidInput("no scored points: every ground-truth label is IGNORE".into()));
        }
        let c = &confusion.counts;
        let mut per_class_iou = Vec::with_capacity(k);
        let mut accs = Vec::new();
        for i in 0..k {
            let tp = c[i][i];
            let gt: u64 = c[i].iter().sum();
            let pred: u64 = (0..k).map(|r| c[r][i]).sum();
            let union = gt + pred - tp;
            per_class_iou.push((union > 0).then(|| tp as f64 / union as f64));
            if gt > 0 {
                accs.push(tp as f64 / gt as f64);
            }
        }
        let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let miou = present.iter().sum::<f64>() / present.len() as f64;
        let macc = accs.iter().sum::<f64>() / accs.len() as f64;
        Ok(Self {
            class_names,
            per_class_iou,
            miou,
            macc,
            confusion,
            scored_points: scored,
            averaging: AVERAGING.into(),
        })
    }
}

pub fn compute_metrics(pred: &[i32], gt: &[i32], k: usize) -> Result<MetricsReport> {
    let mut conf = Confusion::new(k);
    conf.add(pred, gt)?;
    MetricsReport::from_confusion(conf, (0..k).map(|i| format!("class_{i}")).collect())
}

/// Pooled metrics over scenes; each scene's GT indexes `bank`.
pub fn evaluate_scenes(encoder: &PointEncoderParams, scenes: &[Scene], bank: &TextEmbeddingBank) -> Result<MetricsReport> {
    let parts: Vec<Confusion> = scenes
        .iter()
        .map(|s| {
            let gt = s.cloud.gt_labels.as_ref().ok_or_else(|| {
                Error::InvalidInput(format!("scene {} has no ground-truth labels", s.name))
            })?;
            if s.class_names != bank.class_names() {
                return Err(Error::InvalidInput(format!(
                    "scene {} labels index {:?}, bank has {:?}",
                    s.name,
                    s.class_names,
                    bank.class_names()
                )));
            }
            let seg = infer(&s.cloud, encoder, bank)?;
            let mut c = Confusion::new(bank.num_classes());
            c.add(&seg.labels, gt)?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut total = Confusion::new(bank.num_classes());
    parts.iter().for_each(|c| total.merge(c));
    MetricsReport::from_confusion(total, bank.class_names().to_vec())
}

/// Encoder trained on one domain, evaluated with another domain's scenes and
/// bank. The banks may differ in size and class names but must share d.
pub fn cross_domain_eval(
    encoder: &PointEncoderParams,
    scenes: &[Scene],
    bank: &TextEmbeddingBank,
) -> Result<MetricsReport> {
    evaluate_scenes(encoder, scenes, bank)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub row: char,
    pub mode: DistillMode,
    /// Held-out mIoU for each seed, in seed order.
    pub miou: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub averaging: String,
}

impl AblationReport {
    pub fn miou(&self, mode: DistillMode, seed_index: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.mode == mode).map(|r| r.miou[seed_index])
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| row | mode |");
        for seed in &self.seeds {
            let _ = write!(s, " seed {seed} |");
        }
        s.push_str(" mean |\n|---|---|");
        s.push_str(&"---:|".repeat(self.seeds.len() + 1));
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "| ({}) | {} |", r.row, r.mode);
            for m in &r.miou {
                let _ = write!(s, " {:.4} |", m);
            }
            let _ = writeln!(s, " {:.4} |", r.mean);
        }
        s
    }
}

/// Runs every mode on the synthetic suite of each seed. The suite, adapter
/// and encoders all derive from the seed. With `out`, checkpoints and
/// metrics of each seed go to `out/seed_<seed>/`.
pub fn run_ablation(config: &PipelineConfig, seeds: &[u64], out: Option<&Path>) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let modes = DistillMode::ALL;
    let mut table = vec![Vec::with_capacity(seeds.len()); modes.len()];
    for &seed in seeds {
        let spec = SynthSpec {
            seed,
            ..config.synth.clone()
        };
        let suite = generate(&spec)?;
        let train: Vec<Scene> = suite.train.into_iter().map(|s| s.scene).collect();
        let test: Vec<Scene> = suite.test.into_iter().map(|s| s.scene).collect();
        let outcome = run_suite(&train, &test, &suite.bank, config, &modes, seed)?;
        if let Some(out) = out {
            save_outcome(&out.join(format!("seed_{seed}")), &outcome, config, seed)?;
        }
        for (i, m) in outcome.modes.iter().enumerate() {
            table[i].push(m.metrics.miou);
        }
    }
    let rows = modes
        .iter()
        .zip(table)
        .map(|(&mode, miou)| AblationRow {
            row: mode.row(),
            mode,
            mean: miou.iter().sum::<f64>() / miou.len() as f64,
            miou,
        })
        .collect();
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        rows,
        averaging: AVERAGING.into(),
    })
}
