//! Pipeline configuration: JSON file, dotted overrides, and the content hash
//! stored in every run manifest and checkpoint.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::adapter::AdapterConfig;
use crate::distill::DistillConfig;
use crate::synth::SynthSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// `suite.json` written by `synth-gen`; supplies scenes and bank when set.
    pub suite: Option<PathBuf>,
    /// Training scene manifests.
    pub scenes: Vec<PathBuf>,
    /// Held-out scene manifests.
    pub test_scenes: Vec<PathBuf>,
    pub bank: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            suite: None,
            scenes: Vec::new(),
            test_scenes: Vec::new(),
            bank: None,
            out: PathBuf::from("runs"),
        }
    }
}

fn ser_tau<S: Serializer>(tau: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if tau.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*tau)
    }
}

fn de_tau<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Tau {
        Num(f64),
        Text(String),
    }
    match Tau::deserialize(d)? {
        Tau::Num(x) => Ok(x),
        Tau::Text(t) if t == "inf" || t == "infinity" => Ok(f64::INFINITY),
        Tau::Text(t) => Err(serde::de::Error::custom(format!("tau must be a number or \"inf\", got {t:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Depth tolerance of the occlusion test in meters; `"inf"` disables it.
    #[serde(serialize_with = "ser_tau", deserialize_with = "de_tau")]
    pub tau: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { tau: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    /// Softmax temperature of the cosine-logit cross-entropy losses.
    pub temperature: f64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self { temperature: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; results are identical for any value.
    pub workers: usize,
    pub paths: PathsConfig,
    pub geometry: GeometryConfig,
    pub labeling: LabelingConfig,
    pub adapter: AdapterConfig,
    pub distill: DistillConfig,
    pub synth: SynthSpec,
    pub ablation_seeds: Vec<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            paths: PathsConfig::default(),
            geometry: GeometryConfig::default(),
            labeling: LabelingConfig::default(),
            adapter: AdapterConfig::default(),
            distill: DistillConfig::default(),
            synth: SynthSpec::default(),
            ablation_seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

/// Encoder schedule sized for the synthetic suites on a desk machine. The
/// default schedule (lr 1e-4) needs far more iterations than fit there.
pub const SYNTHETIC_PRESET: &str = include_str!("../configs/synthetic.json");

impl PipelineConfig {
    pub fn synthetic() -> Self {
        serde_json::from_str(SYNTHETIC_PRESET).expect("bundled preset parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Sets one field by its dotted path, e.g. `adapter.alpha` = `0.3`. The
    /// value is parsed as JSON when possible and as a bare string otherwise.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let mut node = &mut tree;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("--{key} {raw}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.geometry.tau >= 0.0) {
            return bad(format!("geometry.tau must be non-negative, got {}", self.geometry.tau));
        }
        if !(self.labeling.temperature > 0.0) {
            return bad(format!("labeling.temperature must be positive, got {}", self.labeling.temperature));
        }
        let a = &self.adapter;
        if !(0.0..=1.0).contains(&a.alpha) {
            return bad(format!("adapter.alpha must be in [0, 1], got {}", a.alpha));
        }
        if !(a.lr > 0.0) || a.batch == 0 || a.hidden == Some(0) {
            return bad("adapter.lr, adapter.batch and adapter.hidden must be positive".into());
        }
        let d = &self.distill;
        if !(d.lr > 0.0) || d.batch == 0 || d.encoder.k == 0 {
            return bad("distill.lr, distill.batch and distill.encoder.k must be positive".into());
        }
        if d.encoder.pre_widths.contains(&0) || d.encoder.post_widths.contains(&0) {
            return bad("encoder layer widths must be positive".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    /// The configuration with fields that cannot affect outputs cleared.
    pub fn canonical(&self) -> Self {
        let mut c = self.clone();
        c.workers = 1;
        c.paths.out = PathBuf::new();
        c
    }

    /// Hex SHA-256 of the canonical configuration's JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.canonical()).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
