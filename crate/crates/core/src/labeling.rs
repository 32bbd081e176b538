//! Zero-shot classification of fused embeddings against class-name text
//! embeddings, scene-level masking and pseudo-label extraction.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fusion::FusedEmbeddings;
use crate::tensorio::{check_unique_names, read_json, read_tensor, write_json, write_tensor, TensorFile};
use crate::{Error, Result, IGNORE};

/// Class names and their text embeddings (one row per class).
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingBank {
    class_names: Vec<String>,
    embeddings: Array2<f32>,
}

#[derive(Serialize, Deserialize)]
struct BankSidecar {
    class_names: Vec<String>,
}

impl TextEmbeddingBank {
    pub fn new(class_names: Vec<String>, embeddings: Array2<f32>) -> Result<Self> {
        if class_names.len() != embeddings.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} class names for {} embedding rows",
                class_names.len(),
                embeddings.nrows()
            )));
        }
        if class_names.is_empty() {
            return Err(Error::InvalidInput("text bank needs at least one class".into()));
        }
        check_unique_names(&class_names).map_err(Error::InvalidInput)?;
        for (name, row) in class_names.iter().zip(embeddings.rows()) {
            let norm = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "text embedding for {name:?} has zero or non-finite norm"
                )));
            }
        }
        Ok(Self {
            class_names,
            embeddings,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn embeddings(&self) -> &Array2<f32> {
        &self.embeddings
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Rows scaled to unit L2 norm, in f64.
    pub fn normalized(&self) -> Array2<f64> {
        normalize_rows(&self.embeddings.mapv(|x| x as f64))
    }

    /// Keeps only the named classes, in the given order.
    pub fn subset(&self, names: &[String]) -> Result<Self> {
        let mut rows = Array2::zeros((names.len(), self.dim()));
        for (i, n) in names.iter().enumerate() {
            let k = self.index_of(n).ok_or_else(|| Error::UnknownClass(n.clone()))?;
            rows.row_mut(i).assign(&self.embeddings.row(k));
        }
        Self::new(names.to_vec(), rows)
    }

    /// Writes `path` (tensor) and a sibling `.json` sidecar with the class names.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_tensor(path, &TensorFile::from_array(&self.embeddings))?;
        write_json(
            &Self::sidecar_path(path),
            &BankSidecar {
                class_names: self.class_names.clone(),
            },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let embeddings = read_tensor(path)?.into_array2()?;
        let sidecar: BankSidecar = read_json(&Self::sidecar_path(path))?;
        Self::new(sidecar.class_names, embeddings)
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }
}

pub(crate) fn normalize_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

/// Cosine similarity of every row of `rows` with every row of the unit-norm
/// `bank`. Zero rows produce zero logits.
pub fn cosine_logits(rows: &Array2<f64>, bank_unit: &Array2<f64>) -> Array2<f64> {
    normalize_rows(rows).dot(&bank_unit.t())
}

/// Boolean presence vector over the bank's classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneMask {
    present: Vec<bool>,
}

impl SceneMask {
    pub fn new(present: Vec<bool>) -> Result<Self> {
        if !present.iter().any(|&p| p) {
            return Err(Error::InvalidInput("scene mask has no present class".into()));
        }
        Ok(Self { present })
    }

    pub fn all(k: usize) -> Self {
        Self {
            present: vec![true; k],
        }
    }

    pub fn from_scene_labels(bank: &TextEmbeddingBank, scene_labels: &[String]) -> Result<Self> {
        let mut present = vec![false; bank.num_classes()];
        for label in scene_labels {
            let k = bank.index_of(label).ok_or_else(|| Error::UnknownClass(label.clone()))?;
            present[k] = true;
        }
        Self::new(present)
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    pub fn len(&self) -> usize {
        self.present.len()
    }

    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }
}

/// Per-point pseudo labels and the masked logits they were ranked from.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub labels: Vec<i32>,
    pub filtered_logits: Array2<f32>,
}

impl PseudoLabels {
    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE).count()
    }
}

/// Cosine logits of fused embeddings against the bank; invalid rows are zero.
pub fn class_logits(fused: &FusedEmbeddings, bank: &TextEmbeddingBank) -> Result<Array2<f32>> {
    if fused.dim() != bank.dim() {
        return Err(Error::DimensionMismatch(format!(
            "fused embeddings have d={}, text bank has d={}",
            fused.dim(),
            bank.dim()
        )));
    }
    let mut logits = cosine_logits(&fused.embeddings.mapv(|x| x as f64), &bank.normalized()).mapv(|x| x as f32);
    for (mut row, &valid) in logits.rows_mut().into_iter().zip(&fused.valid) {
        if !valid {
            row.fill(0.0);
        }
    }
    Ok(logits)
}

/// Sets logits of classes absent from the scene to negative infinity.
pub fn apply_scene_mask(logits: &Array2<f32>, mask: &SceneMask) -> Result<Array2<f32>> {
    if logits.ncols() != mask.len() {
        return Err(Error::DimensionMismatch(format!(
            "logits have K={}, mask has K={}",
            logits.ncols(),
            mask.len()
        )));
    }
    if !mask.present.iter().any(|&p| p) {
        return Err(Error::InvalidInput("scene mask has no present class".into()));
    }
    let mut out = logits.clone();
    out.axis_iter_mut(Axis(1))
        .zip(&mask.present)
        .filter(|(_, &p)| !p)
        .for_each(|(mut col, _)| col.fill(f32::NEG_INFINITY));
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (k, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = k;
        }
    }
    best
}

pub fn pseudo_labels(filtered: &Array2<f32>, valid: &[bool]) -> PseudoLabels {
    let labels = (0..filtered.nrows())
        .into_par_iter()
        .map(|i| if valid[i] { argmax(filtered.row(i)) as i32 } else { IGNORE })
        .collect();
    PseudoLabels {
        labels,
        filtered_logits: filtered.clone(),
    }
}

/// Logits, optional scene mask and argmax in one call.
pub fn label_points(
    fused: &FusedEmbeddings,
    bank: &TextEmbeddingBank,
    mask: Option<&SceneMask>,
) -> Result<PseudoLabels> {
    let logits = class_logits(fused, bank)?;
    let filtered = match mask {
        Some(m) => apply_scene_mask(&logits, m)?,
        None => logits,
    };
    Ok(pseudo_labels(&filtered, &fused.valid))
}

/// Fraction of labeled points whose label matches a non-IGNORE ground truth.
pub fn label_accuracy(labels: &[i32], gt: &[i32]) -> f64 {
    let (hit, total) = labels
        .iter()
        .zip(gt)
        .filter(|(&l, &g)| l != IGNORE && g != IGNORE)
        .fold((0usize, 0usize), |(h, t), (l, g)| (h + (l == g) as usize, t + 1));
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}
