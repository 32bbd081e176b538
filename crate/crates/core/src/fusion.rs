//! Back-projection of pixel embeddings onto points.
//!
//! Every point gathers the embedding at its rounded pixel in each view that
//! sees it (see [`visible_views`]) and keeps the unweighted mean. Sums are
//! accumulated in f64 in ascending view order, so the result does not depend
//! on thread scheduling.

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::visible_views;
use crate::tensorio::{read_tensor, write_tensor, PointCloud, TensorFile, ViewSet};
use crate::{Error, Result};

/// Per-point averaged 2D embeddings. Rows of invalid points are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbeddings {
    pub embeddings: Array2<f32>,
    pub valid: Vec<bool>,
    pub view_counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub points: usize,
    pub valid_points: usize,
    pub coverage: f64,
    /// `view_count_histogram[c]` is the number of points seen by exactly `c` views.
    pub view_count_histogram: Vec<usize>,
}

impl FusedEmbeddings {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_tensor(dir.join("p2d.tnsr"), &TensorFile::from_array(&self.embeddings))?;
        let valid: Vec<i32> = self.valid.iter().map(|&v| v as i32).collect();
        write_tensor(dir.join("valid.tnsr"), &TensorFile::from_labels(&valid))?;
        let counts: Vec<i32> = self.view_counts.iter().map(|&c| c as i32).collect();
        write_tensor(dir.join("view_counts.tnsr"), &TensorFile::from_labels(&counts))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let embeddings = read_tensor(dir.join("p2d.tnsr"))?.into_array2()?;
        let valid: Vec<bool> = read_tensor(dir.join("valid.tnsr"))?
            .into_i32()?
            .into_iter()
            .map(|v| v != 0)
            .collect();
        let view_counts: Vec<u32> = read_tensor(dir.join("view_counts.tnsr"))?
            .into_i32()?
            .into_iter()
            .map(|c| c.max(0) as u32)
            .collect();
        if valid.len() != embeddings.nrows() || view_counts.len() != embeddings.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "fused artifacts in {} disagree on point count",
                dir.display()
            )));
        }
        Ok(Self {
            embeddings,
            valid,
            view_counts,
        })
    }
}

pub fn fuse(cloud: &PointCloud, views: &ViewSet, tau: f64) -> Result<FusedEmbeddings> {
    let d = views.embedding_dim()?.unwrap_or(0);
    let rows: Vec<(Vec<f32>, u32)> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let hits = visible_views(cloud.position(i), views, tau);
            let mut acc = vec![0f64; d];
            let mut count = 0u32;
            for hit in &hits {
                let view = &views.views[hit.view];
                let proj_row = hit.v.round() as usize;
                let proj_col = hit.u.round() as usize;
                let px = view.embeddings.slice(ndarray::s![proj_row, proj_col, ..]);
                acc.iter_mut().zip(px.iter()).for_each(|(a, &x)| *a += x as f64);
                count += 1;
            }
            let row = if count == 0 {
                vec![0f32; d]
            } else {
                acc.iter().map(|a| (a / count as f64) as f32).collect()
            };
            (row, count)
        })
        .collect();

    let n = rows.len();
    let mut embeddings = Array2::zeros((n, d));
    let mut valid = Vec::with_capacity(n);
    let mut view_counts = Vec::with_capacity(n);
    for (i, (row, count)) in rows.into_iter().enumerate() {
        embeddings
            .row_mut(i)
            .iter_mut()
            .zip(row)
            .for_each(|(dst, x)| *dst = x);
        valid.push(count > 0);
        view_counts.push(count);
    }
    Ok(FusedEmbeddings {
        embeddings,
        valid,
        view_counts,
    })
}

pub fn fuse_stats(fused: &FusedEmbeddings) -> CoverageReport {
    let max = fused.view_counts.iter().copied().max().unwrap_or(0) as usize;
    let mut hist = vec![0usize; max + 1];
    for &c in &fused.view_counts {
        hist[c as usize] += 1;
    }
    let points = fused.len();
    let valid_points = fused.valid_count();
    CoverageReport {
        points,
        valid_points,
        coverage: if points == 0 {
            0.0
        } else {
            valid_points as f64 / points as f64
        },
        view_count_histogram: hist,
    }
}
