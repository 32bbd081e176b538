//! Cosine-logit cross-entropy and cosine alignment losses with their
//! gradients with respect to the embedding rows.
//!
//! Both return the *sum* over contributing points so batches spanning several
//! scenes can be reduced in a fixed order before dividing by the total count.

use ndarray::{Array2, ArrayView1, ArrayViewMut1};

use crate::labeling::normalize_rows;
use crate::{Error, Result, IGNORE};

#[derive(Debug, Clone)]
pub struct LossSum {
    pub sum: f64,
    /// Points that contributed to `sum`.
    pub count: usize,
    /// Points skipped because a row had zero norm.
    pub skipped: usize,
    /// Gradient of `sum` with respect to each input row.
    pub grad: Array2<f64>,
}

impl LossSum {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Back-propagates a gradient through `x -> x / |x|`.
fn unnormalize_grad(g: ArrayView1<f64>, unit: ArrayView1<f64>, norm: f64, mut out: ArrayViewMut1<f64>) {
    let proj = g.dot(&unit);
    for ((o, &gi), &ui) in out.iter_mut().zip(g).zip(unit) {
        *o = (gi - proj * ui) / norm;
    }
}

fn log_softmax_row(z: ArrayView1<f64>) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    z.iter().map(|&x| x - lse).collect()
}

/// Cross-entropy of `softmax(cos(row, class) / temperature)` against labels,
/// summed over non-IGNORE points. Also returns the cosine logits.
pub fn cosine_ce_sum(
    rows: &Array2<f64>,
    bank_unit: &Array2<f64>,
    labels: &[i32],
    temperature: f64,
) -> Result<(LossSum, Array2<f64>)> {
    if rows.ncols() != bank_unit.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings have d={}, text bank has d={}",
            rows.ncols(),
            bank_unit.ncols()
        )));
    }
    if labels.len() != rows.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            rows.nrows()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {temperature}")));
    }
    let k = bank_unit.nrows() as i32;
    let unit = normalize_rows(rows);
    let cos = unit.dot(&bank_unit.t());
    let mut grad = Array2::zeros(rows.raw_dim());
    let (mut sum, mut count, mut skipped) = (0.0, 0usize, 0usize);
    for (i, &y) in labels.iter().enumerate() {
        if y == IGNORE {
            continue;
        }
        if !(0..k).contains(&y) {
            return Err(Error::InvalidInput(format!("label {y} outside [0, {k})")));
        }
        let norm = rows.row(i).dot(&rows.row(i)).sqrt();
        if norm == 0.0 {
            skipped += 1;
            continue;
        }
        let z = cos.row(i).mapv(|c| c / temperature);
        let logp = log_softmax_row(z.view());
        sum -= logp[y as usize];
        count += 1;
        // d(-log p_y)/dz_k = p_k - [k == y]; dz/dcos = 1/temperature.
        let dcos: ndarray::Array1<f64> = logp
            .iter()
            .enumerate()
            .map(|(c, &lp)| (lp.exp() - (c as i32 == y) as i32 as f64) / temperature)
            .collect();
        let dunit = bank_unit.t().dot(&dcos);
        unnormalize_grad(dunit.view(), unit.row(i), norm, grad.row_mut(i));
    }
    Ok((
        LossSum {
            sum,
            count,
            skipped,
            grad,
        },
        cos,
    ))
}

/// `1 - cos(pred_i, target_i)` summed over valid points. Points where either
/// row has zero norm are skipped and counted.
pub fn cosine_alignment_sum(pred: &Array2<f64>, target: &Array2<f64>, valid: &[bool]) -> Result<LossSum> {
    if pred.dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if valid.len() != pred.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} validity flags for {} rows",
            valid.len(),
            pred.nrows()
        )));
    }
    let mut grad = Array2::zeros(pred.raw_dim());
    let (mut sum, mut count, mut skipped) = (0.0, 0usize, 0usize);
    for i in 0..pred.nrows() {
        if !valid[i] {
            continue;
        }
        let (p, t) = (pred.row(i), target.row(i));
        let (pn, tn) = (p.dot(&p).sqrt(), t.dot(&t).sqrt());
        if pn == 0.0 || tn == 0.0 {
            skipped += 1;
            continue;
        }
        let p_unit = p.mapv(|x| x / pn);
        let t_unit = t.mapv(|x| x / tn);
        let c = p_unit.dot(&t_unit).clamp(-1.0, 1.0);
        sum += 1.0 - c;
        count += 1;
        let g = t_unit.mapv(|x| -x);
        unnormalize_grad(g.view(), p_unit.view(), pn, grad.row_mut(i));
    }
    Ok(LossSum {
        sum,
        count,
        skipped,
        grad,
    })
}
