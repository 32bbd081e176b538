//! Finite-difference checks of the adapter and encoder gradients.
//!
//! Each case perturbs every scalar parameter by `±STEP` and compares the
//! central difference with the analytic gradient. The relative error is
//! `|a - n| / max(|a|, |n|, FLOOR)`; the floor keeps exactly-zero gradients
//! (dead ReLU units, bias terms of unused classes) from dividing by noise.
//!
//! Instances are resampled until every ReLU input is at least `KINK_MARGIN`
//! away from zero, so no probe crosses a kink.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adapter::{adapter_backward, AdapterBatch, AdapterParams};
use crate::distill::{batch_loss_and_grads, EncoderConfig, EncoderInput, PointEncoderParams, Target};
use crate::labeling::normalize_rows;
use crate::tensorio::PointCloud;
use crate::{Error, Result, IGNORE};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
pub const FLOOR: f64 = 1e-6;
const KINK_MARGIN: f64 = 1e-2;
const MAX_RESAMPLES: usize = 200;

/// Temperature used by the suite. Lower temperatures scale the third
/// derivative of the loss by 1/T^3, which the fixed step cannot resolve.
pub const SUITE_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub name: String,
    pub params: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub temperature: f64,
    pub cases: Vec<GradCheckCase>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

fn perturb(slices: Vec<&mut [f64]>, mut index: usize, delta: f64) {
    for s in slices {
        if index < s.len() {
            s[index] += delta;
            return;
        }
        index -= s.len();
    }
    panic!("parameter index out of range");
}

/// Max relative error between `analytic` and central differences of `loss`.
fn compare<P: Clone>(
    params: &P,
    analytic: &[f64],
    slices: impl Fn(&mut P) -> Vec<&mut [f64]>,
    loss: impl Fn(&P) -> Result<f64>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = params.clone();
        perturb(slices(&mut plus), i, STEP);
        let mut minus = params.clone();
        perturb(slices(&mut minus), i, -STEP);
        let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * STEP);
        worst = worst.max(rel_error(a, numeric));
    }
    Ok(worst)
}

fn case(name: String, params: usize, max_rel_err: f64) -> GradCheckCase {
    GradCheckCase {
        name,
        params,
        max_rel_err,
        passed: max_rel_err < TOLERANCE,
    }
}

/// Adapter on `points` random rows of dimension `d` with hidden width `h`.
pub fn check_adapter(d: usize, h: usize, points: usize, temperature: f64, seed: u64) -> Result<GradCheckCase> {
    let classes = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank_unit = normalize_rows(&gaussian(classes, d, 1.0, &mut rng));
    for _ in 0..MAX_RESAMPLES {
        let mut params = AdapterParams::init(d, h, 0.5, rng.random())?;
        // Move away from the small-output initialization so every term matters.
        for s in params.slices_mut() {
            s.iter_mut().for_each(|x| *x += 0.3 * rng.sample::<f64, _>(StandardNormal));
        }
        let batch = AdapterBatch {
            inputs: gaussian(points, d, 1.0, &mut rng),
            labels: (0..points).map(|_| rng.random_range(0..classes as i32)).collect(),
        };
        if params.min_abs_relu_input(&batch.inputs) < KINK_MARGIN {
            continue;
        }
        let (_, g) = adapter_backward(&batch, &params, &bank_unit, temperature)?;
        let analytic: Vec<f64> = g.w1
            .iter()
            .chain(&g.b1)
            .chain(&g.w2)
            .chain(&g.b2)
            .copied()
            .collect();
        let worst = compare(
            &params,
            &analytic,
            |p| p.slices_mut().into_iter().collect(),
            |p| Ok(adapter_backward(&batch, p, &bank_unit, temperature)?.0),
        )?;
        return Ok(case(format!("adapter d={d} h={h}"), analytic.len(), worst));
    }
    Err(Error::Numeric(format!(
        "could not draw a kink-free adapter instance for d={d} h={h}"
    )))
}

/// Encoder on a random cloud of `points` points, output dimension `d`, with
/// either the cosine alignment loss or cross-entropy.
pub fn check_encoder(points: usize, d: usize, soft: bool, temperature: f64, seed: u64) -> Result<GradCheckCase> {
    let classes = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank_unit = normalize_rows(&gaussian(classes, d, 1.0, &mut rng));
    let config = EncoderConfig {
        pre_widths: vec![8],
        post_widths: vec![8],
        k: 4.min(points),
    };
    for _ in 0..MAX_RESAMPLES {
        let rows = Array2::from_shape_simple_fn((points, 6), || rng.random::<f32>());
        let cloud = PointCloud::new(rows, None)?;
        let input = EncoderInput::from_cloud(&cloud, config.k)?;
        let mut params = PointEncoderParams::init(config.clone(), d, rng.random())?;
        for s in params.slices_mut() {
            s.iter_mut().for_each(|x| *x += 0.1 * rng.sample::<f64, _>(StandardNormal));
        }
        if params.min_abs_relu_input(&input) < KINK_MARGIN {
            continue;
        }
        let target = if soft {
            Target::Align {
                target: gaussian(points, d, 1.0, &mut rng),
                valid: (0..points).map(|i| i != 1).collect(),
            }
        } else {
            Target::Classify {
                labels: (0..points)
                    .map(|i| if i == 1 { IGNORE } else { rng.random_range(0..classes as i32) })
                    .collect(),
            }
        };
        let batch = [(&input, &target)];
        let (_, _, g) = batch_loss_and_grads(&params, &batch, &bank_unit, temperature)?;
        let analytic: Vec<f64> = g.slices().into_iter().flatten().copied().collect();
        let worst = compare(
            &params,
            &analytic,
            |p| p.slices_mut(),
            |p| Ok(batch_loss_and_grads(p, &batch, &bank_unit, temperature)?.0),
        )?;
        let loss = if soft { "cosine" } else { "cross-entropy" };
        return Ok(case(format!("encoder n={points} d={d} {loss}"), analytic.len(), worst));
    }
    Err(Error::Numeric(format!(
        "could not draw a kink-free encoder instance for n={points} d={d}"
    )))
}

/// Every adapter shape in d x h plus both encoder loss modes.
pub fn run_suite(seed: u64) -> Result<GradCheckReport> {
    let mut cases = Vec::new();
    for (i, d) in [4usize, 8, 16].into_iter().enumerate() {
        for (j, h) in [8usize, 32].into_iter().enumerate() {
            cases.push(check_adapter(d, h, 12, SUITE_TEMPERATURE, seed + (i * 2 + j) as u64)?);
        }
    }
    cases.push(check_encoder(8, 4, true, SUITE_TEMPERATURE, seed + 100)?);
    cases.push(check_encoder(8, 4, false, SUITE_TEMPERATURE, seed + 101)?);
    Ok(GradCheckReport {
        step: STEP,
        tolerance: TOLERANCE,
        temperature: SUITE_TEMPERATURE,
        cases,
    })
}
