//! Oracles and generators shared by the integration tests and the
//! acceptance runner. Nothing here calls the code paths it is used to check.

#![allow(dead_code)]

use nalgebra::{Matrix4, Rotation3, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlseg3d::geometry::CameraPose;
use vlseg3d::synth::{oracle_visibility, SynthSpec, SynthSuite};
use vlseg3d::tensorio::{PointCloud, TensorData, TensorFile, ViewSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small suite for tests that only need a few scenes.
pub fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        train_scenes: 3,
        test_scenes: 1,
        points: 1500,
        width: 40,
        height: 40,
        focal: 30.0,
        ..Default::default()
    }
}

/// Spec with randomized cameras, resolution, layout and an optional occluder.
pub fn fuzzed_spec(seed: u64) -> SynthSpec {
    let mut r = rng(seed ^ 0xf022);
    let width = r.random_range(24..80);
    SynthSpec {
        seed,
        train_scenes: 1,
        test_scenes: 0,
        points: r.random_range(500..3000),
        cameras: r.random_range(1..7),
        width,
        height: r.random_range(24..80),
        focal: width as f64 * r.random_range(0.5..1.2),
        camera_radius: r.random_range(0.8..1.8),
        camera_height: r.random_range(0.6..2.2),
        objects_per_scene: [1, r.random_range(1..5)],
        partition: r.random_bool(0.5),
        ..Default::default()
    }
}

/// Fraction of (point, view) pairs where `visible` matches the ray oracle.
pub fn oracle_agreement(suite: &SynthSuite, tau: f64, visible: impl Fn([f64; 3], &ViewSet, usize) -> bool) -> (usize, usize) {
    let (mut agree, mut total) = (0, 0);
    for s in suite.train.iter().chain(&suite.test) {
        let cloud = &s.scene.cloud;
        for i in 0..cloud.len() {
            let p = cloud.position(i);
            for (v, view) in s.scene.views.views.iter().enumerate() {
                let expect = oracle_visibility(&s.layout, p, &view.pose, tau);
                agree += (visible(p, &s.scene.views, v) == expect) as usize;
                total += 1;
            }
        }
    }
    (agree, total)
}

/// Random proper rigid transform with translation in [-5, 5]^3.
pub fn random_rigid(r: &mut impl Rng) -> Matrix4<f64> {
    let axis = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
    let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), r.random_range(-3.1..3.1));
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
    for i in 0..3 {
        m[(i, 3)] = r.random_range(-5.0..5.0);
    }
    m
}

/// Plain loop fusion straight from the definition: project with the raw
/// matrices, round to the nearest pixel, compare depth, average in f64.
pub fn naive_fuse(cloud: &PointCloud, views: &ViewSet, tau: f64) -> (Array2<f64>, Vec<u32>) {
    let d = views.views.first().map_or(0, |v| v.embeddings.shape()[2]);
    let mut out = Array2::zeros((cloud.len(), d));
    let mut counts = vec![0u32; cloud.len()];
    for i in 0..cloud.len() {
        let p = cloud.position(i);
        for view in &views.views {
            let e = view.pose.extrinsics_matrix();
            let k = view.pose.intrinsics_matrix();
            let q: Vec<f64> = (0..3)
                .map(|r| e[r][0] * p[0] + e[r][1] * p[1] + e[r][2] * p[2] + e[r][3])
                .collect();
            if q[2] <= 0.0 {
                continue;
            }
            let u = k[0][0] * q[0] / q[2] + k[0][2];
            let v = k[1][1] * q[1] / q[2] + k[1][2];
            let (w, h) = (view.pose.width as f64, view.pose.height as f64);
            if u < 0.0 || v < 0.0 || u.round() > w - 1.0 || v.round() > h - 1.0 {
                continue;
            }
            let (col, row) = (u.round() as usize, v.round() as usize);
            if let Some(depth) = &view.depth {
                let z = depth[[row, col]] as f64;
                if z <= 0.0 || (q[2] - z).abs() > tau {
                    continue;
                }
            }
            for c in 0..d {
                out[[i, c]] += view.embeddings[[row, col, c]] as f64;
            }
            counts[i] += 1;
        }
        if counts[i] > 0 {
            out.row_mut(i).mapv_inplace(|x| x / counts[i] as f64);
        }
    }
    (out, counts)
}

/// Random tensor of rank 1..=4 with arbitrary bit patterns, NaNs included.
pub fn random_tensor(r: &mut impl Rng) -> TensorFile {
    let rank = r.random_range(1..5);
    let shape: Vec<usize> = (0..rank).map(|_| r.random_range(0..6)).collect();
    let n: usize = shape.iter().product();
    let data = if r.random_bool(0.5) {
        TensorData::F32((0..n).map(|_| f32::from_bits(r.random())).collect())
    } else {
        TensorData::I32((0..n).map(|_| r.random()).collect())
    };
    TensorFile::new(shape, data).unwrap()
}

/// Applies `m` to the world: points move by `m`, extrinsics by `m^-1`.
pub fn transform_pose(pose: &CameraPose, m: &Matrix4<f64>) -> CameraPose {
    let inv = m.try_inverse().unwrap();
    pose.with_world_to_camera(pose.world_to_camera() * inv).unwrap()
}

pub fn transform_point(m: &Matrix4<f64>, p: [f64; 3]) -> [f64; 3] {
    let q = m * nalgebra::Vector4::new(p[0], p[1], p[2], 1.0);
    [q.x, q.y, q.z]
}
