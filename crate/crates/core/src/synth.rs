//! Seeded synthetic rooms with exact ground truth.
//!
//! A scene is a floor, four walls and a handful of axis-aligned boxes. Points
//! are sampled on the exposed faces. Each camera on a ring inside the room
//! renders, per pixel, the class prototype of the nearest surface hit by the
//! pixel ray plus gaussian noise, and the exact camera-frame depth of that hit.
//!
//! Objects of a class that has a look-alike distractor in the vocabulary
//! render with part of the distractor's prototype mixed in ("bleed"), so
//! unmasked labeling confuses them while the scene mask does not.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{project_point, CameraPose};
use crate::labeling::{normalize_rows, TextEmbeddingBank};
use crate::tensorio::{read_json, save_scene, write_json, PointCloud, Scene, View, ViewSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectClass {
    pub name: String,
    /// Nominal box size in meters (x, y, z); scaled by up to ±20% per instance.
    pub size: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Distractor {
    pub name: String,
    /// Instantiated class whose renderings lean toward this distractor.
    pub resembles: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub dim: usize,
    /// Vocabulary; each name gets one prototype.
    pub classes: Vec<String>,
    /// Seed of the prototypes and class colors, shared across domains.
    pub prototype_seed: u64,
    pub floor_class: String,
    pub wall_class: String,
    pub objects: Vec<ObjectClass>,
    pub distractors: Vec<Distractor>,
    /// Classes written to the bank; `None` uses the whole vocabulary.
    pub bank_classes: Option<Vec<String>>,
    /// Range of the distractor mixing weight, drawn per object.
    pub bleed: [f64; 2],
    /// Inclusive range of object instances per scene.
    pub objects_per_scene: [usize; 2],
    pub room: [f64; 3],
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub camera_radius: f64,
    pub camera_height: f64,
    pub noise: f64,
    pub points: usize,
    /// Fraction of points sampled on objects rather than floor and walls.
    pub object_share: f64,
    pub color_jitter: f64,
    /// Adds a free-standing wall segment between camera 0 and the first object.
    pub partition: bool,
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for SynthSpec {
    fn default() -> Self {
        let object = |name: &str, size: [f64; 3]| ObjectClass {
            name: name.into(),
            size,
        };
        let distractor = |name: &str, resembles: &str| Distractor {
            name: name.into(),
            resembles: resembles.into(),
        };
        Self {
            seed: 0,
            train_scenes: 8,
            test_scenes: 2,
            dim: 16,
            classes: names(&["floor", "wall", "table", "chair", "cabinet", "desk", "stool", "shelf"]),
            prototype_seed: 0,
            floor_class: "floor".into(),
            wall_class: "wall".into(),
            objects: vec![
                object("table", [1.0, 0.7, 0.75]),
                object("chair", [0.5, 0.5, 0.9]),
                object("cabinet", [0.6, 0.4, 1.4]),
            ],
            distractors: vec![
                distractor("desk", "table"),
                distractor("stool", "chair"),
                distractor("shelf", "cabinet"),
            ],
            bank_classes: None,
            bleed: [0.8, 1.25],
            objects_per_scene: [2, 4],
            room: [4.0, 4.0, 2.5],
            cameras: 6,
            width: 64,
            height: 64,
            focal: 48.0,
            camera_radius: 1.5,
            camera_height: 1.6,
            noise: 0.05,
            points: 8192,
            object_share: 0.5,
            color_jitter: 0.05,
            partition: false,
        }
    }
}

/// Axis-aligned box carrying a vocabulary class index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub class: usize,
    /// Distractor mixing weight applied when rendering.
    pub bleed: f64,
}

/// Exact scene geometry, kept next to each generated scene for the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub room: [f64; 3],
    pub boxes: Vec<LabeledBox>,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub scene: Scene,
    pub layout: Layout,
}

#[derive(Debug, Clone)]
pub struct SynthSuite {
    pub spec: SynthSpec,
    pub bank: TextEmbeddingBank,
    pub train: Vec<SynthScene>,
    pub test: Vec<SynthScene>,
}

/// On-disk index of a written suite. Paths are relative to the index file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteIndex {
    pub bank: PathBuf,
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of scene `index` under global seed `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ index as u64)
}

/// Orthonormal prototypes by Gram-Schmidt when K <= d, otherwise random unit
/// vectors with rejection until every pairwise cosine is at most 0.3.
pub fn prototypes(k: usize, d: usize, seed: u64) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while out.len() < k {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config(format!(
                "cannot place {k} prototypes with pairwise cosine <= 0.3 in d={d}"
            )));
        }
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        if k <= d {
            for p in &out {
                let dot: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let ok = out
            .iter()
            .all(|p| v.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() <= 0.3);
        if ok {
            out.push(v);
        }
    }
    Ok(Array2::from_shape_fn((k, d), |(i, j)| out[i][j]))
}

fn class_colors(k: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0107);
    (0..k)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.15..0.85)))
        .collect()
}

/// Entry and exit parameters of the ray `o + t d` through a box.
pub fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, b: &LabeledBox) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < b.min[a] || o[a] > b.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (mut lo, mut hi) = ((b.min[a] - o[a]) * inv, (b.max[a] - o[a]) * inv);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    (t0 <= t1 && t1 > 0.0).then_some((t0, t1))
}

/// Nearest box entered by the ray at `t > 0`.
fn first_hit(o: &Vector3<f64>, d: &Vector3<f64>, boxes: &[LabeledBox]) -> Option<(f64, usize)> {
    boxes
        .iter()
        .enumerate()
        .filter_map(|(i, b)| ray_box(o, d, b).filter(|(t0, _)| *t0 > 0.0).map(|(t0, _)| (t0, i)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
}

/// Ground-truth visibility at the sampling resolution of the depth test:
/// the point's nearest pixel is ray cast analytically against the boxes and
/// the exact hit depth is compared with the point's depth within `tau`.
pub fn oracle_visibility(layout: &Layout, point: [f64; 3], pose: &CameraPose, tau: f64) -> bool {
    let q = pose.to_camera(point);
    if !(q.z > 0.0) {
        return false;
    }
    let u = pose.fx * q.x / q.z + pose.cx;
    let v = pose.fy * q.y / q.z + pose.cy;
    let (col, row) = (u.round(), v.round());
    if u < 0.0 || v < 0.0 || col >= pose.width as f64 || row >= pose.height as f64 {
        return false;
    }
    let (o, d) = pose.pixel_ray(col, row);
    match first_hit(&o, &d, &layout.boxes) {
        Some((t, _)) => (q.z - t).abs() <= tau,
        None => false,
    }
}

/// Continuous line of sight: inside the image and no box between the camera
/// center and the point. Differs from [`oracle_visibility`] near silhouette
/// edges, where a pixel ray and the exact ray to the point hit different
/// surfaces.
pub fn line_of_sight(layout: &Layout, point: [f64; 3], pose: &CameraPose) -> bool {
    if !project_point(point, pose).visible {
        return false;
    }
    let o = pose.center();
    let d = Vector3::from(point) - o;
    let len = d.norm();
    // The point lies on a face of its own box; allow its entry at t = 1.
    let slack = 1e-5 / len.max(1e-12);
    !layout
        .boxes
        .iter()
        .filter_map(|b| ray_box(&o, &d, b))
        .any(|(t0, t1)| t0 < 1.0 - slack && t1 > slack)
}

struct Face {
    axis: usize,
    at: f64,
    lo: [f64; 2],
    hi: [f64; 2],
    class: usize,
}

impl Face {
    fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let (a, b) = ((self.axis + 1) % 3, (self.axis + 2) % 3);
        let mut p = [0.0; 3];
        p[self.axis] = self.at;
        p[a] = rng.random_range(self.lo[0]..=self.hi[0]);
        p[b] = rng.random_range(self.lo[1]..=self.hi[1]);
        p
    }
}

/// Faces of `b` except the ones listed in `skip` as (axis, is_max).
fn box_faces(b: &LabeledBox, skip: &[(usize, bool)]) -> Vec<Face> {
    let mut faces = Vec::new();
    for axis in 0..3 {
        let (a, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for is_max in [false, true] {
            if skip.contains(&(axis, is_max)) {
                continue;
            }
            faces.push(Face {
                axis,
                at: if is_max { b.max[axis] } else { b.min[axis] },
                lo: [b.min[a], b.min[c]],
                hi: [b.max[a], b.max[c]],
                class: b.class,
            });
        }
    }
    faces
}

struct Resolved {
    floor: usize,
    wall: usize,
    objects: Vec<(usize, [f64; 3])>,
    /// Vocabulary index of the distractor each class resembles, if any.
    look_alike: Vec<Option<usize>>,
    bank: Vec<usize>,
}

impl SynthSpec {
    fn index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("class {name:?} is not in the synth vocabulary")))
    }

    fn resolve(&self) -> Result<Resolved> {
        let degenerate = |m: &str| Err(Error::Config(format!("degenerate synth spec: {m}")));
        if self.cameras == 0 {
            return degenerate("zero cameras");
        }
        if self.objects.is_empty() || self.objects_per_scene[1] == 0 {
            return degenerate("zero objects");
        }
        if self.objects_per_scene[0] > self.objects_per_scene[1] {
            return degenerate("objects_per_scene min exceeds max");
        }
        if self.points == 0 || self.dim == 0 || self.width == 0 || self.height == 0 {
            return degenerate("zero points, dimension or image size");
        }
        if self.room.iter().any(|&x| !(x > 0.0)) || !(self.focal > 0.0) {
            return degenerate("room extents and focal length must be positive");
        }
        if !(0.0..1.0).contains(&self.object_share) || !(self.noise >= 0.0) {
            return degenerate("object_share must be in [0, 1) and noise non-negative");
        }
        if !(0.0 <= self.bleed[0] && self.bleed[0] <= self.bleed[1] && self.bleed[1].is_finite()) {
            return degenerate("bleed range must satisfy 0 <= lo <= hi");
        }
        crate::tensorio::check_unique_names(&self.classes).map_err(Error::Config)?;
        let floor = self.index(&self.floor_class)?;
        let wall = self.index(&self.wall_class)?;
        let objects = self
            .objects
            .iter()
            .map(|o| Ok((self.index(&o.name)?, o.size)))
            .collect::<Result<Vec<_>>>()?;
        let mut look_alike = vec![None; self.classes.len()];
        for d in &self.distractors {
            let di = self.index(&d.name)?;
            if di == floor || di == wall || objects.iter().any(|o| o.0 == di) {
                return Err(Error::Config(format!("distractor {:?} is also instantiated", d.name)));
            }
            look_alike[self.index(&d.resembles)?] = Some(di);
        }
        let bank = match &self.bank_classes {
            None => (0..self.classes.len()).collect(),
            Some(list) => {
                crate::tensorio::check_unique_names(list).map_err(Error::Config)?;
                list.iter().map(|n| self.index(n)).collect::<Result<Vec<_>>>()?
            }
        };
        for c in [floor, wall].into_iter().chain(objects.iter().map(|o| o.0)) {
            if !bank.contains(&c) {
                return Err(Error::Config(format!(
                    "instantiated class {:?} is missing from the bank",
                    self.classes[c]
                )));
            }
        }
        Ok(Resolved {
            floor,
            wall,
            objects,
            look_alike,
            bank,
        })
    }
}

fn overlaps(a: &LabeledBox, b: &LabeledBox, gap: f64) -> bool {
    (0..2).all(|i| a.min[i] < b.max[i] + gap && b.min[i] < a.max[i] + gap)
}

fn camera_poses(spec: &SynthSpec, phase: f64) -> Result<Vec<CameraPose>> {
    let [w, d, _] = spec.room;
    let target = [w / 2.0, d / 2.0, 0.4];
    (0..spec.cameras)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / spec.cameras as f64;
            let eye = [
                w / 2.0 + spec.camera_radius * a.cos(),
                d / 2.0 + spec.camera_radius * a.sin(),
                spec.camera_height,
            ];
            CameraPose::look_at(eye, target, [0.0, 0.0, 1.0], spec.focal, spec.focal, spec.width, spec.height)
        })
        .collect()
}

fn place_layout(spec: &SynthSpec, res: &Resolved, cams: &[CameraPose], rng: &mut ChaCha8Rng) -> Layout {
    let [w, d, h] = spec.room;
    let t = 0.05;
    let wall = |min: [f64; 3], max: [f64; 3]| LabeledBox {
        min,
        max,
        class: res.wall,
        bleed: 0.0,
    };
    let mut boxes = vec![
        LabeledBox {
            min: [0.0, 0.0, -t],
            max: [w, d, 0.0],
            class: res.floor,
            bleed: 0.0,
        },
        wall([-t, -t, -t], [0.0, d + t, h]),
        wall([w, -t, -t], [w + t, d + t, h]),
        wall([0.0, -t, -t], [w, 0.0, h]),
        wall([0.0, d, -t], [w, d + t, h]),
    ];
    let n_structure = boxes.len();
    let count = rng.random_range(spec.objects_per_scene[0]..=spec.objects_per_scene[1]);
    let margin = 0.3;
    for _ in 0..count {
        let (class, size) = res.objects[rng.random_range(0..res.objects.len())];
        let bleed = if res.look_alike[class].is_some() {
            rng.random_range(spec.bleed[0]..=spec.bleed[1])
        } else {
            0.0
        };
        for _attempt in 0..200 {
            let mut s: [f64; 3] = std::array::from_fn(|i| size[i] * rng.random_range(0.8..1.2));
            if rng.random_bool(0.5) {
                s.swap(0, 1);
            }
            if s[0] + 2.0 * margin >= w || s[1] + 2.0 * margin >= d {
                continue;
            }
            let x = rng.random_range(margin..w - margin - s[0]);
            let y = rng.random_range(margin..d - margin - s[1]);
            let b = LabeledBox {
                min: [x, y, 0.0],
                max: [x + s[0], y + s[1], s[2].min(h)],
                class,
                bleed,
            };
            if boxes[n_structure..].iter().all(|o| !overlaps(&b, o, 0.2)) {
                boxes.push(b);
                break;
            }
        }
    }
    if spec.partition && boxes.len() > n_structure {
        // Thin panel halfway between camera 0 and the first object.
        let c = cams[0].center();
        let o = &boxes[n_structure];
        let mid = [
            (c.x + (o.min[0] + o.max[0]) / 2.0) / 2.0,
            (c.y + (o.min[1] + o.max[1]) / 2.0) / 2.0,
        ];
        let thin = if (c.x - mid[0]).abs() > (c.y - mid[1]).abs() { 0 } else { 1 };
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for i in 0..2 {
            let half = if i == thin { 0.03 } else { 0.6 };
            min[i] = mid[i] - half;
            max[i] = mid[i] + half;
        }
        max[2] = spec.camera_height + 0.4;
        boxes.push(wall(min, max));
    }
    Layout {
        room: spec.room,
        boxes,
    }
}

fn sample_points(
    spec: &SynthSpec,
    layout: &Layout,
    res: &Resolved,
    colors: &[[f64; 3]],
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f32>, Vec<usize>)> {
    // Everything after the floor and the four walls stands on the floor.
    let objects = &layout.boxes[5..];
    let mut structure = Vec::new();
    let mut solid = Vec::new();
    for (i, b) in layout.boxes.iter().enumerate() {
        if i == 0 {
            structure.extend(box_faces(b, &[(0, false), (0, true), (1, false), (1, true), (2, false)]));
        } else if i <= 4 {
            // Only the face looking into the room.
            let inner = match i {
                1 => (0, true),
                2 => (0, false),
                3 => (1, true),
                _ => (1, false),
            };
            let all = [(0, false), (0, true), (1, false), (1, true), (2, false), (2, true)];
            let skip: Vec<_> = all.into_iter().filter(|f| *f != inner).collect();
            let mut faces = box_faces(b, &skip);
            for f in &mut faces {
                // Clip the wall face to the room interior.
                f.lo = [f.lo[0].max(0.0), f.lo[1].max(0.0)];
                f.hi = [f.hi[0].min(spec.room[(f.axis + 1) % 3]), f.hi[1].min(spec.room[(f.axis + 2) % 3])];
            }
            structure.extend(faces);
        } else {
            solid.extend(box_faces(b, &[(2, false)]));
        }
    }
    let n_solid = if solid.is_empty() {
        0
    } else {
        (spec.points as f64 * spec.object_share).round() as usize
    };
    let mut rows = Vec::with_capacity(spec.points);
    let mut classes = Vec::with_capacity(spec.points);
    for (faces, n) in [(&structure, spec.points - n_solid), (&solid, n_solid)] {
        if n == 0 {
            continue;
        }
        let pick = WeightedIndex::new(faces.iter().map(Face::area))
            .map_err(|e| Error::Config(format!("cannot sample faces: {e}")))?;
        let mut drawn = 0;
        while drawn < n {
            let f = &faces[pick.sample(rng)];
            let p = f.sample(rng);
            // Floor under an object is hidden; so is anything inside a box.
            let hidden = objects.iter().any(|b| {
                (0..3).all(|a| p[a] > b.min[a] + 1e-9 && p[a] < b.max[a] - 1e-9)
                    || (f.class == res.floor
                        && (0..2).all(|a| p[a] >= b.min[a] && p[a] <= b.max[a]))
            });
            if hidden {
                continue;
            }
            rows.push(p);
            classes.push(f.class);
            drawn += 1;
        }
    }
    let mut pts = Array2::<f32>::zeros((rows.len(), 6));
    for (i, (p, &c)) in rows.iter().zip(&classes).enumerate() {
        for a in 0..3 {
            pts[[i, a]] = p[a] as f32;
            let jitter: f64 = StandardNormal.sample(rng);
            pts[[i, 3 + a]] = (colors[c][a] + spec.color_jitter * jitter).clamp(0.0, 1.0) as f32;
        }
    }
    Ok((pts, classes))
}

fn render(
    spec: &SynthSpec,
    layout: &Layout,
    pose: &CameraPose,
    protos: &Array2<f64>,
    res: &Resolved,
    rng: &mut ChaCha8Rng,
) -> View {
    let (h, w, d) = (spec.height, spec.width, spec.dim);
    let mut emb = Array3::<f32>::zeros((h, w, d));
    let mut depth = Array2::<f32>::zeros((h, w));
    for row in 0..h {
        for col in 0..w {
            let (o, dir) = pose.pixel_ray(col as f64, row as f64);
            let mut e = vec![0.0f64; d];
            if let Some((t, i)) = first_hit(&o, &dir, &layout.boxes) {
                let b = &layout.boxes[i];
                depth[[row, col]] = t as f32;
                let mut v: Vec<f64> = protos.row(b.class).to_vec();
                if let Some(look) = res.look_alike[b.class] {
                    v.iter_mut()
                        .zip(protos.row(look))
                        .for_each(|(x, y)| *x += b.bleed * y);
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                e.iter_mut().zip(&v).for_each(|(x, y)| *x = y / norm);
            }
            for (k, x) in e.iter().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                emb[[row, col, k]] = (x + spec.noise * z) as f32;
            }
        }
    }
    View {
        pose: pose.clone(),
        embeddings: emb,
        depth: Some(depth),
    }
}

fn generate_scene(
    spec: &SynthSpec,
    res: &Resolved,
    protos: &Array2<f64>,
    colors: &[[f64; 3]],
    name: String,
    seed: u64,
) -> Result<SynthScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let cams = camera_poses(spec, phase)?;
    let layout = place_layout(spec, res, &cams, &mut rng);
    let (points, classes) = sample_points(spec, &layout, res, colors, &mut rng)?;
    let views = cams
        .iter()
        .map(|c| render(spec, &layout, c, protos, res, &mut rng))
        .collect();
    let gt: Vec<i32> = classes
        .iter()
        .map(|c| res.bank.iter().position(|b| b == c).expect("validated") as i32)
        .collect();
    let mut present: Vec<usize> = layout.boxes.iter().map(|b| b.class).collect();
    present.sort_unstable();
    present.dedup();
    Ok(SynthScene {
        scene: Scene {
            name,
            cloud: PointCloud::new(points, Some(gt))?,
            views: ViewSet::new(views)?,
            scene_labels: present.iter().map(|&c| spec.classes[c].clone()).collect(),
            class_names: res.bank.iter().map(|&c| spec.classes[c].clone()).collect(),
        },
        layout,
    })
}

/// Text bank of the spec: the prototypes of the bank classes.
pub fn synth_bank(spec: &SynthSpec) -> Result<TextEmbeddingBank> {
    let res = spec.resolve()?;
    let protos = prototypes(spec.classes.len(), spec.dim, spec.prototype_seed)?;
    bank_from(spec, &res, &protos)
}

fn bank_from(spec: &SynthSpec, res: &Resolved, protos: &Array2<f64>) -> Result<TextEmbeddingBank> {
    let rows = Array2::from_shape_fn((res.bank.len(), spec.dim), |(i, j)| protos[[res.bank[i], j]] as f32);
    TextEmbeddingBank::new(res.bank.iter().map(|&c| spec.classes[c].clone()).collect(), rows)
}

/// Generates the suite in memory. Scenes are generated in parallel from
/// per-scene seeds, so the result does not depend on the thread count.
pub fn generate(spec: &SynthSpec) -> Result<SynthSuite> {
    let res = spec.resolve()?;
    let protos = normalize_rows(&prototypes(spec.classes.len(), spec.dim, spec.prototype_seed)?);
    let colors = class_colors(spec.classes.len(), spec.prototype_seed);
    let total = spec.train_scenes + spec.test_scenes;
    let mut scenes: Vec<SynthScene> = (0..total)
        .into_par_iter()
        .map(|i| {
            let name = if i < spec.train_scenes {
                format!("train_{i:03}")
            } else {
                format!("test_{:03}", i - spec.train_scenes)
            };
            generate_scene(spec, &res, &protos, &colors, name, scene_seed(spec.seed, i))
        })
        .collect::<Result<_>>()?;
    let test = scenes.split_off(spec.train_scenes);
    Ok(SynthSuite {
        spec: spec.clone(),
        bank: bank_from(spec, &res, &protos)?,
        train: scenes,
        test,
    })
}

/// Writes `suite.json`, `spec.json`, the bank and one directory per scene
/// (manifest plus `layout.json`). Returns the path of `suite.json`.
pub fn write_suite(dir: impl AsRef<Path>, suite: &SynthSuite) -> Result<PathBuf> {
    let dir = dir.as_ref();
    suite.bank.save(dir.join("bank.tnsr"))?;
    write_json(&dir.join("spec.json"), &suite.spec)?;
    let write_split = |split: &str, scenes: &[SynthScene]| -> Result<Vec<PathBuf>> {
        scenes
            .iter()
            .map(|s| {
                let rel = PathBuf::from(split).join(&s.scene.name);
                save_scene(dir.join(&rel), &s.scene)?;
                write_json(&dir.join(&rel).join("layout.json"), &s.layout)?;
                Ok(rel.join("manifest.json"))
            })
            .collect()
    };
    let index = SuiteIndex {
        bank: "bank.tnsr".into(),
        train: write_split("train", &suite.train)?,
        test: write_split("test", &suite.test)?,
    };
    let path = dir.join("suite.json");
    write_json(&path, &index)?;
    Ok(path)
}

/// Reads a suite index, resolving its paths against the index location.
pub fn load_suite_index(path: impl AsRef<Path>) -> Result<SuiteIndex> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: "synth-gen".into(),
        });
    }
    let index: SuiteIndex = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(SuiteIndex {
        bank: base.join(index.bank),
        train: index.train.into_iter().map(|p| base.join(p)).collect(),
        test: index.test.into_iter().map(|p| base.join(p)).collect(),
    })
}

pub fn load_layout(scene_dir: impl AsRef<Path>) -> Result<Layout> {
    read_json(&scene_dir.as_ref().join("layout.json"))
}
