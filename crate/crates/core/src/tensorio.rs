//! Binary tensor container and JSON scene manifests.
//!
//! A tensor file is laid out as
//!
//! ```text
//! "TNSR" | u32 version (LE) | u64 header_len (LE) | JSON header | payload
//! ```
//!
//! The header is `{"dtype":"f32"|"i32","shape":[..],"order":"row-major"}` and
//! the payload is the row-major element array in little-endian byte order.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::geometry::CameraPose;
use crate::{Error, Result, IGNORE};

pub const MAGIC: [u8; 4] = *b"TNSR";
pub const VERSION: u32 = 1;
const PREAMBLE_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "i32")]
    I32,
}

impl DType {
    pub fn size(self) -> usize {
        4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I32(_) => DType::I32,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: DType,
    shape: Vec<u64>,
    order: String,
}

/// A typed, shaped, row-major tensor as stored on disk.
#[derive(Debug, Clone)]
pub struct TensorFile {
    shape: Vec<usize>,
    data: TensorData,
}

/// Bitwise equality, so NaN payloads compare equal to themselves.
impl PartialEq for TensorFile {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && match (&self.data, &other.data) {
                (TensorData::F32(a), TensorData::F32(b)) => {
                    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
                }
                (TensorData::I32(a), TensorData::I32(b)) => a == b,
                _ => false,
            }
    }
}

fn element_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Header("tensor rank must be at least 1".into()));
    }
    let mut n: usize = 1;
    for &e in shape {
        if e as u64 > i64::MAX as u64 {
            return Err(Error::Header(format!("extent {e} exceeds 63 bits")));
        }
        n = n
            .checked_mul(e)
            .ok_or_else(|| Error::Header(format!("shape {shape:?} overflows")))?;
    }
    Ok(n)
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected = element_count(&shape)?;
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_i32(shape: Vec<usize>, data: Vec<i32>) -> Result<Self> {
        Self::new(shape, TensorData::I32(data))
    }

    pub fn from_array<D: ndarray::Dimension>(array: &ndarray::Array<f32, D>) -> Self {
        let shape = array.shape().to_vec();
        let data = array.iter().copied().collect();
        Self {
            shape,
            data: TensorData::F32(data),
        }
    }

    pub fn from_labels(labels: &[i32]) -> Self {
        Self {
            shape: vec![labels.len()],
            data: TensorData::I32(labels.to_vec()),
        }
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_f32(self) -> Result<ArrayD<f32>> {
        match self.data {
            TensorData::F32(v) => Ok(ArrayD::from_shape_vec(IxDyn(&self.shape), v)
                .expect("shape validated at construction")),
            TensorData::I32(_) => Err(Error::InvalidInput("expected an f32 tensor, found i32".into())),
        }
    }

    pub fn into_i32(self) -> Result<Vec<i32>> {
        match self.data {
            TensorData::I32(v) => Ok(v),
            TensorData::F32(_) => Err(Error::InvalidInput("expected an i32 tensor, found f32".into())),
        }
    }

    pub fn into_array1(self) -> Result<Array1<f32>> {
        self.into_f32()?
            .into_dimensionality()
            .map_err(|e| Error::DimensionMismatch(format!("expected rank-1 tensor: {e}")))
    }

    pub fn into_array2(self) -> Result<Array2<f32>> {
        self.into_f32()?
            .into_dimensionality()
            .map_err(|e| Error::DimensionMismatch(format!("expected rank-2 tensor: {e}")))
    }

    pub fn into_array3(self) -> Result<Array3<f32>> {
        self.into_f32()?
            .into_dimensionality()
            .map_err(|e| Error::DimensionMismatch(format!("expected rank-3 tensor: {e}")))
    }

    /// Serializes to the container byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dtype: self.dtype(),
            shape: self.shape.iter().map(|&e| e as u64).collect(),
            order: "row-major".into(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out =
            Vec::with_capacity(PREAMBLE_LEN + header.len() + self.data.len() * self.dtype().size());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(Error::BadMagic {
                    found: bytes[..4].try_into().unwrap(),
                });
            }
            return Err(Error::Truncated {
                expected: PREAMBLE_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let rest = (bytes.len() - PREAMBLE_LEN) as u64;
        if header_len > rest {
            return Err(Error::Truncated {
                expected: PREAMBLE_LEN as u64 + header_len,
                found: bytes.len() as u64,
            });
        }
        let header_end = PREAMBLE_LEN + header_len as usize;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE_LEN..header_end])
            .map_err(|e| Error::Header(e.to_string()))?;
        if header.order != "row-major" {
            return Err(Error::Header(format!("unsupported order {:?}", header.order)));
        }
        let shape = header
            .shape
            .iter()
            .map(|&e| usize::try_from(e).map_err(|_| Error::Header(format!("extent {e} too large"))))
            .collect::<Result<Vec<_>>>()?;
        let count = element_count(&shape)?;
        let payload = &bytes[header_end..];
        let expected = count
            .checked_mul(header.dtype.size())
            .ok_or_else(|| Error::Header("payload size overflows".into()))?;
        if payload.len() < expected {
            return Err(Error::Truncated {
                expected: (header_end + expected) as u64,
                found: bytes.len() as u64,
            });
        }
        if payload.len() > expected {
            return Err(Error::Header(format!(
                "{} trailing bytes after payload",
                payload.len() - expected
            )));
        }
        let words = payload.chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).unwrap());
        let data = match header.dtype {
            DType::F32 => TensorData::F32(words.map(f32::from_le_bytes).collect()),
            DType::I32 => TensorData::I32(words.map(i32::from_le_bytes).collect()),
        };
        Ok(Self { shape, data })
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &TensorFile) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorFile::from_bytes(&bytes)
}

/// N points with xyz (meters) in columns 0..3 and rgb in [0,1] in columns 3..6.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Array2<f32>,
    pub gt_labels: Option<Vec<i32>>,
}

impl PointCloud {
    pub fn new(points: Array2<f32>, gt_labels: Option<Vec<i32>>) -> Result<Self> {
        if points.ncols() != 6 {
            return Err(Error::DimensionMismatch(format!(
                "point cloud must be N x 6, got {:?}",
                points.shape()
            )));
        }
        if let Some(gt) = &gt_labels {
            if gt.len() != points.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "{} gt labels for {} points",
                    gt.len(),
                    points.nrows()
                )));
            }
        }
        Ok(Self { points, gt_labels })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        let r = self.points.row(i);
        [r[0] as f64, r[1] as f64, r[2] as f64]
    }
}

/// One posed view: per-pixel embeddings (H x W x d) and optional depth (H x W).
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub pose: CameraPose,
    pub embeddings: Array3<f32>,
    pub depth: Option<Array2<f32>>,
}

impl View {
    pub fn embedding_dim(&self) -> usize {
        self.embeddings.shape()[2]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViewSet {
    pub views: Vec<View>,
}

impl ViewSet {
    pub fn new(views: Vec<View>) -> Result<Self> {
        let set = Self { views };
        set.embedding_dim()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Shared embedding dimension, `None` for an empty set.
    pub fn embedding_dim(&self) -> Result<Option<usize>> {
        let mut dim = None;
        for (i, v) in self.views.iter().enumerate() {
            let d = v.embedding_dim();
            match dim {
                None => dim = Some(d),
                Some(d0) if d0 != d => {
                    return Err(Error::DimensionMismatch(format!(
                        "view {i} has embedding dim {d}, view 0 has {d0}"
                    )))
                }
                _ => {}
            }
            let (h, w) = (v.embeddings.shape()[0], v.embeddings.shape()[1]);
            if (w, h) != (v.pose.width, v.pose.height) {
                return Err(Error::DimensionMismatch(format!(
                    "view {i} embedding map is {h}x{w} but camera is {}x{}",
                    v.pose.height, v.pose.width
                )));
            }
            if let Some(depth) = &v.depth {
                if depth.shape() != [h, w] {
                    return Err(Error::DimensionMismatch(format!(
                        "view {i} depth map {:?} does not match embedding map {h}x{w}",
                        depth.shape()
                    )));
                }
            }
        }
        Ok(dim)
    }
}

/// A fully loaded scene. Immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    pub cloud: PointCloud,
    pub views: ViewSet,
    pub scene_labels: Vec<String>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub embedding_file: PathBuf,
    pub intrinsics: [[f64; 3]; 3],
    pub extrinsics: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_file: Option<PathBuf>,
}

/// On-disk scene description. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub points_file: PathBuf,
    pub views: Vec<ViewRecord>,
    pub scene_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_labels_file: Option<PathBuf>,
    pub class_names: Vec<String>,
}

pub(crate) fn check_unique_names(names: &[String]) -> std::result::Result<(), String> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(format!("duplicate class name {n:?}"));
        }
    }
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads and validates a scene manifest plus every tensor it references.
pub fn load_scene(manifest_path: impl AsRef<Path>) -> Result<Scene> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: SceneManifest =
        serde_json::from_str(&text).map_err(|e| Error::manifest(manifest_path, e.to_string()))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    check_unique_names(&manifest.class_names).map_err(|r| Error::manifest(manifest_path, r))?;
    for label in &manifest.scene_labels {
        if !manifest.class_names.contains(label) {
            return Err(Error::UnknownClass(label.clone()));
        }
    }

    let points = read_tensor(resolve(base, &manifest.points_file))?.into_array2()?;
    let k = manifest.class_names.len() as i32;
    let gt = match &manifest.gt_labels_file {
        Some(p) => {
            let gt = read_tensor(resolve(base, p))?.into_i32()?;
            if let Some(bad) = gt.iter().find(|&&g| g != IGNORE && !(0..k).contains(&g)) {
                return Err(Error::manifest(
                    manifest_path,
                    format!("gt label {bad} outside [0, {k}) and not IGNORE"),
                ));
            }
            Some(gt)
        }
        None => None,
    };
    let cloud = PointCloud::new(points, gt)?;

    let mut views = Vec::with_capacity(manifest.views.len());
    for (i, rec) in manifest.views.iter().enumerate() {
        let embeddings = read_tensor(resolve(base, &rec.embedding_file))?.into_array3()?;
        let depth = match &rec.depth_file {
            Some(p) => Some(read_tensor(resolve(base, p))?.into_array2()?),
            None => None,
        };
        let (h, w) = (embeddings.shape()[0], embeddings.shape()[1]);
        let pose = CameraPose::from_matrices(&rec.intrinsics, &rec.extrinsics, w, h)
            .map_err(|e| Error::manifest(manifest_path, format!("view {i}: {e}")))?;
        views.push(View {
            pose,
            embeddings,
            depth,
        });
    }
    let views = ViewSet::new(views)?;

    let name = manifest.name.clone().unwrap_or_else(|| {
        base.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into())
    });
    Ok(Scene {
        name,
        cloud,
        views,
        scene_labels: manifest.scene_labels,
        class_names: manifest.class_names,
    })
}

/// Writes a scene as `manifest.json` plus tensor files under `dir`.
pub fn save_scene(dir: impl AsRef<Path>, scene: &Scene) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tensor(dir.join("points.tnsr"), &TensorFile::from_array(&scene.cloud.points))?;
    let gt_labels_file = match &scene.cloud.gt_labels {
        Some(gt) => {
            write_tensor(dir.join("gt.tnsr"), &TensorFile::from_labels(gt))?;
            Some(PathBuf::from("gt.tnsr"))
        }
        None => None,
    };
    let mut records = Vec::with_capacity(scene.views.len());
    for (i, v) in scene.views.views.iter().enumerate() {
        let emb = format!("view_{i:02}_emb.tnsr");
        write_tensor(dir.join(&emb), &TensorFile::from_array(&v.embeddings))?;
        let depth_file = match &v.depth {
            Some(d) => {
                let name = format!("view_{i:02}_depth.tnsr");
                write_tensor(dir.join(&name), &TensorFile::from_array(d))?;
                Some(PathBuf::from(name))
            }
            None => None,
        };
        records.push(ViewRecord {
            embedding_file: emb.into(),
            intrinsics: v.pose.intrinsics_matrix(),
            extrinsics: v.pose.extrinsics_matrix(),
            depth_file,
        });
    }
    let manifest = SceneManifest {
        name: Some(scene.name.clone()),
        points_file: "points.tnsr".into(),
        views: records,
        scene_labels: scene.scene_labels.clone(),
        gt_labels_file,
        class_names: scene.class_names.clone(),
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_f32_round_trip() {
        let t = TensorFile::from_f32(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let back = TensorFile::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(t, back);
        assert_eq!(back.dtype(), DType::F32);
    }

    #[test]
    fn empty_tensor_is_valid() {
        let t = TensorFile::from_f32(vec![0], vec![]).unwrap();
        let back = TensorFile::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back.shape(), &[0]);
        assert!(back.data().is_empty());
    }

    #[test]
    fn length_mismatch_rejected() {
        let err = TensorFile::from_f32(vec![2], vec![1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { expected: 2, found: 3, .. }));
    }

    #[test]
    fn rank_zero_rejected() {
        assert!(TensorFile::from_f32(vec![], vec![1.0]).is_err());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = TensorFile::from_i32(vec![1], vec![7]).unwrap().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            TensorFile::from_bytes(&bytes),
            Err(Error::BadMagic { found }) if &found == b"XXXX"
        ));
    }

    #[test]
    fn truncated_payload() {
        let bytes = TensorFile::from_f32(vec![3], vec![1.0, 2.0, 3.0])
            .unwrap()
            .to_bytes();
        let cut = &bytes[..bytes.len() - 2];
        assert!(matches!(TensorFile::from_bytes(cut), Err(Error::Truncated { .. })));
        assert!(matches!(TensorFile::from_bytes(&bytes[..10]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = TensorFile::from_i32(vec![1], vec![7]).unwrap().to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(TensorFile::from_bytes(&bytes), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn header_layout() {
        let bytes = TensorFile::from_i32(vec![2], vec![1, -1]).unwrap().to_bytes();
        let header = br#"{"dtype":"i32","shape":[2],"order":"row-major"}"#;
        assert_eq!(&bytes[..4], b"TNSR");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), header.len() as u64);
        assert_eq!(&bytes[16..16 + header.len()], header);
        assert_eq!(&bytes[16 + header.len()..], &[1, 0, 0, 0, 0xff, 0xff, 0xff, 0xff]);
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = TensorFile::from_i32(vec![1], vec![7]).unwrap().to_bytes();
        bytes.push(0);
        assert!(matches!(TensorFile::from_bytes(&bytes), Err(Error::Header(_))));
    }
}
