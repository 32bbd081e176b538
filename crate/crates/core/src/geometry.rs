//! Pinhole projection into posed views and depth-map occlusion tests.
//!
//! Cameras follow the usual computer-vision convention: x right, y down,
//! z forward. Pixel `(col, row)` covers `[col - 0.5, col + 0.5)` so embedding
//! and depth maps are sampled at `(round(v), round(u))`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use ndarray::Array2;

use crate::tensorio::ViewSet;
use crate::{Error, Result};

const RIGID_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    world_to_camera: Matrix4<f64>,
    pub width: usize,
    pub height: usize,
}

/// Continuous pixel coordinates and camera-frame depth of a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub visible: bool,
}

impl Projection {
    /// `(row, col)` of the nearest pixel, if it lies inside a `width x height` image.
    pub fn pixel(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let (col, row) = (self.u.round(), self.v.round());
        if !(col.is_finite() && row.is_finite()) {
            return None;
        }
        if col < 0.0 || row < 0.0 || col > (width as f64 - 1.0) || row > (height as f64 - 1.0) {
            return None;
        }
        Some((row as usize, col as usize))
    }
}

/// A view in which a point passed both the frustum and the occlusion test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub view: usize,
    pub u: f64,
    pub v: f64,
}

pub(crate) fn check_rigid(m: &Matrix4<f64>) -> std::result::Result<(), String> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err("extrinsics contain non-finite entries".into());
    }
    let bottom = m.fixed_view::<1, 4>(3, 0);
    if (bottom - Vector4::new(0.0, 0.0, 0.0, 1.0).transpose()).abs().max() > RIGID_TOL {
        return Err("extrinsics bottom row must be [0, 0, 0, 1]".into());
    }
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > RIGID_TOL {
        return Err(format!("rotation block not orthonormal (error {err:.2e})"));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > RIGID_TOL {
        return Err(format!("rotation determinant {det} is not +1"));
    }
    Ok(())
}

/// Inverse of a rigid 4x4 transform.
pub fn rigid_inverse(m: &Matrix4<f64>) -> Matrix4<f64> {
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let t: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into_owned();
    let rt = r.transpose();
    let mut out = Matrix4::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    out.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rt * t)));
    out
}

impl CameraPose {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        world_to_camera: Matrix4<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidInput("principal point must be finite".into()));
        }
        check_rigid(&world_to_camera).map_err(Error::InvalidInput)?;
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            world_to_camera,
            width,
            height,
        })
    }

    pub fn from_matrices(
        intrinsics: &[[f64; 3]; 3],
        extrinsics: &[[f64; 4]; 4],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let k = intrinsics;
        if k[0][1].abs() > 1e-9 || k[1][0] != 0.0 || k[2] != [0.0, 0.0, 1.0] {
            return Err(Error::InvalidInput(
                "intrinsics must be [[fx,0,cx],[0,fy,cy],[0,0,1]]".into(),
            ));
        }
        let m = Matrix4::from_fn(|r, c| extrinsics[r][c]);
        Self::new(k[0][0], k[1][1], k[0][2], k[1][2], m, width, height)
    }

    /// Camera at `eye` looking at `target`, with `up` giving the world's up direction.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let right = forward.cross(&Vector3::from(up));
        if right.norm() < 1e-9 {
            return Err(Error::InvalidInput("look_at: up is parallel to the view direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(r * eye)));
        Self::new(
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            m,
            width,
            height,
        )
    }

    pub fn world_to_camera(&self) -> &Matrix4<f64> {
        &self.world_to_camera
    }

    /// Same intrinsics with a different extrinsic transform.
    pub fn with_world_to_camera(&self, world_to_camera: Matrix4<f64>) -> Result<Self> {
        Self::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            world_to_camera,
            self.width,
            self.height,
        )
    }

    pub fn intrinsics_matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ]
    }

    pub fn extrinsics_matrix(&self) -> [[f64; 4]; 4] {
        let m = &self.world_to_camera;
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    pub fn to_camera(&self, p: [f64; 3]) -> Vector3<f64> {
        let q = self.world_to_camera * Vector4::new(p[0], p[1], p[2], 1.0);
        Vector3::new(q.x, q.y, q.z)
    }

    pub fn center(&self) -> Vector3<f64> {
        let inv = rigid_inverse(&self.world_to_camera);
        Vector3::new(inv[(0, 3)], inv[(1, 3)], inv[(2, 3)])
    }

    /// World-frame ray through pixel `(u, v)`. The direction is scaled so that
    /// its camera-frame z component is 1, so a hit at parameter `t` has depth `t`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let dir_cam = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let r: Matrix3<f64> = self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned();
        (self.center(), r.transpose() * dir_cam)
    }
}

pub fn project_point(p: [f64; 3], cam: &CameraPose) -> Projection {
    let q = cam.to_camera(p);
    if !(q.z > 0.0) {
        return Projection {
            u: f64::NAN,
            v: f64::NAN,
            depth: q.z,
            visible: false,
        };
    }
    let u = cam.fx * q.x / q.z + cam.cx;
    let v = cam.fy * q.y / q.z + cam.cy;
    let proj = Projection {
        u,
        v,
        depth: q.z,
        visible: false,
    };
    let visible = u >= 0.0 && v >= 0.0 && proj.pixel(cam.width, cam.height).is_some();
    Projection { visible, ..proj }
}

/// Depth-consistency test at the nearest pixel. Without a depth map the check
/// passes; a zero (invalid) sensor reading rejects the point.
pub fn occlusion_check(proj: &Projection, depth_map: Option<&Array2<f32>>, tau: f64) -> bool {
    let Some(depth_map) = depth_map else {
        return true;
    };
    let (h, w) = depth_map.dim();
    let Some((row, col)) = proj.pixel(w, h) else {
        return false;
    };
    let measured = depth_map[[row, col]] as f64;
    if !(measured > 0.0) {
        return false;
    }
    (proj.depth - measured).abs() <= tau
}

/// Views in which `p` is inside the frustum and passes the occlusion check,
/// in ascending view order.
pub fn visible_views(p: [f64; 3], views: &ViewSet, tau: f64) -> Vec<Correspondence> {
    views
        .views
        .iter()
        .enumerate()
        .filter_map(|(i, view)| {
            let proj = project_point(p, &view.pose);
            (proj.visible && occlusion_check(&proj, view.depth.as_ref(), tau)).then_some(
                Correspondence {
                    view: i,
                    u: proj.u,
                    v: proj.v,
                },
            )
        })
        .collect()
}
