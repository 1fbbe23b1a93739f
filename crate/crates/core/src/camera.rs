//! Pinhole camera with a world-to-camera rigid transform.
//!
//! Conventions: camera looks down +z, x right, y along image rows
//! (OpenCV/COLMAP style); `p_cam = R · p_world + t`.

use crate::math;
use crate::{Error, Result};

/// Intrinsics (fx, fy, cx, cy, zero skew) plus world-to-camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation, row-major.
    pub rot: [[f64; 3]; 3],
    /// World-to-camera translation.
    pub trans: [f64; 3],
}

impl CameraView {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rot: [[f64; 3]; 3],
        trans: [f64; 3],
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidCamera);
        }
        // R must be special orthogonal.
        let rt = mat3_transpose(&rot);
        let should_be_i = mat3_mul(&rt, &rot);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (should_be_i[i][j] - expect).abs() > 1e-6 {
                    return Err(Error::InvalidCamera);
                }
            }
        }
        if (mat3_det(&rot) - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidCamera);
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rot,
            trans,
        })
    }

    /// Identity pose.
    pub fn identity_pose(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rot: MAT3_IDENTITY,
            trans: [0.0; 3],
        }
    }

    /// Pose from a world-to-camera unit quaternion (w, x, y, z) and translation.
    pub fn from_quaternion(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        quat_wxyz: [f64; 4],
        trans: [f64; 3],
    ) -> Result<Self> {
        let rot = quat_to_rot(&quat_normalize(&quat_wxyz));
        Self::new(fx, fy, cx, cy, width, height, rot, trans)
    }

    /// Camera at `eye` looking at `target`, `up` fixing the roll.
    pub fn look_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
    ) -> Result<Self> {
        let z = normalize(&sub3(&target, &eye));
        let x = normalize(&cross(&up, &z));
        let y = cross(&z, &x);
        let rot = [x, y, z];
        // t = −R·eye so that the camera center maps to the origin.
        let t = mat3_mul_vec(&rot, &eye);
        Self::new(fx, fy, cx, cy, width, height, rot, [-t[0], -t[1], -t[2]])
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = mat3_mul_vec(&self.rot, &p);
        [
            r[0] + self.trans[0],
            r[1] + self.trans[1],
            r[2] + self.trans[2],
        ]
    }

    /// Camera center in world coordinates: −Rᵀ·t.
    pub fn center(&self) -> [f64; 3] {
        let rt = mat3_transpose(&self.rot);
        let c = mat3_mul_vec(&rt, &self.trans);
        [-c[0], -c[1], -c[2]]
    }

    /// World-space direction of the ray through pixel center (x+0.5, y+0.5),
    /// scaled so its camera-frame z component is 1 (then the ray parameter
    /// equals camera-frame depth).
    pub fn pixel_ray(&self, x: usize, y: usize) -> [f64; 3] {
        let dx = (x as f64 + 0.5 - self.cx) / self.fx;
        let dy = (y as f64 + 0.5 - self.cy) / self.fy;
        let d_cam = [dx, dy, 1.0];
        mat3_mul_vec(&mat3_transpose(&self.rot), &d_cam)
    }
}

pub const MAT3_IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub(crate) fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

pub(crate) fn mat3_transpose(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub(crate) fn mat3_mul_vec(a: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub(crate) fn mat3_det(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub(crate) fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn normalize(v: &[f64; 3]) -> [f64; 3] {
    let n = math::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    [v[0] / n, v[1] / n, v[2] / n]
}

pub(crate) fn quat_normalize(q: &[f64; 4]) -> [f64; 4] {
    let n = math::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub(crate) fn quat_to_rot(q: &[f64; 4]) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}
