//! Pinhole camera with OpenCV axis convention (x right, y down, z forward).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// World-to-camera extrinsic `E = [R | t]` and intrinsic `K`, with image size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Row-major 3x4.
    pub extrinsic: [[f64; 4]; 3],
    /// Row-major 3x3.
    pub intrinsic: [[f64; 3]; 3],
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `eye` looking at `target` with world +z as up.
    pub fn look_at(eye: Vec3, target: Vec3, fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let eye_v = Vector3::from(eye);
        let fwd = Vector3::from(target) - eye_v;
        if fwd.norm() < 1e-12 {
            return Err(Error::Camera("eye coincides with target".into()));
        }
        let fwd = fwd.normalize();
        let mut right = fwd.cross(&Vector3::z());
        if right.norm() < 1e-9 {
            // Looking straight up or down.
            right = Vector3::x();
        }
        let right = right.normalize();
        let down = fwd.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let t = -(rot * eye_v);
        let focal = 0.5 * width as f64 / (0.5 * fov_deg.to_radians()).tan();
        let mut extrinsic = [[0.0; 4]; 3];
        for (r, row) in extrinsic.iter_mut().enumerate() {
            for c in 0..3 {
                row[c] = rot[(r, c)];
            }
            row[3] = t[r];
        }
        Ok(Self {
            extrinsic,
            intrinsic: [
                [focal, 0.0, width as f64 / 2.0],
                [0.0, focal, height as f64 / 2.0],
                [0.0, 0.0, 1.0],
            ],
            width,
            height,
        })
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.extrinsic[r][c])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.extrinsic[0][3], self.extrinsic[1][3], self.extrinsic[2][3])
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.intrinsic[r][c])
    }

    /// Checks the orthonormal rotation and upper-triangular positive-focal `K`.
    pub fn validate(&self) -> Result<()> {
        let k = self.k_matrix();
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::Camera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                k[(0, 0)],
                k[(1, 1)]
            )));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::Camera("intrinsic matrix must be upper triangular with K[2][2]=1".into()));
        }
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Camera("extrinsic rotation is not a proper rotation".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Camera("image size must be non-zero".into()));
        }
        if !self.extrinsic.iter().flatten().chain(self.intrinsic.iter().flatten()).all(|v| v.is_finite()) {
            return Err(Error::Camera("non-finite camera entries".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vec3 {
        let c = -(self.rotation().transpose() * self.translation());
        [c.x, c.y, c.z]
    }

    /// World point to camera frame.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let c = self.rotation() * Vector3::from(p) + self.translation();
        [c.x, c.y, c.z]
    }

    /// Continuous pixel coordinates `(u, v)` and camera-frame depth of a world point.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let pc = Vector3::from(self.to_camera(p));
        if pc.z <= 0.0 {
            return None;
        }
        let uvw = self.k_matrix() * pc;
        Some((uvw.x / uvw.z, uvw.y / uvw.z, pc.z))
    }

    /// Unit world-frame direction through the center of pixel `(u, v)`.
    pub fn pixel_direction(&self, u: usize, v: usize) -> Result<Vec3> {
        let k_inv = self
            .k_matrix()
            .try_inverse()
            .ok_or_else(|| Error::Camera("singular intrinsic matrix".into()))?;
        let d_cam = k_inv * Vector3::new(u as f64 + 0.5, v as f64 + 0.5, 1.0);
        let d = (self.rotation().transpose() * d_cam).normalize();
        Ok([d.x, d.y, d.z])
    }

    /// Unit directions for every pixel in scanline order.
    pub fn all_directions(&self) -> Result<Vec<Vec3>> {
        let k_inv = self
            .k_matrix()
            .try_inverse()
            .ok_or_else(|| Error::Camera("singular intrinsic matrix".into()))?;
        let rt = self.rotation().transpose();
        let m = rt * k_inv;
        let mut out = Vec::with_capacity(self.width * self.height);
        for v in 0..self.height {
            for u in 0..self.width {
                let d = (m * Vector3::new(u as f64 + 0.5, v as f64 + 0.5, 1.0)).normalize();
                out.push([d.x, d.y, d.z]);
            }
        }
        Ok(out)
    }

    /// Forward (optical) axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        [self.extrinsic[2][0], self.extrinsic[2][1], self.extrinsic[2][2]]
    }
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}
