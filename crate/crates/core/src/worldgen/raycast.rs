//! Analytic ray casting of box scenes: exact depth, part labels and Lambert shading.

use serde::{Deserialize, Serialize};

use crate::camera::{dot, norm, scale, sub, Camera, Vec3};
use crate::error::{Error, Result};
use crate::worldgen::scene::{check_q, rotate_z, OrientedBox, Part, SceneModel};

/// Entry/exit distances of a ray through a box, with the entry-face normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxHit {
    pub t_entry: f64,
    pub t_exit: f64,
    pub normal: Vec3,
}

/// Slab-method intersection. Returns `None` when the ray misses or the box is behind.
pub fn intersect_box(b: &OrientedBox, origin: Vec3, dir: Vec3) -> Option<BoxHit> {
    let o = rotate_z(sub(origin, b.center), -b.yaw);
    let d = rotate_z(dir, -b.yaw);
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    let mut sign = 1.0;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i].abs() > b.half[i] {
                return None;
            }
            continue;
        }
        let t1 = (-b.half[i] - o[i]) / d[i];
        let t2 = (b.half[i] - o[i]) / d[i];
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if lo > t_near {
            t_near = lo;
            axis = i;
            sign = -d[i].signum();
        }
        t_far = t_far.min(hi);
    }
    if t_near > t_far || t_far <= 0.0 {
        return None;
    }
    let mut n_local = [0.0; 3];
    n_local[axis] = sign;
    Some(BoxHit {
        t_entry: t_near,
        t_exit: t_far,
        normal: rotate_z(n_local, b.yaw),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneHit {
    pub part: Part,
    pub t: f64,
    pub normal: Vec3,
}

/// Nearest visible part along a ray from outside the scene.
pub fn trace(model: &SceneModel, q: f64, origin: Vec3, dir: Vec3) -> Option<SceneHit> {
    let mut best: Option<SceneHit> = None;
    for (part, b) in model.parts(q) {
        if let Some(hit) = intersect_box(&b, origin, dir) {
            if hit.t_entry > 1e-9 && best.is_none_or(|h| hit.t_entry < h.t) {
                best = Some(SceneHit {
                    part,
                    t: hit.t_entry,
                    normal: hit.normal,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    /// Unit vector pointing from surfaces toward the light.
    pub direction: Vec3,
    pub ambient: f64,
}

impl Default for Lighting {
    fn default() -> Self {
        let d: Vec3 = [-0.4, -0.7, 0.6];
        Self {
            direction: scale(d, 1.0 / norm(d)),
            ambient: 0.35,
        }
    }
}

/// A rendered observation with oracle depth.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedView {
    /// `H * W * 3` RGB in `[0, 1]`, scanline order.
    pub image: Vec<f64>,
    /// `H * W` class ids.
    pub seg: Vec<u8>,
    /// `H * W` hit distances along each ray; infinite for background.
    pub depth: Vec<f64>,
    pub camera: Camera,
}

pub fn raycast_render(model: &SceneModel, q: f64, camera: &Camera, lighting: &Lighting) -> Result<PosedView> {
    check_q(q)?;
    camera.validate()?;
    if camera.width < 8 || camera.height < 8 {
        return Err(Error::Camera(format!(
            "image must be at least 8x8, got {}x{}",
            camera.width, camera.height
        )));
    }
    let origin = camera.center();
    let dirs = camera.all_directions()?;
    let n = dirs.len();
    let mut image = Vec::with_capacity(3 * n);
    let mut seg = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);
    for dir in dirs {
        match trace(model, q, origin, dir) {
            Some(hit) => {
                let lambert = dot(hit.normal, lighting.direction).max(0.0);
                let shade = lighting.ambient + (1.0 - lighting.ambient) * lambert;
                let albedo = model.albedo_of(hit.part);
                image.extend(albedo.iter().map(|a| (a * shade).clamp(0.0, 1.0)));
                seg.push(hit.part as u8);
                depth.push(hit.t);
            }
            None => {
                image.extend([1.0, 1.0, 1.0]);
                seg.push(Part::Background as u8);
                depth.push(f64::INFINITY);
            }
        }
    }
    Ok(PosedView {
        image,
        seg,
        depth,
        camera: camera.clone(),
    })
}
