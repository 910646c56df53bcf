//! Analytic-oracle geometry measured against independent closed forms.

use artfield::camera::{add, distance, dot, norm, scale, sub, Camera, Vec3};
use artfield::worldgen::raycast::{raycast_render, Lighting};
use artfield::worldgen::scene::{keypoints_analytic, rotate_z, sample_scene, Category, Joint, Part, SceneModel};

#[derive(Debug, Clone, Copy)]
pub struct GeometryReport {
    /// Largest change of a hinge, rail or goal keypoint over q.
    pub fixed_keypoints: f64,
    /// Largest spread of the handle-to-hinge-line distance over 11 q values.
    pub hinge_distance: f64,
    /// Largest deviation of drawer handles from `h(0) + q (h(1) - h(0))`.
    pub prismatic_linearity: f64,
    /// Largest project/unproject round trip error of keypoints, meters.
    pub projection: f64,
    /// Largest distance from rendered door/handle hits to their analytic box surface, meters.
    pub surface: f64,
    pub surface_pixels: usize,
}

pub const SEEDS: u64 = 20;

fn qs() -> impl Iterator<Item = f64> {
    (0..=10).map(|i| i as f64 / 10.0)
}

/// Distance from `p` to the line through `a` and `b`.
fn line_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let d = sub(b, a);
    let t = dot(sub(p, a), d) / dot(d, d);
    distance(p, add(a, scale(d, t)))
}

/// Distance from a door-frame point to the surface of the box `center ± half`.
fn box_surface_distance(p: Vec3, center: Vec3, half: Vec3) -> f64 {
    let local = sub(p, center);
    let outside = (0..3).map(|i| (local[i].abs() - half[i]).max(0.0)).fold(0.0, |a: f64, v| a.max(v));
    let to_face = (0..3).map(|i| (half[i] - local[i].abs()).abs()).fold(f64::INFINITY, f64::min);
    outside.max(to_face)
}

fn to_door_frame(model: &SceneModel, q: f64, p: Vec3) -> Vec3 {
    let (origin, yaw) = model.door_pose(q);
    rotate_z(sub(p, origin), -yaw)
}

fn unproject(camera: &Camera, u: f64, v: f64, z: f64) -> Vec3 {
    let k = camera.intrinsic;
    let xc = (u - k[0][2]) * z / k[0][0];
    let yc = (v - k[1][2]) * z / k[1][1];
    let e = camera.extrinsic;
    // world = R^T (x_cam - t)
    let d = [xc - e[0][3], yc - e[1][3], z - e[2][3]];
    [0, 1, 2].map(|j| e[0][j] * d[0] + e[1][j] * d[1] + e[2][j] * d[2])
}

pub fn run() -> GeometryReport {
    let mut r = GeometryReport {
        fixed_keypoints: 0.0,
        hinge_distance: 0.0,
        prismatic_linearity: 0.0,
        projection: 0.0,
        surface: 0.0,
        surface_pixels: 0,
    };
    for seed in 0..SEEDS {
        for cat in [Category::Closet, Category::Drawer] {
            let m = sample_scene(seed, cat);
            let k0 = keypoints_analytic(&m, 0.0).unwrap();
            let k1 = keypoints_analytic(&m, 1.0).unwrap();
            let mut dists = Vec::new();
            for q in qs() {
                let k = keypoints_analytic(&m, q).unwrap();
                for i in 1..4 {
                    r.fixed_keypoints = r.fixed_keypoints.max(distance(k.points[i], k0.points[i]));
                }
                match m.joint {
                    Joint::Revolute { hinge_top, hinge_bottom, .. } => dists.push(line_distance(k.handle(), hinge_bottom, hinge_top)),
                    Joint::Prismatic { .. } => {
                        let expect = add(k0.handle(), scale(sub(k1.handle(), k0.handle()), q));
                        r.prismatic_linearity = r.prismatic_linearity.max(distance(k.handle(), expect));
                    }
                }
            }
            if let (Some(lo), Some(hi)) = (dists.iter().copied().reduce(f64::min), dists.iter().copied().reduce(f64::max)) {
                r.hinge_distance = r.hinge_distance.max(hi - lo);
            }

            let eye = [0.6 - 0.05 * seed as f64, -2.2, 1.0];
            let camera = Camera::look_at(eye, [0.0; 3], 45.0, 24, 24).unwrap();
            for q in [0.0, 0.35, 0.8] {
                let k = keypoints_analytic(&m, q).unwrap();
                for p in k.points {
                    let (u, v, z) = camera.project(p).unwrap();
                    r.projection = r.projection.max(distance(unproject(&camera, u, v, z), p));
                }
                let view = raycast_render(&m, q, &camera, &Lighting::default()).unwrap();
                let dirs = camera.all_directions().unwrap();
                let c = camera.center();
                for (i, d) in dirs.iter().enumerate() {
                    let (center, half) = match view.seg[i] {
                        s if s == Part::Door as u8 => (m.door_center, m.door_half),
                        s if s == Part::Handle as u8 => (m.handle_offset, m.handle_half),
                        _ => continue,
                    };
                    let hit = add(c, scale(*d, view.depth[i] / norm(*d)));
                    let local = to_door_frame(&m, q, hit);
                    r.surface = r.surface.max(box_surface_distance(local, center, half));
                    r.surface_pixels += 1;
                }
            }
        }
    }
    r
}
