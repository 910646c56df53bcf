//! Parametric articulated objects built from boxes.
//!
//! Axis convention: world z is up, the body is centered at the origin and its
//! front face looks toward -y. Closet doors hinge on the left (-x) edge of the
//! front face about a +z axis; the door frame is rotated by `-q * 90°` so the
//! free edge swings outward (toward -y). Drawers slide along -y.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{add, distance, dot, scale, sub, Vec3};
use crate::error::{Error, Result};

/// Full body extents (width, depth, height) are drawn uniformly from this range, meters.
pub const BODY_EXTENT_RANGE: (f64, f64) = (0.3, 1.0);
/// Per-part albedo channels are drawn uniformly from this range.
pub const ALBEDO_RANGE: (f64, f64) = (0.1, 0.9);
pub const DOOR_THICKNESS: f64 = 0.02;
/// Distance from the door's outer face to the handle bar center.
pub const HANDLE_STANDOFF: f64 = 0.035;
/// Closet handle position along the door width, measured from the hinge.
pub const HANDLE_SPAN_FRACTION: f64 = 0.85;
/// Drawer travel as a fraction of body depth.
pub const DRAWER_TRAVEL_FRACTION: f64 = 0.6;
/// Goal height relative to the body half-height (the goal sits on the body's vertical axis).
pub const GOAL_HEIGHT_FRACTION: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Closet,
    Drawer,
}

impl Category {
    /// Keypoint names in the fixed order used by the keypoint head.
    pub fn keypoint_names(self) -> [&'static str; 4] {
        match self {
            Category::Closet => ["handle", "hinge_top", "hinge_bottom", "goal"],
            Category::Drawer => ["handle", "rail_front", "rail_back", "goal"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Closet => "closet",
            Category::Drawer => "drawer",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closet" => Ok(Category::Closet),
            "drawer" => Ok(Category::Drawer),
            other => Err(Error::InvalidArgument(format!("unknown category `{other}`"))),
        }
    }
}

/// Segmentation classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Part {
    Background = 0,
    Body = 1,
    Door = 2,
    Handle = 3,
}

pub const NUM_CLASSES: usize = 4;

/// Box rotated about +z by `yaw` radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec3,
    pub half: Vec3,
    pub yaw: f64,
}

impl OrientedBox {
    pub fn contains(&self, p: Vec3) -> bool {
        let local = rotate_z(sub(p, self.center), -self.yaw);
        (0..3).all(|i| local[i].abs() < self.half[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Joint {
    Revolute {
        /// Door-frame origin; lies on the hinge line.
        pivot: Vec3,
        hinge_bottom: Vec3,
        hinge_top: Vec3,
    },
    Prismatic {
        /// Door-frame origin at q = 0.
        origin: Vec3,
        /// Unit slide direction.
        axis: Vec3,
        travel: f64,
        rail_front: Vec3,
        rail_back: Vec3,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Albedo {
    pub body: Vec3,
    pub door: Vec3,
    pub handle: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub category: Category,
    pub body_center: Vec3,
    pub body_half: Vec3,
    /// Door (or drawer) box center relative to the door frame.
    pub door_center: Vec3,
    pub door_half: Vec3,
    pub joint: Joint,
    /// Handle bar center in the door frame.
    pub handle_offset: Vec3,
    pub handle_half: Vec3,
    pub goal_point: Vec3,
    pub albedo: Albedo,
}

/// Named keypoints in world coordinates, in the category's fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub category: Category,
    pub points: [Vec3; 4],
}

impl KeypointSet {
    pub fn get(&self, name: &str) -> Option<Vec3> {
        self.category
            .keypoint_names()
            .iter()
            .position(|n| *n == name)
            .map(|i| self.points[i])
    }

    pub fn handle(&self) -> Vec3 {
        self.points[0]
    }

    pub fn goal(&self) -> Vec3 {
        self.points[3]
    }

    pub fn flat(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for (i, p) in self.points.iter().enumerate() {
            out[3 * i..3 * i + 3].copy_from_slice(p);
        }
        out
    }

    pub fn from_flat(category: Category, flat: &[f64]) -> Result<Self> {
        if flat.len() != 12 {
            return Err(Error::Dimension(format!("expected 12 keypoint coordinates, got {}", flat.len())));
        }
        let mut points = [[0.0; 3]; 4];
        for (i, p) in points.iter_mut().enumerate() {
            p.copy_from_slice(&flat[3 * i..3 * i + 3]);
        }
        Ok(Self { category, points })
    }

    /// Root mean squared point distance to `other`.
    pub fn rmse(&self, other: &KeypointSet) -> f64 {
        let sq: f64 = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| distance(*a, *b).powi(2))
            .sum();
        (sq / 4.0).sqrt()
    }
}

#[derive(Serialize, Deserialize)]
struct KeypointSetRepr {
    category: Category,
    points: BTreeMap<String, Vec3>,
}

impl Serialize for KeypointSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let points = self
            .category
            .keypoint_names()
            .iter()
            .zip(&self.points)
            .map(|(n, p)| (n.to_string(), *p))
            .collect();
        KeypointSetRepr {
            category: self.category,
            points,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for KeypointSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = KeypointSetRepr::deserialize(d)?;
        let names = repr.category.keypoint_names();
        if repr.points.len() != names.len() {
            return Err(serde::de::Error::custom("unexpected keypoint names"));
        }
        let mut points = [[0.0; 3]; 4];
        for (slot, name) in points.iter_mut().zip(names) {
            *slot = *repr
                .points
                .get(name)
                .ok_or_else(|| serde::de::Error::custom(format!("missing keypoint `{name}`")))?;
            if !slot.iter().all(|v| v.is_finite()) {
                return Err(serde::de::Error::custom("non-finite keypoint"));
            }
        }
        Ok(Self {
            category: repr.category,
            points,
        })
    }
}

pub fn rotate_z(p: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

pub fn check_q(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("articulation q={q} outside [0, 1]")));
    }
    Ok(())
}

impl SceneModel {
    pub fn joint_kind(&self) -> &'static str {
        match self.joint {
            Joint::Revolute { .. } => "revolute",
            Joint::Prismatic { .. } => "prismatic",
        }
    }

    /// Diagonal of the body's bounding box; the normalizer for percentage errors.
    pub fn diagonal(&self) -> f64 {
        2.0 * dot(self.body_half, self.body_half).sqrt()
    }

    /// Door-frame origin and yaw at articulation `q`.
    pub fn door_pose(&self, q: f64) -> (Vec3, f64) {
        match &self.joint {
            Joint::Revolute { pivot, .. } => (*pivot, -q * FRAC_PI_2),
            Joint::Prismatic {
                origin,
                axis,
                travel,
                ..
            } => (add(*origin, scale(*axis, q * travel)), 0.0),
        }
    }

    pub fn door_to_world(&self, q: f64, p: Vec3) -> Vec3 {
        let (origin, yaw) = self.door_pose(q);
        add(origin, rotate_z(p, yaw))
    }

    /// Body, door and handle boxes at articulation `q`.
    pub fn parts(&self, q: f64) -> [(Part, OrientedBox); 3] {
        let (_, yaw) = self.door_pose(q);
        [
            (
                Part::Body,
                OrientedBox {
                    center: self.body_center,
                    half: self.body_half,
                    yaw: 0.0,
                },
            ),
            (
                Part::Door,
                OrientedBox {
                    center: self.door_to_world(q, self.door_center),
                    half: self.door_half,
                    yaw,
                },
            ),
            (
                Part::Handle,
                OrientedBox {
                    center: self.door_to_world(q, self.handle_offset),
                    half: self.handle_half,
                    yaw,
                },
            ),
        ]
    }

    pub fn albedo_of(&self, part: Part) -> Vec3 {
        match part {
            Part::Body => self.albedo.body,
            Part::Door => self.albedo.door,
            Part::Handle => self.albedo.handle,
            Part::Background => [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidArgument(format!("invalid scene model: {m}")));
        let body = OrientedBox {
            center: self.body_center,
            half: self.body_half,
            yaw: 0.0,
        };
        if !body.contains(self.goal_point) {
            return fail("goal point is not strictly inside the body");
        }
        let (dx, dz) = (self.door_half[0], self.door_half[2]);
        let h = self.handle_offset;
        match &self.joint {
            Joint::Revolute {
                hinge_bottom,
                hinge_top,
                ..
            } => {
                if hinge_bottom[0] != hinge_top[0] || hinge_bottom[1] != hinge_top[1] {
                    return fail("hinge line is not vertical");
                }
                // Door frame spans x in [0, 2*dx] from the hinge.
                if !(h[0] >= 0.0 && h[0] <= 2.0 * dx && h[2].abs() <= dz) {
                    return fail("handle is not on the door panel");
                }
            }
            Joint::Prismatic { axis, travel, .. } => {
                if *travel <= 0.0 {
                    return fail("prismatic travel must be positive");
                }
                if (dot(*axis, *axis) - 1.0).abs() > 1e-12 {
                    return fail("slide axis is not a unit vector");
                }
                if !(h[0].abs() <= dx && h[2].abs() <= dz) {
                    return fail("handle is not on the drawer front");
                }
            }
        }
        Ok(())
    }
}

fn uniform3(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec3 {
    [rng.random_range(lo..=hi), rng.random_range(lo..=hi), rng.random_range(lo..=hi)]
}

/// Deterministically samples an articulated object.
pub fn sample_scene(seed: u64, category: Category) -> SceneModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = BODY_EXTENT_RANGE;
    let extents = uniform3(&mut rng, lo, hi);
    let half = scale(extents, 0.5);
    let [hw, hd, hh] = half;
    let goal_point = [0.0, 0.0, GOAL_HEIGHT_FRACTION * hh];
    let albedo = Albedo {
        body: uniform3(&mut rng, ALBEDO_RANGE.0, ALBEDO_RANGE.1),
        door: uniform3(&mut rng, ALBEDO_RANGE.0, ALBEDO_RANGE.1),
        handle: uniform3(&mut rng, ALBEDO_RANGE.0, ALBEDO_RANGE.1),
    };
    let t = DOOR_THICKNESS;
    match category {
        Category::Closet => {
            let pivot = [-hw, -hd, 0.0];
            let hinge_z = 0.8 * hh;
            let handle_u = HANDLE_SPAN_FRACTION * 2.0 * hw;
            let handle_z = 0.0;
            SceneModel {
                category,
                body_center: [0.0; 3],
                body_half: half,
                door_center: [hw, -t / 2.0, 0.0],
                door_half: [hw, t / 2.0, hh],
                joint: Joint::Revolute {
                    pivot,
                    hinge_bottom: [-hw, -hd, -hinge_z],
                    hinge_top: [-hw, -hd, hinge_z],
                },
                handle_offset: [handle_u, -(t + HANDLE_STANDOFF), handle_z],
                handle_half: [0.015, 0.015, 0.06],
                goal_point,
                albedo,
            }
        }
        Category::Drawer => {
            let travel = DRAWER_TRAVEL_FRACTION * 2.0 * hd;
            let front_half_w = 0.45 * 2.0 * hw;
            let front_half_h = 0.25 * 2.0 * hh;
            let front_z = 0.2 * 2.0 * hh;
            // Deep enough that the back stays inside the body at full travel.
            let depth = travel + t + 0.02;
            let origin = [0.0, -hd - t, front_z];
            let handle_z = 0.0;
            SceneModel {
                category,
                body_center: [0.0; 3],
                body_half: half,
                door_center: [0.0, depth / 2.0, 0.0],
                door_half: [front_half_w, depth / 2.0, front_half_h],
                joint: Joint::Prismatic {
                    origin,
                    axis: [0.0, -1.0, 0.0],
                    travel,
                    rail_front: [0.0, -hd, front_z],
                    rail_back: [0.0, -hd + travel, front_z],
                },
                handle_offset: [0.0, -HANDLE_STANDOFF, handle_z],
                handle_half: [0.06, 0.015, 0.015],
                goal_point,
                albedo,
            }
        }
    }
}

/// Ground-truth keypoints at articulation `q`.
pub fn keypoints_analytic(model: &SceneModel, q: f64) -> Result<KeypointSet> {
    check_q(q)?;
    let handle = model.door_to_world(q, model.handle_offset);
    let (a, b) = match &model.joint {
        Joint::Revolute {
            hinge_top,
            hinge_bottom,
            ..
        } => (*hinge_top, *hinge_bottom),
        Joint::Prismatic {
            rail_front,
            rail_back,
            ..
        } => (*rail_front, *rail_back),
    };
    Ok(KeypointSet {
        category: model.category,
        points: [handle, a, b, model.goal_point],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic() {
        for cat in [Category::Closet, Category::Drawer] {
            assert_eq!(sample_scene(0, cat), sample_scene(0, cat));
            assert_ne!(sample_scene(0, cat), sample_scene(1, cat));
        }
    }

    #[test]
    fn closed_closet_handle_is_the_unrotated_offset() {
        let m = sample_scene(3, Category::Closet);
        let kp = keypoints_analytic(&m, 0.0).unwrap();
        let Joint::Revolute { pivot, .. } = m.joint else { panic!() };
        assert_eq!(kp.handle(), add(pivot, m.handle_offset));
    }

    #[test]
    fn half_open_door_rotates_offset_by_45_degrees() {
        let mut m = sample_scene(5, Category::Closet);
        m.joint = Joint::Revolute {
            pivot: [0.0; 3],
            hinge_bottom: [0.0, 0.0, -0.3],
            hinge_top: [0.0, 0.0, 0.3],
        };
        m.handle_offset = [0.5, 0.0, 0.0];
        let kp = keypoints_analytic(&m, 0.5).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expected = [0.5 * s, -0.5 * s, 0.0];
        assert!(distance(kp.handle(), expected) < 1e-15);
    }

    #[test]
    fn out_of_range_q_is_rejected() {
        let m = sample_scene(0, Category::Drawer);
        assert!(keypoints_analytic(&m, 1.01).is_err());
        assert!(keypoints_analytic(&m, -0.01).is_err());
    }

    #[test]
    fn keypoint_json_uses_names() {
        let m = sample_scene(0, Category::Drawer);
        let kp = keypoints_analytic(&m, 0.25).unwrap();
        let json = serde_json::to_value(&kp).unwrap();
        assert!(json["points"]["rail_front"].is_array());
        let back: KeypointSet = serde_json::from_value(json).unwrap();
        assert_eq!(back, kp);
    }
}
