//! Forward simulation: move the articulation code with the object code fixed, then
//! decode keypoints and frames for every step.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodecoder::Checkpoint;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::exec;
use crate::neuralfield::{keypoint_predict, LatentCode};
use crate::raymarch::{render_view, RenderOutput};
use crate::worldgen::imageio::{write_pgm, write_ppm};
use crate::worldgen::scene::{check_q, keypoints_analytic, KeypointSet, SceneModel};

/// Default number of interpolation steps.
pub const DEFAULT_STEPS: usize = 10;

/// `T + 1` codes from `z_current` to articulation `q_target`, linear in `q`.
pub fn interpolate_codes(z_current: &LatentCode, q_target: f64, steps: usize) -> Result<Vec<LatentCode>> {
    check_q(q_target)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("interpolation needs at least one step".into()));
    }
    let q0 = z_current.q();
    (0..=steps)
        .map(|t| {
            let q = if t == steps {
                q_target
            } else {
                q0 + (t as f64 / steps as f64) * (q_target - q0)
            };
            LatentCode::from_q(q, z_current.z_obj.clone())
        })
        .collect()
}

/// Linear blend of two object codes, `(1 - alpha) a + alpha b`.
pub fn blend_object_codes(a: &[f64], b: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("object codes of length {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub q: f64,
    pub keypoints: KeypointSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointTrajectory {
    /// Number of steps `T`; there are `T + 1` entries.
    #[serde(rename = "T")]
    pub t: usize,
    pub z_obj: Vec<f64>,
    pub steps: Vec<TrajectoryStep>,
}

impl KeypointTrajectory {
    pub fn handles(&self) -> Vec<[f64; 3]> {
        self.steps.iter().map(|s| s.keypoints.handle()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let traj: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if traj.steps.is_empty() {
            return Err(Error::InvalidArgument(format!("{}: trajectory has no steps", path.display())));
        }
        Ok(traj)
    }
}

/// Predicted keypoints for each code.
pub fn simulate_keypoints(cp: &Checkpoint, codes: &[LatentCode]) -> Result<KeypointTrajectory> {
    let first = codes
        .first()
        .ok_or_else(|| Error::InvalidArgument("no codes to simulate".into()))?;
    let shared = cp.shared();
    let steps = exec::try_map_indexed(codes, |_, z| -> Result<TrajectoryStep> {
        Ok(TrajectoryStep {
            q: z.q(),
            keypoints: keypoint_predict(&shared, z, cp.category)?,
        })
    })?;
    Ok(KeypointTrajectory {
        t: codes.len() - 1,
        z_obj: first.z_obj.clone(),
        steps,
    })
}

/// Analytic keypoints at `steps + 1` evenly spaced articulations from `q_start` to `q_target`.
pub fn oracle_trajectory(model: &SceneModel, q_start: f64, q_target: f64, steps: usize) -> Result<KeypointTrajectory> {
    check_q(q_start)?;
    check_q(q_target)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("interpolation needs at least one step".into()));
    }
    let steps = (0..=steps)
        .map(|t| {
            let q = if t == steps {
                q_target
            } else {
                q_start + (t as f64 / steps as f64) * (q_target - q_start)
            };
            Ok(TrajectoryStep {
                q,
                keypoints: keypoints_analytic(model, q)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KeypointTrajectory {
        t: steps.len() - 1,
        z_obj: Vec::new(),
        steps,
    })
}

/// One rendered frame per code. With `out_dir`, also writes
/// `rgb_NNN.ppm` and `seg_NNN.pgm`.
pub fn render_motion(cp: &Checkpoint, codes: &[LatentCode], camera: &Camera, out_dir: Option<&Path>) -> Result<Vec<RenderOutput>> {
    let shared = cp.shared();
    let mut frames = Vec::with_capacity(codes.len());
    for z in codes {
        frames.push(render_view(&shared, z, camera)?);
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, f) in frames.iter().enumerate() {
            write_ppm(&dir.join(format!("rgb_{i:03}.ppm")), f.width, f.height, &f.rgb)?;
            write_pgm(&dir.join(format!("seg_{i:03}.pgm")), f.width, f.height, &f.seg)?;
        }
    }
    Ok(frames)
}
