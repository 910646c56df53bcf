//! Keypoint and articulation metrics with a per-instance table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::distance;
use crate::error::{Error, Result};
use crate::worldgen::scene::KeypointSet;

/// Degrees per unit of `q`.
pub const DEGREES_PER_Q: f64 = 90.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub object: usize,
    pub articulation: usize,
    pub q_true: f64,
    pub q_pred: f64,
    pub q_error: f64,
    pub q_error_deg: f64,
    pub keypoint_rmse: f64,
    /// RMSE as a percentage of the scene diagonal.
    pub keypoint_rmse_pct: f64,
    /// Euclidean error per named keypoint, meters.
    pub per_keypoint: BTreeMap<String, f64>,
    pub seg_accuracy: Option<f64>,
    /// Mean squared RGB error of rendered views.
    pub image_mse: Option<f64>,
    pub diagonal: f64,
}

impl InstanceMetrics {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        object: usize,
        articulation: usize,
        q_true: f64,
        q_pred: f64,
        truth: &KeypointSet,
        pred: &KeypointSet,
        diagonal: f64,
        seg_accuracy: Option<f64>,
    ) -> Result<Self> {
        if truth.category != pred.category {
            return Err(Error::InvalidArgument("predicted keypoints belong to another category".into()));
        }
        if !(diagonal > 0.0) {
            return Err(Error::InvalidArgument("scene diagonal must be positive".into()));
        }
        let rmse = truth.rmse(pred);
        let per_keypoint = truth
            .category
            .keypoint_names()
            .iter()
            .zip(truth.points.iter().zip(&pred.points))
            .map(|(name, (a, b))| (name.to_string(), distance(*a, *b)))
            .collect();
        let q_error = (q_pred - q_true).abs();
        Ok(Self {
            object,
            articulation,
            q_true,
            q_pred,
            q_error,
            q_error_deg: DEGREES_PER_Q * q_error,
            keypoint_rmse: rmse,
            keypoint_rmse_pct: 100.0 * rmse / diagonal,
            per_keypoint,
            seg_accuracy,
            image_mse: None,
            diagonal,
        })
    }

    pub fn with_image_mse(mut self, mse: f64) -> Self {
        self.image_mse = Some(mse);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                median: f64::NAN,
                max: f64::NAN,
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            mean: values.iter().sum::<f64>() / n as f64,
            median,
            max: sorted[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub q_error: Summary,
    pub q_error_deg: Summary,
    pub keypoint_rmse: Summary,
    pub keypoint_rmse_pct: Summary,
    pub per_keypoint: BTreeMap<String, Summary>,
    pub seg_accuracy: Option<Summary>,
    pub image_mse: Option<Summary>,
    pub instances: Vec<InstanceMetrics>,
}

impl MetricsReport {
    pub fn from_instances(instances: Vec<InstanceMetrics>) -> Self {
        let col = |f: &dyn Fn(&InstanceMetrics) -> f64| -> Summary {
            Summary::of(&instances.iter().map(f).collect::<Vec<_>>())
        };
        let mut per_keypoint = BTreeMap::new();
        if let Some(first) = instances.first() {
            for name in first.per_keypoint.keys() {
                per_keypoint.insert(name.clone(), col(&|m| m.per_keypoint.get(name).copied().unwrap_or(f64::NAN)));
            }
        }
        let seg: Vec<f64> = instances.iter().filter_map(|m| m.seg_accuracy).collect();
        let mse: Vec<f64> = instances.iter().filter_map(|m| m.image_mse).collect();
        Self {
            count: instances.len(),
            q_error: col(&|m| m.q_error),
            q_error_deg: col(&|m| m.q_error_deg),
            keypoint_rmse: col(&|m| m.keypoint_rmse),
            keypoint_rmse_pct: col(&|m| m.keypoint_rmse_pct),
            per_keypoint,
            seg_accuracy: (!seg.is_empty()).then(|| Summary::of(&seg)),
            image_mse: (!mse.is_empty()).then(|| Summary::of(&mse)),
            instances,
        }
    }

    /// True when every aggregate equals a fresh recomputation from the table.
    pub fn is_consistent(&self) -> bool {
        let fresh = Self::from_instances(self.instances.clone());
        // Summaries of NaN never compare equal, so compare through their bits.
        serde_json::to_string(&fresh).ok() == serde_json::to_string(self).ok()
    }

    pub fn to_csv(&self) -> String {
        let names: Vec<&String> = self.instances.first().map(|m| m.per_keypoint.keys().collect()).unwrap_or_default();
        let mut out = String::from("object,articulation,q_true,q_pred,q_error,q_error_deg,keypoint_rmse,keypoint_rmse_pct,diagonal,seg_accuracy,image_mse");
        for n in &names {
            let _ = write!(out, ",err_{n}");
        }
        out.push('\n');
        for m in &self.instances {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                m.object,
                m.articulation,
                m.q_true,
                m.q_pred,
                m.q_error,
                m.q_error_deg,
                m.keypoint_rmse,
                m.keypoint_rmse_pct,
                m.diagonal,
                m.seg_accuracy.map(|v| v.to_string()).unwrap_or_default(),
                m.image_mse.map(|v| v.to_string()).unwrap_or_default()
            );
            for n in &names {
                let _ = write!(out, ",{}", m.per_keypoint.get(*n).copied().unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        out
    }

    /// Writes `metrics.json` and `metrics.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json_path = dir.join("metrics.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&json_path, e))?;
        fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
        let csv_path = dir.join("metrics.csv");
        fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))
    }

    pub fn summary(&self) -> String {
        format!(
            "{} instances: |q error| median {:.4} ({:.2} deg), keypoint RMSE median {:.4} m ({:.2}% of diagonal)",
            self.count, self.q_error.median, self.q_error_deg.median, self.keypoint_rmse.median, self.keypoint_rmse_pct.median
        )
    }
}
