//! Per-command run configurations.
//!
//! A configuration is resolved in three layers: built-in defaults, an optional
//! JSON file (`--config`), then `--set key=value` overrides where `key` is a
//! dotted path such as `train.lambdas.kp`. Values are parsed as JSON when
//! possible and taken as strings otherwise. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use artfield::autodecoder::{InferConfig, TrainConfig};
use artfield::camera::Vec3;
use artfield::neuralfield::ArchConfig;
use artfield::planner::{PlannerConfig, Task};
use artfield::worldgen::dataset::DataConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// `artfield train`: fit weights and object codes to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    /// `manifest.json` written by `gen-data`.
    pub data: PathBuf,
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

/// `artfield infer`: fit a latent code per instance of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferRun {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    /// Observed views per instance, taken in manifest order; 0 uses all.
    pub n_view: usize,
    /// Instances to process, in manifest order; 0 processes all.
    pub limit: usize,
    pub infer: InferConfig,
}

impl Default for InferRun {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            data: PathBuf::new(),
            n_view: 0,
            limit: 0,
            infer: InferConfig::default(),
        }
    }
}

/// `artfield simulate`: keypoint trajectories (and optional frames) from inferred codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateRun {
    pub checkpoint: PathBuf,
    /// `latents.json` written by `infer`.
    pub latents: PathBuf,
    /// Starting articulation; `null` starts from each inferred code.
    pub q_start: Option<f64>,
    pub q_target: f64,
    /// Number of steps `T`; the trajectory has `T + 1` states.
    pub steps: usize,
    pub frames: bool,
    pub frame_width: usize,
    pub frame_height: usize,
    pub frame_eye: Vec3,
    pub frame_fov_deg: f64,
}

impl Default for SimulateRun {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            latents: PathBuf::new(),
            q_start: None,
            q_target: 1.0,
            steps: 10,
            frames: false,
            frame_width: 64,
            frame_height: 64,
            frame_eye: [1.0, -2.6, 1.2],
            frame_fov_deg: 45.0,
        }
    }
}

/// `artfield plan`: gripper trajectories for simulated keypoint paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanRun {
    /// `simulation.json` written by `simulate`, or its run directory.
    pub simulation: PathBuf,
    /// Optional manifest with oracle models; enables validation.
    pub data: PathBuf,
    pub task: Task,
    pub planner: PlannerConfig,
}

impl Default for PlanRun {
    fn default() -> Self {
        Self {
            simulation: PathBuf::new(),
            data: PathBuf::new(),
            task: Task::Open,
            planner: PlannerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Ground truth fed back as the prediction.
    #[default]
    Oracle,
    /// Trained object codes at the true articulation (training-set evaluation).
    Trained,
    /// Codes from an `infer` run.
    Latents,
}

/// `artfield eval`: metrics of predictions against dataset ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRun {
    pub data: PathBuf,
    pub source: Source,
    /// Required unless `source` is `oracle`.
    pub checkpoint: PathBuf,
    /// Required when `source` is `latents`.
    pub latents: PathBuf,
    /// Render every view to score segmentation accuracy and image error.
    pub render: bool,
}

impl Default for EvalRun {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            source: Source::Oracle,
            checkpoint: PathBuf::new(),
            latents: PathBuf::new(),
            render: true,
        }
    }
}

fn require(path: &Path, key: &str) -> Result<(), CliError> {
    if path.as_os_str().is_empty() {
        return Err(CliError::Config(format!("`{key}` is required (use --set {key}=<path>)")));
    }
    Ok(())
}

/// Structural checks that need no files.
pub trait Validate {
    fn validate(&self) -> Result<(), CliError>;
}

impl Validate for DataConfig {
    fn validate(&self) -> Result<(), CliError> {
        DataConfig::validate(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

impl Validate for TrainRun {
    fn validate(&self) -> Result<(), CliError> {
        require(&self.data, "data")?;
        self.arch.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}

impl Validate for InferRun {
    fn validate(&self) -> Result<(), CliError> {
        require(&self.checkpoint, "checkpoint")?;
        require(&self.data, "data")?;
        if !(self.infer.lr.is_finite() && self.infer.lr >= 0.0) {
            return Err(CliError::Config("infer.lr must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.infer.init_q) {
            return Err(CliError::Config("infer.init_q must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

impl Validate for SimulateRun {
    fn validate(&self) -> Result<(), CliError> {
        require(&self.checkpoint, "checkpoint")?;
        require(&self.latents, "latents")?;
        let in_range = |q: f64| (0.0..=1.0).contains(&q);
        if !in_range(self.q_target) || self.q_start.is_some_and(|q| !in_range(q)) {
            return Err(CliError::Config("q_start and q_target must lie in [0, 1]".into()));
        }
        if self.steps == 0 {
            return Err(CliError::Config("steps must be positive".into()));
        }
        if self.frames && (self.frame_width < 1 || self.frame_height < 1) {
            return Err(CliError::Config("frame size must be positive".into()));
        }
        Ok(())
    }
}

impl Validate for PlanRun {
    fn validate(&self) -> Result<(), CliError> {
        require(&self.simulation, "simulation")?;
        let p = &self.planner;
        if !(p.eps_c > 0.0 && p.initial_penalty > 0.0 && p.penalty_growth > 1.0) {
            return Err(CliError::Config(
                "planner.eps_c and planner.initial_penalty must be positive and planner.penalty_growth above 1".into(),
            ));
        }
        if !(p.threshold_fraction > 0.0) {
            return Err(CliError::Config("planner.threshold_fraction must be positive".into()));
        }
        Ok(())
    }
}

impl Validate for EvalRun {
    fn validate(&self) -> Result<(), CliError> {
        require(&self.data, "data")?;
        if self.source != Source::Oracle {
            require(&self.checkpoint, "checkpoint")?;
        }
        if self.source == Source::Latents {
            require(&self.latents, "latents")?;
        }
        Ok(())
    }
}

fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies one `key=value` override.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("override `{assignment}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            _ => {
                return Err(CliError::Config(format!(
                    "`{}` is not a section, cannot set `{key}`",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one part")
}

/// Defaults, then `file`, then each override in order.
pub fn resolve<T>(file: Option<&Path>, sets: &[String]) -> Result<T, CliError>
where
    T: Default + Serialize + DeserializeOwned + Validate,
{
    let mut value = serde_json::to_value(T::default()).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let layer: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{} is not valid JSON: {e}", path.display())))?;
        if !layer.is_object() {
            return Err(CliError::Config(format!("{} must hold a JSON object", path.display())));
        }
        merge(&mut value, layer);
    }
    for s in sets {
        apply_set(&mut value, s)?;
    }
    let cfg: T = serde_json::from_value(value).map_err(|e| CliError::Config(format!("invalid configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
