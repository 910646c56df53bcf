//! Keypoint-waypoint trajectory optimization for a free-flying point gripper.
//!
//! Positions `x_0 … x_N` with `x_0` fixed at home. The objective is the sum of
//! squared second differences; interaction steps are pinned to handle waypoints
//! by equality constraints and every position must stay inside an axis-aligned
//! workspace box. Objective, constraints and bounds all separate per axis, so
//! each axis is solved independently with an augmented Lagrangian whose inner
//! problem is minimized by damped Newton steps.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::artsim::KeypointTrajectory;
use crate::camera::{distance, Vec3};
use crate::error::{Error, Result};
use crate::worldgen::scene::{keypoints_analytic, SceneModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Open,
    Close,
    Place,
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" => Ok(Task::Open),
            "close" => Ok(Task::Close),
            "place" => Ok(Task::Place),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}` (open|close|place)"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Open => "open",
            Task::Close => "close",
            Task::Place => "place",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds {
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn translated(&self, d: Vec3) -> Self {
        Self {
            min: [self.min[0] + d[0], self.min[1] + d[1], self.min[2] + d[2]],
            max: [self.max[0] + d[0], self.max[1] + d[1], self.max[2] + d[2]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub approach_steps: usize,
    /// Free steps between the end of the interaction and the goal (place task).
    pub place_steps: usize,
    pub home: Vec3,
    pub workspace: Bounds,
    /// Constraint tolerance, meters.
    pub eps_c: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Validation threshold as a fraction of the scene diagonal.
    pub threshold_fraction: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            approach_steps: 10,
            place_steps: 10,
            home: [0.0, -2.0, 0.5],
            workspace: Bounds {
                min: [-3.0, -3.0, -2.0],
                max: [3.0, 3.0, 3.0],
            },
            eps_c: 1e-4,
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            max_outer: 30,
            max_inner: 50,
            threshold_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryProblem {
    pub task: Task,
    /// Index of the last position; positions are `x_0 … x_horizon`.
    pub horizon: usize,
    pub start: Vec3,
    /// `(step, target)` equality constraints in step order.
    pub constraints: Vec<(usize, Vec3)>,
    pub bounds: Bounds,
    /// `(step, q)` for every interaction step, in execution order.
    pub interaction: Vec<(usize, f64)>,
}

pub fn build_problem(traj: &KeypointTrajectory, task: Task, config: &PlannerConfig) -> Result<TrajectoryProblem> {
    if traj.steps.is_empty() {
        return Err(Error::InvalidArgument("keypoint trajectory is empty".into()));
    }
    if !config.workspace.contains(config.home) {
        return Err(Error::InvalidArgument("home position lies outside the workspace".into()));
    }
    let mut steps: Vec<(f64, Vec3)> = traj.steps.iter().map(|s| (s.q, s.keypoints.handle())).collect();
    if task == Task::Close {
        steps.reverse();
    }
    let first = config.approach_steps + 1;
    let mut constraints = Vec::new();
    let mut interaction = Vec::new();
    for (i, (q, p)) in steps.iter().enumerate() {
        constraints.push((first + i, *p));
        interaction.push((first + i, *q));
    }
    let mut horizon = first + steps.len() - 1;
    if task == Task::Place {
        let goal = traj.steps.last().expect("non-empty").keypoints.goal();
        if !goal.iter().all(|v| v.is_finite()) {
            return Err(Error::IncompatibleTask {
                task: task.to_string(),
                detail: "trajectory has no usable goal keypoint".into(),
            });
        }
        horizon += config.place_steps.max(1);
        constraints.push((horizon, goal));
    }
    Ok(TrajectoryProblem {
        task,
        horizon,
        start: config.home,
        constraints,
        bounds: config.workspace,
        interaction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotTrajectory {
    pub positions: Vec<Vec3>,
    /// Distance to the target for each constraint, in constraint order.
    pub residuals: Vec<f64>,
    pub objective: f64,
    pub outer_iterations: usize,
    pub converged: bool,
}

impl RobotTrajectory {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Second-difference system `A y + b` for positions `y_1 … y_n` with fixed `x0`.
fn second_differences(n: usize, x0: f64) -> (DMatrix<f64>, DVector<f64>) {
    let rows = n.saturating_sub(1);
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    // Row r is x_{r+1} - 2 x_r + x_{r-1} for r = 1 … n-1; y_j = x_{j+1}.
    for r in 1..n {
        let row = r - 1;
        a[(row, r)] += 1.0;
        a[(row, r - 1)] -= 2.0;
        if r >= 2 {
            a[(row, r - 2)] += 1.0;
        } else {
            b[row] += x0;
        }
    }
    (a, b)
}

struct AxisProblem<'a> {
    h_f: DMatrix<f64>,
    a: &'a DMatrix<f64>,
    b: DVector<f64>,
    pins: Vec<(usize, f64)>,
    lo: f64,
    hi: f64,
}

impl AxisProblem<'_> {
    fn objective(&self, y: &DVector<f64>) -> f64 {
        (self.a * y + &self.b).norm_squared()
    }

    /// Value, gradient and Hessian of the augmented Lagrangian.
    fn augmented(&self, y: &DVector<f64>, lam: &[f64], nu_lo: &[f64], nu_hi: &[f64], mu: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
        let r = self.a * y + &self.b;
        let mut val = r.norm_squared();
        let mut grad = 2.0 * self.a.transpose() * r;
        let mut hess = self.h_f.clone();
        for (k, &(i, c)) in self.pins.iter().enumerate() {
            let e = y[i] - c;
            val += lam[k] * e + 0.5 * mu * e * e;
            grad[i] += lam[k] + mu * e;
            hess[(i, i)] += mu;
        }
        // PHR terms for lo - y <= 0 and y - hi <= 0.
        for i in 0..y.len() {
            for (nu, g, sign) in [(nu_lo[i], self.lo - y[i], -1.0), (nu_hi[i], y[i] - self.hi, 1.0)] {
                let s = nu + mu * g;
                if s > 0.0 {
                    val += (s * s - nu * nu) / (2.0 * mu);
                    grad[i] += sign * s;
                    hess[(i, i)] += mu;
                } else {
                    val -= nu * nu / (2.0 * mu);
                }
            }
        }
        (val, grad, hess)
    }

    fn solve(&self, y0: DVector<f64>, cfg: &PlannerConfig) -> (DVector<f64>, usize, bool) {
        let n = y0.len();
        let mut y = y0;
        let mut lam = vec![0.0; self.pins.len()];
        let mut nu_lo = vec![0.0; n];
        let mut nu_hi = vec![0.0; n];
        let mut mu = cfg.initial_penalty;
        for outer in 1..=cfg.max_outer {
            for _ in 0..cfg.max_inner {
                let (val, grad, mut hess) = self.augmented(&y, &lam, &nu_lo, &nu_hi, mu);
                if grad.amax() < 1e-13 * (1.0 + mu) {
                    break;
                }
                let scale = hess.diagonal().amax().max(1.0);
                for i in 0..n {
                    hess[(i, i)] += 1e-12 * scale;
                }
                let Some(chol) = hess.cholesky() else { break };
                let dir = -chol.solve(&grad);
                let slope = grad.dot(&dir);
                let mut t = 1.0;
                let mut accepted = false;
                while t > 1e-10 {
                    let cand = &y + t * &dir;
                    if self.augmented(&cand, &lam, &nu_lo, &nu_hi, mu).0 <= val + 1e-4 * t * slope {
                        y = cand;
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !accepted || (t * dir.amax()) < 1e-15 {
                    break;
                }
            }
            let eq = self.pins.iter().map(|&(i, c)| (y[i] - c).abs()).fold(0.0, f64::max);
            let bound = y.iter().map(|&v| (self.lo - v).max(v - self.hi).max(0.0)).fold(0.0, f64::max);
            // Per-axis tolerance so the Euclidean residual stays below eps_c.
            let tol = cfg.eps_c / 3f64.sqrt();
            if eq < tol && bound < tol {
                return (y, outer, true);
            }
            for (k, &(i, c)) in self.pins.iter().enumerate() {
                lam[k] += mu * (y[i] - c);
            }
            for i in 0..n {
                nu_lo[i] = (nu_lo[i] + mu * (self.lo - y[i])).max(0.0);
                nu_hi[i] = (nu_hi[i] + mu * (y[i] - self.hi)).max(0.0);
            }
            mu *= cfg.penalty_growth;
        }
        (y, cfg.max_outer, false)
    }
}

/// Solves `problem`. Targets outside the workspace are reported as infeasible up
/// front; a run that hits the outer-iteration cap returns with `converged = false`.
pub fn solve(problem: &TrajectoryProblem, config: &PlannerConfig) -> Result<RobotTrajectory> {
    let n = problem.horizon;
    if n == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let bounds = problem.bounds;
    if (0..3).any(|i| bounds.min[i] > bounds.max[i]) {
        return Err(Error::Infeasible("workspace minimum exceeds maximum".into()));
    }
    if !bounds.contains(problem.start) {
        return Err(Error::Infeasible("start position lies outside the workspace".into()));
    }
    for &(step, p) in &problem.constraints {
        if step == 0 || step > n {
            return Err(Error::InvalidArgument(format!("constraint step {step} outside 1..={n}")));
        }
        if !bounds.contains(p) {
            return Err(Error::Infeasible(format!(
                "target ({:.4}, {:.4}, {:.4}) at step {step} lies outside the workspace",
                p[0], p[1], p[2]
            )));
        }
    }

    let mut positions = vec![problem.start; n + 1];
    let mut objective = 0.0;
    let mut outer_max = 0;
    let mut converged = true;
    for axis in 0..3 {
        let x0 = problem.start[axis];
        let (a, b) = second_differences(n, x0);
        let ax = AxisProblem {
            h_f: 2.0 * a.transpose() * &a,
            a: &a,
            b,
            pins: problem.constraints.iter().map(|&(s, p)| (s - 1, p[axis])).collect(),
            lo: bounds.min[axis],
            hi: bounds.max[axis],
        };
        let (y, outer, ok) = ax.solve(DVector::from_element(n, x0), config);
        objective += ax.objective(&y);
        outer_max = outer_max.max(outer);
        converged &= ok;
        for (t, v) in y.iter().enumerate() {
            positions[t + 1][axis] = *v;
        }
    }
    let residuals = problem
        .constraints
        .iter()
        .map(|&(s, p)| distance(positions[s], p))
        .collect();
    Ok(RobotTrajectory {
        positions,
        residuals,
        objective,
        outer_iterations: outer_max,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanExport {
    pub task: Task,
    pub horizon: usize,
    pub positions: Vec<Vec3>,
    pub constraint_steps: Vec<usize>,
    pub residuals: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub outer_iterations: usize,
}

impl PlanExport {
    pub fn new(problem: &TrajectoryProblem, traj: &RobotTrajectory) -> Self {
        Self {
            task: problem.task,
            horizon: problem.horizon,
            positions: traj.positions.clone(),
            constraint_steps: problem.constraints.iter().map(|c| c.0).collect(),
            residuals: traj.residuals.clone(),
            objective: traj.objective,
            converged: traj.converged,
            outer_iterations: traj.outer_iterations,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub task: Task,
    /// Gripper to oracle handle at the first interaction step, meters.
    pub grasp_error: f64,
    /// Largest gripper to oracle handle distance over the interaction, meters.
    pub max_path_deviation: f64,
    pub per_step_deviation: Vec<f64>,
    pub diagonal: f64,
    pub threshold: f64,
    pub max_residual: f64,
    pub pass: bool,
}

impl ValidationReport {
    pub fn summary(&self) -> String {
        format!(
            "{} task: grasp error {:.4} m, max path deviation {:.4} m, threshold {:.4} m ({:.1}% of {:.3} m diagonal), max residual {:.2e} m: {}",
            self.task,
            self.grasp_error,
            self.max_path_deviation,
            self.threshold,
            100.0 * self.threshold / self.diagonal,
            self.diagonal,
            self.max_residual,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares the interaction phase against the oracle handle at each step's planned `q`.
pub fn validate(problem: &TrajectoryProblem, traj: &RobotTrajectory, oracle: &SceneModel, config: &PlannerConfig) -> Result<ValidationReport> {
    validate_observed(problem, traj, oracle, None, config)
}

/// Like [`validate`], but when the object's actual articulation is known the
/// grasp step is scored against the handle at that state instead of the plan's
/// own estimate.
pub fn validate_observed(
    problem: &TrajectoryProblem,
    traj: &RobotTrajectory,
    oracle: &SceneModel,
    actual_q: Option<f64>,
    config: &PlannerConfig,
) -> Result<ValidationReport> {
    let per_step = problem
        .interaction
        .iter()
        .enumerate()
        .map(|(i, &(step, q))| {
            let q = match actual_q {
                Some(a) if i == 0 => a,
                _ => q,
            };
            let truth = keypoints_analytic(oracle, q.clamp(0.0, 1.0))?.handle();
            let p = traj
                .positions
                .get(step)
                .ok_or_else(|| Error::Dimension(format!("trajectory has no step {step}")))?;
            Ok(distance(*p, truth))
        })
        .collect::<Result<Vec<f64>>>()?;
    let grasp_error = per_step.first().copied().unwrap_or(f64::INFINITY);
    let max_path_deviation = per_step.iter().copied().fold(0.0, f64::max);
    let diagonal = oracle.diagonal();
    let threshold = config.threshold_fraction * diagonal;
    Ok(ValidationReport {
        task: problem.task,
        grasp_error,
        max_path_deviation,
        per_step_deviation: per_step,
        diagonal,
        threshold,
        max_residual: traj.max_residual(),
        pass: grasp_error < threshold && max_path_deviation < threshold,
    })
}
