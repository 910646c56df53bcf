//! Planner properties measured against closed-form and oracle references.

use artfield::artsim::{oracle_trajectory, KeypointTrajectory, TrajectoryStep};
use artfield::camera::{add, distance, sub, Vec3};
use artfield::planner::{build_problem, solve, validate, PlannerConfig, Task, TrajectoryProblem};
use artfield::worldgen::scene::{rotate_z, sample_scene, Category, Joint};

#[derive(Debug, Clone, Copy)]
pub struct PlanningReport {
    /// Largest distance of a free segment from linear interpolation of its pinned ends.
    pub straight_line: f64,
    /// Largest constraint residual over all accepted plans, meters.
    pub max_residual: f64,
    pub accepted: usize,
    /// Largest `|x(p + d) - (x(p) + d)|` over translated problems.
    pub equivariance: f64,
    pub corrupted_failed: usize,
    pub corrupted_total: usize,
}

fn lerp(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    add(a, [(b[0] - a[0]) * s, (b[1] - a[1]) * s, (b[2] - a[2]) * s])
}

pub fn run() -> PlanningReport {
    let cfg = PlannerConfig::default();
    let mut r = PlanningReport {
        straight_line: 0.0,
        max_residual: 0.0,
        accepted: 0,
        equivariance: 0.0,
        corrupted_failed: 0,
        corrupted_total: 0,
    };

    // Closed form: second differences of a line vanish, so with both ends
    // pinned and nothing in between the line is the unique minimizer.
    for k in 0..10 {
        let t = k as f64;
        let start = [0.3 * t.sin(), -1.0 + 0.1 * t, 0.2 * t.cos()];
        let end = [1.5 * (0.7 * t).cos(), 1.2 * (0.3 * t).sin(), 0.1 * t];
        let n = 8 + k;
        let p = TrajectoryProblem {
            task: Task::Open,
            horizon: n,
            start,
            constraints: vec![(n, end)],
            bounds: cfg.workspace,
            interaction: vec![],
        };
        let sol = solve(&p, &cfg).unwrap();
        for (i, x) in sol.positions.iter().enumerate() {
            r.straight_line = r.straight_line.max(distance(*x, lerp(start, end, i as f64 / n as f64)));
        }
    }

    for seed in 0..30 {
        let cat = if seed % 2 == 0 { Category::Closet } else { Category::Drawer };
        let model = sample_scene(seed, cat);
        let traj = oracle_trajectory(&model, 0.0, 1.0, 10).unwrap();
        for task in [Task::Open, Task::Close, Task::Place] {
            let p = build_problem(&traj, task, &cfg).unwrap();
            let sol = solve(&p, &cfg).unwrap();
            if sol.converged {
                r.accepted += 1;
                r.max_residual = r.max_residual.max(sol.max_residual());
            }
        }
        if seed < 5 {
            let p = build_problem(&traj, Task::Open, &cfg).unwrap();
            let base = solve(&p, &cfg).unwrap();
            for d in [[0.4, -0.3, 0.2], [-0.8, 0.6, 0.5]] {
                let moved = TrajectoryProblem {
                    start: add(p.start, d),
                    constraints: p.constraints.iter().map(|&(s, x)| (s, add(x, d))).collect(),
                    bounds: p.bounds.translated(d),
                    ..p.clone()
                };
                let sol = solve(&moved, &cfg).unwrap();
                for (a, b) in base.positions.iter().zip(&sol.positions) {
                    r.equivariance = r.equivariance.max(distance(add(*a, d), *b));
                }
            }
        }
    }

    // Handles swung about a hinge displaced by 0.2 m must fail validation.
    for seed in 0..10 {
        let model = sample_scene(100 + seed, Category::Closet);
        let Joint::Revolute { pivot, .. } = model.joint else { unreachable!() };
        let wrong = add(pivot, [0.2, 0.0, 0.0]);
        let truth = oracle_trajectory(&model, 0.0, 1.0, 10).unwrap();
        let h0 = truth.steps[0].keypoints.handle();
        let steps = truth
            .steps
            .iter()
            .map(|s| {
                let (_, yaw) = model.door_pose(s.q);
                let mut kp = s.keypoints.clone();
                kp.points[0] = add(wrong, rotate_z(sub(h0, wrong), yaw));
                TrajectoryStep { q: s.q, keypoints: kp }
            })
            .collect();
        let bad = KeypointTrajectory { steps, ..truth };
        let p = build_problem(&bad, Task::Open, &cfg).unwrap();
        let sol = solve(&p, &cfg).unwrap();
        r.corrupted_total += 1;
        if !validate(&p, &sol, &model, &cfg).unwrap().pass {
            r.corrupted_failed += 1;
        }
    }
    r
}
