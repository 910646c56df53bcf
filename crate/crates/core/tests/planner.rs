use artfield::artsim::{oracle_trajectory, KeypointTrajectory, TrajectoryStep};
use artfield::camera::{add, distance, sub, Vec3};
use artfield::planner::{build_problem, solve, validate, Bounds, PlanExport, PlannerConfig, Task, TrajectoryProblem};
use artfield::worldgen::scene::{rotate_z, sample_scene, Category, Joint};
use artfield::Error;

fn bounds() -> Bounds {
    PlannerConfig::default().workspace
}

/// Distance from `p` to the line through `a` and `b`.
fn line_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let d = sub(b, a);
    let len2: f64 = d.iter().map(|v| v * v).sum();
    let t = sub(p, a).iter().zip(&d).map(|(x, y)| x * y).sum::<f64>() / len2;
    distance(p, add(a, [d[0] * t, d[1] * t, d[2] * t]))
}

#[test]
fn open_task_counts() {
    let model = sample_scene(3, Category::Closet);
    let traj = oracle_trajectory(&model, 0.0, 1.0, 10).unwrap();
    let p = build_problem(&traj, Task::Open, &PlannerConfig::default()).unwrap();
    assert_eq!(p.horizon, 21);
    assert_eq!(p.constraints.len(), 11);
    assert_eq!(p.constraints[0].0, 11);
}

#[test]
fn close_reverses_waypoints() {
    let model = sample_scene(4, Category::Closet);
    let traj = oracle_trajectory(&model, 0.0, 1.0, 10).unwrap();
    let cfg = PlannerConfig::default();
    let open = build_problem(&traj, Task::Open, &cfg).unwrap();
    let close = build_problem(&traj, Task::Close, &cfg).unwrap();
    let n = open.constraints.len();
    for i in 0..n {
        assert_eq!(close.constraints[i].1, open.constraints[n - 1 - i].1);
    }
}

#[test]
fn place_ends_at_goal() {
    let model = sample_scene(5, Category::Closet);
    let traj = oracle_trajectory(&model, 0.0, 1.0, 10).unwrap();
    let p = build_problem(&traj, Task::Place, &PlannerConfig::default()).unwrap();
    let last = *p.constraints.last().unwrap();
    assert_eq!(last.0, p.horizon);
    assert_eq!(last.1, model.goal_point);
    let sol = solve(&p, &PlannerConfig::default()).unwrap();
    assert!(sol.converged);
    assert!(distance(*sol.positions.last().unwrap(), model.goal_point) < 1e-4);
}

#[test]
fn place_without_goal_is_incompatible() {
    let model = sample_scene(5, Category::Closet);
    let mut traj = oracle_trajectory(&model, 0.0, 1.0, 4).unwrap();
    traj.steps.last_mut().unwrap().keypoints.points[3] = [f64::NAN; 3];
    let err = build_problem(&traj, Task::Place, &PlannerConfig::default()).unwrap_err();
    assert!(matches!(err, Error::IncompatibleTask { .. }));
}

#[test]
fn pinned_home_gives_constant_trajectory() {
    let home = [0.2, -1.0, 0.3];
    let p = TrajectoryProblem {
        task: Task::Open,
        horizon: 8,
        start: home,
        constraints: vec![(8, home)],
        bounds: bounds(),
        interaction: vec![],
    };
    let sol = solve(&p, &PlannerConfig::default()).unwrap();
    assert_eq!(sol.positions.len(), 9);
    assert!(sol.objective.abs() < 1e-20);
    for x in &sol.positions {
        assert!(distance(*x, home) < 1e-12);
    }
}

#[test]
fn free_segment_is_straight() {
    // Oracle: with both ends pinned and nothing between, linear interpolation
    // has zero second differences, so it is the unique minimizer.
    for (k, end) in [[1.0, 0.5, -0.7], [-2.0, 2.0, 1.0], [0.0, 0.0, 2.5]].into_iter().enumerate() {
        let start = [0.1 * k as f64, -0.4, 0.2];
        let n = 12;
        let p = TrajectoryProblem {
            task: Task::Open,
            horizon: n,
            start,
            constraints: vec![(n, end)],
            bounds: bounds(),
            interaction: vec![],
        };
        let sol = solve(&p, &PlannerConfig::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.max_residual() < 1e-4);
        let last = sol.positions[n];
        let dev = sol.positions.iter().map(|&x| line_distance(x, start, last)).fold(0.0, f64::max);
        assert!(dev < 1e-6, "deviation {dev}");
        for (t, x) in sol.positions.iter().enumerate() {
            let s = t as f64 / n as f64;
            let expect = add(start, [(last[0] - start[0]) * s, (last[1] - start[1]) * s, (last[2] - start[2]) * s]);
            assert!(distance(*x, expect) < 1e-6);
        }
    }
}

#[test]
fn residuals_below_tolerance_on_oracle_problems() {
    let cfg = PlannerConfig::default();
    for seed in 0..20 {
        let cat = if seed % 2 == 0 { Category::Closet } else { Category::Drawer };
        let model = sample_scene(seed, cat);
        let traj = oracle_trajectory(&model, 0.0, 1.0, 10).unwrap();
        for task in [Task::Open, Task::Close, Task::Place] {
            let p = build_problem(&traj, task, &cfg).unwrap();
            let sol = solve(&p, &cfg).unwrap();
            assert!(sol.converged, "seed {seed} {task}");
            assert!(sol.max_residual() < cfg.eps_c, "seed {seed} {task}: {}", sol.max_residual());
            assert_eq!(sol.positions.len(), p.horizon + 1);
            assert!(sol.residuals.iter().all(|r| r.is_finite()));
        }
    }
}

#[test]
fn translation_equivariance() {
    let cfg = PlannerConfig::default();
    let model = sample_scene(9, Category::Closet);
    let traj = oracle_trajectory(&model, 0.0, 1.0, 10).unwrap();
    let p = build_problem(&traj, Task::Open, &cfg).unwrap();
    let base = solve(&p, &cfg).unwrap();
    for d in [[0.3, -0.2, 0.1], [-1.0, 0.5, 0.25]] {
        let moved = TrajectoryProblem {
            start: add(p.start, d),
            constraints: p.constraints.iter().map(|&(s, x)| (s, add(x, d))).collect(),
            bounds: p.bounds.translated(d),
            ..p.clone()
        };
        let sol = solve(&moved, &cfg).unwrap();
        for (a, b) in base.positions.iter().zip(&sol.positions) {
            assert!(distance(add(*a, d), *b) < cfg.eps_c);
        }
    }
}

#[test]
fn target_outside_workspace_is_infeasible() {
    let p = TrajectoryProblem {
        task: Task::Open,
        horizon: 5,
        start: [0.0; 3],
        constraints: vec![(5, [10.0, 0.0, 0.0])],
        bounds: bounds(),
        interaction: vec![],
    };
    assert!(matches!(solve(&p, &PlannerConfig::default()), Err(Error::Infeasible(_))));
}

#[test]
fn bounds_hold_on_approach() {
    // The straight approach would dip below z = -0.5; the bound must push it back.
    let cfg = PlannerConfig {
        workspace: Bounds {
            min: [-3.0, -3.0, -0.5],
            max: [3.0, 3.0, 3.0],
        },
        ..PlannerConfig::default()
    };
    let p = TrajectoryProblem {
        task: Task::Open,
        horizon: 10,
        start: [0.0, 0.0, 0.0],
        constraints: vec![(5, [0.0, 0.0, -0.5]), (6, [0.0, 0.0, -0.2])],
        bounds: cfg.workspace,
        interaction: vec![],
    };
    let sol = solve(&p, &cfg).unwrap();
    assert!(sol.converged);
    assert!(sol.positions.iter().all(|x| x[2] >= -0.5 - cfg.eps_c));
}

#[test]
fn oracle_plan_validates() {
    let cfg = PlannerConfig::default();
    for seed in 0..6 {
        let cat = if seed % 2 == 0 { Category::Closet } else { Category::Drawer };
        let model = sample_scene(seed, cat);
        let traj = oracle_trajectory(&model, 0.0, 1.0, 10).unwrap();
        for task in [Task::Open, Task::Close] {
            let p = build_problem(&traj, task, &cfg).unwrap();
            let sol = solve(&p, &cfg).unwrap();
            let report = validate(&p, &sol, &model, &cfg).unwrap();
            assert!(report.grasp_error < cfg.eps_c);
            assert!(report.max_path_deviation < cfg.eps_c);
            assert!(report.pass, "{}", report.summary());
        }
    }
}

#[test]
fn wrong_hinge_fails_validation() {
    let cfg = PlannerConfig::default();
    for seed in 0..5 {
        let model = sample_scene(seed, Category::Closet);
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
        let report = validate(&p, &sol, &model, &cfg).unwrap();
        assert!(report.max_path_deviation > 0.05, "{}", report.summary());
        assert!(!report.pass);
    }
}

#[test]
fn plan_export_round_trip() {
    let cfg = PlannerConfig::default();
    let model = sample_scene(1, Category::Drawer);
    let traj = oracle_trajectory(&model, 0.2, 0.9, 10).unwrap();
    let p = build_problem(&traj, Task::Open, &cfg).unwrap();
    let sol = solve(&p, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    let export = PlanExport::new(&p, &sol);
    export.save(&path).unwrap();
    let back: PlanExport = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, export);
}
