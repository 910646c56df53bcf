//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 4 to 8 train three desk-scale models through the same command
//! functions the binary uses; expect well over an hour on one core. Set
//! `ARTFIELD_ACCEPTANCE_ONLY=1,2,3` to run a subset and
//! `ARTFIELD_ACCEPTANCE_DIR=<path>` to keep every intermediate run directory.

#[path = "../../core/tests/support/algebra.rs"]
mod algebra;
#[path = "../../core/tests/support/geometry.rs"]
mod geometry;
#[path = "../../core/tests/support/gradmaps.rs"]
mod gradmaps;
#[path = "support/planning.rs"]
mod planning;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use artfield::artsim::{oracle_trajectory, KeypointTrajectory};
use artfield::autodecoder::{InferConfig, TrainConfig};
use artfield::camera::distance;
use artfield::metrics::{MetricsReport, Summary};
use artfield::neuralfield::ArchConfig;
use artfield::planner::{PlannerConfig, Task};
use artfield::worldgen::dataset::{DataConfig, DatasetManifest};
use artfield::worldgen::scene::Category;
use artfield_cli::commands::{self, PlanSummary, SimulationFile};
use artfield_cli::config::{EvalRun, InferRun, PlanRun, SimulateRun, Source, TrainRun};
use gradmaps::LearnedMap;
use sha2::{Digest, Sha256};

const GRAD_SEEDS: u64 = 50;
const HELD_OUT_SEED: u64 = 1000;
const N_VIEWS: [usize; 4] = [1, 2, 4, 10];

struct Verdict {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u8, name: &'static str, pass: bool, detail: String) -> Verdict {
    let v = Verdict { id, name, pass, detail };
    println!("{}", line(&v));
    v
}

fn line(v: &Verdict) -> String {
    format!("[{}] {} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.name, v.detail)
}

fn note(msg: impl AsRef<str>) {
    println!("    {}", msg.as_ref());
}

fn stage(root: &Path, name: &str) -> PathBuf {
    let p = root.join(name);
    fs::create_dir_all(&p).unwrap();
    p
}

fn desk_arch() -> ArchConfig {
    ArchConfig {
        field_hidden: 32,
        feature_dim: 16,
        hyper_hidden: 64,
        kp_layers: 3,
        ..ArchConfig::default()
    }
}

fn desk_train(iterations: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        rays_per_view: 128,
        keypoint_batch: 16,
        keypoint_random_q: true,
        keypoint_steps: 5,
        log_every: 0,
        ..TrainConfig::default()
    }
}

fn desk_infer() -> InferConfig {
    InferConfig {
        iterations: 100,
        rays_per_view: 128,
        ..InferConfig::default()
    }
}

fn held_out(category: Category) -> DataConfig {
    DataConfig {
        category,
        n_obj: 10,
        n_art: 1,
        n_view: 10,
        height: 64,
        width: 64,
        seed: HELD_OUT_SEED,
        ..DataConfig::default()
    }
}

fn c1_gradients() -> Verdict {
    let start = Instant::now();
    let mut pass = true;
    let mut worst = Vec::new();
    for map in LearnedMap::ALL {
        let err = (0..GRAD_SEEDS).map(|s| gradmaps::max_error(map, s)).fold(0.0, f64::max);
        pass &= err < map.tolerance();
        worst.push(format!("{map:?} {err:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    verdict(
        1,
        "gradient correctness",
        pass,
        format!("{GRAD_SEEDS} seeds per map, worst relative error {}; {secs:.1} s", worst.join(", ")),
    )
}

fn c2_algebra() -> Verdict {
    let r = algebra::run();
    let pass = r.mirror == 0.0 && r.scale < 1e-12 && r.round_trip < 1e-12 && r.endpoints < 1e-12;
    verdict(
        2,
        "articulation-code algebra",
        pass,
        format!(
            "mirror {:.1e}, scale invariance {:.1e}, round trip {:.1e} over 101 q, endpoints {:.1e}",
            r.mirror, r.scale, r.round_trip, r.endpoints
        ),
    )
}

fn c3_geometry() -> Verdict {
    let start = Instant::now();
    let r = geometry::run();
    let secs = start.elapsed().as_secs_f64();
    let pass = r.fixed_keypoints == 0.0
        && r.hinge_distance < 1e-12
        && r.prismatic_linearity < 1e-12
        && r.projection < 1e-6
        && secs < 60.0;
    verdict(
        3,
        "oracle geometry",
        pass,
        format!(
            "fixed keypoints {:.1e}, hinge distance spread {:.1e}, prismatic linearity {:.1e}, projection {:.1e} m, surface {:.1e} m; {secs:.1} s",
            r.fixed_keypoints, r.hinge_distance, r.prismatic_linearity, r.projection, r.surface
        ),
    )
}

fn c7_planner() -> Verdict {
    let r = planning::run();
    let eps = PlannerConfig::default().eps_c;
    let pass = r.straight_line < 1e-6
        && r.accepted > 0
        && r.max_residual < 1e-4
        && r.equivariance < eps
        && r.corrupted_failed == r.corrupted_total;
    verdict(
        7,
        "planner suite",
        pass,
        format!(
            "straight line {:.1e}, max residual {:.1e} m over {} accepted plans, equivariance {:.1e}, corrupted hinge rejected {}/{}",
            r.straight_line, r.max_residual, r.accepted, r.equivariance, r.corrupted_failed, r.corrupted_total
        ),
    )
}

fn hash_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "log.txt") {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(fs::read(&p).unwrap())));
            }
        }
    }
    out
}

fn cli_session(dir: &Path) -> Result<(), String> {
    let sets = |pairs: &[&str]| pairs.iter().flat_map(|p| ["--set", p]).map(String::from).collect::<Vec<_>>();
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("gen-data", sets(&["n_obj=2", "n_art=2", "n_view=2", "height=12", "width=12", "seed=4"])),
        (
            "train",
            sets(&[
                "data=gen-data/manifest.json",
                "arch.k_obj=4",
                "arch.field_hidden=8",
                "arch.feature_dim=8",
                "arch.hyper_hidden=12",
                "arch.n_march=5",
                "train.iterations=40",
                "train.rays_per_view=24",
                "train.keypoint_batch=2",
                "train.keypoint_random_q=true",
            ]),
        ),
        (
            "infer",
            sets(&["checkpoint=train/checkpoint.bin", "data=gen-data/manifest.json", "infer.iterations=6", "infer.rays_per_view=16"]),
        ),
        (
            "simulate",
            sets(&["checkpoint=train/checkpoint.bin", "latents=infer/latents.json", "frames=true", "frame_width=10", "frame_height=10"]),
        ),
        ("plan", sets(&["simulation=simulate", "data=gen-data/manifest.json"])),
        (
            "eval",
            sets(&["data=gen-data/manifest.json", "source=latents", "checkpoint=train/checkpoint.bin", "latents=infer/latents.json"]),
        ),
    ];
    for (cmd, args) in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_artfield"))
            .current_dir(dir)
            .env("RUST_LOG", "warn")
            .arg(cmd)
            .args(["--run-dir", cmd])
            .args(&args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{cmd} failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn c9_determinism() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if let Err(e) = cli_session(a.path()).and_then(|_| cli_session(b.path())) {
        return verdict(9, "determinism", false, e);
    }
    let ha = hash_tree(a.path());
    let hb = hash_tree(b.path());
    let differing: Vec<&String> = ha.keys().filter(|k| ha.get(*k) != hb.get(*k)).collect();
    let metrics_equal = fs::read(a.path().join("eval/metrics.json")).ok() == fs::read(b.path().join("eval/metrics.json")).ok();
    let pass = !ha.is_empty() && ha.len() == hb.len() && differing.is_empty() && metrics_equal;
    verdict(
        9,
        "determinism",
        pass,
        format!(
            "six commands run twice, {} output files compared byte for byte, {} differ",
            ha.len(),
            differing.len()
        ),
    )
}

/// A trained model with its data.
struct Trained {
    data: PathBuf,
    checkpoint: PathBuf,
    seconds: f64,
}

fn train_model(root: &Path, tag: &str, data: DataConfig, iterations: u64) -> Trained {
    let start = Instant::now();
    let d = stage(root, &format!("{tag}-data"));
    let manifest = commands::gen_data(&data, &d).unwrap();
    let t = stage(root, &format!("{tag}-train"));
    let run = TrainRun {
        data: manifest.clone(),
        arch: desk_arch(),
        train: desk_train(iterations),
    };
    commands::train_model(&run, &t).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    note(format!(
        "{tag}: {} objects x {} articulations x {} views, {iterations} iterations in {seconds:.0} s",
        data.n_obj, data.n_art, data.n_view
    ));
    Trained {
        data: manifest,
        checkpoint: t.join("checkpoint.bin"),
        seconds,
    }
}

fn c4_training(root: &Path) -> Verdict {
    let m = train_model(root, "c4", DataConfig::default(), 5000);
    let e = stage(root, "c4-eval");
    let report = commands::eval(
        &EvalRun {
            data: m.data.clone(),
            source: Source::Trained,
            checkpoint: m.checkpoint.clone(),
            ..EvalRun::default()
        },
        &e,
    )
    .unwrap();
    let mse = report.image_mse.map_or(f64::NAN, |s| s.mean);
    let seg = report.seg_accuracy.map_or(f64::NAN, |s| s.mean);
    let kp = report.keypoint_rmse_pct.mean;
    let pass = mse < 0.02 && seg > 0.85 && kp < 2.0 && m.seconds < 3600.0;
    verdict(
        4,
        "desk-scale training (closets)",
        pass,
        format!(
            "image MSE {mse:.4}, segmentation accuracy {seg:.3}, keypoint RMSE {kp:.2}% of diagonal (training set means); {:.0} s",
            m.seconds
        ),
    )
}

/// Inference on the held-out set with the first `n_view` views.
fn infer_held_out(root: &Path, tag: &str, m: &Trained, data: &Path, n_view: usize) -> (PathBuf, MetricsReport) {
    let i = stage(root, &format!("{tag}-infer-n{n_view}"));
    commands::infer(
        &InferRun {
            checkpoint: m.checkpoint.clone(),
            data: data.to_path_buf(),
            n_view,
            limit: 0,
            infer: desk_infer(),
        },
        &i,
    )
    .unwrap();
    let latents = i.join("latents.json");
    let e = stage(root, &format!("{tag}-eval-n{n_view}"));
    let report = commands::eval(
        &EvalRun {
            data: data.to_path_buf(),
            source: Source::Latents,
            checkpoint: m.checkpoint.clone(),
            latents: latents.clone(),
            render: false,
        },
        &e,
    )
    .unwrap();
    (latents, report)
}

fn simulate(root: &Path, name: &str, m: &Trained, latents: &Path, q_start: Option<f64>) -> PathBuf {
    let s = stage(root, name);
    commands::simulate(
        &SimulateRun {
            checkpoint: m.checkpoint.clone(),
            latents: latents.to_path_buf(),
            q_start,
            q_target: 1.0,
            steps: 10,
            ..SimulateRun::default()
        },
        &s,
    )
    .unwrap();
    s
}

fn plan_and_validate(root: &Path, tag: &str, m: &Trained, latents: &Path, data: &Path) -> PlanSummary {
    let s = simulate(root, &format!("{tag}-simulate"), m, latents, None);
    let p = stage(root, &format!("{tag}-plan"));
    commands::plan(
        &PlanRun {
            simulation: s,
            data: data.to_path_buf(),
            task: Task::Open,
            planner: PlannerConfig::default(),
        },
        &p,
    )
    .unwrap()
}

fn c5_inference(curve: &[(usize, MetricsReport)]) -> Verdict {
    for (n, r) in curve {
        note(format!(
            "N_view {n:>2}: median |q error| {:.4} ({:.2} deg), median keypoint RMSE {:.2}% of diagonal",
            r.q_error.median, r.q_error_deg.median, r.keypoint_rmse_pct.median
        ));
    }
    let (n, full) = curve.last().unwrap();
    let pass = full.q_error.median < 0.1 && full.keypoint_rmse_pct.median < 5.0;
    verdict(
        5,
        "held-out inference",
        pass,
        format!(
            "{} unseen closets at N_view {n}: median |q error| {:.4}, median keypoint RMSE {:.2}% of diagonal",
            full.count, full.q_error.median, full.keypoint_rmse_pct.median
        ),
    )
}

fn c6_simulation(root: &Path, m: &Trained, latents: &Path, data: &Path) -> Verdict {
    let s = simulate(root, "c6-simulate", m, latents, Some(0.0));
    let (manifest, _) = DatasetManifest::load(data).unwrap();
    let sim: SimulationFile = serde_json::from_str(&fs::read_to_string(s.join("simulation.json")).unwrap()).unwrap();
    let (mut arc, mut spread) = (Vec::new(), Vec::new());
    for rec in &sim.records {
        let model = &manifest.objects[rec.object];
        let diag = model.diagonal();
        let pred = KeypointTrajectory::load(&s.join(&rec.trajectory)).unwrap();
        let truth = oracle_trajectory(model, 0.0, 1.0, 10).unwrap();
        let se: f64 = pred
            .handles()
            .iter()
            .zip(truth.handles())
            .map(|(a, b)| distance(*a, b).powi(2))
            .sum::<f64>();
        arc.push(100.0 * (se / pred.steps.len() as f64).sqrt() / diag);
        let mut worst: f64 = 0.0;
        for k in [1, 2] {
            let pts: Vec<[f64; 3]> = pred.steps.iter().map(|s| s.keypoints.points[k]).collect();
            let n = pts.len() as f64;
            let mean = [0, 1, 2].map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / n);
            worst = pts.iter().map(|p| distance(*p, mean)).fold(worst, f64::max);
        }
        spread.push(100.0 * worst / diag);
    }
    let (a, h) = (Summary::of(&arc), Summary::of(&spread));
    let pass = a.median < 5.0 && h.median < 2.0;
    verdict(
        6,
        "forward-simulation fidelity",
        pass,
        format!(
            "handle RMSE vs analytic arc median {:.2}% (max {:.2}%), hinge spread median {:.2}% (max {:.2}%) of diagonal over {} held-out closets, T = 10",
            a.median,
            a.max,
            h.median,
            h.max,
            arc.len()
        ),
    )
}

fn describe_plans(tag: &str, s: &PlanSummary) {
    for r in &s.records {
        if let Some(v) = &r.validation {
            note(format!(
                "{tag} o{:04}: grasp {:.2}%, max deviation {:.2}% of diagonal, residual {:.1e} m: {}",
                r.object,
                100.0 * v.grasp_error / v.diagonal,
                100.0 * v.max_path_deviation / v.diagonal,
                v.max_residual,
                if v.pass { "pass" } else { "fail" }
            ));
        }
    }
}

fn selected() -> BTreeSet<u8> {
    match std::env::var("ARTFIELD_ACCEPTANCE_ONLY") {
        Ok(s) if !s.trim().is_empty() => s.split(',').filter_map(|t| t.trim().parse().ok()).collect(),
        _ => (1..=9).collect(),
    }
}

fn main() -> ExitCode {
    let only = selected();
    let keep = std::env::var_os("ARTFIELD_ACCEPTANCE_DIR").map(PathBuf::from);
    let tmp = tempfile::tempdir().unwrap();
    let root = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    fs::create_dir_all(&root).unwrap();
    println!("acceptance: criteria {only:?}, outputs under {}", root.display());
    let mut verdicts = Vec::new();

    if only.contains(&1) {
        verdicts.push(c1_gradients());
    }
    if only.contains(&2) {
        verdicts.push(c2_algebra());
    }
    if only.contains(&3) {
        verdicts.push(c3_geometry());
    }
    if only.contains(&7) {
        verdicts.push(c7_planner());
    }
    if only.contains(&9) {
        verdicts.push(c9_determinism());
    }
    if only.contains(&4) {
        verdicts.push(c4_training(&root));
    }

    let mut closets = None;
    if [5, 6, 8].iter().any(|c| only.contains(c)) {
        let m = train_model(&root, "closet", DataConfig { n_obj: 240, n_art: 2, ..DataConfig::default() }, 8000);
        let held = commands::gen_data(&held_out(Category::Closet), &stage(&root, "closet-held-out")).unwrap();
        let ns: Vec<usize> = if only.contains(&5) { N_VIEWS.to_vec() } else { vec![10] };
        let curve: Vec<(usize, PathBuf, MetricsReport)> = ns
            .iter()
            .map(|&n| {
                let (l, r) = infer_held_out(&root, "closet", &m, &held, n);
                (n, l, r)
            })
            .collect();
        let latents = curve.last().unwrap().1.clone();
        if only.contains(&5) {
            let c: Vec<(usize, MetricsReport)> = curve.into_iter().map(|(n, _, r)| (n, r)).collect();
            verdicts.push(c5_inference(&c));
        }
        if only.contains(&6) {
            verdicts.push(c6_simulation(&root, &m, &latents, &held));
        }
        if only.contains(&8) {
            closets = Some(plan_and_validate(&root, "closet", &m, &latents, &held));
        }
    }
    if let Some(closets) = closets {
        let m = train_model(&root, "drawer", DataConfig { category: Category::Drawer, n_obj: 240, n_art: 2, ..DataConfig::default() }, 8000);
        let held = commands::gen_data(&held_out(Category::Drawer), &stage(&root, "drawer-held-out")).unwrap();
        let (latents, report) = infer_held_out(&root, "drawer", &m, &held, 10);
        note(format!("drawers: {}", report.summary()));
        let drawers = plan_and_validate(&root, "drawer", &m, &latents, &held);
        describe_plans("closet", &closets);
        describe_plans("drawer", &drawers);
        let pass = closets.passed >= 8 && drawers.passed >= 8;
        verdicts.push(verdict(
            8,
            "end-to-end pipeline",
            pass,
            format!(
                "validation passes on {}/{} held-out closets and {}/{} held-out drawers",
                closets.passed, closets.validated, drawers.passed, drawers.validated
            ),
        ));
    }

    verdicts.sort_by_key(|v| v.id);
    println!("\nacceptance summary");
    for v in &verdicts {
        println!("{}", line(v));
    }
    if verdicts.iter().all(|v| v.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
