//! The six pipeline commands.
//!
//! Output files (all JSON unless noted), relative to the run directory:
//!
//! ```text
//! gen-data  manifest.json, images/*.ppm, segmentation/*.pgm, cameras/*.json, keypoints/*.json
//! train     checkpoint.bin (binary), train_log.csv, train_summary.json
//! infer     latents.json
//! simulate  simulation.json, trajectories/<stem>.json, frames/<stem>/{rgb,seg}_NNN.{ppm,pgm}
//! plan      plans.json, plans/<stem>.json, validation/<stem>.json, validation.txt
//! eval      metrics.json, metrics.csv
//! ```
//!
//! `<stem>` is `oOOOO_aAAA` for object `O`, articulation `A`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use artfield::artsim::{interpolate_codes, render_motion, simulate_keypoints, KeypointTrajectory};
use artfield::autodecoder::{infer_latent, load_checkpoint, train, Checkpoint, InferResult, LossBreakdown, TrainingSet};
use artfield::camera::Camera;
use artfield::exec;
use artfield::metrics::{InstanceMetrics, MetricsReport};
use artfield::neuralfield::{keypoint_predict, LatentCode};
use artfield::planner::{build_problem, solve, validate_observed, PlanExport, Task, ValidationReport};
use artfield::raymarch::render_view;
use artfield::worldgen::dataset::{generate_dataset, read_json, stem, DataConfig, DatasetManifest};
use artfield::worldgen::scene::Category;
use artfield::Error;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{EvalRun, InferRun, PlanRun, SimulateRun, Source, TrainRun};
use crate::rundir::write_json;
use crate::{CliError, CliResult};

fn resolve_relative(base_file: &Path, rel: &str) -> PathBuf {
    base_file.parent().map(|p| p.join(rel)).unwrap_or_else(|| PathBuf::from(rel))
}

fn check_category(cp: &Checkpoint, data: Category) -> CliResult<()> {
    if cp.category != data {
        return Err(CliError::Config(format!(
            "checkpoint was trained on {:?} objects but the data are {:?}",
            cp.category, data
        )));
    }
    Ok(())
}

pub fn gen_data(cfg: &DataConfig, run: &Path) -> CliResult<PathBuf> {
    let m = generate_dataset(cfg, run)?;
    info!(
        "wrote {} instances x {} views of {:?} objects at {}x{}",
        m.instances.len(),
        cfg.n_view,
        cfg.category,
        cfg.width,
        cfg.height
    );
    Ok(run.join("manifest.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: u64,
    pub checkpoint_hash: String,
    pub final_loss: Option<LossBreakdown>,
}

pub fn train_model(cfg: &TrainRun, run: &Path) -> CliResult<TrainSummary> {
    let set = TrainingSet::load(&cfg.data)?;
    info!(
        "training on {} instances of {} {:?} objects for {} iterations",
        set.instances.len(),
        set.n_obj,
        set.category,
        cfg.train.iterations
    );
    let out = train(&set, &cfg.arch, &cfg.train, Some(run))?;
    for row in out.log.iter().filter(|r| cfg.train.log_every > 0 && (r.iteration + 1) % cfg.train.log_every == 0) {
        let l = &row.loss;
        info!(
            "iter {:>6}  total {:.5}  img {:.5}  seg {:.4}  kp {:.5}  lat {:.4}",
            row.iteration + 1,
            l.total,
            l.l_img,
            l.l_seg,
            l.l_kp,
            l.l_latent
        );
    }
    let summary = TrainSummary {
        iterations: out.checkpoint.iteration,
        checkpoint_hash: out.checkpoint.content_hash(),
        final_loss: out.log.last().map(|r| r.loss.clone()),
    };
    write_json(&run.join("train_summary.json"), &summary)?;
    if let Some(d) = out.diverged {
        return Err(Error::Diverged {
            iteration: d.iteration,
            detail: d.detail,
        }
        .into());
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub object: usize,
    pub articulation: usize,
    pub q_true: f64,
    pub views_used: usize,
    pub result: InferResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentsFile {
    pub category: Category,
    pub checkpoint_hash: String,
    pub records: Vec<LatentRecord>,
}

pub fn infer(cfg: &InferRun, run: &Path) -> CliResult<LatentsFile> {
    let cp = load_checkpoint(&cfg.checkpoint)?;
    let set = TrainingSet::load(&cfg.data)?;
    check_category(&cp, set.category)?;
    let take = if cfg.limit == 0 { set.instances.len() } else { cfg.limit.min(set.instances.len()) };
    let instances = &set.instances[..take];
    let records = exec::try_map_indexed(instances, |_, inst| -> CliResult<LatentRecord> {
        let n = if cfg.n_view == 0 { inst.views.len() } else { cfg.n_view.min(inst.views.len()) };
        let result = infer_latent(&cp, &inst.views[..n], &cfg.infer)?;
        Ok(LatentRecord {
            object: inst.object,
            articulation: inst.articulation,
            q_true: inst.q,
            views_used: n,
            result,
        })
    })?;
    for r in &records {
        info!(
            "{}: q {:.4} -> {:.4} (true {:.4}), loss {:.5} -> {:.5}",
            stem(r.object, r.articulation),
            r.result.code.q(),
            r.result.q,
            r.q_true,
            r.result.init_loss.total,
            r.result.final_loss.total
        );
        if let Some(w) = &r.result.warning {
            warn!("{}: {w}", stem(r.object, r.articulation));
        }
    }
    let file = LatentsFile {
        category: set.category,
        checkpoint_hash: cp.content_hash(),
        records,
    };
    write_json(&run.join("latents.json"), &file)?;
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub object: usize,
    pub articulation: usize,
    pub q_start: f64,
    pub q_target: f64,
    /// Relative to `simulation.json`.
    pub trajectory: String,
    pub frames: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationFile {
    pub category: Category,
    pub records: Vec<SimRecord>,
}

pub fn simulate(cfg: &SimulateRun, run: &Path) -> CliResult<SimulationFile> {
    let cp = load_checkpoint(&cfg.checkpoint)?;
    let latents: LatentsFile = read_json(&cfg.latents)?;
    check_category(&cp, latents.category)?;
    if latents.checkpoint_hash != cp.content_hash() {
        warn!("latents were inferred with a different checkpoint");
    }
    let traj_dir = run.join("trajectories");
    fs::create_dir_all(&traj_dir).map_err(|e| Error::io(&traj_dir, e))?;
    let camera = if cfg.frames {
        Some(Camera::look_at(cfg.frame_eye, [0.0; 3], cfg.frame_fov_deg, cfg.frame_width, cfg.frame_height)?)
    } else {
        None
    };
    let records = exec::try_map_indexed(&latents.records, |_, rec| -> CliResult<SimRecord> {
        let z = match cfg.q_start {
            Some(q) => LatentCode::from_q(q, rec.result.code.z_obj.clone())?,
            None => rec.result.code.clone(),
        };
        let codes = interpolate_codes(&z, cfg.q_target, cfg.steps)?;
        let traj = simulate_keypoints(&cp, &codes)?;
        let name = stem(rec.object, rec.articulation);
        let rel = format!("trajectories/{name}.json");
        traj.save(&run.join(&rel))?;
        let frames = match &camera {
            Some(cam) => {
                let rel = format!("frames/{name}");
                render_motion(&cp, &codes, cam, Some(&run.join(&rel)))?;
                Some(rel)
            }
            None => None,
        };
        Ok(SimRecord {
            object: rec.object,
            articulation: rec.articulation,
            q_start: z.q(),
            q_target: cfg.q_target,
            trajectory: rel,
            frames,
        })
    })?;
    info!("simulated {} trajectories with T = {}", records.len(), cfg.steps);
    let file = SimulationFile {
        category: latents.category,
        records,
    };
    write_json(&run.join("simulation.json"), &file)?;
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub object: usize,
    pub articulation: usize,
    pub plan: String,
    pub converged: bool,
    pub max_residual: f64,
    pub objective: f64,
    pub validation: Option<ValidationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub task: Task,
    pub total: usize,
    pub validated: usize,
    pub passed: usize,
    pub records: Vec<PlanRecord>,
}

pub fn plan(cfg: &PlanRun, run: &Path) -> CliResult<PlanSummary> {
    let sim_path = if cfg.simulation.is_dir() {
        cfg.simulation.join("simulation.json")
    } else {
        cfg.simulation.clone()
    };
    let sim: SimulationFile = read_json(&sim_path)?;
    let manifest = if cfg.data.as_os_str().is_empty() {
        None
    } else {
        let (m, _) = DatasetManifest::load(&cfg.data)?;
        if m.config.category != sim.category {
            return Err(CliError::Config("simulation and data are of different categories".into()));
        }
        Some(m)
    };
    for sub in ["plans", "validation"] {
        let p = run.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let records = exec::try_map_indexed(&sim.records, |_, rec| -> CliResult<PlanRecord> {
        let traj = KeypointTrajectory::load(&resolve_relative(&sim_path, &rec.trajectory))?;
        let problem = build_problem(&traj, cfg.task, &cfg.planner)?;
        let sol = solve(&problem, &cfg.planner)?;
        let name = stem(rec.object, rec.articulation);
        let rel = format!("plans/{name}.json");
        PlanExport::new(&problem, &sol).save(&run.join(&rel))?;
        let validation = match &manifest {
            Some(m) => {
                let oracle = m.objects.get(rec.object).ok_or_else(|| {
                    CliError::Config(format!("object {} is not in the data manifest", rec.object))
                })?;
                // The grasp happens where the object actually is; closing starts from the far end.
                let actual = match cfg.task {
                    Task::Close => None,
                    _ => m.instance(rec.object, rec.articulation).map(|i| i.q),
                };
                let report = validate_observed(&problem, &sol, oracle, actual, &cfg.planner)?;
                write_json(&run.join(format!("validation/{name}.json")), &report)?;
                Some(report)
            }
            None => None,
        };
        Ok(PlanRecord {
            object: rec.object,
            articulation: rec.articulation,
            plan: rel,
            converged: sol.converged,
            max_residual: sol.max_residual(),
            objective: sol.objective,
            validation,
        })
    })?;
    let mut text = String::new();
    for r in &records {
        if !r.converged {
            warn!("{}: solver stopped before reaching tolerance", stem(r.object, r.articulation));
        }
        if let Some(v) = &r.validation {
            let line = format!("{}: {}", stem(r.object, r.articulation), v.summary());
            info!("{line}");
            text.push_str(&line);
            text.push('\n');
        }
    }
    let validated = records.iter().filter(|r| r.validation.is_some()).count();
    let passed = records.iter().filter(|r| r.validation.as_ref().is_some_and(|v| v.pass)).count();
    if validated > 0 {
        info!("{passed} of {validated} plans pass validation");
        let p = run.join("validation.txt");
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    let summary = PlanSummary {
        task: cfg.task,
        total: records.len(),
        validated,
        passed,
        records,
    };
    write_json(&run.join("plans.json"), &summary)?;
    Ok(summary)
}

/// Mean segmentation accuracy and RGB mean squared error over `views`.
fn render_scores(cp: &Checkpoint, code: &LatentCode, views: &[artfield::autodecoder::TrainView]) -> CliResult<(f64, f64)> {
    let shared = cp.shared();
    let (mut acc, mut mse) = (0.0, 0.0);
    for v in views {
        let out = render_view(&shared, code, &v.camera)?;
        let hits = out.seg.iter().zip(&v.seg).filter(|(a, b)| a == b).count();
        acc += hits as f64 / v.seg.len() as f64;
        mse += out.rgb.iter().zip(&v.rgb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / v.rgb.len() as f64;
    }
    let n = views.len() as f64;
    Ok((acc / n, mse / n))
}

pub fn eval(cfg: &EvalRun, run: &Path) -> CliResult<MetricsReport> {
    let set = TrainingSet::load(&cfg.data)?;
    let cp = match cfg.source {
        Source::Oracle => None,
        _ => {
            let cp = load_checkpoint(&cfg.checkpoint)?;
            check_category(&cp, set.category)?;
            Some(cp)
        }
    };
    let codes: BTreeMap<(usize, usize), LatentCode> = match cfg.source {
        Source::Latents => {
            let file: LatentsFile = read_json(&cfg.latents)?;
            file.records
                .into_iter()
                .map(|r| ((r.object, r.articulation), r.result.code))
                .collect()
        }
        _ => BTreeMap::new(),
    };
    let instances: Vec<_> = match cfg.source {
        Source::Latents => set
            .instances
            .iter()
            .filter(|i| codes.contains_key(&(i.object, i.articulation)))
            .collect(),
        _ => set.instances.iter().collect(),
    };
    let rows = exec::try_map_indexed(&instances, |_, inst| -> CliResult<InstanceMetrics> {
        let diagonal = set.objects[inst.object].diagonal();
        let (code, pred) = match (&cp, cfg.source) {
            (_, Source::Oracle) | (None, _) => (None, inst.keypoints.clone()),
            (Some(cp), source) => {
                let code = if source == Source::Trained {
                    cp.code(inst.object, inst.q)?
                } else {
                    codes[&(inst.object, inst.articulation)].clone()
                };
                let kp = keypoint_predict(&cp.shared(), &code, set.category)?;
                (Some(code), kp)
            }
        };
        let q_pred = code.as_ref().map_or(inst.q, LatentCode::q);
        let scores = match (&cp, &code) {
            (Some(cp), Some(code)) if cfg.render => Some(render_scores(cp, code, &inst.views)?),
            _ => None,
        };
        let m = InstanceMetrics::new(
            inst.object,
            inst.articulation,
            inst.q,
            q_pred,
            &inst.keypoints,
            &pred,
            diagonal,
            scores.map(|s| s.0),
        )?;
        Ok(match scores {
            Some((_, mse)) => m.with_image_mse(mse),
            None => m,
        })
    })?;
    let report = MetricsReport::from_instances(rows);
    report.write(run)?;
    info!("{}", report.summary());
    Ok(report)
}
