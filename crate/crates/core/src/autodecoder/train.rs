//! Joint optimization of object codes and all network weights.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use gradcore::{AdamConfig, AdamState, GradError, Graph, Tensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodecoder::checkpoint::{code_name, save_checkpoint, Checkpoint, RngState};
use crate::autodecoder::loss::{build_loss, Lambdas, LossBreakdown, LossParts, LossTarget};
use crate::autodecoder::TrainingSet;
use crate::error::{Error, Result};
use crate::exec;
use crate::neuralfield::{articulation_to_code, ArchConfig, ModelWeights, SharedWeights};
use crate::raymarch::{pixel_ray, RayBatch};
use crate::worldgen::scene::keypoints_analytic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_instances: usize,
    pub views_per_instance: usize,
    /// Rays sampled per view; 0 renders every pixel.
    pub rays_per_view: usize,
    /// Extra instances per step that only supervise the keypoint head. With a
    /// non-zero value `L_KP` averages over the rendered and the extra instances.
    pub keypoint_batch: usize,
    /// Supervise the extra keypoint instances at a uniformly drawn articulation
    /// of their object, labeled from the object's oracle model, instead of the
    /// rendered one.
    pub keypoint_random_q: bool,
    /// Keypoint-only optimizer steps per iteration, each on `keypoint_batch`
    /// instances and updating only the keypoint head and object codes. When
    /// non-zero the rendering step carries no keypoint term.
    pub keypoint_steps: usize,
    pub lr_weights: f64,
    pub lr_codes: f64,
    pub lambdas: Lambdas,
    /// Std of the gaussian used to initialize object codes.
    pub code_init_std: f64,
    pub seed: u64,
    pub log_every: u64,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_instances: 4,
            views_per_instance: 2,
            rays_per_view: 512,
            keypoint_batch: 0,
            keypoint_random_q: false,
            keypoint_steps: 0,
            lr_weights: 4e-4,
            lr_codes: 1e-3,
            lambdas: Lambdas::default(),
            code_init_std: 1e-2,
            seed: 0,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_instances == 0 || self.views_per_instance == 0 {
            return Err(Error::InvalidArgument("train batch sizes must be positive".into()));
        }
        let l = &self.lambdas;
        if [self.lr_weights, self.lr_codes, l.seg, l.kp, l.latent, l.depth, self.code_init_std]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidArgument(
                "learning rates, lambdas and code_init_std must be finite and non-negative".into(),
            ));
        }
        if self.keypoint_steps > 0 && self.keypoint_batch == 0 {
            return Err(Error::InvalidArgument("keypoint_steps needs a positive keypoint_batch".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    pub loss: LossBreakdown,
    pub lr_weights: f64,
    pub lr_codes: f64,
}

pub const LOG_HEADER: &str =
    "iteration,total,l_img,l_latent,l_depth,l_seg,l_kp,lambda_seg,lambda_kp,lambda_latent,lambda_depth,lr_weights,lr_codes";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let l = &r.loss;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            l.total,
            l.l_img,
            l.l_latent,
            l.l_depth,
            l.l_seg,
            l.l_kp,
            l.lambdas.seg,
            l.lambdas.kp,
            l.lambdas.latent,
            l.lambdas.depth,
            r.lr_weights,
            r.lr_codes
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub iteration: u64,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Final checkpoint, or the last good one if training diverged.
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    pub diverged: Option<Divergence>,
}

/// One loss graph of a training step.
struct Job {
    instance: usize,
    /// `(view, pixels)` pairs; empty for keypoint-only jobs.
    views: Vec<(usize, Vec<(usize, usize)>)>,
    keypoints: bool,
    /// Articulation replacing the instance's own (keypoint-only jobs).
    articulation: Option<f64>,
    lambdas: Lambdas,
    /// Gradient scale (the job's weight in the batch mean).
    scale: f64,
}

struct JobResult {
    parts: LossParts,
    grads: BTreeMap<String, Tensor>,
}

fn run_job(set: &TrainingSet, shared: &SharedWeights, codes: &BTreeMap<String, Arc<Tensor>>, job: &Job) -> Result<JobResult> {
    let inst = &set.instances[job.instance];
    let name = code_name(inst.object);
    let mut g = Graph::new();
    let z_obj = g.param(&name, codes[&name].clone())?;
    let q = job.articulation.unwrap_or(inst.q);
    let z_art = g.constant(Tensor::row(&articulation_to_code(q)?))?;

    let mut target = LossTarget {
        rays: None,
        rgb: None,
        seg: None,
        keypoints: None,
        latent_prior: !job.views.is_empty(),
    };
    if !job.views.is_empty() {
        let mut rays = Vec::new();
        let mut pixels = Vec::new();
        let mut rgb = Vec::new();
        let mut seg = Vec::new();
        for (vi, px) in &job.views {
            let view = &inst.views[*vi];
            let w = view.camera.width;
            for &(u, v) in px {
                rays.push(pixel_ray(&view.camera, u, v, shared.arch.scene_radius)?);
                pixels.push((u, v));
                let p = v * w + u;
                rgb.extend_from_slice(&view.rgb[3 * p..3 * p + 3]);
                if let Some(&s) = view.seg.get(p) {
                    seg.push(s);
                }
            }
        }
        let n = pixels.len();
        target.rays = Some(RayBatch::new(&rays, pixels)?);
        target.rgb = Some(Arc::new(Tensor::new(vec![n, 3], rgb)?));
        if seg.len() == n {
            target.seg = Some(Arc::new(seg));
        }
    }
    if job.keypoints {
        let kp = match job.articulation {
            Some(q) => keypoints_analytic(&set.objects[inst.object], q)?,
            None => inst.keypoints.clone(),
        };
        target.keypoints = Some(Arc::new(Tensor::row(&kp.flat())));
    }
    let lv = build_loss(&mut g, shared, true, z_art, z_obj, &target, &job.lambdas)?;
    let grads = g.backward(lv.total, Some(Tensor::scalar(job.scale)))?;
    Ok(JobResult {
        parts: lv.parts(&g),
        grads: grads.named(),
    })
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Grad(GradError::NonFinite { .. } | GradError::NonFiniteGradient(_)))
}

fn sample_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if k <= n {
        sample(rng, n, k).into_vec()
    } else {
        (0..k).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Keypoint-only jobs on `k` sampled instances, optionally at random articulations.
fn keypoint_jobs(set: &TrainingSet, cfg: &TrainConfig, rng: &mut ChaCha8Rng, k: usize, scale: f64) -> Vec<(usize, Option<f64>, f64)> {
    let picked = sample_indices(rng, set.instances.len(), k);
    picked
        .into_iter()
        .map(|i| (i, cfg.keypoint_random_q.then(|| rng.random_range(0.0..=1.0)), scale))
        .collect()
}

struct Reduced {
    parts: LossParts,
    weights: BTreeMap<String, Tensor>,
    codes: BTreeMap<String, Tensor>,
}

/// Runs `jobs` and sums their scaled losses and gradients in job order.
fn run_jobs(set: &TrainingSet, weights: &ModelWeights, codes: &BTreeMap<String, Tensor>, jobs: &[Job]) -> Result<Reduced> {
    let shared = weights.shared();
    let code_arcs: BTreeMap<String, Arc<Tensor>> = codes.iter().map(|(k, v)| (k.clone(), Arc::new(v.clone()))).collect();
    let results = exec::try_map_indexed(jobs, |_, job| run_job(set, &shared, &code_arcs, job))?;
    let mut out = Reduced {
        parts: LossParts::default(),
        weights: BTreeMap::new(),
        codes: BTreeMap::new(),
    };
    for (job, r) in jobs.iter().zip(results) {
        out.parts.add_scaled(&r.parts, job.scale);
        for (name, gt) in r.grads {
            let target = if name.starts_with("code.") { &mut out.codes } else { &mut out.weights };
            match target.get_mut(&name) {
                Some(acc) => acc.add_assign(&gt)?,
                None => {
                    target.insert(name, gt);
                }
            }
        }
    }
    Ok(out)
}

fn non_finite(r: &Reduced) -> Option<&String> {
    r.weights.iter().chain(&r.codes).find(|(_, t)| !t.is_finite()).map(|(n, _)| n)
}

/// Trains codes and weights on `set`. With `out_dir`, writes `checkpoint.bin`
/// (periodically and at the end) and `train_log.csv`.
pub fn train(set: &TrainingSet, arch: &ArchConfig, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutput> {
    set.validate()?;
    arch.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = ModelWeights::init(arch, rng.random())?;
    let normal = Normal::new(0.0, cfg.code_init_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut codes: BTreeMap<String, Tensor> = (0..set.n_obj)
        .map(|o| {
            let z: Vec<f64> = (0..arch.k_obj).map(|_| normal.sample(&mut rng)).collect();
            (code_name(o), Tensor::row(&z))
        })
        .collect();
    let mut adam_w = AdamState::new(AdamConfig::with_lr(cfg.lr_weights));
    let mut adam_c = AdamState::new(AdamConfig::with_lr(cfg.lr_codes));
    let mut log = Vec::new();
    let mut diverged = None;
    let mut iteration = 0u64;

    let snapshot = |weights: &ModelWeights, codes: &BTreeMap<String, Tensor>, it: u64, rng: &ChaCha8Rng| Checkpoint {
        weights: weights.clone(),
        codes: codes.values().map(|t| t.data().to_vec()).collect(),
        category: set.category,
        train: cfg.clone(),
        iteration: it,
        rng: RngState::capture(rng),
    };
    let write_outputs = |cp: &Checkpoint, log: &[LogRow]| -> Result<()> {
        if let Some(dir) = out_dir {
            save_checkpoint(cp, &dir.join("checkpoint.bin"))?;
            let p = dir.join("train_log.csv");
            fs::write(&p, log_csv(log)).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    };

    let b = cfg.batch_instances;
    let split_kp = cfg.keypoint_batch > 0;
    let kp_lambdas = Lambdas { seg: 0.0, latent: 0.0, depth: 0.0, ..cfg.lambdas };
    let kp_job = |(instance, articulation, scale): (usize, Option<f64>, f64)| Job {
        instance,
        views: Vec::new(),
        keypoints: true,
        articulation,
        lambdas: kp_lambdas,
        scale,
    };
    let mut adam_kw = AdamState::new(AdamConfig::with_lr(cfg.lr_weights));
    let mut adam_kc = AdamState::new(AdamConfig::with_lr(cfg.lr_codes));
    'outer: while iteration < cfg.iterations {
        // All sampling happens here, on one RNG, before any parallel work.
        let chosen = sample_indices(&mut rng, set.instances.len(), b);
        let mut jobs = Vec::new();
        for &i in &chosen {
            let inst = &set.instances[i];
            let vs = sample_indices(&mut rng, inst.views.len(), cfg.views_per_instance.min(inst.views.len()));
            let mut views = Vec::new();
            for v in vs {
                views.push((v, inst.views[v].sample_pixels(&mut rng, cfg.rays_per_view)));
            }
            let mut lambdas = cfg.lambdas;
            if split_kp {
                lambdas.kp = 0.0;
            }
            jobs.push(Job {
                instance: i,
                views,
                keypoints: !split_kp,
                articulation: None,
                lambdas,
                scale: 1.0 / b as f64,
            });
        }
        if split_kp && cfg.keypoint_steps == 0 {
            let n = (chosen.len() + cfg.keypoint_batch) as f64;
            let extra = keypoint_jobs(set, cfg, &mut rng, cfg.keypoint_batch, 1.0 / n);
            jobs.extend(chosen.iter().map(|&i| (i, None, 1.0 / n)).chain(extra).map(kp_job));
        }

        let step = match run_jobs(set, &weights, &codes, &jobs) {
            Ok(r) => r,
            Err(e) if is_divergence(&e) => {
                diverged = Some(Divergence {
                    iteration,
                    detail: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        let mut parts = step.parts;
        // Validate both gradient sets before touching either parameter group.
        if let Some(name) = non_finite(&step) {
            diverged = Some(Divergence {
                iteration,
                detail: format!("non-finite gradient for {name}"),
            });
            break;
        }
        let loss = LossBreakdown::compose(parts, cfg.lambdas);
        if !loss.total.is_finite() {
            diverged = Some(Divergence {
                iteration,
                detail: format!("total loss is {}", loss.total),
            });
            break;
        }
        adam_w.step(&mut weights.tensors, &step.weights)?;
        adam_c.step(&mut codes, &step.codes)?;

        if cfg.keypoint_steps > 0 {
            parts.l_kp = 0.0;
            for _ in 0..cfg.keypoint_steps {
                let kb = cfg.keypoint_batch;
                let jobs: Vec<Job> = keypoint_jobs(set, cfg, &mut rng, kb, 1.0 / kb as f64).into_iter().map(kp_job).collect();
                let r = run_jobs(set, &weights, &codes, &jobs).and_then(|r| match non_finite(&r) {
                    Some(name) => Err(Error::Grad(GradError::NonFiniteGradient(name.clone()))),
                    None => Ok(r),
                });
                let r = match r {
                    Ok(r) => r,
                    Err(e) if is_divergence(&e) => {
                        diverged = Some(Divergence {
                            iteration,
                            detail: e.to_string(),
                        });
                        break 'outer;
                    }
                    Err(e) => return Err(e),
                };
                parts.l_kp += r.parts.l_kp / cfg.keypoint_steps as f64;
                adam_kw.step(&mut weights.tensors, &r.weights)?;
                adam_kc.step(&mut codes, &r.codes)?;
            }
        }
        let loss = LossBreakdown::compose(parts, cfg.lambdas);
        iteration += 1;
        log.push(LogRow {
            iteration,
            loss,
            lr_weights: cfg.lr_weights,
            lr_codes: cfg.lr_codes,
        });
        if cfg.log_every > 0 && iteration % cfg.log_every == 0 {
            log::info!(
                "iter {iteration}: total {:.5} img {:.5} seg {:.4} kp {:.5} depth {:.5} latent {:.4}",
                loss.total,
                loss.l_img,
                loss.l_seg,
                loss.l_kp,
                loss.l_depth,
                loss.l_latent
            );
        }
        if cfg.checkpoint_every > 0 && iteration % cfg.checkpoint_every == 0 && iteration < cfg.iterations {
            write_outputs(&snapshot(&weights, &codes, iteration, &rng), &log)?;
        }
    }

    let checkpoint = snapshot(&weights, &codes, iteration, &rng);
    write_outputs(&checkpoint, &log)?;
    Ok(TrainOutput {
        checkpoint,
        log,
        diverged,
    })
}
