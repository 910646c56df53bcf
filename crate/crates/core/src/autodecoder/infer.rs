//! Latent inference for new observations with every network weight frozen.

use std::collections::BTreeMap;
use std::sync::Arc;

use gradcore::{AdamConfig, AdamState, Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodecoder::checkpoint::Checkpoint;
use crate::autodecoder::loss::{build_loss, Lambdas, LossBreakdown, LossParts, LossTarget};
use crate::autodecoder::TrainView;
use crate::error::{Error, Result};
use crate::exec;
use crate::neuralfield::{LatentCode, SharedWeights};
use crate::raymarch::{pixel_ray, RayBatch};

/// Largest ray batch per graph.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub iterations: u64,
    pub lr: f64,
    /// Rays sampled per view and iteration; 0 uses every pixel.
    pub rays_per_view: usize,
    pub lambda_latent: f64,
    pub lambda_depth: f64,
    /// Articulation the code starts from when `init_search` is off.
    pub init_q: f64,
    /// Start from the best (trained object code, grid articulation) pair under a
    /// sampled objective instead of the mean code at `init_q`.
    pub init_search: bool,
    pub init_q_grid: Vec<f64>,
    /// Rays per view for the initialization search.
    pub init_rays_per_view: usize,
    /// A full-frame loss above this after optimization raises the warning flag.
    pub warn_loss: f64,
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            lr: 1e-2,
            rays_per_view: 256,
            lambda_latent: 1e-3,
            lambda_depth: 0.1,
            init_q: 0.5,
            init_search: true,
            init_q_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            init_rays_per_view: 64,
            warn_loss: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResult {
    pub code: LatentCode,
    pub q: f64,
    /// Full-frame objective at the initial code.
    pub init_loss: LossBreakdown,
    /// Full-frame objective at the returned code.
    pub final_loss: LossBreakdown,
    pub iterations: u64,
    /// Set when the final loss stays above the configured threshold.
    pub warning: Option<String>,
    /// Sampled objective per iteration.
    pub history: Vec<f64>,
}

struct Chunk {
    rays: RayBatch,
    rgb: Arc<Tensor>,
    weight: f64,
}

fn chunks_for(views: &[TrainView], pixels: &[Vec<(usize, usize)>], radius: f64) -> Result<Vec<Chunk>> {
    let nv = views.len() as f64;
    let mut out = Vec::new();
    for (view, px) in views.iter().zip(pixels) {
        let w = view.camera.width;
        for block in px.chunks(CHUNK) {
            let rays = block
                .iter()
                .map(|&(u, v)| pixel_ray(&view.camera, u, v, radius))
                .collect::<Result<Vec<_>>>()?;
            let rgb: Vec<f64> = block
                .iter()
                .flat_map(|&(u, v)| {
                    let p = v * w + u;
                    view.rgb[3 * p..3 * p + 3].iter().copied()
                })
                .collect();
            out.push(Chunk {
                rays: RayBatch::new(&rays, block.to_vec())?,
                rgb: Arc::new(Tensor::new(vec![block.len(), 3], rgb)?),
                weight: block.len() as f64 / px.len() as f64 / nv,
            });
        }
    }
    Ok(out)
}

struct Eval {
    loss: LossBreakdown,
    grads: BTreeMap<String, Tensor>,
}

/// Objective and its gradient wrt `z_art` and `z_obj`.
fn evaluate(shared: &SharedWeights, code: &LatentCode, chunks: &[Chunk], lambdas: &Lambdas) -> Result<Eval> {
    let job = |target: LossTarget, weight: f64| -> Result<(LossParts, BTreeMap<String, Tensor>)> {
        let mut g = Graph::new();
        let z_art = g.input("z_art", code.art_tensor(), true)?;
        let z_obj = g.input("z_obj", code.obj_tensor(), true)?;
        let lv = build_loss(&mut g, shared, false, z_art, z_obj, &target, lambdas)?;
        let grads = g.backward(lv.total, Some(Tensor::scalar(weight)))?;
        Ok((lv.parts(&g), grads.named()))
    };
    let mut results = exec::try_map_indexed(chunks, |_, c| {
        job(
            LossTarget {
                rays: Some(c.rays.clone()),
                rgb: Some(c.rgb.clone()),
                seg: None,
                keypoints: None,
                latent_prior: false,
            },
            c.weight,
        )
    })?;
    results.push(job(
        LossTarget {
            rays: None,
            rgb: None,
            seg: None,
            keypoints: None,
            latent_prior: true,
        },
        1.0,
    )?);
    let weights = chunks.iter().map(|c| c.weight).chain([1.0]);
    let mut parts = LossParts::default();
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    for (w, (p, gr)) in weights.zip(results) {
        parts.add_scaled(&p, w);
        for (k, t) in gr {
            match grads.get_mut(&k) {
                Some(acc) => acc.add_assign(&t)?,
                None => {
                    grads.insert(k, t);
                }
            }
        }
    }
    Ok(Eval {
        loss: LossBreakdown::compose(parts, *lambdas),
        grads,
    })
}

/// Best starting code over trained object codes and the articulation grid.
fn search_init(
    cp: &Checkpoint,
    shared: &SharedWeights,
    views: &[TrainView],
    config: &InferConfig,
    lambdas: &Lambdas,
    rng: &mut ChaCha8Rng,
) -> Result<LatentCode> {
    let pixels: Vec<Vec<(usize, usize)>> = views.iter().map(|v| v.sample_pixels(rng, config.init_rays_per_view)).collect();
    let chunks = chunks_for(views, &pixels, shared.arch.scene_radius)?;
    let grid = if config.init_q_grid.is_empty() { vec![config.init_q] } else { config.init_q_grid.clone() };
    let mut candidates = Vec::new();
    for z in &cp.codes {
        for &q in &grid {
            candidates.push(LatentCode::from_q(q, z.clone())?);
        }
    }
    let losses = candidates
        .iter()
        .map(|c| Ok(evaluate(shared, c, &chunks, lambdas)?.loss.total))
        .collect::<Result<Vec<f64>>>()?;
    // Ties keep the earliest candidate, so the choice is deterministic.
    let best = losses
        .iter()
        .enumerate()
        .fold(0, |b, (i, l)| if *l < losses[b] { i } else { b });
    Ok(candidates.swap_remove(best))
}

/// Fits a code to `views` by Adam on the image objective plus the latent prior.
/// Starts from the search result, or from the mean trained object code at
/// `config.init_q` when the search is disabled.
pub fn infer_latent(cp: &Checkpoint, views: &[TrainView], config: &InferConfig) -> Result<InferResult> {
    if views.is_empty() {
        return Err(Error::InvalidArgument("latent inference needs at least one view".into()));
    }
    for v in views {
        v.camera.validate()?;
        if v.rgb.len() != 3 * v.pixel_count() {
            return Err(Error::Dimension("view image does not match its camera size".into()));
        }
    }
    let shared = cp.shared();
    let radius = shared.arch.scene_radius;
    let lambdas = Lambdas::inference(config.lambda_latent, config.lambda_depth);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut code = if config.init_search && !cp.codes.is_empty() {
        search_init(cp, &shared, views, config, &lambdas, &mut rng)?
    } else {
        LatentCode::from_q(config.init_q, cp.mean_code())?
    };

    let all_pixels: Vec<Vec<(usize, usize)>> = views.iter().map(|v| v.sample_pixels(&mut rng, 0)).collect();
    let full = chunks_for(views, &all_pixels, radius)?;
    let init_loss = evaluate(&shared, &code, &full, &lambdas)?.loss;

    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let mut params = BTreeMap::from([
        ("z_art".to_string(), code.art_tensor()),
        ("z_obj".to_string(), code.obj_tensor()),
    ]);
    let mut history = Vec::with_capacity(config.iterations as usize);
    for _ in 0..config.iterations {
        let pixels: Vec<Vec<(usize, usize)>> = views
            .iter()
            .map(|v| v.sample_pixels(&mut rng, config.rays_per_view))
            .collect();
        let chunks = chunks_for(views, &pixels, radius)?;
        let eval = evaluate(&shared, &code, &chunks, &lambdas)?;
        history.push(eval.loss.total);
        adam.step(&mut params, &eval.grads)?;
        let za = params["z_art"].data();
        code = LatentCode::new([za[0], za[1]], params["z_obj"].data().to_vec());
    }

    let final_loss = if config.iterations == 0 {
        init_loss
    } else {
        evaluate(&shared, &code, &full, &lambdas)?.loss
    };
    let warning = (final_loss.total > config.warn_loss).then(|| {
        format!(
            "objective {:.5} is above the {:.5} threshold after {} iterations",
            final_loss.total, config.warn_loss, config.iterations
        )
    });
    Ok(InferResult {
        q: code.q(),
        code,
        init_loss,
        final_loss,
        iterations: config.iterations,
        warning,
        history,
    })
}
