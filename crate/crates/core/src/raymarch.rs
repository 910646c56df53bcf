//! Differentiable rendering: camera rays, learned recurrent raymarching, and
//! RGB / segmentation decoding of the surface features.
//!
//! Each ray starts at `d_near` and takes `n_march` steps
//! `d_t = d_{t-1} + softplus(w·h_t + b)`, where `h_t` is the LSTM state after
//! reading the field feature at the current point. The surface feature is the
//! field evaluated at the final point.

use std::sync::Arc;

use gradcore::{lstm_step, Graph, LstmState, MlpVars, Tensor, Var};

use crate::camera::{add, norm, scale, Camera, Vec3};
use crate::error::{Error, Result};
use crate::exec;
use crate::neuralfield::{field_vars, hyper_map, ArchConfig, LatentCode, RenderNets, SharedWeights};

/// Closest the marcher may start to the camera.
pub const MIN_NEAR: f64 = 0.05;
/// Pixels per graph when rendering full frames.
pub const RENDER_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub d_near: f64,
    pub d_far: f64,
}

impl Ray {
    /// Ray bounded by the origin-centered sphere of radius `radius`.
    pub fn bounded(origin: Vec3, direction: Vec3, radius: f64) -> Self {
        let c = norm(origin);
        Self {
            origin,
            direction,
            d_near: (c - radius).max(MIN_NEAR),
            d_far: (c + radius).max(2.0 * MIN_NEAR),
        }
    }

    pub fn at(&self, d: f64) -> Vec3 {
        add(self.origin, scale(self.direction, d))
    }
}

/// Ray through the center of pixel `(u, v)`.
pub fn pixel_ray(camera: &Camera, u: usize, v: usize, radius: f64) -> Result<Ray> {
    if u >= camera.width || v >= camera.height {
        return Err(Error::InvalidArgument(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            camera.width, camera.height
        )));
    }
    Ok(Ray::bounded(camera.center(), camera.pixel_direction(u, v)?, radius))
}

/// A set of rays with their pixel coordinates, packed as graph-ready tensors.
#[derive(Debug, Clone)]
pub struct RayBatch {
    pub pixels: Vec<(usize, usize)>,
    pub origins: Tensor,
    pub directions: Tensor,
    pub d_near: Tensor,
    pub d_far: Tensor,
}

impl RayBatch {
    pub fn new(rays: &[Ray], pixels: Vec<(usize, usize)>) -> Result<Self> {
        let n = rays.len();
        if pixels.len() != n {
            return Err(Error::Dimension(format!("{n} rays but {} pixel labels", pixels.len())));
        }
        Ok(Self {
            pixels,
            origins: Tensor::new(vec![n, 3], rays.iter().flat_map(|r| r.origin).collect())?,
            directions: Tensor::new(vec![n, 3], rays.iter().flat_map(|r| r.direction).collect())?,
            d_near: Tensor::new(vec![n, 1], rays.iter().map(|r| r.d_near).collect())?,
            d_far: Tensor::new(vec![n, 1], rays.iter().map(|r| r.d_far).collect())?,
        })
    }

    /// Rays for the given pixels of one camera.
    pub fn from_pixels(camera: &Camera, pixels: &[(usize, usize)], radius: f64) -> Result<Self> {
        let rays = pixels
            .iter()
            .map(|&(u, v)| pixel_ray(camera, u, v, radius))
            .collect::<Result<Vec<_>>>()?;
        Self::new(&rays, pixels.to_vec())
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Graph handles produced by [`march_graph`].
#[derive(Debug, Clone)]
pub struct MarchVars {
    /// Final points `[N, 3]`.
    pub x: Var,
    /// Field features at the final points `[N, n]`.
    pub v_final: Var,
    /// Depth after each step, `[N, 1]` each; the last is the final depth.
    pub depths: Vec<Var>,
    /// `d_near` and `d_far` as constants `[N, 1]`.
    pub d_near: Var,
    pub d_far: Var,
}

impl MarchVars {
    pub fn d_final(&self) -> Var {
        *self.depths.last().expect("at least one march step")
    }
}

pub fn march_graph(g: &mut Graph, arch: &ArchConfig, field: &MlpVars, nets: &RenderNets, rays: &RayBatch) -> Result<MarchVars> {
    let n = rays.len();
    let h = arch.rm_hidden;
    let origin = g.constant(rays.origins.clone())?;
    let dir = g.constant(rays.directions.clone())?;
    let d_near = g.constant(rays.d_near.clone())?;
    let d_far = g.constant(rays.d_far.clone())?;
    let zero = Arc::new(Tensor::zeros(&[n, h]));
    let mut state = LstmState {
        h: g.frozen(zero.clone())?,
        c: g.frozen(zero)?,
    };
    let mut d = d_near;
    let mut depths = Vec::with_capacity(arch.n_march);
    for _ in 0..arch.n_march {
        let offset = g.mul_col(dir, d)?;
        let x = g.add(origin, offset)?;
        let v = field.forward(g, x)?;
        state = lstm_step(g, &nets.lstm, state, v)?;
        let s = g.linear(state.h, nets.step.w, Some(nets.step.b))?;
        let delta = g.softplus(s)?;
        d = g.add(d, delta)?;
        depths.push(d);
    }
    let offset = g.mul_col(dir, d)?;
    let x = g.add(origin, offset)?;
    let v_final = field.forward(g, x)?;
    Ok(MarchVars {
        x,
        v_final,
        depths,
        d_near,
        d_far,
    })
}

/// Value-level march of a single ray.
#[derive(Debug, Clone, PartialEq)]
pub struct MarchResult {
    pub x_surface: Vec3,
    pub v_final: Vec<f64>,
    pub d_final: f64,
    pub depths: Vec<f64>,
}

pub fn march(weights: &SharedWeights, theta: &Tensor, ray: &Ray) -> Result<MarchResult> {
    let batch = RayBatch::new(std::slice::from_ref(ray), vec![(0, 0)])?;
    let mut g = Graph::new();
    let t = g.frozen(Arc::new(theta.clone()))?;
    let field = field_vars(&mut g, &weights.arch, t)?;
    let nets = weights.bind_render(&mut g, false)?;
    let mv = march_graph(&mut g, &weights.arch, &field, &nets, &batch).map_err(|e| Error::March {
        u: 0,
        v: 0,
        detail: e.to_string(),
    })?;
    let x = g.value(mv.x).data();
    Ok(MarchResult {
        x_surface: [x[0], x[1], x[2]],
        v_final: g.value(mv.v_final).data().to_vec(),
        d_final: g.scalar(mv.d_final()),
        depths: mv.depths.iter().map(|&d| g.scalar(d)).collect(),
    })
}

/// Full-frame render outputs in scanline order.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `H * W * 3`
    pub rgb: Vec<f64>,
    /// `H * W` argmax classes.
    pub seg: Vec<u8>,
    /// `H * W * C`
    pub logits: Vec<f64>,
    /// `H * W` final march depths.
    pub depth: Vec<f64>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

struct Block {
    rgb: Vec<f64>,
    logits: Vec<f64>,
    depth: Vec<f64>,
}

fn render_block(weights: &SharedWeights, theta: &Arc<Tensor>, batch: &RayBatch) -> Result<Block> {
    let (u0, v0) = batch.pixels[0];
    let wrap = |e: Error| match e {
        Error::March { .. } => e,
        other => Error::March {
            u: u0,
            v: v0,
            detail: other.to_string(),
        },
    };
    let mut g = Graph::new();
    let t = g.frozen(theta.clone())?;
    let field = field_vars(&mut g, &weights.arch, t)?;
    let nets = weights.bind_render(&mut g, false)?;
    let mv = march_graph(&mut g, &weights.arch, &field, &nets, batch).map_err(wrap)?;
    let rgb = nets.rgb.forward(&mut g, mv.v_final).map_err(|e| wrap(e.into()))?;
    let logits = nets.seg.forward(&mut g, mv.v_final).map_err(|e| wrap(e.into()))?;
    Ok(Block {
        rgb: g.value(rgb).data().to_vec(),
        logits: g.value(logits).data().to_vec(),
        depth: g.value(mv.d_final()).data().to_vec(),
    })
}

/// Renders RGB, segmentation and depth for code `z` through `camera`.
pub fn render_view(weights: &SharedWeights, z: &LatentCode, camera: &Camera) -> Result<RenderOutput> {
    camera.validate()?;
    let theta = Arc::new(hyper_map(weights, z)?);
    let (w, h) = (camera.width, camera.height);
    let radius = weights.arch.scene_radius;
    let pixels: Vec<(usize, usize)> = (0..h).flat_map(|v| (0..w).map(move |u| (u, v))).collect();
    let batches = pixels
        .chunks(RENDER_BLOCK)
        .map(|c| RayBatch::from_pixels(camera, c, radius))
        .collect::<Result<Vec<_>>>()?;
    let blocks = exec::try_map_indexed(&batches, |_, b| render_block(weights, &theta, b))?;
    let c = weights.arch.n_classes;
    let mut out = RenderOutput {
        width: w,
        height: h,
        rgb: Vec::with_capacity(3 * w * h),
        seg: Vec::with_capacity(w * h),
        logits: Vec::with_capacity(c * w * h),
        depth: Vec::with_capacity(w * h),
    };
    for b in blocks {
        out.rgb.extend(b.rgb);
        out.seg.extend(b.logits.chunks_exact(c).map(|r| argmax(r) as u8));
        out.logits.extend(b.logits);
        out.depth.extend(b.depth);
    }
    Ok(out)
}

/// `H * W * 3` RGB image.
pub fn render_image(weights: &SharedWeights, z: &LatentCode, camera: &Camera) -> Result<Vec<f64>> {
    Ok(render_view(weights, z, camera)?.rgb)
}

/// Class-id image and raw logits.
pub fn render_segmentation(weights: &SharedWeights, z: &LatentCode, camera: &Camera) -> Result<(Vec<u8>, Vec<f64>)> {
    let out = render_view(weights, z, camera)?;
    Ok((out.seg, out.logits))
}
