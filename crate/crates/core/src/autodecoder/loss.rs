//! The training objective
//! `L = L_img + λ_latent·L_latent + λ_depth·L_depth + λ_seg·L_SEG + λ_kp·L_KP`.
//!
//! * `L_img`: mean squared error over sampled pixels and RGB channels.
//! * `L_latent`: `||z_obj||² + (||z_art||² - 1)²`, a gaussian prior on the object
//!   code plus a pull of the articulation code toward the unit circle.
//! * `L_depth`: mean squared distance of the final march depth outside `[d_near, d_far]`.
//! * `L_SEG`: mean softmax cross-entropy over sampled pixels.
//! * `L_KP`: squared keypoint error summed over keypoints and coordinates.

use std::sync::Arc;

use gradcore::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralfield::{code_input, field_vars, SharedWeights};
use crate::raymarch::{march_graph, RayBatch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lambdas {
    pub seg: f64,
    pub kp: f64,
    pub latent: f64,
    pub depth: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            seg: 0.5,
            kp: 1.0,
            latent: 1e-3,
            depth: 0.1,
        }
    }
}

impl Lambdas {
    /// Inference weights: segmentation and keypoint terms off.
    pub fn inference(latent: f64, depth: f64) -> Self {
        Self {
            seg: 0.0,
            kp: 0.0,
            latent,
            depth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub l_img: f64,
    pub l_latent: f64,
    pub l_depth: f64,
    pub l_seg: f64,
    pub l_kp: f64,
}

impl LossParts {
    pub fn add_scaled(&mut self, other: &LossParts, s: f64) {
        self.l_img += s * other.l_img;
        self.l_latent += s * other.l_latent;
        self.l_depth += s * other.l_depth;
        self.l_seg += s * other.l_seg;
        self.l_kp += s * other.l_kp;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_img: f64,
    pub l_latent: f64,
    pub l_depth: f64,
    pub l_seg: f64,
    pub l_kp: f64,
    pub lambdas: Lambdas,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(parts: LossParts, lambdas: Lambdas) -> Self {
        Self {
            l_img: parts.l_img,
            l_latent: parts.l_latent,
            l_depth: parts.l_depth,
            l_seg: parts.l_seg,
            l_kp: parts.l_kp,
            lambdas,
            total: Self::combine(&parts, &lambdas),
        }
    }

    fn combine(p: &LossParts, l: &Lambdas) -> f64 {
        p.l_img + l.latent * p.l_latent + l.depth * p.l_depth + l.seg * p.l_seg + l.kp * p.l_kp
    }

    /// The composition identity, bit for bit.
    pub fn is_consistent(&self) -> bool {
        let parts = LossParts {
            l_img: self.l_img,
            l_latent: self.l_latent,
            l_depth: self.l_depth,
            l_seg: self.l_seg,
            l_kp: self.l_kp,
        };
        Self::combine(&parts, &self.lambdas) == self.total
            && [self.l_img, self.l_latent, self.l_depth, self.l_seg, self.l_kp]
                .iter()
                .all(|v| *v >= 0.0)
    }
}

/// Ground truth for one code's loss graph. Absent terms must have zero weight.
#[derive(Debug, Clone)]
pub struct LossTarget {
    pub rays: Option<RayBatch>,
    /// `[N, 3]` target colors for `rays`.
    pub rgb: Option<Arc<Tensor>>,
    pub seg: Option<Arc<Vec<u8>>>,
    /// `[1, 12]` keypoint coordinates.
    pub keypoints: Option<Arc<Tensor>>,
    /// Whether this graph carries the latent prior (exactly one graph per code should).
    pub latent_prior: bool,
}

/// Loss terms bound in a graph; `None` for terms not evaluated.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub total: Var,
    pub l_img: Option<Var>,
    pub l_latent: Option<Var>,
    pub l_depth: Option<Var>,
    pub l_seg: Option<Var>,
    pub l_kp: Option<Var>,
}

impl LossVars {
    pub fn parts(&self, g: &Graph) -> LossParts {
        let v = |x: Option<Var>| x.map(|x| g.scalar(x)).unwrap_or(0.0);
        LossParts {
            l_img: v(self.l_img),
            l_latent: v(self.l_latent),
            l_depth: v(self.l_depth),
            l_seg: v(self.l_seg),
            l_kp: v(self.l_kp),
        }
    }
}

fn missing(term: &str) -> Error {
    Error::MissingGroundTruth(format!("{term} has non-zero weight but no ground truth"))
}

/// Builds the weighted loss of one code against `target`. `z_art: [1, 2]`, `z_obj: [1, k]`.
pub fn build_loss(
    g: &mut Graph,
    weights: &SharedWeights,
    trainable: bool,
    z_art: Var,
    z_obj: Var,
    target: &LossTarget,
    lambdas: &Lambdas,
) -> Result<LossVars> {
    let arch = &weights.arch;
    let code = code_input(g, z_art, z_obj)?;
    let mut terms: Vec<(f64, Var)> = Vec::new();
    let mut out = LossVars {
        total: code,
        l_img: None,
        l_latent: None,
        l_depth: None,
        l_seg: None,
        l_kp: None,
    };

    if let Some(rays) = &target.rays {
        let rgb_target = target.rgb.as_ref().ok_or_else(|| missing("image loss"))?;
        let hyper = weights.bind_hyper(g, trainable)?;
        let theta = hyper.forward(g, code)?;
        let field = field_vars(g, arch, theta)?;
        let nets = weights.bind_render(g, trainable)?;
        let mv = march_graph(g, arch, &field, &nets, rays)?;

        let rgb = nets.rgb.forward(g, mv.v_final)?;
        let l_img = g.mse(rgb, rgb_target.clone())?;
        terms.push((1.0, l_img));
        out.l_img = Some(l_img);

        let d = mv.d_final();
        let over = g.sub(d, mv.d_far)?;
        let over = g.relu(over)?;
        let under = g.sub(mv.d_near, d)?;
        let under = g.relu(under)?;
        let over = g.square(over)?;
        let under = g.square(under)?;
        let both = g.add(over, under)?;
        let l_depth = g.mean(both)?;
        terms.push((lambdas.depth, l_depth));
        out.l_depth = Some(l_depth);

        match &target.seg {
            Some(labels) => {
                let logits = nets.seg.forward(g, mv.v_final)?;
                let l_seg = g.softmax_xent(logits, labels.clone())?;
                terms.push((lambdas.seg, l_seg));
                out.l_seg = Some(l_seg);
            }
            None if lambdas.seg != 0.0 => return Err(missing("segmentation loss")),
            None => {}
        }
    } else if target.rgb.is_some() || target.seg.is_some() {
        return Err(Error::InvalidArgument("image targets given without rays".into()));
    }

    match &target.keypoints {
        Some(kp) => {
            let net = weights.bind_keypoint(g, trainable)?;
            let pred = net.forward(g, code)?;
            let mse = g.mse(pred, kp.clone())?;
            let l_kp = g.scale(mse, kp.numel() as f64)?;
            terms.push((lambdas.kp, l_kp));
            out.l_kp = Some(l_kp);
        }
        None if lambdas.kp != 0.0 && target.rays.is_some() => return Err(missing("keypoint loss")),
        None => {}
    }

    if target.latent_prior {
        let obj_sq = g.square(z_obj)?;
        let obj = g.sum(obj_sq)?;
        let art_sq = g.square(z_art)?;
        let art = g.sum(art_sq)?;
        let art = g.add_scalar(art, -1.0)?;
        let art = g.square(art)?;
        let l_latent = g.add(obj, art)?;
        terms.push((lambdas.latent, l_latent));
        out.l_latent = Some(l_latent);
    }

    let mut total: Option<Var> = None;
    for (w, v) in terms {
        let term = if w == 1.0 { v } else { g.scale(v, w)? };
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    out.total = total.ok_or_else(|| Error::InvalidArgument("loss has no terms".into()))?;
    Ok(out)
}
