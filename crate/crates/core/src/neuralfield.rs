//! Structured latent codes, the hypernetwork, the feature field and its decoding heads.
//!
//! A code is `z = [z_art; z_obj]`. Every network consumes it as
//! `[ẑ_art; z_obj]` with `ẑ_art = z_art / ||z_art||`, so raw articulation scale
//! never matters. The articulation scalar is `q = (1 - ẑ_art.x) / 2`: `q = 0` at
//! `(1, 0)`, `q = 1` at `(-1, 0)`, and the lower half-circle mirrors the upper.

use std::collections::BTreeMap;
use std::sync::Arc;

use gradcore::{Activation, DenseVars, Graph, LstmVars, MlpVars, Tensor, Var, NORMALIZE_EPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::Vec3;
use crate::error::{Error, Result};
use crate::worldgen::scene::{check_q, Category, KeypointSet};

pub const NUM_KEYPOINTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub k_obj: usize,
    pub field_hidden: usize,
    /// Affine layers in the field MLP.
    pub field_layers: usize,
    /// Feature width `n`.
    pub feature_dim: usize,
    pub hyper_hidden: usize,
    /// Std of the hypernetwork output-layer weights at initialization.
    pub hyper_out_std: f64,
    pub rm_hidden: usize,
    pub n_march: usize,
    /// Step length the raymarcher takes before training.
    pub init_step: f64,
    /// Radius of the origin-centered sphere bounding every scene; sets ray near/far.
    pub scene_radius: f64,
    pub head_hidden: usize,
    pub kp_hidden: usize,
    /// Affine layers in the keypoint head.
    pub kp_layers: usize,
    pub n_classes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            k_obj: 16,
            field_hidden: 64,
            field_layers: 3,
            feature_dim: 32,
            hyper_hidden: 128,
            hyper_out_std: 1e-2,
            rm_hidden: 16,
            n_march: 10,
            init_step: 0.15,
            scene_radius: 1.75,
            head_hidden: 32,
            kp_hidden: 64,
            kp_layers: 2,
            n_classes: 4,
        }
    }
}

impl ArchConfig {
    pub fn code_dim(&self) -> usize {
        self.k_obj + 2
    }

    /// Layer widths of the field, input first.
    pub fn field_dims(&self) -> Vec<usize> {
        let mut dims = vec![3];
        dims.extend(std::iter::repeat_n(self.field_hidden, self.field_layers.saturating_sub(1)));
        dims.push(self.feature_dim);
        dims
    }

    /// Length `l` of the field weight vector emitted by the hypernetwork.
    pub fn theta_len(&self) -> usize {
        self.field_dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("field_hidden", self.field_hidden),
            ("field_layers", self.field_layers),
            ("feature_dim", self.feature_dim),
            ("hyper_hidden", self.hyper_hidden),
            ("rm_hidden", self.rm_hidden),
            ("n_march", self.n_march),
            ("head_hidden", self.head_hidden),
            ("kp_hidden", self.kp_hidden),
            ("kp_layers", self.kp_layers),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("arch.{name} must be positive")));
        }
        if !(self.init_step > 0.0 && self.scene_radius > 0.0 && self.hyper_out_std >= 0.0) {
            return Err(Error::InvalidArgument(
                "arch.init_step and arch.scene_radius must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Name and shape of every tensor in [`ModelWeights`], in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut mlp = |prefix: &str, dims: &[usize]| {
            for (i, w) in dims.windows(2).enumerate() {
                out.push((format!("{prefix}.l{i}.w"), vec![w[0], w[1]]));
                out.push((format!("{prefix}.l{i}.b"), vec![w[1]]));
            }
        };
        mlp("hyper", &[self.code_dim(), self.hyper_hidden, self.theta_len()]);
        mlp("rgb", &[self.feature_dim, self.head_hidden, 3]);
        mlp("seg", &[self.feature_dim, self.head_hidden, self.n_classes]);
        let mut kp = vec![self.code_dim()];
        kp.extend(std::iter::repeat_n(self.kp_hidden, self.kp_layers - 1));
        kp.push(3 * NUM_KEYPOINTS);
        mlp("kp", &kp);
        let h = self.rm_hidden;
        out.push(("rm.wx".into(), vec![self.feature_dim, 4 * h]));
        out.push(("rm.wh".into(), vec![h, 4 * h]));
        out.push(("rm.b".into(), vec![4 * h]));
        out.push(("rm.out.w".into(), vec![h, 1]));
        out.push(("rm.out.b".into(), vec![1]));
        out.sort();
        out
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Unit articulation direction and scalar `q`. Norms below the normalization
/// epsilon fall back to `(1, 0)`, i.e. `q = 0`.
pub fn normalize_articulation(z_art: [f64; 2]) -> ([f64; 2], f64) {
    let n = (z_art[0] * z_art[0] + z_art[1] * z_art[1]).sqrt();
    let unit = if n < NORMALIZE_EPS || !n.is_finite() {
        [1.0, 0.0]
    } else {
        [z_art[0] / n, z_art[1] / n]
    };
    (unit, (1.0 - unit[0]) / 2.0)
}

/// Canonical upper-half-circle code for `q`.
pub fn articulation_to_code(q: f64) -> Result<[f64; 2]> {
    check_q(q)?;
    let x = 1.0 - 2.0 * q;
    Ok([x, x.acos().sin()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub z_art: [f64; 2],
    pub z_obj: Vec<f64>,
}

impl LatentCode {
    pub fn new(z_art: [f64; 2], z_obj: Vec<f64>) -> Self {
        Self { z_art, z_obj }
    }

    pub fn from_q(q: f64, z_obj: Vec<f64>) -> Result<Self> {
        Ok(Self::new(articulation_to_code(q)?, z_obj))
    }

    pub fn unit_art(&self) -> [f64; 2] {
        normalize_articulation(self.z_art).0
    }

    pub fn q(&self) -> f64 {
        normalize_articulation(self.z_art).1
    }

    pub fn check(&self, arch: &ArchConfig) -> Result<()> {
        if self.z_obj.len() != arch.k_obj {
            return Err(Error::Dimension(format!(
                "object code has {} entries, architecture expects {}",
                self.z_obj.len(),
                arch.k_obj
            )));
        }
        if !self.z_art.iter().chain(&self.z_obj).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("latent code has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn art_tensor(&self) -> Tensor {
        Tensor::row(&self.z_art)
    }

    pub fn obj_tensor(&self) -> Tensor {
        Tensor::row(&self.z_obj)
    }
}

/// All trainable network weights: hypernetwork, raymarcher, RGB, segmentation and keypoint heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub arch: ArchConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    Tensor::uniform(&[fan_in, fan_out], (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl ModelWeights {
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in arch.layout() {
            let t = if name == "hyper.l1.w" {
                Tensor::randn(&shape, arch.hyper_out_std, &mut rng)
            } else if name == "hyper.l1.b" {
                // The bias is the field the hypernetwork emits for every code at init.
                let mut theta = Vec::with_capacity(arch.theta_len());
                for w in arch.field_dims().windows(2) {
                    theta.extend(xavier(&mut rng, w[0], w[1]).into_data());
                    theta.extend(std::iter::repeat_n(0.0, w[1]));
                }
                Tensor::new(shape, theta)?
            } else if name == "rm.wx" || name == "rm.wh" {
                Tensor::uniform(&shape, 1.0 / (arch.rm_hidden as f64).sqrt(), &mut rng)
            } else if name == "rm.b" {
                let h = arch.rm_hidden;
                let mut b = vec![0.0; 4 * h];
                b[h..2 * h].fill(1.0);
                Tensor::new(shape, b)?
            } else if name == "rm.out.w" {
                Tensor::randn(&shape, 1e-3, &mut rng)
            } else if name == "rm.out.b" {
                Tensor::new(shape, vec![inv_softplus(arch.init_step)])?
            } else if shape.len() == 2 {
                xavier(&mut rng, shape[0], shape[1])
            } else {
                Tensor::zeros(&shape)
            };
            tensors.insert(name, t);
        }
        Ok(Self {
            arch: arch.clone(),
            tensors,
        })
    }

    /// Checks names, shapes and finiteness against the architecture.
    pub fn validate(&self) -> Result<()> {
        let layout = self.arch.layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::Dimension(format!(
                "expected {} weight tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in layout {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Dimension(format!("missing weight tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!("{name}: shape {:?}, expected {shape:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Read-only snapshot that graphs bind without copying.
    pub fn shared(&self) -> SharedWeights {
        SharedWeights {
            arch: self.arch.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Arc::new(v.clone())))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SharedWeights {
    pub arch: ArchConfig,
    tensors: BTreeMap<String, Arc<Tensor>>,
}

impl SharedWeights {
    pub fn get(&self, name: &str) -> Result<Arc<Tensor>> {
        self.tensors
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Dimension(format!("missing weight tensor {name}")))
    }

    fn bind(&self, g: &mut Graph, name: &str, trainable: bool) -> Result<Var> {
        let t = self.get(name)?;
        Ok(if trainable { g.param(name, t)? } else { g.frozen(t)? })
    }

    fn bind_mlp(&self, g: &mut Graph, prefix: &str, trainable: bool, hidden: Activation, output: Activation) -> Result<MlpVars> {
        let mut layers = Vec::new();
        for i in 0.. {
            let w = format!("{prefix}.l{i}.w");
            if !self.tensors.contains_key(&w) {
                break;
            }
            layers.push(DenseVars {
                w: self.bind(g, &w, trainable)?,
                b: self.bind(g, &format!("{prefix}.l{i}.b"), trainable)?,
            });
        }
        Ok(MlpVars { layers, hidden, output })
    }

    pub fn bind_hyper(&self, g: &mut Graph, trainable: bool) -> Result<MlpVars> {
        self.bind_mlp(g, "hyper", trainable, Activation::Tanh, Activation::Identity)
    }

    pub fn bind_keypoint(&self, g: &mut Graph, trainable: bool) -> Result<MlpVars> {
        self.bind_mlp(g, "kp", trainable, Activation::Tanh, Activation::Identity)
    }

    pub fn bind_render(&self, g: &mut Graph, trainable: bool) -> Result<RenderNets> {
        Ok(RenderNets {
            lstm: LstmVars {
                wx: self.bind(g, "rm.wx", trainable)?,
                wh: self.bind(g, "rm.wh", trainable)?,
                b: self.bind(g, "rm.b", trainable)?,
            },
            step: DenseVars {
                w: self.bind(g, "rm.out.w", trainable)?,
                b: self.bind(g, "rm.out.b", trainable)?,
            },
            rgb: self.bind_mlp(g, "rgb", trainable, Activation::Tanh, Activation::Sigmoid)?,
            seg: self.bind_mlp(g, "seg", trainable, Activation::Tanh, Activation::Identity)?,
        })
    }
}

/// Raymarcher and decoding heads bound into one graph.
#[derive(Debug, Clone)]
pub struct RenderNets {
    pub lstm: LstmVars,
    /// Hidden state to pre-softplus step length.
    pub step: DenseVars,
    pub rgb: MlpVars,
    pub seg: MlpVars,
}

/// `[ẑ_art; z_obj]` as a `[1, k]` row.
pub fn code_input(g: &mut Graph, z_art: Var, z_obj: Var) -> Result<Var> {
    let unit = g.normalize(z_art)?;
    Ok(g.concat_cols(&[unit, z_obj])?)
}

/// Splits a `[1, l]` field weight row into the field MLP's layers.
pub fn field_vars(g: &mut Graph, arch: &ArchConfig, theta: Var) -> Result<MlpVars> {
    let len = g.value(theta).numel();
    if len != arch.theta_len() {
        return Err(Error::Dimension(format!(
            "field weights have {len} entries, architecture expects {}",
            arch.theta_len()
        )));
    }
    let mut layers = Vec::new();
    let mut off = 0;
    for w in arch.field_dims().windows(2) {
        let wv = g.view(theta, off, &[w[0], w[1]])?;
        off += w[0] * w[1];
        let bv = g.view(theta, off, &[w[1]])?;
        off += w[1];
        layers.push(DenseVars { w: wv, b: bv });
    }
    Ok(MlpVars {
        layers,
        hidden: Activation::Tanh,
        output: Activation::Identity,
    })
}

/// `θ = H_φ([ẑ_art; z_obj])`, shape `[1, l]`.
pub fn hyper_map(weights: &SharedWeights, z: &LatentCode) -> Result<Tensor> {
    z.check(&weights.arch)?;
    let mut g = Graph::new();
    let za = g.constant(z.art_tensor())?;
    let zo = g.constant(z.obj_tensor())?;
    let code = code_input(&mut g, za, zo)?;
    let hyper = weights.bind_hyper(&mut g, false)?;
    let theta = hyper.forward(&mut g, code)?;
    Ok(g.value(theta).clone())
}

/// Features `[N, n]` of the field `θ` at points `xs`.
pub fn field_eval(arch: &ArchConfig, theta: &Tensor, xs: &[Vec3]) -> Result<Tensor> {
    let mut g = Graph::new();
    let t = g.constant(theta.clone())?;
    let field = field_vars(&mut g, arch, t)?;
    let pts = Tensor::new(vec![xs.len(), 3], xs.iter().flatten().copied().collect())?;
    let x = g.constant(pts)?;
    let v = field.forward(&mut g, x)?;
    Ok(g.value(v).clone())
}

fn head_eval(weights: &SharedWeights, prefix: &str, out: Activation, v: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let mlp = weights.bind_mlp(&mut g, prefix, false, Activation::Tanh, out)?;
    let x = g.constant(v.clone())?;
    let y = mlp.forward(&mut g, x)?;
    Ok(g.value(y).clone())
}

/// RGB in `[0, 1]` for feature rows `v: [N, n]`.
pub fn rgb_head(weights: &SharedWeights, v: &Tensor) -> Result<Tensor> {
    head_eval(weights, "rgb", Activation::Sigmoid, v)
}

/// Class logits for feature rows `v: [N, n]`.
pub fn seg_head(weights: &SharedWeights, v: &Tensor) -> Result<Tensor> {
    head_eval(weights, "seg", Activation::Identity, v)
}

/// Keypoints `Γ_γ([ẑ_art; z_obj])` in the category's name order.
pub fn keypoint_predict(weights: &SharedWeights, z: &LatentCode, category: Category) -> Result<KeypointSet> {
    z.check(&weights.arch)?;
    let mut g = Graph::new();
    let za = g.constant(z.art_tensor())?;
    let zo = g.constant(z.obj_tensor())?;
    let code = code_input(&mut g, za, zo)?;
    let kp = weights.bind_keypoint(&mut g, false)?;
    let out = kp.forward(&mut g, code)?;
    KeypointSet::from_flat(category, g.value(out).data())
}

/// Uniformly random code, used for tests and fresh object codes.
pub fn random_code(rng: &mut impl Rng, k_obj: usize, std: f64) -> LatentCode {
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let z_obj = (0..k_obj)
        .map(|_| {
            let u: f64 = rng.random_range(-1.0..1.0);
            u * std * 3f64.sqrt()
        })
        .collect();
    LatentCode::new([angle.cos(), angle.sin()], z_obj)
}
