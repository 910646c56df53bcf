//! Finite-difference checks of every learned map on a tiny architecture.
//!
//! Each check contracts the map's output with a fixed random projection and
//! compares the graph gradient wrt the map's weights and inputs against central
//! differences of a fresh forward evaluation.

use std::collections::BTreeMap;

use artfield::camera::Camera;
use artfield::neuralfield::{code_input, field_vars, ArchConfig, ModelWeights, SharedWeights};
use artfield::raymarch::{march_graph, RayBatch};
use gradcore::gradcheck::{central_difference, max_relative_error};
use gradcore::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnedMap {
    Field,
    Hyper,
    Rgb,
    Seg,
    Keypoint,
    March,
    Render4x4,
}

impl LearnedMap {
    pub const ALL: [LearnedMap; 7] = [
        LearnedMap::Field,
        LearnedMap::Hyper,
        LearnedMap::Rgb,
        LearnedMap::Seg,
        LearnedMap::Keypoint,
        LearnedMap::March,
        LearnedMap::Render4x4,
    ];

    pub fn tolerance(self) -> f64 {
        if self == LearnedMap::Render4x4 {
            1e-3
        } else {
            1e-4
        }
    }
}

pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        k_obj: 3,
        field_hidden: 6,
        field_layers: 3,
        feature_dim: 5,
        hyper_hidden: 7,
        hyper_out_std: 0.3,
        rm_hidden: 4,
        n_march: 3,
        head_hidden: 5,
        kp_hidden: 6,
        kp_layers: 2,
        ..ArchConfig::default()
    }
}

struct Setup {
    arch: ArchConfig,
    weights: ModelWeights,
    /// Weight tensors under test.
    names: Vec<String>,
    inputs: Vec<Tensor>,
    rays: Option<RayBatch>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).unwrap()
}

fn setup(map: LearnedMap, seed: u64) -> Setup {
    let arch = tiny_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = ModelWeights::init(&arch, seed).unwrap();
    // Non-zero biases exercise every term of the backward pass.
    for (name, t) in weights.tensors.iter_mut() {
        if name.ends_with(".b") {
            for v in t.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
    }
    let prefixes: &[&str] = match map {
        LearnedMap::Field => &[],
        LearnedMap::Hyper => &["hyper."],
        LearnedMap::Rgb => &["rgb."],
        LearnedMap::Seg => &["seg."],
        LearnedMap::Keypoint => &["kp."],
        LearnedMap::March => &["rm."],
        LearnedMap::Render4x4 => &["hyper.", "rm.", "rgb.", "seg."],
    };
    let names = weights
        .tensors
        .keys()
        .filter(|k| prefixes.iter().any(|p| k.starts_with(p)))
        .cloned()
        .collect();
    let l = arch.theta_len();
    let n = arch.feature_dim;
    let code = |rng: &mut ChaCha8Rng| {
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let r: f64 = rng.random_range(0.5..1.5);
        vec![
            Tensor::row(&[r * angle.cos(), r * angle.sin()]),
            uniform(rng, &[1, arch.k_obj], 1.0),
        ]
    };
    let mut rays = None;
    let inputs = match map {
        LearnedMap::Field => vec![uniform(&mut rng, &[1, l], 0.5), uniform(&mut rng, &[4, 3], 1.0)],
        LearnedMap::Hyper | LearnedMap::Keypoint => code(&mut rng),
        LearnedMap::Rgb | LearnedMap::Seg => vec![uniform(&mut rng, &[4, n], 1.5)],
        LearnedMap::March => {
            let cam = random_camera(&mut rng, 2, 2);
            rays = Some(RayBatch::from_pixels(&cam, &[(0, 0), (1, 0), (0, 1), (1, 1)], arch.scene_radius).unwrap());
            vec![uniform(&mut rng, &[1, l], 0.5)]
        }
        LearnedMap::Render4x4 => {
            let cam = random_camera(&mut rng, 4, 4);
            let pixels: Vec<(usize, usize)> = (0..4).flat_map(|v| (0..4).map(move |u| (u, v))).collect();
            rays = Some(RayBatch::from_pixels(&cam, &pixels, arch.scene_radius).unwrap());
            code(&mut rng)
        }
    };
    Setup {
        arch,
        weights,
        names,
        inputs,
        rays,
    }
}

fn random_camera(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Camera {
    let az: f64 = rng.random_range(-1.5..1.5);
    let el: f64 = rng.random_range(0.2..0.8);
    let r: f64 = rng.random_range(1.8..2.6);
    let eye = [r * el.cos() * az.sin(), -r * el.cos() * az.cos(), r * el.sin()];
    Camera::look_at(eye, [0.0, 0.0, 0.0], 45.0, w, h).unwrap()
}

fn build(map: LearnedMap, s: &Setup, g: &mut Graph, shared: &SharedWeights, inputs: &[Var]) -> Var {
    let arch = &s.arch;
    match map {
        LearnedMap::Field => {
            let field = field_vars(g, arch, inputs[0]).unwrap();
            field.forward(g, inputs[1]).unwrap()
        }
        LearnedMap::Hyper => {
            let c = code_input(g, inputs[0], inputs[1]).unwrap();
            shared.bind_hyper(g, true).unwrap().forward(g, c).unwrap()
        }
        LearnedMap::Keypoint => {
            let c = code_input(g, inputs[0], inputs[1]).unwrap();
            shared.bind_keypoint(g, true).unwrap().forward(g, c).unwrap()
        }
        LearnedMap::Rgb => shared.bind_render(g, true).unwrap().rgb.forward(g, inputs[0]).unwrap(),
        LearnedMap::Seg => shared.bind_render(g, true).unwrap().seg.forward(g, inputs[0]).unwrap(),
        LearnedMap::March => {
            let field = field_vars(g, arch, inputs[0]).unwrap();
            let nets = shared.bind_render(g, true).unwrap();
            let mv = march_graph(g, arch, &field, &nets, s.rays.as_ref().unwrap()).unwrap();
            g.concat_cols(&[mv.v_final, mv.d_final()]).unwrap()
        }
        LearnedMap::Render4x4 => {
            let c = code_input(g, inputs[0], inputs[1]).unwrap();
            let theta = shared.bind_hyper(g, true).unwrap().forward(g, c).unwrap();
            let field = field_vars(g, arch, theta).unwrap();
            let nets = shared.bind_render(g, true).unwrap();
            let mv = march_graph(g, arch, &field, &nets, s.rays.as_ref().unwrap()).unwrap();
            let rgb = nets.rgb.forward(g, mv.v_final).unwrap();
            let logits = nets.seg.forward(g, mv.v_final).unwrap();
            g.concat_cols(&[rgb, logits, mv.d_final()]).unwrap()
        }
    }
}

/// Largest relative error between graph and central-difference gradients.
pub fn max_error(map: LearnedMap, seed: u64) -> f64 {
    let s = setup(map, seed);
    let mut flat: Vec<f64> = Vec::new();
    for name in &s.names {
        flat.extend_from_slice(s.weights.tensors[name].data());
    }
    for t in &s.inputs {
        flat.extend_from_slice(t.data());
    }
    let proj_seed = seed ^ 0x9e37_79b9_7f4a_7c15;

    let eval = |x: &[f64], want_grad: bool| -> (f64, Vec<f64>) {
        let mut weights = s.weights.clone();
        let mut off = 0;
        for name in &s.names {
            let t = weights.tensors.get_mut(name).unwrap();
            let n = t.numel();
            t.data_mut().copy_from_slice(&x[off..off + n]);
            off += n;
        }
        let shared = weights.shared();
        let mut g = Graph::new();
        let mut vars = Vec::new();
        for (i, t) in s.inputs.iter().enumerate() {
            let n = t.numel();
            let v = Tensor::new(t.shape().to_vec(), x[off..off + n].to_vec()).unwrap();
            vars.push(g.input(&format!("in{i}"), v, true).unwrap());
            off += n;
        }
        let out = build(map, &s, &mut g, &shared, &vars);
        let mut prng = ChaCha8Rng::seed_from_u64(proj_seed);
        let shape = g.shape(out).to_vec();
        let proj = uniform(&mut prng, &shape, 1.0);
        let p = g.constant(proj).unwrap();
        let prod = g.mul(out, p).unwrap();
        let loss = g.sum(prod).unwrap();
        let value = g.scalar(loss);
        if !want_grad {
            return (value, Vec::new());
        }
        let named: BTreeMap<String, Tensor> = g.backward(loss, None).unwrap().named();
        let mut analytic = Vec::with_capacity(x.len());
        for name in &s.names {
            match named.get(name) {
                Some(t) => analytic.extend_from_slice(t.data()),
                None => analytic.extend(std::iter::repeat_n(0.0, s.weights.tensors[name].numel())),
            }
        }
        for i in 0..s.inputs.len() {
            analytic.extend_from_slice(named[&format!("in{i}")].data());
        }
        (value, analytic)
    };
    let (_, analytic) = eval(&flat, true);
    let numeric = central_difference(|x| eval(x, false).0, &flat, STEP);
    max_relative_error(&analytic, &numeric, FLOOR)
}
