//! Articulation-code algebra measured against closed forms.

use artfield::artsim::interpolate_codes;
use artfield::camera::Camera;
use artfield::neuralfield::{articulation_to_code, hyper_map, keypoint_predict, normalize_articulation, ArchConfig, LatentCode, ModelWeights};
use artfield::raymarch::render_view;
use artfield::worldgen::scene::Category;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct AlgebraReport {
    /// Largest `|q(x, y) - q(x, -y)|`.
    pub mirror: f64,
    /// Largest output change of any downstream map under `z_art -> s * z_art`.
    pub scale: f64,
    /// Largest `|q(code(q)) - q|` over 101 values.
    pub round_trip: f64,
    /// Largest endpoint error of interpolated code sequences.
    pub endpoints: f64,
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn run() -> AlgebraReport {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let mut mirror: f64 = 0.0;
    for _ in 0..1000 {
        let x: f64 = rng.random_range(-3.0..3.0);
        let y: f64 = rng.random_range(-3.0..3.0);
        mirror = mirror.max((normalize_articulation([x, y]).1 - normalize_articulation([x, -y]).1).abs());
    }

    let mut round_trip: f64 = 0.0;
    for i in 0..=100 {
        let q = i as f64 / 100.0;
        let code = articulation_to_code(q).unwrap();
        round_trip = round_trip.max((normalize_articulation(code).1 - q).abs());
    }

    let arch = ArchConfig {
        k_obj: 4,
        field_hidden: 8,
        feature_dim: 6,
        hyper_hidden: 8,
        hyper_out_std: 0.3,
        rm_hidden: 4,
        n_march: 4,
        head_hidden: 6,
        kp_hidden: 8,
        ..ArchConfig::default()
    };
    let shared = ModelWeights::init(&arch, 3).unwrap().shared();
    let camera = Camera::look_at([0.8, -2.0, 0.9], [0.0; 3], 45.0, 4, 4).unwrap();
    let mut scale: f64 = 0.0;
    for _ in 0..10 {
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let z_obj: Vec<f64> = (0..arch.k_obj).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = LatentCode::new([angle.cos(), angle.sin()], z_obj.clone());
        let theta = hyper_map(&shared, &base).unwrap();
        let kp = keypoint_predict(&shared, &base, Category::Closet).unwrap().flat();
        let img = render_view(&shared, &base, &camera).unwrap();
        for s in [1e-3, 0.37, 2.5, 1e3] {
            let z = LatentCode::new([s * angle.cos(), s * angle.sin()], z_obj.clone());
            scale = scale
                .max((z.q() - base.q()).abs())
                .max(max_diff(hyper_map(&shared, &z).unwrap().data(), theta.data()))
                .max(max_diff(&keypoint_predict(&shared, &z, Category::Closet).unwrap().flat(), &kp));
            let r = render_view(&shared, &z, &camera).unwrap();
            scale = scale
                .max(max_diff(&r.rgb, &img.rgb))
                .max(max_diff(&r.logits, &img.logits))
                .max(max_diff(&r.depth, &img.depth));
        }
    }

    let mut endpoints: f64 = 0.0;
    for _ in 0..200 {
        let q0: f64 = rng.random_range(0.0..=1.0);
        let q1: f64 = rng.random_range(0.0..=1.0);
        let steps = rng.random_range(1..=20);
        let z = LatentCode::from_q(q0, vec![0.1, -0.2]).unwrap();
        let codes = interpolate_codes(&z, q1, steps).unwrap();
        endpoints = endpoints
            .max((codes[0].q() - z.q()).abs())
            .max((codes[steps].q() - q1).abs());
    }

    AlgebraReport {
        mirror,
        scale,
        round_trip,
        endpoints,
    }
}
