use artfield::camera::{norm, Camera};
use artfield::neuralfield::{field_eval, hyper_map, keypoint_predict, rgb_head, seg_head, ArchConfig, LatentCode, ModelWeights};
use artfield::raymarch::{argmax, march, pixel_ray, render_view, Ray};
use artfield::worldgen::scene::Category;
use gradcore::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_arch() -> ArchConfig {
    ArchConfig {
        k_obj: 4,
        field_hidden: 8,
        feature_dim: 6,
        hyper_hidden: 10,
        hyper_out_std: 0.3,
        rm_hidden: 4,
        n_march: 5,
        head_hidden: 6,
        kp_hidden: 8,
        ..ArchConfig::default()
    }
}

fn zeroed(arch: &ArchConfig, prefix: &str) -> ModelWeights {
    let mut w = ModelWeights::init(arch, 1).unwrap();
    for (name, t) in w.tensors.iter_mut() {
        if name.starts_with(prefix) {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    w
}

fn code(q: f64, arch: &ArchConfig) -> LatentCode {
    LatentCode::from_q(q, (0..arch.k_obj).map(|i| 0.1 * i as f64 - 0.15).collect()).unwrap()
}

fn camera(w: usize, h: usize) -> Camera {
    Camera::look_at([0.9, -2.1, 1.0], [0.0; 3], 45.0, w, h).unwrap()
}

#[test]
fn scaled_z_art_gives_identical_theta() {
    let arch = small_arch();
    let w = ModelWeights::init(&arch, 4).unwrap().shared();
    let a = LatentCode::new([0.6, 0.8], vec![0.2; 4]);
    let b = LatentCode::new([3.0, 4.0], vec![0.2; 4]);
    let ta = hyper_map(&w, &a).unwrap();
    let tb = hyper_map(&w, &b).unwrap();
    assert!(ta.max_abs_diff(&tb) < 1e-14);
    let ka = keypoint_predict(&w, &a, Category::Closet).unwrap();
    let kb = keypoint_predict(&w, &b, Category::Closet).unwrap();
    assert!(ka.rmse(&kb) < 1e-14);
}

#[test]
fn zero_output_layer_emits_its_bias() {
    let arch = small_arch();
    let mut w = ModelWeights::init(&arch, 2).unwrap();
    w.tensors.get_mut("hyper.l1.w").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    let bias = w.tensors["hyper.l1.b"].data().to_vec();
    let shared = w.shared();
    for q in [0.0, 0.4, 1.0] {
        let theta = hyper_map(&shared, &code(q, &arch)).unwrap();
        assert_eq!(theta.data(), bias.as_slice());
    }
}

#[test]
fn field_batching_matches_single_points() {
    let arch = small_arch();
    let shared = ModelWeights::init(&arch, 3).unwrap().shared();
    let theta = hyper_map(&shared, &code(0.3, &arch)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xs: Vec<[f64; 3]> = (0..100).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let batch = field_eval(&arch, &theta, &xs).unwrap();
    let n = arch.feature_dim;
    for (i, x) in xs.iter().enumerate() {
        let single = field_eval(&arch, &theta, std::slice::from_ref(x)).unwrap();
        assert_eq!(single.data(), &batch.data()[i * n..(i + 1) * n]);
    }
    assert_eq!(field_eval(&arch, &theta, &xs).unwrap(), batch);
}

#[test]
fn zero_rgb_head_is_mid_grey_and_outputs_are_bounded() {
    let arch = small_arch();
    let w = zeroed(&arch, "rgb.").shared();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = Tensor::new(vec![10, arch.feature_dim], (0..10 * arch.feature_dim).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    assert!(rgb_head(&w, &v).unwrap().data().iter().all(|&c| c == 0.5));

    let w = ModelWeights::init(&arch, 5).unwrap().shared();
    let v = Tensor::new(vec![1000, arch.feature_dim], (0..1000 * arch.feature_dim).map(|_| rng.random_range(-50.0..50.0)).collect()).unwrap();
    assert!(rgb_head(&w, &v).unwrap().data().iter().all(|c| (0.0..=1.0).contains(c)));
}

#[test]
fn zero_seg_head_is_uniform_and_argmax_is_shift_invariant() {
    let arch = small_arch();
    let w = zeroed(&arch, "seg.").shared();
    let v = Tensor::full(&[3, arch.feature_dim], 0.7);
    let logits = seg_head(&w, &v).unwrap();
    assert!(logits.data().iter().all(|&l| l == 0.0));
    assert_eq!(argmax(logits.data()), 0);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let row: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c: f64 = rng.random_range(-10.0..10.0);
        let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
        assert_eq!(argmax(&row), argmax(&shifted));
    }
}

#[test]
fn zero_raymarcher_takes_equal_steps() {
    let arch = small_arch();
    let mut w = zeroed(&arch, "rm.");
    let bias = 0.2f64;
    w.tensors.get_mut("rm.out.b").unwrap().data_mut()[0] = bias;
    let shared = w.shared();
    let theta = hyper_map(&shared, &code(0.5, &arch)).unwrap();
    let ray = Ray::bounded([0.0, -2.5, 0.3], [0.0, 1.0, 0.0], arch.scene_radius);
    let r = march(&shared, &theta, &ray).unwrap();
    let step = bias.exp().ln_1p();
    assert!((r.d_final - (ray.d_near + arch.n_march as f64 * step)).abs() < 1e-12);
    assert_eq!(r, march(&shared, &theta, &ray).unwrap());
}

#[test]
fn rays_are_unit() {
    let cam = camera(128, 128);
    for v in (0..128).step_by(7) {
        for u in (0..128).step_by(5) {
            let r = pixel_ray(&cam, u, v, 1.75).unwrap();
            assert!((norm(r.direction) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_field_renders_constant_image() {
    let arch = small_arch();
    let w = zeroed(&arch, "hyper.").shared();
    let out = render_view(&w, &code(0.2, &arch), &camera(8, 8)).unwrap();
    assert!(out.rgb.chunks(3).all(|p| p == &out.rgb[..3]));
    assert!(out.seg.iter().all(|&s| s == out.seg[0]));
}

#[test]
fn uniform_logits_render_as_class_zero() {
    let arch = small_arch();
    let w = zeroed(&arch, "seg.").shared();
    let out = render_view(&w, &code(0.6, &arch), &camera(8, 8)).unwrap();
    assert!(out.seg.iter().all(|&s| s == 0));
}

#[test]
fn rendering_is_bit_identical() {
    let arch = small_arch();
    let w = ModelWeights::init(&arch, 8).unwrap().shared();
    let z = code(0.7, &arch);
    let a = render_view(&w, &z, &camera(12, 10)).unwrap();
    let b = render_view(&w, &z, &camera(12, 10)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rgb.len(), 3 * 120);
}
