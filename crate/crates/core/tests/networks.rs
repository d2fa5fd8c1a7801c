mod common;

use corrector_core::fieldio::{regrid_bilinear, GridField, Space};
use corrector_core::netcore::{
    bilinear_upsample_2x, load_checkpoint, save_checkpoint, ArchSpec, Checkpoint, Discriminator, Generator, ModelParams, NoiseSample, Tensor,
};
use corrector_core::rng::stream;
use proptest::prelude::*;
use rand::Rng;

fn small_arch() -> ArchSpec {
    ArchSpec { in_channels: 24, width_divisor: 16, lo_size: 16 }
}

fn random_input(arch: ArchSpec, rng: &mut impl Rng) -> Tensor<f32> {
    let n = arch.lo_size;
    Tensor::from_vec(arch.in_channels, n, n, (0..arch.in_channels * n * n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn zero_named(params: &mut ModelParams<f32>, prefix: &str) {
    for (spec, t) in params.specs.iter().zip(params.tensors.iter_mut()) {
        if spec.name.starts_with(prefix) {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[test]
fn shape_pipeline_at_full_width() {
    let gen = Generator::new(ArchSpec::full_width()).unwrap();
    let shape = |name: &str| gen.graph().specs().iter().find(|s| s.name == name).unwrap().shape.clone();
    assert_eq!(shape("corrector.conv_in.weight"), vec![64, 24, 3, 3]);
    assert_eq!(shape("corrector.res1.conv2.weight"), vec![128, 128, 3, 3]);
    assert_eq!(shape("corrector.res2.conv2.weight"), vec![255, 255, 3, 3]);
    // noise joins as the 256th channel
    assert_eq!(shape("corrector.res3.conv1.weight"), vec![256, 256, 3, 3]);
    assert_eq!(shape("corrector.proxy_head.weight"), vec![1, 256, 3, 3]);
    assert_eq!(shape("superres.res4.conv2.weight"), vec![32, 32, 3, 3]);
    assert_eq!(shape("superres.head.weight"), vec![1, 32, 3, 3]);
}

#[test]
fn generator_output_shapes_and_range() {
    let arch = small_arch();
    let gen = Generator::new(arch).unwrap();
    let params: ModelParams<f32> = gen.init_params(3);
    let mut rng = stream(1, &[]);
    let (out, _) = gen.forward(&params, &random_input(arch, &mut rng), &NoiseSample::standard_normal(16, &mut rng)).unwrap();
    assert_eq!(out.hi_res.shape(), (1, 128, 128));
    assert_eq!(out.lo_res_proxy.shape(), (1, 16, 16));
    assert!(out.hi_res.data.iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(out.lo_res_proxy.is_finite());
}

#[test]
fn generator_is_deterministic() {
    let arch = small_arch();
    let gen = Generator::new(arch).unwrap();
    let params: ModelParams<f32> = gen.init_params(5);
    let mut rng = stream(2, &[]);
    let x = random_input(arch, &mut rng);
    let z = NoiseSample::standard_normal(16, &mut rng);
    let a = gen.forward(&params, &x, &z).unwrap().0;
    let b = gen.forward(&params, &x, &z).unwrap().0;
    assert_eq!(a, b);
}

#[test]
fn distinct_noise_gives_distinct_outputs() {
    let arch = small_arch();
    let gen = Generator::new(arch).unwrap();
    for seed in 0..10 {
        let params: ModelParams<f32> = gen.init_params(seed);
        let mut rng = stream(seed, &[1]);
        let x = random_input(arch, &mut rng);
        let a = gen.forward(&params, &x, &NoiseSample::standard_normal(16, &mut rng)).unwrap().0.hi_res;
        let b = gen.forward(&params, &x, &NoiseSample::standard_normal(16, &mut rng)).unwrap().0.hi_res;
        let max_diff = a.data.iter().zip(&b.data).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
        assert!(max_diff > 0.0, "seed {seed}: noise had no effect");
    }
}

#[test]
fn zero_head_outputs_one_half() {
    let arch = small_arch();
    let gen = Generator::new(arch).unwrap();
    let mut params: ModelParams<f32> = gen.init_params(9);
    zero_named(&mut params, "superres.head.");
    let mut rng = stream(4, &[]);
    let (out, _) = gen.forward(&params, &random_input(arch, &mut rng), &NoiseSample::standard_normal(16, &mut rng)).unwrap();
    assert!(out.hi_res.data.iter().all(|&v| v == 0.5));
}

#[test]
fn random_init_stays_finite() {
    let arch = small_arch();
    let gen = Generator::new(arch).unwrap();
    let params: ModelParams<f32> = gen.init_params(11);
    let mut rng = stream(5, &[]);
    for _ in 0..100 {
        let x = random_input(arch, &mut rng);
        let z = NoiseSample::standard_normal(16, &mut rng);
        let (out, _) = gen.forward(&params, &x, &z).unwrap();
        assert!(out.hi_res.is_finite() && out.lo_res_proxy.is_finite());
    }
}

#[test]
fn init_depends_on_seed_only() {
    let gen = Generator::new(small_arch()).unwrap();
    let a: ModelParams<f32> = gen.init_params(1);
    assert_eq!(a, gen.init_params(1));
    assert_ne!(a.tensors, gen.init_params::<f32>(2).tensors);
}

#[test]
fn rejects_wrong_shapes() {
    let arch = small_arch();
    let gen = Generator::new(arch).unwrap();
    let params: ModelParams<f32> = gen.init_params(0);
    let z = NoiseSample::zeros(16);
    assert!(gen.forward(&params, &Tensor::zeros(23, 16, 16), &z).is_err());
    assert!(gen.forward(&params, &Tensor::zeros(24, 16, 16), &NoiseSample::zeros(8)).is_err());
    let disc = Discriminator::new(arch).unwrap();
    let dp: ModelParams<f32> = disc.init_params(0);
    assert!(disc.score(&dp, &Tensor::zeros(24, 16, 16), &Tensor::zeros(1, 64, 64)).is_err());
}

#[test]
fn zero_critic_scores_zero() {
    let arch = small_arch();
    let disc = Discriminator::new(arch).unwrap();
    let mut params: ModelParams<f32> = disc.init_params(2);
    params.fill_zero();
    let mut rng = stream(6, &[]);
    let y = Tensor::from_vec(1, 128, 128, (0..128 * 128).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    assert_eq!(disc.score(&params, &random_input(arch, &mut rng), &y).unwrap(), 0.0);
}

#[test]
fn critic_scores_each_input_independently() {
    let arch = small_arch();
    let disc = Discriminator::new(arch).unwrap();
    let params: ModelParams<f32> = disc.init_params(8);
    let mut rng = stream(7, &[]);
    let x = random_input(arch, &mut rng);
    let y = Tensor::from_vec(1, 128, 128, (0..128 * 128).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let other = Tensor::from_vec(1, 128, 128, vec![0.3; 128 * 128]).unwrap();
    let first = disc.score(&params, &x, &y).unwrap();
    disc.score(&params, &x, &other).unwrap();
    assert_eq!(first, disc.score(&params, &x, &y).unwrap());
    assert!(first.is_finite());
}

#[test]
fn critic_input_gradient_matches_differences() {
    let case = common::GradCase::new(21);
    let err = case.critic_input_error(&mut stream(21, &[1]));
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn upsampling_matches_regrid() {
    let mut rng = stream(12, &[]);
    for (h, w) in [(1, 1), (2, 3), (5, 4), (16, 16)] {
        let values: Vec<f32> = (0..2 * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        let t = Tensor::from_vec(2, h, w, values.clone()).unwrap();
        let up = bilinear_upsample_2x(&t);
        assert_eq!(up.shape(), (2, 2 * h, 2 * w));
        for c in 0..2 {
            let field = GridField::new(values[c * h * w..(c + 1) * h * w].to_vec(), h, w, Space::Normalized).unwrap();
            let reference = regrid_bilinear(&field, 2 * h, 2 * w).unwrap();
            for (a, b) in up.channel(c).iter().zip(reference.values()) {
                assert!((a - b).abs() <= 1e-6, "{h}x{w}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn upsampling_keeps_constants() {
    let up = bilinear_upsample_2x(&Tensor::filled(3, 4, 5, 0.7f64));
    assert!(up.data.iter().all(|&v| (v - 0.7).abs() < 1e-15));
}

proptest! {
    #[test]
    fn upsampling_reproduces_ramps(h in 2usize..9, w in 2usize..9, a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
        let ramp = |r: f64, s: f64| a * r + b * s + c;
        let data = (0..h * w).map(|i| ramp((i / w) as f64 / (h - 1) as f64, (i % w) as f64 / (w - 1) as f64)).collect();
        let up = bilinear_upsample_2x(&Tensor::from_vec(1, h, w, data).unwrap());
        for i in 0..4 * h * w {
            let (r, s) = ((i / (2 * w)) as f64 / (2 * h - 1) as f64, (i % (2 * w)) as f64 / (2 * w - 1) as f64);
            prop_assert!((up.data[i] - ramp(r, s)).abs() < 1e-12);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let arch = small_arch();
    let gen = Generator::new(arch).unwrap();
    let disc = Discriminator::new(arch).unwrap();
    let g: ModelParams<f32> = gen.init_params(31);
    let d: ModelParams<f32> = disc.init_params(32);
    let mut ck = Checkpoint::new(arch, 31, "stage2");
    ck.insert_params("gen", &g);
    ck.insert_params("critic", &d);
    ck.metadata = serde_json::json!({"note": "round trip"});
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), "ck", &ck).unwrap();
    let back = load_checkpoint(dir.path(), "ck").unwrap();
    assert_eq!(back, ck);
    let mut g2: ModelParams<f32> = gen.init_params(0);
    back.extract_params("gen", &mut g2).unwrap();
    assert_eq!(g2.tensors, g.tensors);
    let mut wrong: ModelParams<f32> = disc.init_params(0);
    assert!(back.extract_params("gen", &mut wrong).is_err());
}

#[test]
fn truncated_checkpoint_blob_is_rejected() {
    let arch = small_arch();
    let g: ModelParams<f32> = Generator::new(arch).unwrap().init_params(1);
    let mut ck = Checkpoint::new(arch, 1, "final");
    ck.insert_params("gen", &g);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), "ck", &ck).unwrap();
    let blob = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e != "json"))
        .unwrap();
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_checkpoint(dir.path(), "ck").is_err());
}
