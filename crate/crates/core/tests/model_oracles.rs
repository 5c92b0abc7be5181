//! Scheduler, toy predictor and analytic codec against independent oracles.

use inversemark::config::{watermark_bit_length, PipelineConfig};
use inversemark::scheduler::{ddim_invert, ddim_sample, make_schedule, SchedulerConfig};
use inversemark::tensor::{ImageTensor, LatentTensor, Shape, Tensor3};
use inversemark::{
    AnalyticCodec, LatentCodec, LinearToyPredictor, NoisePredictor, ZeroToyPredictor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(shape: Shape, seed: u64) -> LatentTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LatentTensor::from_fn(shape, |_, _, _| StandardNormal.sample(&mut rng))
}

/// scaled_linear abar table and 25-point grid written out from scratch.
fn oracle_schedule() -> (Vec<f64>, Vec<usize>) {
    let (b0, b1) = (1e-4f64.sqrt(), 2e-2f64.sqrt());
    let mut abar = Vec::new();
    let mut prod = 1.0;
    for i in 0..1000 {
        let beta = (b0 + (b1 - b0) * i as f64 / 999.0).powi(2);
        prod *= 1.0 - beta;
        abar.push(prod);
    }
    let grid = (0..25)
        .rev()
        .map(|k| (999.0 * k as f64 / 24.0).round() as usize)
        .collect();
    (abar, grid)
}

#[test]
fn schedule_matches_oracle() {
    let sched = make_schedule(&SchedulerConfig::default()).unwrap();
    let (abar, grid) = oracle_schedule();
    assert_eq!(sched.timesteps(), grid.as_slice());
    assert_eq!(grid.first(), Some(&999));
    assert_eq!(grid.last(), Some(&0));
    for (a, b) in sched.alpha_bar().iter().zip(&abar) {
        assert!((a - b).abs() <= 1e-14 * b.max(1e-300), "{a} vs {b}");
    }
}

#[test]
fn linear_sampling_equals_composed_scalar_maps() {
    let (abar, grid) = oracle_schedule();
    // eps = 0.1 z makes every step z <- (r + 0.1 d) z with r, d from the DDIM update
    let mut gain = 1.0;
    for w in grid.windows(2) {
        let (at, as_) = (abar[w[0]], abar[w[1]]);
        let x0_coef = (1.0 - 0.1 * (1.0 - at).sqrt()) / at.sqrt();
        gain *= as_.sqrt() * x0_coef + 0.1 * (1.0 - as_).sqrt();
    }
    let shape = Shape::new(4, 8, 8);
    let model = LinearToyPredictor::new(0.1, 0.0, shape, Shape::new(3, 8, 8)).unwrap();
    let cond = ImageTensor::filled(Shape::new(3, 8, 8), 0.5).unwrap();
    let sched = make_schedule(&SchedulerConfig::default()).unwrap();
    let z = gaussian(shape, 5);
    let out = ddim_sample(&model, &z, &cond, &sched).unwrap();
    for (o, v) in out.data().iter().zip(z.data()) {
        assert!(
            (o - gain * v).abs() <= 1e-12 * (1.0 + v.abs()),
            "{o} vs {}",
            gain * v
        );
    }
}

#[test]
fn conditioned_linear_on_grey_is_hand_affine() {
    let p =
        LinearToyPredictor::new(0.1, 0.05, Shape::new(4, 16, 16), Shape::new(3, 16, 16)).unwrap();
    let cond = ImageTensor::filled(Shape::new(3, 16, 16), 0.5).unwrap();
    let z = gaussian(Shape::new(4, 16, 16), 9);
    let out = p.predict(&z, 500, &cond).unwrap();
    for (o, v) in out.data().iter().zip(z.data()) {
        assert!((o - (0.1 * v + 0.05 * 0.5)).abs() < 1e-15);
    }
}

#[test]
fn inversion_round_trip_on_4x32x32() {
    let shape = Shape::new(4, 32, 32);
    let cond_shape = Shape::new(3, 32, 32);
    let sched = make_schedule(&SchedulerConfig::default()).unwrap();
    let cond = ImageTensor::filled(cond_shape, 0.3).unwrap();
    let models: Vec<Box<dyn NoisePredictor>> = vec![
        Box::new(ZeroToyPredictor::new(shape, cond_shape)),
        Box::new(LinearToyPredictor::new(0.5, 0.0, shape, cond_shape).unwrap()),
        Box::new(LinearToyPredictor::new(-0.5, 0.2, shape, cond_shape).unwrap()),
    ];
    for (i, m) in models.iter().enumerate() {
        let z = gaussian(shape, 100 + i as u64);
        let x = ddim_sample(m.as_ref(), &z, &cond, &sched).unwrap();
        let back = ddim_invert(m.as_ref(), &x, &cond, &sched, 20).unwrap();
        assert!(
            back.max_abs_diff(&z) <= 1e-4,
            "model {i}: {}",
            back.max_abs_diff(&z)
        );
    }
}

/// `0.5 * sum_p H[k][p] * primitive_p(i, j)` with the primitives spelled out.
fn hand_tile(k: usize, i: usize, j: usize) -> f64 {
    let flat = 1.0 / 48f64.sqrt();
    let ramp = 1.0 / 60f64.sqrt();
    let prims = [
        flat,
        (j as f64 - 1.5) * ramp,
        (i as f64 - 1.5) * ramp,
        if (i + j).is_multiple_of(2) {
            flat
        } else {
            -flat
        },
    ];
    let signs: [[f64; 4]; 4] = [
        [1.0, 1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0],
        [1.0, 1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0, 1.0],
    ];
    0.5 * (0..4).map(|p| signs[k][p] * prims[p]).sum::<f64>()
}

#[test]
fn unit_latent_decodes_to_hand_tile() {
    let codec = AnalyticCodec::new(0.05).unwrap();
    let ones = LatentTensor::new(Tensor3::filled(Shape::new(4, 2, 2), 1.0)).unwrap();
    let img = codec.decode(&ones).unwrap();
    // The Hadamard columns p > 0 cancel: every pixel is 0.05 * 2 / sqrt(48).
    let expect = 0.05 * 2.0 / 48f64.sqrt();
    assert!(img.data().iter().all(|v| (v - expect).abs() < 1e-15));

    for k in 0..4 {
        let mut impulse = Tensor3::zeros(Shape::new(4, 2, 2));
        let mut data = impulse.data().to_vec();
        data[(k * 2 + 1) * 2] = 1.0; // channel k, tile (1, 0)
        impulse = Tensor3::new(impulse.shape(), data).unwrap();
        let img = codec.decode(&LatentTensor::new(impulse).unwrap()).unwrap();
        for c in 0..3 {
            for py in 0..8 {
                for px in 0..8 {
                    let inside = py >= 4 && px < 4;
                    let want = if inside {
                        0.05 * hand_tile(k, py - 4, px)
                    } else {
                        0.0
                    };
                    assert!(
                        (img.get(c, py, px) - want).abs() < 1e-15,
                        "k={k} c={c} ({py},{px})"
                    );
                }
            }
        }
    }
}

#[test]
fn codec_scaling_and_left_inverse() {
    let codec = AnalyticCodec::new(0.05).unwrap();
    assert_eq!(
        codec.latent_shape_for(512, 512).unwrap(),
        Shape::new(4, 128, 128)
    );
    let z = gaussian(Shape::new(4, 128, 128), 3);
    let img = codec.decode(&z).unwrap();
    assert_eq!(img.shape(), Shape::new(3, 512, 512));
    let back = codec.project(&img).unwrap();
    assert!(back.max_abs_diff(&z) < 1e-11);
    let cfg = PipelineConfig::default();
    assert_eq!(cfg.resolution / cfg.s_low, 4);
    assert_eq!(watermark_bit_length(4, 128, 128, 2, 32).unwrap(), 32);
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(24) })]

    #[test]
    fn decode_then_project_is_identity(seed in any::<u64>(), gain in 0.01f64..2.0) {
        let codec = AnalyticCodec::new(gain).unwrap();
        let z = gaussian(Shape::new(4, 6, 5), seed);
        let back = codec.project(&codec.decode(&z).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&z) < 1e-10);
    }

    #[test]
    fn linear_round_trip_any_scale(seed in any::<u64>(), a in -0.5f64..0.5) {
        let shape = Shape::new(4, 8, 8);
        let cs = Shape::new(3, 8, 8);
        let sched = make_schedule(&SchedulerConfig::default()).unwrap();
        let m = LinearToyPredictor::new(a, 0.1, shape, cs).unwrap();
        let cond = ImageTensor::filled(cs, 0.7).unwrap();
        let z = gaussian(shape, seed);
        let x = ddim_sample(&m, &z, &cond, &sched).unwrap();
        let back = ddim_invert(&m, &x, &cond, &sched, 20).unwrap();
        prop_assert!(back.max_abs_diff(&z) <= 1e-4);
    }
}
