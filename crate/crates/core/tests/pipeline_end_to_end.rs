//! Embed, attack and extract through the full pipeline with the toy models.

use std::time::Instant;

use inversemark::config::{watermark_bit_length, ToyParams};
use inversemark::harness::{gshade_run_key, InjectorKind, KeyPlan};
use inversemark::metrics::bit_accuracy;
use inversemark::pipeline::{toy_predictor, ToyKind};
use inversemark::treering::tr_make_key;
use inversemark::{
    AnalyticCodec, BitString, Error, Extraction, ImageTensor, Injector, Pipeline, PipelineConfig,
    RunConfig, Shape, Tensor3, WatermarkKey,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smooth_cover(side: usize, phase: f64) -> ImageTensor {
    let s = side as f64;
    ImageTensor::new(Tensor3::from_fn(Shape::new(3, side, side), |c, y, x| {
        let (u, v) = (x as f64 / s, y as f64 / s);
        0.45 + 0.25 * (6.0 * u + phase).sin() * (4.0 * v - phase).cos() + 0.08 * c as f64 * u
    }))
    .unwrap()
}

fn build(
    cfg: &PipelineConfig,
    conditioned: bool,
) -> (AnalyticCodec, Box<dyn inversemark::NoisePredictor>) {
    let codec = AnalyticCodec::new(0.05).unwrap();
    let toy = ToyParams {
        conditioned,
        ..ToyParams::default()
    };
    let sched = cfg.sampling_schedule().unwrap();
    let model = toy_predictor(ToyKind::Linear, &toy, cfg, &sched, &codec).unwrap();
    (codec, model)
}

fn gs(payload: BitString, f_c: usize, f_hw: usize, rng: &mut impl Rng) -> Injector {
    Injector::GaussianShading(WatermarkKey {
        cipher_key: rng.random(),
        nonce: rng.random(),
        f_c,
        f_hw,
        payload,
    })
}

#[test]
fn default_config_identity_and_fidelity() {
    let cfg = PipelineConfig::default();
    let (codec, model) = build(&cfg, true);
    let p = Pipeline::new(&cfg, model.as_ref(), &codec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let key = gs(BitString::random(32, &mut rng), 2, 32, &mut rng);
    let start = Instant::now();
    let emb = p.embed(&smooth_cover(512, 0.3), &key, 9).unwrap();
    let ext = p.extract(&emb.watermarked, &key).unwrap();
    println!(
        "default config: psnr {:.2} dB, ssim {:.4}, {:?}",
        emb.fidelity.psnr,
        emb.fidelity.ssim,
        start.elapsed()
    );
    assert_eq!(ext.score(), 1.0);
    assert!(emb.fidelity.psnr >= 25.0, "{}", emb.fidelity.psnr);
    assert!(emb.fidelity.ssim > 0.5);
    assert_eq!(emb.watermarked.shape(), Shape::new(3, 512, 512));
    assert_eq!(emb.super_resolved.shape(), Shape::new(3, 512, 512));
    assert_eq!(ext.inverted_latent.shape(), Shape::new(4, 128, 128));
}

#[test]
fn table4_resolutions_carry_their_bit_lengths() {
    for (res, bits) in [(256, 8), (384, 18), (512, 32), (640, 50), (768, 72)] {
        let cfg = PipelineConfig {
            s_low: res / 4,
            resolution: res,
            infer_steps: 5,
            invert_steps: 5,
            ..PipelineConfig::default()
        };
        let (codec, model) = build(&cfg, true);
        let p = Pipeline::new(&cfg, model.as_ref(), &codec).unwrap();
        let latent = p.latent_shape();
        assert_eq!(
            watermark_bit_length(latent.channels, latent.height, latent.width, 2, 32).unwrap(),
            bits
        );
        let mut rng = ChaCha8Rng::seed_from_u64(res as u64);
        let key = gs(BitString::random(bits, &mut rng), 2, 32, &mut rng);
        let emb = p.embed(&smooth_cover(res, 1.0), &key, 2).unwrap();
        let ext = p.extract(&emb.watermarked, &key).unwrap();
        match ext.outcome {
            Extraction::Bits {
                bits: got,
                accuracy,
            } => {
                assert_eq!(got.len(), bits);
                assert_eq!(accuracy, 1.0, "resolution {res}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

fn small_cfg() -> PipelineConfig {
    PipelineConfig {
        s_low: 32,
        resolution: 128,
        infer_steps: 10,
        invert_steps: 10,
        ..PipelineConfig::default()
    }
}

#[test]
fn wrong_key_reads_coin_flips() {
    let cfg = small_cfg();
    let (codec, model) = build(&cfg, true);
    let p = Pipeline::new(&cfg, model.as_ref(), &codec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cover = smooth_cover(128, 0.0);
    let trials = 200;
    let mut total = 0.0;
    for t in 0..trials {
        let payload = BitString::random(64, &mut rng);
        let key = gs(payload.clone(), 1, 8, &mut rng);
        let emb = p.embed(&cover, &key, t).unwrap();
        let wrong = gs(payload.clone(), 1, 8, &mut rng);
        let ext = p.extract(&emb.watermarked, &wrong).unwrap();
        let Extraction::Bits { bits, .. } = ext.outcome else {
            unreachable!()
        };
        total += bit_accuracy(&bits, &payload).unwrap();
    }
    let mean = total / trials as f64;
    // 200 x 64 fair bits: SE ~ 0.0044
    assert!((mean - 0.5).abs() < 0.02, "{mean}");
}

#[test]
fn unwatermarked_cover_does_not_carry_the_payload() {
    let cfg = small_cfg();
    let (codec, model) = build(&cfg, true);
    let p = Pipeline::new(&cfg, model.as_ref(), &codec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut total = 0.0;
    for i in 0..50 {
        let key = gs(BitString::random(64, &mut rng), 1, 8, &mut rng);
        total += p
            .extract(&smooth_cover(128, i as f64 * 0.37), &key)
            .unwrap()
            .score();
    }
    let mean = total / 50.0;
    assert!((mean - 0.5).abs() < 0.05, "{mean}");
}

#[test]
fn treering_end_to_end() {
    let cfg = PipelineConfig {
        s_low: 64,
        resolution: 256,
        infer_steps: 10,
        invert_steps: 10,
        ..PipelineConfig::default()
    };
    let (codec, model) = build(&cfg, true);
    let p = Pipeline::new(&cfg, model.as_ref(), &codec).unwrap();
    let key = Injector::TreeRing(tr_make_key(10, 17, 0.01, 64, 64).unwrap());
    let emb = p.embed(&smooth_cover(256, 0.5), &key, 5).unwrap();
    let ext = p.extract(&emb.watermarked, &key).unwrap();
    let Extraction::Detection(r) = ext.outcome else {
        unreachable!()
    };
    assert!(r.detected && r.p_value < 1e-10, "{r:?}");
}

#[test]
fn mismatched_key_shape_is_invalid_argument() {
    let cfg = small_cfg();
    let (codec, model) = build(&cfg, true);
    let p = Pipeline::new(&cfg, model.as_ref(), &codec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // f_hw = 3 does not divide the 32-wide latent
    let key = gs(BitString::random(4, &mut rng), 1, 3, &mut rng);
    assert!(matches!(
        p.embed(&smooth_cover(128, 0.0), &key, 0),
        Err(Error::InvalidArgument(_))
    ));
    let ring = Injector::TreeRing(tr_make_key(4, 1, 0.01, 16, 16).unwrap());
    assert!(matches!(
        p.embed(&smooth_cover(128, 0.0), &ring, 0),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn key_plan_reuses_the_cipher_key_and_varies_payloads() {
    let cfg = RunConfig {
        seed: 11,
        ..RunConfig::default()
    };
    let plan = KeyPlan::new(InjectorKind::Gshade, &cfg);
    let latent = Shape::new(4, 128, 128);
    let run_key = gshade_run_key(11, &cfg);
    let keys: Vec<WatermarkKey> = (0..4)
        .map(|i| match plan.injector(i, latent).unwrap() {
            Injector::GaussianShading(k) => k,
            _ => unreachable!(),
        })
        .collect();
    for k in &keys {
        assert_eq!((k.cipher_key, k.nonce), (run_key.cipher_key, run_key.nonce));
        assert_eq!(k.payload.len(), 32);
    }
    assert_ne!(keys[0].payload, keys[1].payload);
    let again = KeyPlan::new(InjectorKind::Gshade, &cfg)
        .injector(2, latent)
        .unwrap();
    assert_eq!(again, Injector::GaussianShading(keys[2].clone()));
}
