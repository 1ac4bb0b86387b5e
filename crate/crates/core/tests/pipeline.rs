//! End-to-end paths across modules.

use proptest::prelude::*;

use ris_core::baseline::{ao_optimize, AOConfig};
use ris_core::dataset::{generate, load, save, stream_rng, GenConfig};
use ris_core::geometry::{Point2, Polygon, SamplerConfig, Scene, SceneSampler};
use ris_core::policy::{infer, load_checkpoint, save_checkpoint, train, TrainConfig};
use ris_core::transmit::{weighted_sum_rate, POWER_SUM_TOL};
use ris_core::vision::{read_pgm, recover_scene, render_top_view, write_pgm, RasterGeometry, RecoverConfig, DEFAULT_THRESHOLD};

fn small_gen() -> GenConfig {
    GenConfig {
        n: 3,
        n_t: 3,
        scene: SamplerConfig { num_users: 2, ..SamplerConfig::default() },
        calibration_scenes: 200,
        ..GenConfig::default()
    }
}

fn square(cx: f64, cy: f64, half: f64) -> Polygon {
    Polygon::new(vec![
        Point2::new(cx - half, cy - half),
        Point2::new(cx + half, cy - half),
        Point2::new(cx + half, cy + half),
        Point2::new(cx - half, cy + half),
    ])
    .unwrap()
}

#[test]
fn pgm_file_feeds_the_vision_selection() {
    let ris = vec![Point2::new(12.0, 0.0), Point2::new(0.0, 12.0), Point2::new(-12.0, 0.0)];
    let users = vec![Point2::new(10.3, 6.1), Point2::new(-4.2, 9.7)];
    let obstacles = vec![square(6.1, 2.9, 1.8), square(-6.3, 4.1, 1.6)];
    let scene = Scene::new(ris, users, obstacles, 0.5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.pgm");
    write_pgm(&path, &render_top_view(&scene, RasterGeometry::default()).unwrap()).unwrap();
    let raster = read_pgm(&path).unwrap();
    let found = recover_scene(&raster, scene.ris().to_vec(), scene.kappa(), DEFAULT_THRESHOLD, &RecoverConfig::default()).unwrap();
    assert_eq!(found.obstacles().len(), 2);
    assert_eq!(found.users().len(), 2);
    assert_eq!(found.select_ris().unwrap(), scene.select_ris().unwrap());
    for (a, b) in scene.users().iter().zip(found.users()) {
        assert!(a.dist(b) < 0.2, "{a:?} vs {b:?}");
    }
}

#[test]
fn dataset_to_policy_to_rates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.risd");
    let (data, meta) = generate(&small_gen(), 256, 11).unwrap();
    save(&path, &data, &meta).unwrap();
    let (data, _) = load(&path).unwrap();
    let config = TrainConfig { epochs: 3, batch_size: 64, hidden: vec![32, 16], ..TrainConfig::default() };
    let outcome = train(&config, &data.samples).unwrap();
    let ckpt = dir.path().join("policy.rism");
    save_checkpoint(&ckpt, &outcome.params, &outcome.log).unwrap();
    let params = load_checkpoint(&ckpt).unwrap();
    assert_eq!(params, outcome.params);
    for ch in &data.samples[..20] {
        let out = infer(&params, ch).unwrap();
        assert!((out.power.as_slice().iter().sum::<f64>() - ch.p_max).abs() <= POWER_SUM_TOL);
        let direct = weighted_sum_rate(ch, &out.power, &out.phase).unwrap();
        assert!((out.weighted_sum_rate(&ch.user_weight) - direct).abs() < 1e-10);
        assert!((out.beamformers.total_power() - ch.p_max).abs() < 1e-9);
    }
}

#[test]
fn ao_on_generated_channels_is_feasible_and_monotone() {
    let (data, _) = generate(&small_gen(), 6, 12).unwrap();
    for (i, ch) in data.samples.iter().enumerate() {
        let r = ao_optimize(ch, &AOConfig { iterations: 8, inner_steps: 4, seed: i as u64, ..AOConfig::default() }).unwrap();
        assert!((r.power.as_slice().iter().sum::<f64>() - ch.p_max).abs() <= POWER_SUM_TOL);
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!((weighted_sum_rate(ch, &r.power, &r.phase).unwrap() - r.objective).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sampled_scenes_render_within_the_frame(seed in 0u64..10_000) {
        let sampler = SceneSampler::new(SamplerConfig::default()).unwrap();
        let scene = sampler.sample(&mut stream_rng(seed, 0)).unwrap();
        let raster = render_top_view(&scene, RasterGeometry::default()).unwrap();
        let found = recover_scene(&raster, scene.ris().to_vec(), scene.kappa(), DEFAULT_THRESHOLD, &RecoverConfig::default()).unwrap();
        prop_assert_eq!(found.users().len(), scene.users().len());
        prop_assert!(found.obstacles().len() <= scene.obstacles().len());
    }
}
