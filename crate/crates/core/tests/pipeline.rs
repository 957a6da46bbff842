//! Cross-module behavior: generation, files, preprocessing and sampling.

use insole_motion::conditioning::ComponentIndex;
use insole_motion::data::{Skeleton, INSOLE_CHANNELS};
use insole_motion::dataset::{read_recordings, write_recordings};
use insole_motion::denoiser::{DenoiserConfig, PoseDenoiser};
use insole_motion::diffusion::{sample, sample_long, DiffusionSchedule, PredictionMode, SamplerConfig};
use insole_motion::preprocess::{
    insole_matrix, pose_matrix, rotate_about_vertical, sliding_windows, to_world_frame, StandardizationStats,
    WorldFrameOptions,
};
use insole_motion::sensor_layout::SensorLayout;
use insole_motion::synth::{generate, GaitKind, GaitStyle};
use insole_nn::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn walk(seconds: f64, seed: u64) -> insole_motion::dataset::Recording {
    let mut style = GaitStyle::preset(GaitKind::Walk);
    style.noise_level = 0.05;
    generate(&style, seconds, seed).unwrap().recording
}

#[test]
fn dataset_files_round_trip_exactly() {
    let recs = vec![walk(4.0, 1), generate(&GaitStyle::preset(GaitKind::Jog), 4.0, 2).unwrap().recording];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_recordings(&path, &recs).unwrap();
    let back = read_recordings(&path).unwrap();
    assert_eq!(back, recs);
    let again = dir.path().join("e.jsonl");
    write_recordings(&again, &back).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn windows_and_statistics_of_a_generated_walk() {
    let rec = to_world_frame(&walk(10.0, 3), WorldFrameOptions::default()).unwrap();
    let windows = sliding_windows(&rec, 32, 8).unwrap();
    assert_eq!(windows.len(), (300 - 32) / 8 + 1);
    let stats = StandardizationStats::fit(&windows).unwrap();
    let raw = insole_matrix(windows.iter().flat_map(|w| &w.insoles));
    let z = stats.insole.standardize(&raw).unwrap();
    let rows = z.len() / INSOLE_CHANNELS;
    for c in 0..INSOLE_CHANNELS {
        let mean = (0..rows).map(|r| z[r * INSOLE_CHANNELS + c]).sum::<f64>() / rows as f64;
        assert!(mean.abs() < 1e-9, "channel {c} mean {mean}");
    }
    let back = stats.insole.destandardize(&z).unwrap();
    for (a, b) in back.iter().zip(&raw) {
        assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
    }
}

#[test]
fn sampling_is_seeded_and_single_window_long_sampling_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = DenoiserConfig {
        d: 16,
        ff_dim: 24,
        layers: 1,
        heads_self: 2,
        steps: 10,
        window: 8,
        dropout: 0.0,
        ..DenoiserConfig::default()
    };
    let skel = Skeleton::default_22();
    let model = PoseDenoiser::<f32>::new(cfg, skel.partition_map(), ComponentIndex::new(&SensorLayout::default()).unwrap(), &mut rng).unwrap();
    let schedule = DiffusionSchedule::linear(10, 1e-4, 0.02).unwrap();
    let insole = Tensor::<f32>::from_f64(&[8, INSOLE_CHANNELS], &vec![0.1; 8 * INSOLE_CHANNELS]).unwrap();
    let p = model.pose_dim();
    let a = sample(&model, &schedule, PredictionMode::PredictClean, &insole, p, 5).unwrap();
    let b = sample(&model, &schedule, PredictionMode::PredictClean, &insole, p, 5).unwrap();
    let c = sample(&model, &schedule, PredictionMode::PredictClean, &insole, p, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let sampler = SamplerConfig {
        mode: PredictionMode::PredictClean,
        overlap: 3,
        seed: 5,
    };
    assert_eq!(sample_long(&model, &schedule, &insole, 8, p, &sampler).unwrap(), a);
    let long = Tensor::<f32>::from_f64(&[29, INSOLE_CHANNELS], &vec![0.1; 29 * INSOLE_CHANNELS]).unwrap();
    assert_eq!(sample_long(&model, &schedule, &long, 8, p, &sampler).unwrap().rows(), 29);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn vertical_rotations_compose(a in -3.2f64..3.2, b in -3.2f64..3.2) {
        let rec = to_world_frame(&walk(4.0, 9), WorldFrameOptions::default()).unwrap();
        let skel = rec.header.skeleton.clone();
        let w = &sliding_windows(&rec, 20, 20).unwrap()[0];
        let twice = rotate_about_vertical(&rotate_about_vertical(w, &skel, a), &skel, b);
        let once = rotate_about_vertical(w, &skel, a + b);
        let (p1, p2) = (pose_matrix(&twice.poses), pose_matrix(&once.poses));
        let (i1, i2) = (insole_matrix(&twice.insoles), insole_matrix(&once.insoles));
        for (x, y) in p1.iter().zip(&p2).chain(i1.iter().zip(&i2)) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}
