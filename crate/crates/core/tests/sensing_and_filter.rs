use std::f64::consts::PI;

use convloc_core::formats::{read_band_volume, read_heatmap, read_volume, write_band_volume, write_heatmap, write_volume};
use convloc_core::simulator::{read_frames, write_frames};
use convloc_core::{
    bayes_update, decode_bands, encode_bands, generate_trajectory, oracle_observe, run_filter, simulate_frames,
    BandSpec, Distractor, DistractorPlacement, FilterConfig, GridSpec, Heatmap, InitMode, KernelSpec,
    LikelihoodVolume, NoiseParams, OracleParams, Pose2D, SensorMode, TrajectoryShape, TrajectorySpec,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid() -> GridSpec {
    GridSpec::new(16, 40, 40, 0.5, 0.5, (0.0, 0.0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn decoded_bands_are_monotone_in_probability(
        ps in prop::collection::vec(0.0f64..=1.0, 2..30),
        n_bands in 2usize..16,
        top in 1usize..16,
    ) {
        prop_assume!(top < n_bands);
        let spec = BandSpec::new(n_bands, top).unwrap();
        let h = Heatmap::from_values(ps.len(), 1, ps.clone()).unwrap();
        let decoded = decode_bands(&encode_bands(&h, &spec).unwrap(), &spec).unwrap();
        for i in 0..ps.len() {
            for j in 0..ps.len() {
                if ps[i] <= ps[j] {
                    prop_assert!(decoded.values()[i] <= decoded.values()[j] + 1e-15);
                }
            }
            prop_assert!((0.0..=1.0).contains(&decoded.values()[i]));
        }
    }

    #[test]
    fn bayes_update_is_a_normalized_product(
        prior_raw in prop::collection::vec(0.0f64..1.0, 1..20),
        sensor_raw in prop::collection::vec(0.0f64..1.0, 1..20),
    ) {
        let spec = GridSpec::new(3, 4, 5, 1.0, 1.0, (0.0, 0.0)).unwrap();
        let values: Vec<f64> = (0..60).map(|i| prior_raw[i % prior_raw.len()] + 1e-3).collect();
        let mut prior = LikelihoodVolume::from_values(spec, values).unwrap();
        prior.normalize().unwrap();
        let s: Vec<f64> = (0..20).map(|i| sensor_raw[i % sensor_raw.len()]).collect();
        let sensor = Heatmap::from_values(4, 5, s.clone()).unwrap();
        let (post, _) = bayes_update(&prior, &sensor).unwrap();
        prop_assert!((post.total_mass() - 1.0).abs() < 1e-12);
        let z: f64 = prior.values().iter().enumerate().map(|(i, p)| p * s[i % 20].max(1e-6)).sum();
        for (i, (&a, &p)) in post.values().iter().zip(prior.values()).enumerate() {
            prop_assert!((a - p * s[i % 20].max(1e-6) / z).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_is_reproducible(seed in any::<u64>(), x in 1.0f64..19.0, y in 1.0f64..19.0, th in -PI..PI) {
        let params = OracleParams {
            sigma_obs: 1.0,
            distractors: vec![Distractor { placement: DistractorPlacement::BodyOffset { forward: 3.0, left: 1.0 }, weight: 0.5 }],
            floor: 0.02,
            dropout_prob: 0.3,
        };
        let pose = Pose2D::new(x, y, th);
        let a = oracle_observe(&pose, &grid(), &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = oracle_observe(&pose, &grid(), &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn binary_formats_round_trip(raw in prop::collection::vec(0.0f32..1.0, 1..30)) {
        let spec = GridSpec::new(2, 3, 5, 0.25, 0.5, (-1.0, 2.0)).unwrap();
        let values: Vec<f64> = (0..30).map(|i| f64::from(raw[i % raw.len()])).collect();
        let vol = LikelihoodVolume::from_values(spec, values.clone()).unwrap();
        let mut bytes = Vec::new();
        write_volume(&mut bytes, &vol).unwrap();
        prop_assert_eq!(read_volume(&bytes).unwrap(), vol);

        let h = Heatmap::from_values(3, 10, values).unwrap();
        bytes.clear();
        write_heatmap(&mut bytes, &h).unwrap();
        prop_assert_eq!(read_heatmap(&bytes).unwrap(), h.clone());

        let bands = BandSpec::new(4, 1).unwrap();
        let bv = encode_bands(&h, &bands).unwrap();
        bytes.clear();
        write_band_volume(&mut bytes, &bv).unwrap();
        prop_assert_eq!(read_band_volume(&bytes).unwrap(), bv);
    }
}

fn corridor(n: usize) -> TrajectorySpec {
    TrajectorySpec {
        shape: TrajectoryShape::Corridor,
        step_length: 0.25,
        n_steps: n,
        start: Pose2D::new(3.0, 10.0, 0.0),
    }
}

#[test]
fn noiseless_known_start_tracks_ground_truth() {
    let g = grid();
    let gt = generate_trajectory(&corridor(50), &g).unwrap();
    let oracle = OracleParams {
        sigma_obs: 0.5,
        floor: 0.01,
        ..OracleParams::default()
    };
    let frames = simulate_frames(&gt, &g, &NoiseParams::default(), &oracle, 1, 2).unwrap();
    let kspec = KernelSpec::new(3, 5, 5, 0.3).unwrap();
    let config = FilterConfig {
        init: InitMode::KnownStart,
        ..FilterConfig::default()
    };
    let steps = run_filter(&frames, &g, &kspec, &BandSpec::new(10, 2).unwrap(), &config).unwrap();
    assert_eq!(steps.len(), 50);
    for (s, p) in steps.iter().zip(&gt) {
        assert!(s.estimate.pose.distance(p) <= 0.5, "t={} {:?} vs {:?}", s.t, s.estimate.pose, p);
        assert!((s.diagnostics.total_mass - 1.0).abs() < 1e-9);
    }
}

#[test]
fn uniform_start_localizes_from_observations() {
    let g = grid();
    let gt = generate_trajectory(&corridor(40), &g).unwrap();
    let oracle = OracleParams {
        sigma_obs: 0.75,
        floor: 0.05,
        ..OracleParams::default()
    };
    let noise = NoiseParams {
        a1: 0.02,
        a2: 0.001,
        a3: 0.01,
        a4: 0.0,
    };
    let frames = simulate_frames(&gt, &g, &noise, &oracle, 5, 6).unwrap();
    let kspec = KernelSpec::new(3, 5, 5, 0.3).unwrap();
    for sensor in [SensorMode::Raw, SensorMode::Bands] {
        let config = FilterConfig {
            noise,
            sensor,
            ..FilterConfig::default()
        };
        let steps = run_filter(&frames, &g, &kspec, &BandSpec::new(10, 2).unwrap(), &config).unwrap();
        let late: Vec<f64> = steps[10..].iter().zip(&gt[10..]).map(|(s, p)| s.estimate.pose.distance(p)).collect();
        let worst = late.iter().copied().fold(0.0, f64::max);
        assert!(worst < 1.0, "{sensor:?}: worst late error {worst}");
    }
}

#[test]
fn frame_directory_round_trip() {
    let g = grid();
    let gt = generate_trajectory(&corridor(6), &g).unwrap();
    let noise = NoiseParams {
        a1: 0.01,
        a2: 0.01,
        a3: 0.01,
        a4: 0.01,
    };
    let frames = simulate_frames(&gt, &g, &noise, &OracleParams::default(), 3, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_frames(dir.path(), &frames).unwrap();
    let back = read_frames(dir.path()).unwrap();
    assert_eq!(back.len(), frames.len());
    for (a, b) in back.iter().zip(&frames) {
        assert_eq!(a.t, b.t);
        assert!(a.gt_pose.distance(&b.gt_pose) < 1e-12);
        assert_eq!(a.odom_motion, b.odom_motion);
        // f32 payload
        let err = a
            .observation
            .values()
            .iter()
            .zip(b.observation.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6);
    }

    std::fs::remove_file(convloc_core::simulator::observation_path(dir.path(), 4)).unwrap();
    let err = read_frames(dir.path()).unwrap_err().to_string();
    assert!(err.contains("frame 4"), "{err}");
}
