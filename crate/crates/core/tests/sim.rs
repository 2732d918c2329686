use std::collections::BTreeSet;

use bevswarm::config::RunConfig;
use bevswarm::hlfdc::HEADER_LEN;
use bevswarm::sim::episode::BOX_WIRE_BYTES;
use bevswarm::sim::scene::footprint_gap;
use bevswarm::sim::{
    generate_scene, run_episode, run_episodes, CollabStrategy, EpisodeConfig, EvalRange, Platform, Scene, SceneParams,
};
use bevswarm::Error;
use proptest::prelude::*;

fn setup(frames: usize) -> (Vec<Platform>, SceneParams, EpisodeConfig) {
    let mut cfg = RunConfig::default();
    cfg.scene.frames = frames;
    let platforms = cfg.platforms().unwrap();
    let params = cfg.scene_params(&platforms);
    (platforms, params, cfg.episode_config())
}

#[test]
fn scene_is_seeded_and_round_trips_as_text() {
    let (_, params, _) = setup(3);
    let a = generate_scene(11, &params).unwrap();
    let b = generate_scene(11, &params).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_scene(12, &params).unwrap());

    let text = a.to_text();
    assert_eq!(Scene::parse(&text, std::path::Path::new("scene.txt")).unwrap(), a);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.txt");
    a.save(&path).unwrap();
    assert_eq!(Scene::load(&path).unwrap(), a);
}

#[test]
fn scene_parse_reports_the_line() {
    let bad = "scene 60 0.5 1\nobj 0 1 vehicle 0 0 0 1.8 4.5 1.6 0 0 0\nobj 0 2 submarine 0 0 0 1 1 1 0 0 0\n";
    match Scene::parse(bad, std::path::Path::new("s.txt")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn full_size_area_is_accepted() {
    let params = SceneParams {
        area: 150.0,
        frames: 2,
        ..SceneParams::default()
    };
    let scene = generate_scene(0, &params).unwrap();
    assert_eq!(scene.area, 150.0);
    let too_big = SceneParams { area: 151.0, ..params };
    assert!(matches!(generate_scene(0, &too_big), Err(Error::Config(_))));
}

#[test]
fn infeasible_scene_is_an_error() {
    let crowded = SceneParams {
        area: 10.0,
        vehicles: 40,
        occlusion_pairs: 0,
        max_attempts: 200,
        ..SceneParams::default()
    };
    assert!(matches!(generate_scene(1, &crowded), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scenes_keep_clearance_and_constant_velocity(seed in 0u64..10_000) {
        let params = SceneParams::default();
        let scene = generate_scene(seed, &params).unwrap();
        let half = params.area / 2.0;
        let ids: Vec<u32> = scene.frames[0].iter().map(|o| o.id).collect();
        prop_assert_eq!(BTreeSet::from_iter(ids.iter().copied()).len(), ids.len());
        for (t, frame) in scene.frames.iter().enumerate() {
            prop_assert_eq!(frame.iter().map(|o| o.id).collect::<Vec<_>>(), ids.clone());
            for (k, a) in frame.iter().enumerate() {
                prop_assert!(a.corners().iter().all(|c| c[0].abs() <= half && c[1].abs() <= half));
                let start = &scene.frames[0][k];
                let dx = start.center[0] + start.velocity[0] * t as f64 * scene.dt - a.center[0];
                let dy = start.center[1] + start.velocity[1] * t as f64 * scene.dt - a.center[1];
                prop_assert!(dx.hypot(dy) < 1e-9);
                for b in &frame[k + 1..] {
                    prop_assert!(footprint_gap(a, b) >= params.clearance - 1e-9);
                }
            }
        }
    }
}

#[test]
fn ledgers_match_wire_sizes() {
    let (platforms, params, cfg) = setup(1);
    let scene = generate_scene(3, &params).unwrap();
    let strategies = CollabStrategy::ALL;
    let res = run_episodes(&scene, &platforms, &strategies, &cfg).unwrap();
    let n = platforms.len();
    let (x, y) = cfg.grid.dims();
    let full_payload = 4 * x * y * 32;

    let by = |s: CollabStrategy| res.iter().find(|r| r.strategy == s).unwrap();
    assert_eq!(by(CollabStrategy::None).ledger.total_bytes(), 0);
    assert!(by(CollabStrategy::None).ledger.records.is_empty());

    for s in [CollabStrategy::Early, CollabStrategy::Late, CollabStrategy::Full, CollabStrategy::Hlfdc] {
        let l = &by(s).ledger;
        assert_eq!(l.records.len(), n * (n - 1), "{s}");
        assert!(l.records.iter().all(|r| r.sender != r.receiver));
        assert_eq!(l.full_map_payload, full_payload);
    }
    for r in &by(CollabStrategy::Full).ledger.records {
        assert_eq!(r.bytes, HEADER_LEN + full_payload);
    }
    for r in &by(CollabStrategy::Hlfdc).ledger.records {
        assert_eq!(r.payload_bytes as f64, 0.53125 * full_payload as f64);
    }
    assert_eq!(by(CollabStrategy::Hlfdc).ledger.mean_ratio(), Some(0.53125));
    let early_bytes = HEADER_LEN + 352 * 192 * (32 * 4 + 2);
    assert!(by(CollabStrategy::Early).ledger.records.iter().all(|r| r.bytes == early_bytes));

    // Late links carry the sender's own boxes.
    let late = by(CollabStrategy::Late);
    for r in &late.ledger.records {
        let boxes = late.frames[0].platform_boxes[r.sender as usize].len();
        assert_eq!(r.bytes, HEADER_LEN + BOX_WIRE_BYTES * boxes);
    }
}

#[test]
fn collaboration_recovers_what_the_ego_misses() {
    let (platforms, params, cfg) = setup(1);
    for seed in 0..3 {
        let scene = generate_scene(seed, &params).unwrap();
        let res = run_episodes(&scene, &platforms, &CollabStrategy::ALL, &cfg).unwrap();
        let recall = |s: CollabStrategy| {
            res.iter().find(|r| r.strategy == s).unwrap().report.get(EvalRange::Long, "recall").unwrap()
        };
        let ego = recall(CollabStrategy::None);
        for s in [CollabStrategy::Early, CollabStrategy::Late, CollabStrategy::Full, CollabStrategy::Hlfdc] {
            assert!(recall(s) >= ego, "seed {seed}: {s} recall {} < ego {ego}", recall(s));
        }

        // Coverage: anything some platform sees is visible to the union.
        let vis = &res[0].frames[0].visibility;
        let seen = |v: &bevswarm::sim::VisibilityRecord| -> BTreeSet<u32> {
            v.objects.iter().filter(|(_, o)| o.visible_pixels > 0).map(|(&id, _)| id).collect()
        };
        let union: BTreeSet<u32> = vis.iter().flat_map(seen).collect();
        for v in vis {
            assert!(seen(v).is_subset(&union));
        }
        let hidden = vis[0].fully_occluded();
        assert!(!hidden.is_empty(), "seed {seed}: occlusion pairs should hide something from the ego");
        assert!(hidden.iter().any(|id| union.contains(id)));
    }
}

#[test]
fn early_with_one_shared_pose_matches_none() {
    let (platforms, params, cfg) = setup(1);
    let shared: Vec<Platform> = (0..4u16)
        .map(|id| Platform {
            id,
            ..platforms[0].clone()
        })
        .collect();
    let scene = generate_scene(5, &params).unwrap();
    let res = run_episodes(&scene, &shared, &[CollabStrategy::None, CollabStrategy::Early], &cfg).unwrap();
    let (none, early) = (&res[0].frames[0], &res[1].frames[0]);
    assert_eq!(none.instances, early.instances);
    assert_eq!(none.boxes.len(), early.boxes.len());
    for (a, b) in none.boxes.iter().zip(&early.boxes) {
        assert_eq!(a.class, b.class);
        assert!(a.ground_distance(b) < 1e-6);
        assert!((a.confidence - b.confidence).abs() < 1e-6);
    }
}

#[test]
fn episodes_are_deterministic_and_strategy_runs_agree() {
    let (platforms, params, cfg) = setup(2);
    let scene = generate_scene(9, &params).unwrap();
    let a = run_episode(&scene, &platforms, CollabStrategy::Hlfdc, &cfg).unwrap();
    let b = run_episode(&scene, &platforms, CollabStrategy::Hlfdc, &cfg).unwrap();
    assert_eq!(a.report.to_csv().unwrap(), b.report.to_csv().unwrap());
    assert_eq!(a.ledger, b.ledger);
    assert_eq!(a.tracks, b.tracks);

    // Sharing renders across strategies does not change any one of them.
    let both = run_episodes(&scene, &platforms, &[CollabStrategy::Late, CollabStrategy::Hlfdc], &cfg).unwrap();
    assert_eq!(both[1].report, a.report);
    assert_eq!(both[1].frames[1].boxes, a.frames[1].boxes);

    // Two frames, both ranges, every task.
    assert_eq!(a.frames.len(), 2);
    for range in [EvalRange::Short, EvalRange::Long] {
        for metric in ["mAP", "IoU", "PQ", "temporal_IoU", "VPQ", "total_bytes", "ratio"] {
            assert!(a.report.get(range, metric).is_some(), "{range:?} {metric}");
        }
    }
}

#[test]
fn codec_must_fit_the_grid() {
    let (platforms, params, mut cfg) = setup(1);
    let scene = generate_scene(0, &params).unwrap();
    cfg.codec.window = 7;
    assert!(matches!(run_episode(&scene, &platforms, CollabStrategy::Hlfdc, &cfg), Err(Error::Config(_))));
    assert!(run_episode(&scene, &platforms, CollabStrategy::None, &cfg).is_ok());
    assert!(matches!(run_episode(&scene, &[], CollabStrategy::None, &cfg), Err(Error::Config(_))));
}
