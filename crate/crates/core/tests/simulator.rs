use gamorra_core::benchmark::{run_suite, BenchConfig};
use gamorra_core::sim::{
    generate_sequence, linear_profile, reference_profile, DriftEvent, DriftMultipliers, GpuProfile, ScenarioConfig,
    Simulator, StageMask,
};
use gamorra_core::trainer::{build_observations, offline_train};
use gamorra_core::workload::Featurizer;
use gamorra_core::{predict_batch, predict_frame, ExplanatoryVector, Stage, TrainConfig, VectorLayout};

fn scenario(frames: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        frames,
        seed,
        objects: 16,
        shader_pool: 4,
        ..ScenarioConfig::default()
    }
}

#[test]
fn same_seed_same_trace() {
    let p = reference_profile();
    let a = generate_sequence(&p, &scenario(30, 4)).unwrap();
    let b = generate_sequence(&p, &scenario(30, 4)).unwrap();
    assert_eq!(a, b);
    let c = generate_sequence(&p, &scenario(30, 5)).unwrap();
    assert_ne!(a.actuals, c.actuals);
}

#[test]
fn masks_switch_stages_off() {
    let p = linear_profile();
    let mut s = scenario(20, 1);
    s.mask = StageMask::for_game("BC2").unwrap();
    let g = generate_sequence(&p, &s).unwrap();
    let batches = || g.sequence.frames.iter().flat_map(|f| &f.batches);
    assert!(batches().all(|b| b.hs_shader.is_none() && b.gs_shader.is_none() && b.cs_shader.is_none()));
    s.mask = StageMask::for_game("FC3").unwrap();
    let g = generate_sequence(&p, &s).unwrap();
    let batches = || g.sequence.frames.iter().flat_map(|f| &f.batches);
    assert!(batches().any(|b| b.hs_shader.is_some()));
    assert!(batches().any(|b| b.cs_shader.is_some()));
}

#[test]
fn drift_multiplies_from_its_frame_on() {
    let events = vec![
        DriftEvent { frame: 10, stages: vec![Stage::Ps], multiplier: 1.5 },
        DriftEvent { frame: 20, stages: vec![Stage::Ps, Stage::Vs], multiplier: 2.0 },
    ];
    assert_eq!(DriftMultipliers::at(&events, 9).get(Stage::Ps), 1.0);
    assert_eq!(DriftMultipliers::at(&events, 10).get(Stage::Ps), 1.5);
    assert_eq!(DriftMultipliers::at(&events, 25).get(Stage::Ps), 3.0);
    assert_eq!(DriftMultipliers::at(&events, 25).get(Stage::Vs), 2.0);
    assert_eq!(DriftMultipliers::at(&events, 25).get(Stage::Om), 1.0);
}

#[test]
fn drifted_frames_cost_more_by_the_stage_share() {
    let p = linear_profile();
    let g = generate_sequence(&p, &scenario(5, 2)).unwrap();
    let programs = g.sequence.programs().unwrap();
    let all: Vec<Stage> = Stage::ALL.to_vec();
    let events = vec![DriftEvent { frame: 3, stages: all, multiplier: 1.25 }];
    let mut sim = Simulator::new(&p, events, 0).unwrap();
    for (i, frame) in g.sequence.frames.iter().enumerate() {
        let t = sim.frame_time(frame, &programs, i as u64).unwrap();
        let base = g.actuals[i];
        let overhead = p.overhead_ms * frame.batches.len() as f64;
        let expect = if i >= 3 { overhead + 1.25 * (base - overhead) } else { base };
        assert!((t - expect).abs() < 1e-9 * expect, "frame {i}: {t} vs {expect}");
    }
}

#[test]
fn noise_has_the_configured_spread() {
    let mut p: GpuProfile = linear_profile();
    p.noise_sigma = 0.1;
    let g = generate_sequence(&p, &scenario(1, 3)).unwrap();
    let programs = g.sequence.programs().unwrap();
    let frame = &g.sequence.frames[0];
    let clean = {
        let q = linear_profile();
        let mut sim = Simulator::new(&q, vec![], 0).unwrap();
        sim.frame_time(frame, &programs, 0).unwrap()
    };
    let mut sim = Simulator::new(&p, vec![], 77).unwrap();
    let rel: Vec<f64> = (0..4000)
        .map(|_| sim.frame_time(frame, &programs, 0).unwrap() / clean - 1.0)
        .collect();
    let mean = rel.iter().sum::<f64>() / rel.len() as f64;
    let sd = (rel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rel.len() as f64).sqrt();
    assert!(mean.abs() < 0.01, "{mean}");
    assert!((sd - 0.1).abs() < 0.01, "{sd}");
}

#[test]
fn linear_profile_is_recovered_exactly() {
    let profile = linear_profile();
    let perf = run_suite(&profile, &BenchConfig::default()).unwrap();
    let mut s = scenario(400, 12);
    s.mask = StageMask { tess: true, gs: true, cs: true };
    s.scene_changes = vec![50, 100, 150];
    let g = generate_sequence(&profile, &s).unwrap();
    let programs = g.sequence.programs().unwrap();
    let layout = VectorLayout::with_cs(true);
    let featurizer = Featurizer::new(&perf, &programs, layout);
    let obs = build_observations(&featurizer, &g.sequence, &g.actuals, 200).unwrap();
    let report = offline_train(&obs, &TrainConfig::default()).unwrap();
    let mut err = 0.0;
    for (frame, a) in g.sequence.frames.iter().zip(&g.actuals).skip(200) {
        let v = featurizer.frame_vectors(frame).unwrap();
        err += (predict_frame(&report.weights, &v).unwrap() - a).abs();
    }
    let mae = err / 200.0;
    assert!(mae < 1e-6, "held-out MAE {mae}");
    let unit = predict_batch(&report.weights, &ExplanatoryVector::unit(layout.dim())).unwrap();
    assert!((unit - 6.966).abs() < 1e-9, "{unit}");
}
