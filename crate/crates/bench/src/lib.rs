//! Fixtures shared by the criterion benches.

use std::collections::BTreeMap;

use gamorra_core::benchmark::{run_suite, BenchConfig};
use gamorra_core::sim::{game_profile, generate_sequence, ScenarioConfig, StageMask};
use gamorra_core::trainer::{build_observations, offline_train};
use gamorra_core::workload::Featurizer;
use gamorra_core::{
    FrameRecord, FrameSequence, ModelWeights, PerfModel, Result, ShaderProgram, TrainConfig, VectorLayout,
};

/// A calibrated model plus a dense trace, everything the predict path needs.
pub struct Fixture {
    pub perf: PerfModel,
    pub sequence: FrameSequence,
    pub programs: BTreeMap<String, ShaderProgram>,
    pub weights: ModelWeights,
    pub layout: VectorLayout,
}

impl Fixture {
    /// Frames of up to `objects` batches from the game profile, with weights
    /// fitted on the first half.
    pub fn dense(objects: usize, frames: usize) -> Result<Self> {
        let profile = game_profile();
        let perf = run_suite(&profile, &BenchConfig::default())?;
        let scenario = ScenarioConfig {
            name: "bench".into(),
            frames,
            seed: 8,
            objects,
            visibility: 0.95,
            mask: StageMask { tess: true, gs: true, cs: false },
            ..ScenarioConfig::default()
        };
        let g = generate_sequence(&profile, &scenario)?;
        let programs = g.sequence.programs()?;
        let layout = VectorLayout::with_cs(false);
        let weights = {
            let featurizer = Featurizer::new(&perf, &programs, layout);
            let obs = build_observations(&featurizer, &g.sequence, &g.actuals, frames / 2)?;
            offline_train(&obs, &TrainConfig::default())?.weights
        };
        Ok(Fixture { perf, sequence: g.sequence, programs, weights, layout })
    }

    pub fn featurizer(&self) -> Featurizer<'_> {
        Featurizer::new(&self.perf, &self.programs, self.layout)
    }

    /// The frame with the most batches.
    pub fn busiest(&self) -> &FrameRecord {
        self.sequence.frames.iter().max_by_key(|f| f.batches.len()).expect("empty fixture")
    }
}
