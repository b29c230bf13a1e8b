//! Synthetic GPU used as ground truth.
//!
//! A [`GpuProfile`] holds hidden per-stage cost curves and opcode costs. A
//! batch costs the fixed overhead plus, for every stage, the curve evaluated
//! at the batch's true load, scaled by any active drift and divided by the
//! core count. A frame is the sum of its batches, scaled by the frequency
//! factor and by multiplicative Gaussian noise truncated at four sigma. A
//! frame without batches takes no time.
//!
//! True loads differ from what an estimator sees in two places: indexed
//! batches invoke the vertex shader less often (post-transform cache), and
//! depth-only batches lose the early-z cull fraction of their pixel and
//! output-merger work.
//!
//! [`generate_sequence`] builds game-like scenarios: a scene of persistent
//! objects drawn with per-frame visibility, a mean-reverting random walk on
//! scene intensity, per-frame and per-batch jitter, scene changes and drift.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::il::{complexity, is_sampling_opcode, OpcodeCostTable, ShaderProgram};
use crate::trace::{BatchRecord, FrameRecord, FrameSequence};
use crate::workload::{stage_loads_with, StageLoadVector};
use crate::{Error, Result, Stage};

/// Hidden time curve of one stage: milliseconds of single-core work as a
/// function of the true stage load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageCurve {
    Linear {
        slope: f64,
    },
    /// Slope changes to `slope_after` past `knee`.
    Knee {
        slope: f64,
        knee: f64,
        slope_after: f64,
    },
    /// `slope * L + curvature * L^2`.
    Convex {
        slope: f64,
        curvature: f64,
    },
}

impl StageCurve {
    pub fn eval(&self, load: f64) -> f64 {
        if load <= 0.0 {
            return 0.0;
        }
        match *self {
            StageCurve::Linear { slope } => slope * load,
            StageCurve::Knee {
                slope,
                knee,
                slope_after,
            } => {
                if load <= knee {
                    slope * load
                } else {
                    slope * knee + slope_after * (load - knee)
                }
            }
            StageCurve::Convex { slope, curvature } => slope * load + curvature * load * load,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, StageCurve::Linear { .. })
    }

    fn validate(&self, stage: Stage) -> Result<()> {
        let ok = match *self {
            StageCurve::Linear { slope } => slope >= 0.0 && slope.is_finite(),
            StageCurve::Knee {
                slope,
                knee,
                slope_after,
            } => slope >= 0.0 && slope_after >= 0.0 && knee >= 0.0 && knee.is_finite(),
            StageCurve::Convex { slope, curvature } => slope >= 0.0 && curvature >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "{stage} curve must be finite and non-decreasing"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyStep {
    pub frame: u64,
    pub mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencyConfig {
    pub nominal_mhz: f64,
    pub min_mhz: f64,
    pub max_mhz: f64,
    /// Frametime scales as `(nominal / current) ^ sensitivity`.
    pub sensitivity: f64,
    /// Frequency steps, each holding from its frame until the next one.
    pub schedule: Vec<FrequencyStep>,
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        FrequencyConfig {
            nominal_mhz: 1000.0,
            min_mhz: 300.0,
            max_mhz: 1500.0,
            sensitivity: 0.8,
            schedule: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuProfile {
    #[serde(default)]
    pub name: String,
    pub omega: u32,
    /// Fixed cost of every batch, in ms.
    pub overhead_ms: f64,
    /// Standard deviation of the multiplicative frame noise.
    #[serde(default)]
    pub noise_sigma: f64,
    pub curves: BTreeMap<Stage, StageCurve>,
    /// True per-execution opcode costs (ms) per programmable stage.
    pub opcode_costs: BTreeMap<Stage, BTreeMap<String, f64>>,
    #[serde(default)]
    pub frequency: FrequencyConfig,
    #[serde(default)]
    pub early_z_cull: f64,
    #[serde(default)]
    pub post_transform_hit_ratio: f64,
    /// Per-stage starting loads for benchmark sweeps, overriding defaults.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bench_min_loads: BTreeMap<Stage, f64>,
}

impl GpuProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.omega < 1 {
            return bad("omega must be at least 1".into());
        }
        if !(self.overhead_ms >= 0.0 && self.overhead_ms.is_finite()) {
            return bad("overhead_ms must be non-negative".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative".into());
        }
        for stage in Stage::PIPELINE {
            if !self.curves.contains_key(&stage) {
                return bad(format!("missing curve for {stage}"));
            }
        }
        if self.curves.contains_key(&Stage::Pcf) {
            return bad("pcf shares the hs curve and takes no curve of its own".into());
        }
        for (stage, curve) in &self.curves {
            curve.validate(*stage)?;
        }
        for (stage, costs) in &self.opcode_costs {
            if !stage.is_programmable() || *stage == Stage::Pcf {
                return bad(format!("{stage} takes no opcode costs"));
            }
            OpcodeCostTable::new(*stage, costs.clone())
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        let f = &self.frequency;
        if !(f.nominal_mhz > 0.0 && f.min_mhz > 0.0 && f.min_mhz <= f.max_mhz) {
            return bad("frequencies must be positive with min <= max".into());
        }
        if !(f.sensitivity >= 0.0) {
            return bad("frequency sensitivity must be non-negative".into());
        }
        for step in &f.schedule {
            if !(step.mhz >= f.min_mhz && step.mhz <= f.max_mhz) {
                return bad(format!("scheduled frequency {} outside range", step.mhz));
            }
        }
        if f.schedule.windows(2).any(|w| w[0].frame >= w[1].frame) {
            return bad("frequency schedule frames must increase".into());
        }
        for (name, v) in [
            ("early_z_cull", self.early_z_cull),
            ("post_transform_hit_ratio", self.post_transform_hit_ratio),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1)"));
            }
        }
        if self.bench_min_loads.values().any(|v| !(*v > 0.0)) {
            return bad("bench_min_loads must be positive".into());
        }
        Ok(())
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let profile: GpuProfile = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn has_compute(&self) -> bool {
        self.curves.contains_key(&Stage::Cs)
    }

    pub fn cost_table(&self, stage: Stage) -> Option<OpcodeCostTable> {
        self.opcode_costs
            .get(&stage.cost_stage())
            .map(|costs| OpcodeCostTable {
                stage: stage.cost_stage(),
                costs: costs.clone(),
            })
    }

    pub fn frequency_at(&self, frame: u64) -> f64 {
        self.frequency
            .schedule
            .iter()
            .take_while(|s| s.frame <= frame)
            .last()
            .map_or(self.frequency.nominal_mhz, |s| s.mhz)
    }

    pub fn frequency_factor(&self, mhz: f64) -> f64 {
        (self.frequency.nominal_mhz / mhz).powf(self.frequency.sensitivity)
    }

    /// Time of the stage curves for one batch, before the overhead and the
    /// division by the core count.
    fn stage_time(&self, loads: &StageLoadVector, drift: &DriftMultipliers) -> f64 {
        let mut t = 0.0;
        for (stage, curve) in &self.curves {
            let mut work = curve.eval(loads.get(*stage));
            if *stage == Stage::Hs {
                work += curve.eval(loads.pcf);
            }
            t += work * drift.get(*stage);
        }
        t
    }

    /// Noise-free, drift-free batch time from true loads.
    pub fn batch_time(&self, loads: &StageLoadVector) -> f64 {
        self.overhead_ms + self.stage_time(loads, &DriftMultipliers::none()) / self.omega as f64
    }
}

/// A multiplicative change of selected stage curves from `frame` onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftEvent {
    pub frame: u64,
    pub stages: Vec<Stage>,
    pub multiplier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftMultipliers([f64; 11]);

impl DriftMultipliers {
    pub fn none() -> Self {
        DriftMultipliers([1.0; 11])
    }

    /// Product of every event that has started by `frame`.
    pub fn at(events: &[DriftEvent], frame: u64) -> Self {
        let mut m = Self::none();
        for e in events.iter().filter(|e| e.frame <= frame) {
            for s in &e.stages {
                m.0[*s as usize] *= e.multiplier;
            }
        }
        m
    }

    pub fn get(&self, stage: Stage) -> f64 {
        self.0[stage.cost_stage() as usize]
    }
}

/// Runs frames against a profile.
pub struct Simulator<'a> {
    profile: &'a GpuProfile,
    tables: BTreeMap<Stage, OpcodeCostTable>,
    drift: Vec<DriftEvent>,
    rng: ChaCha8Rng,
}

impl<'a> Simulator<'a> {
    pub fn new(profile: &'a GpuProfile, drift: Vec<DriftEvent>, seed: u64) -> Result<Self> {
        profile.validate()?;
        if let Some(e) = drift.iter().find(|e| !(e.multiplier > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "drift multiplier must be positive, got {}",
                e.multiplier
            )));
        }
        let tables = profile
            .opcode_costs
            .iter()
            .map(|(s, c)| {
                (
                    *s,
                    OpcodeCostTable {
                        stage: *s,
                        costs: c.clone(),
                    },
                )
            })
            .collect();
        Ok(Simulator {
            profile,
            tables,
            drift,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn profile(&self) -> &'a GpuProfile {
        self.profile
    }

    pub fn true_loads(
        &self,
        batch: &BatchRecord,
        programs: &BTreeMap<String, ShaderProgram>,
    ) -> Result<StageLoadVector> {
        let mut loads = stage_loads_with(
            batch,
            |stage, id| {
                let program = programs
                    .get(id)
                    .ok_or_else(|| Error::UnresolvedShader(id.to_string()))?;
                let table = self.tables.get(&stage.cost_stage()).ok_or(
                    Error::MissingStageData {
                        stage,
                        what: "hidden opcode costs",
                    },
                )?;
                complexity(program, table)
            },
            self.profile.early_z_cull,
        )?;
        if batch.indexed {
            loads.vs *= 1.0 - self.profile.post_transform_hit_ratio;
        }
        Ok(loads)
    }

    /// Frame time at an explicit frequency.
    pub fn frame_time_at(
        &mut self,
        frame: &FrameRecord,
        programs: &BTreeMap<String, ShaderProgram>,
        frame_no: u64,
        mhz: f64,
    ) -> Result<f64> {
        if frame.batches.is_empty() {
            return Ok(0.0);
        }
        if !(mhz > 0.0) {
            return Err(Error::InvalidFrequency(mhz));
        }
        let drift = DriftMultipliers::at(&self.drift, frame_no);
        let omega = self.profile.omega as f64;
        let mut total = 0.0;
        for batch in &frame.batches {
            let loads = self.true_loads(batch, programs)?;
            total += self.profile.overhead_ms + self.profile.stage_time(&loads, &drift) / omega;
        }
        total *= self.profile.frequency_factor(mhz);
        if self.profile.noise_sigma > 0.0 {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            total *= 1.0 + self.profile.noise_sigma * n.clamp(-4.0, 4.0);
        }
        Ok(total)
    }

    /// Frame time at the profile's scheduled frequency for `frame_no`.
    pub fn frame_time(
        &mut self,
        frame: &FrameRecord,
        programs: &BTreeMap<String, ShaderProgram>,
        frame_no: u64,
    ) -> Result<f64> {
        let mhz = self.profile.frequency_at(frame_no);
        self.frame_time_at(frame, programs, frame_no, mhz)
    }
}

/// Which optional stages a scenario uses. Vertex and pixel shaders are always
/// active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageMask {
    pub tess: bool,
    pub gs: bool,
    pub cs: bool,
}

impl Default for StageMask {
    fn default() -> Self {
        StageMask {
            tess: true,
            gs: true,
            cs: false,
        }
    }
}

impl StageMask {
    /// Active optional stages of the reference game captures.
    pub fn for_game(abbrev: &str) -> Option<StageMask> {
        let (tess, gs, cs) = match abbrev {
            "BC2" => (false, false, false),
            "D3" => (true, false, true),
            "FC3" => (true, true, true),
            "RL" => (true, false, true),
            "SC" => (true, false, false),
            "T4" => (false, false, true),
            "SE4" => (true, false, true),
            "MSh" => (true, true, true),
            "FF" => (false, true, true),
            _ => return None,
        };
        Some(StageMask { tess, gs, cs })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub frames: usize,
    pub seed: u64,
    pub mask: StageMask,
    /// Objects in a scene; each visible object is one batch.
    pub objects: usize,
    /// Probability that an object is drawn in a given frame.
    pub visibility: f64,
    pub resolution: [u32; 2],
    /// Fraction of objects drawn into square offscreen targets.
    pub offscreen_fraction: f64,
    pub offscreen_sizes: Vec<u32>,
    /// Log-uniform ranges.
    pub vertices: [u64; 2],
    pub coverage: [f64; 2],
    pub attrs: [u32; 2],
    pub ops: [u64; 2],
    /// Programs per shader stage.
    pub shader_pool: usize,
    /// Step and mean reversion of the log scene-intensity walk.
    pub walk_sigma: f64,
    pub walk_reversion: f64,
    /// Log-normal sigmas of the per-frame and per-batch multipliers.
    pub frame_jitter: f64,
    pub batch_jitter: f64,
    pub scene_changes: Vec<u64>,
    pub scene_change_sigma: f64,
    pub drift: Vec<DriftEvent>,
    pub tess_fraction: f64,
    pub tess_level: [u32; 2],
    pub gs_fraction: f64,
    pub cs_dispatches: [usize; 2],
    pub cs_inputs: [u64; 2],
    pub indexed_fraction: f64,
    pub depth_only_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".to_string(),
            frames: 100,
            seed: 0,
            mask: StageMask::default(),
            objects: 40,
            visibility: 0.85,
            resolution: [1280, 720],
            offscreen_fraction: 0.2,
            offscreen_sizes: vec![512, 1024, 2048],
            vertices: [4, 2800],
            coverage: [0.002, 0.3],
            attrs: [1, 8],
            ops: [5, 200],
            shader_pool: 12,
            walk_sigma: 0.02,
            walk_reversion: 0.05,
            frame_jitter: 0.2,
            batch_jitter: 0.1,
            scene_changes: Vec::new(),
            scene_change_sigma: 0.3,
            drift: Vec::new(),
            tess_fraction: 0.3,
            tess_level: [1, 6],
            gs_fraction: 0.2,
            cs_dispatches: [1, 3],
            cs_inputs: [1_000, 100_000],
            indexed_fraction: 0.0,
            depth_only_fraction: 0.1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.frames < 1 {
            return bad("frames must be at least 1");
        }
        if self.objects < 1 || self.shader_pool < 1 {
            return bad("objects and shader_pool must be at least 1");
        }
        if self.resolution.contains(&0) || self.offscreen_sizes.contains(&0) {
            return bad("render target sizes must be positive");
        }
        if self.offscreen_fraction > 0.0 && self.offscreen_sizes.is_empty() {
            return bad("offscreen_sizes is empty");
        }
        let ordered = self.vertices[0] >= 1
            && self.vertices[0] <= self.vertices[1]
            && self.coverage[0] > 0.0
            && self.coverage[0] <= self.coverage[1]
            && self.attrs[0] >= 1
            && self.attrs[0] <= self.attrs[1]
            && self.ops[0] >= 1
            && self.ops[0] <= self.ops[1]
            && self.tess_level[0] >= 1
            && self.tess_level[0] <= self.tess_level[1]
            && self.cs_dispatches[0] <= self.cs_dispatches[1]
            && self.cs_inputs[0] >= 1
            && self.cs_inputs[0] <= self.cs_inputs[1];
        if !ordered {
            return bad("ranges must be positive and ordered [min, max]");
        }
        for p in [
            self.visibility,
            self.offscreen_fraction,
            self.tess_fraction,
            self.gs_fraction,
            self.indexed_fraction,
            self.depth_only_fraction,
            self.walk_reversion,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad("fractions and probabilities must lie in [0, 1]");
            }
        }
        for s in [
            self.walk_sigma,
            self.frame_jitter,
            self.batch_jitter,
            self.scene_change_sigma,
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad("sigmas must be non-negative");
            }
        }
        if self.drift.iter().any(|d| !(d.multiplier > 0.0)) {
            return bad("drift multipliers must be positive");
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let scenario: ScenarioConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// A generated trace with its simulated actual frametimes and the GPU
/// frequency of every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSequence {
    pub sequence: FrameSequence,
    pub actuals: Vec<f64>,
    pub frequencies: Vec<f64>,
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

fn lognormal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let n: f64 = StandardNormal.sample(rng);
    (sigma * n).exp()
}

/// Random IL program over `vocab` with a total of `ops` instructions.
fn generate_il(stage: Stage, ops: u64, vocab: &[&String], rng: &mut ChaCha8Rng) -> String {
    let picks = rng.random_range(2..=vocab.len().clamp(2, 6)).min(vocab.len());
    let mut chosen: Vec<&String> = Vec::with_capacity(picks);
    while chosen.len() < picks {
        let op = vocab[rng.random_range(0..vocab.len())];
        if !chosen.contains(&op) {
            chosen.push(op);
        }
    }
    let weights: Vec<f64> = chosen.iter().map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut counts: Vec<u64> = weights
        .iter()
        .map(|w| ((w / total) * ops as f64).floor() as u64)
        .collect();
    let assigned: u64 = counts.iter().sum();
    counts[0] += ops - assigned;

    let mut text = String::new();
    let _ = writeln!(text, "{}_5_0", stage.cost_stage().key());
    let _ = writeln!(text, "dcl_input v0.xyzw");
    let _ = writeln!(text, "dcl_output o0.xyzw");
    let mut reg = 0;
    for (op, n) in chosen.iter().zip(&counts) {
        let _ = writeln!(text, "; {op} x{n}");
        for _ in 0..*n {
            let _ = writeln!(text, "{op} r{}.xyzw, r{}.xyzw, v0.xyzw", reg % 8, (reg + 1) % 8);
            reg += 1;
        }
    }
    text
}

struct ShaderPools {
    ids: BTreeMap<Stage, Vec<String>>,
    store: BTreeMap<String, String>,
}

fn generate_pools(
    profile: &GpuProfile,
    scenario: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ShaderPools> {
    let mut stages = vec![Stage::Vs, Stage::Ps];
    if scenario.mask.tess {
        stages.extend([Stage::Hs, Stage::Pcf, Stage::Ds]);
    }
    if scenario.mask.gs {
        stages.push(Stage::Gs);
    }
    if scenario.mask.cs {
        stages.push(Stage::Cs);
    }
    let mut pools = ShaderPools {
        ids: BTreeMap::new(),
        store: BTreeMap::new(),
    };
    for stage in stages {
        let costs = profile
            .opcode_costs
            .get(&stage.cost_stage())
            .ok_or(Error::MissingStageData {
                stage,
                what: "opcode costs in the profile",
            })?;
        let vocab: Vec<&String> = costs
            .keys()
            .filter(|op| stage == Stage::Ps || !is_sampling_opcode(op))
            .collect();
        if vocab.is_empty() {
            return Err(Error::MissingStageData {
                stage,
                what: "opcode vocabulary",
            });
        }
        let mut ids = Vec::with_capacity(scenario.shader_pool);
        for i in 0..scenario.shader_pool {
            let ops = log_uniform(rng, scenario.ops[0] as f64, scenario.ops[1] as f64).round();
            let id = format!("{}_{i:03}", stage.key());
            let il = generate_il(stage, ops.max(1.0) as u64, &vocab, rng);
            pools.store.insert(id.clone(), il);
            ids.push(id);
        }
        pools.ids.insert(stage, ids);
    }
    Ok(pools)
}

#[derive(Debug, Clone)]
struct SceneObject {
    vs: String,
    ps: String,
    tess: Option<(String, String, String, u32)>,
    gs: Option<String>,
    vertices: f64,
    attrs: u32,
    coverage: f64,
    rt: (u32, u32),
    indexed: bool,
    depth_only: bool,
}

fn pick(rng: &mut ChaCha8Rng, pool: &[String]) -> String {
    pool[rng.random_range(0..pool.len())].clone()
}

fn generate_scene(
    scenario: &ScenarioConfig,
    pools: &ShaderPools,
    rng: &mut ChaCha8Rng,
) -> Vec<SceneObject> {
    let pool = |s: Stage| pools.ids.get(&s).map(Vec::as_slice).unwrap_or(&[]);
    (0..scenario.objects)
        .map(|_| {
            let tess = (scenario.mask.tess && rng.random_bool(scenario.tess_fraction)).then(|| {
                (
                    pick(rng, pool(Stage::Hs)),
                    pick(rng, pool(Stage::Pcf)),
                    pick(rng, pool(Stage::Ds)),
                    rng.random_range(scenario.tess_level[0]..=scenario.tess_level[1]),
                )
            });
            let gs = (scenario.mask.gs && rng.random_bool(scenario.gs_fraction))
                .then(|| pick(rng, pool(Stage::Gs)));
            let rt = if rng.random_bool(scenario.offscreen_fraction) {
                let s = scenario.offscreen_sizes[rng.random_range(0..scenario.offscreen_sizes.len())];
                (s, s)
            } else {
                (scenario.resolution[0], scenario.resolution[1])
            };
            SceneObject {
                vs: pick(rng, pool(Stage::Vs)),
                ps: pick(rng, pool(Stage::Ps)),
                tess,
                gs,
                vertices: log_uniform(
                    rng,
                    scenario.vertices[0] as f64,
                    scenario.vertices[1] as f64,
                ),
                attrs: rng.random_range(scenario.attrs[0]..=scenario.attrs[1]),
                coverage: log_uniform(rng, scenario.coverage[0], scenario.coverage[1]),
                rt,
                indexed: rng.random_bool(scenario.indexed_fraction),
                depth_only: rng.random_bool(scenario.depth_only_fraction),
            }
        })
        .collect()
}

fn object_batch(
    obj: &SceneObject,
    intensity: f64,
    jitter: f64,
    rng: &mut ChaCha8Rng,
    batch_jitter: f64,
) -> BatchRecord {
    let k = lognormal(rng, batch_jitter);
    let vertex_count = (obj.vertices * k).round().max(3.0) as u64;
    let area = obj.rt.0 as f64 * obj.rt.1 as f64;
    let fragments = (obj.coverage * area * intensity * jitter * k)
        .round()
        .clamp(1.0, 4.0 * area) as u64;
    let mut b = BatchRecord {
        ia_bytes: vertex_count * obj.attrs as u64 * 16,
        vertex_count,
        attr_count: obj.attrs,
        vs_shader: Some(obj.vs.clone()),
        ps_shader: Some(obj.ps.clone()),
        fragment_count: fragments,
        rt_width: obj.rt.0,
        rt_height: obj.rt.1,
        indexed: obj.indexed,
        depth_only: obj.depth_only,
        ..Default::default()
    };
    let mut geometry_out = vertex_count;
    if let Some((hs, pcf, ds, level)) = &obj.tess {
        let patches = (vertex_count / 3).max(1);
        let level = *level as u64;
        let points = (level + 1) * (level + 2) / 2;
        b.hs_shader = Some(hs.clone());
        b.pcf_shader = Some(pcf.clone());
        b.ds_shader = Some(ds.clone());
        b.patch_count = patches;
        b.tess_points_per_patch = vec![points; patches as usize];
        b.ds_vertex_count = patches * points;
        geometry_out = b.ds_vertex_count;
    }
    if let Some(gs) = &obj.gs {
        b.gs_shader = Some(gs.clone());
        b.gs_vertex_count = geometry_out;
    }
    b
}

/// Generates a trace and its simulated actual frametimes.
pub fn generate_sequence(
    profile: &GpuProfile,
    scenario: &ScenarioConfig,
) -> Result<GeneratedSequence> {
    scenario.validate()?;
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let pools = generate_pools(profile, scenario, &mut rng)?;
    let mut scene = generate_scene(scenario, &pools, &mut rng);
    let mut frames = Vec::with_capacity(scenario.frames);
    let mut walk = 0.0f64;
    for f in 0..scenario.frames as u64 {
        if scenario.scene_changes.contains(&f) {
            scene = generate_scene(scenario, &pools, &mut rng);
            let jump: f64 = StandardNormal.sample(&mut rng);
            walk += scenario.scene_change_sigma * jump;
        }
        let step: f64 = StandardNormal.sample(&mut rng);
        walk = (1.0 - scenario.walk_reversion) * walk + scenario.walk_sigma * step;
        let intensity = walk.exp();
        let jitter = lognormal(&mut rng, scenario.frame_jitter);
        let mut batches = Vec::with_capacity(scene.len());
        for obj in &scene {
            if rng.random_bool(scenario.visibility) {
                batches.push(object_batch(
                    obj,
                    intensity,
                    jitter,
                    &mut rng,
                    scenario.batch_jitter,
                ));
            }
        }
        if scenario.mask.cs {
            let pool = &pools.ids[&Stage::Cs];
            let n = rng.random_range(scenario.cs_dispatches[0]..=scenario.cs_dispatches[1]);
            for _ in 0..n {
                let base = log_uniform(
                    &mut rng,
                    scenario.cs_inputs[0] as f64,
                    scenario.cs_inputs[1] as f64,
                );
                let k = lognormal(&mut rng, scenario.batch_jitter);
                batches.push(BatchRecord {
                    cs_shader: Some(pick(&mut rng, pool)),
                    cs_input_count: (base * intensity * jitter * k).round().max(1.0) as u64,
                    ..Default::default()
                });
            }
        }
        if batches.is_empty() {
            batches.push(object_batch(
                &scene[0],
                intensity,
                jitter,
                &mut rng,
                scenario.batch_jitter,
            ));
        }
        frames.push(FrameRecord {
            frame_index: f,
            batches,
        });
    }
    let sequence = FrameSequence {
        frames,
        shader_store: pools.store,
    };
    sequence.validate()?;
    let programs = sequence.programs()?;
    let mut sim = Simulator::new(
        profile,
        scenario.drift.clone(),
        scenario.seed ^ 0x5ee_d0ff_7a3e,
    )?;
    let mut actuals = Vec::with_capacity(scenario.frames);
    let mut frequencies = Vec::with_capacity(scenario.frames);
    for (i, frame) in sequence.frames.iter().enumerate() {
        let mhz = profile.frequency_at(i as u64);
        actuals.push(sim.frame_time_at(frame, &programs, i as u64, mhz)?);
        frequencies.push(mhz);
    }
    Ok(GeneratedSequence {
        sequence,
        actuals,
        frequencies,
    })
}

/// Writes `frame,actual_ms` rows.
pub fn write_actuals<W: std::io::Write>(actuals: &[f64], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["frame", "actual_ms"])?;
    for (i, a) in actuals.iter().enumerate() {
        w.write_record([i.to_string(), a.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `frame,actual_ms` rows; frames must count up from 0.
pub fn read_actuals<R: std::io::Read>(source: R) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct Row {
        frame: u64,
        actual_ms: f64,
    }
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(source).deserialize().enumerate() {
        let row: Row = row?;
        if row.frame != i as u64 {
            return Err(Error::InvalidConfig(format!(
                "actuals row {i} has frame {}",
                row.frame
            )));
        }
        if !row.actual_ms.is_finite() {
            return Err(Error::NonFinite("actuals"));
        }
        out.push(row.actual_ms);
    }
    Ok(out)
}

fn opcode_table(base: f64, sampling: bool) -> BTreeMap<String, f64> {
    let mut rel: Vec<(&str, f64)> = vec![
        ("mov", 0.5),
        ("add", 1.0),
        ("mul", 1.0),
        ("mad", 1.25),
        ("dp3", 1.5),
        ("dp4", 1.75),
        ("min", 1.0),
        ("max", 1.0),
        ("rsq", 4.0),
        ("div", 4.0),
    ];
    if sampling {
        rel.extend([("sample", 12.0), ("sample_l", 14.0)]);
    }
    rel.into_iter()
        .map(|(op, r)| (op.to_string(), base * r))
        .collect()
}

/// Cap-anchored reference GPU: 640 cores, 6.966 ms empty pipeline. With the
/// default 100 ms cap, 1.3e8 vertex shader adds, 6.5e6 tessellated points,
/// about 2.6e7 rasterized fragments, 1.5e9 input bytes and 2.5e7 output
/// merger units each take a batch just past the cap.
pub fn reference_profile() -> GpuProfile {
    let omega = 640u32;
    let overhead = 6.966;
    let budget = (100.0 - overhead) * omega as f64;
    let add_vs = budget / 1.3e8;
    let add_ps = 6.0e-4;
    let curves = BTreeMap::from([
        (Stage::Ia, StageCurve::Linear { slope: budget / 1.5e9 }),
        (Stage::Vs, StageCurve::Linear { slope: 1.0 }),
        (Stage::Hs, StageCurve::Linear { slope: 1.0 }),
        (Stage::Tess, StageCurve::Linear { slope: budget / 6.5e6 }),
        (Stage::Ds, StageCurve::Linear { slope: 1.0 }),
        (Stage::Gs, StageCurve::Linear { slope: 1.0 }),
        (
            Stage::Ras,
            StageCurve::Knee {
                slope: 60.0 * omega as f64 / 2.0e7,
                knee: 2.0e7,
                slope_after: (budget - 60.0 * omega as f64) / 6.0e6,
            },
        ),
        (
            Stage::Ps,
            StageCurve::Convex {
                slope: 1.0,
                curvature: 4.667e-6,
            },
        ),
        (Stage::Om, StageCurve::Linear { slope: budget / 2.5e7 }),
    ]);
    let opcode_costs = BTreeMap::from([
        (Stage::Vs, opcode_table(add_vs, false)),
        (Stage::Hs, opcode_table(add_vs, false)),
        (Stage::Ds, opcode_table(add_vs, false)),
        (Stage::Gs, opcode_table(1.5 * add_vs, false)),
        (Stage::Ps, opcode_table(add_ps, true)),
    ]);
    GpuProfile {
        name: "reference".to_string(),
        omega,
        overhead_ms: overhead,
        noise_sigma: 0.0,
        curves,
        opcode_costs,
        frequency: FrequencyConfig::default(),
        early_z_cull: 0.4,
        post_transform_hit_ratio: 0.6,
        bench_min_loads: BTreeMap::new(),
    }
}

/// The reference profile with every curve linear and a compute stage: the
/// configuration the regression model can represent exactly.
pub fn linear_profile() -> GpuProfile {
    let mut p = reference_profile();
    p.name = "linear".to_string();
    let budget = (100.0 - p.overhead_ms) * p.omega as f64;
    p.curves.insert(Stage::Ras, StageCurve::Linear { slope: budget / 2.6e7 });
    p.curves.insert(Stage::Ps, StageCurve::Linear { slope: 1.0 });
    p.curves.insert(Stage::Cs, StageCurve::Linear { slope: 1.0 });
    let add_vs = budget / 1.3e8;
    p.opcode_costs.insert(Stage::Cs, opcode_table(add_vs, false));
    p
}

/// A desktop-class GPU tuned so that the default scenario renders frames of
/// roughly 10 to 25 ms.
pub fn game_profile() -> GpuProfile {
    let omega = 640u32;
    let curves = BTreeMap::from([
        (Stage::Ia, StageCurve::Linear { slope: 3.0e-4 }),
        (Stage::Vs, StageCurve::Linear { slope: 1.0 }),
        (Stage::Hs, StageCurve::Linear { slope: 1.0 }),
        (Stage::Tess, StageCurve::Linear { slope: 0.016 }),
        (Stage::Ds, StageCurve::Linear { slope: 1.0 }),
        (Stage::Gs, StageCurve::Linear { slope: 1.0 }),
        (
            Stage::Ras,
            StageCurve::Knee {
                slope: 3.3e-4,
                knee: 2.0e7,
                slope_after: 6.6e-4,
            },
        ),
        (
            Stage::Ps,
            StageCurve::Convex {
                slope: 1.0,
                curvature: 1.0e-6,
            },
        ),
        (Stage::Om, StageCurve::Linear { slope: 3.6e-10 }),
        (Stage::Cs, StageCurve::Linear { slope: 1.0 }),
    ]);
    let opcode_costs = BTreeMap::from([
        (Stage::Vs, opcode_table(1.1e-3, false)),
        (Stage::Hs, opcode_table(1.1e-3, false)),
        (Stage::Ds, opcode_table(2.1e-4, false)),
        (Stage::Gs, opcode_table(3.0e-4, false)),
        (Stage::Ps, opcode_table(3.6e-5, true)),
        (Stage::Cs, opcode_table(2.1e-4, false)),
    ]);
    GpuProfile {
        name: "game".to_string(),
        omega,
        overhead_ms: 0.05,
        noise_sigma: 0.08,
        curves,
        opcode_costs,
        frequency: FrequencyConfig::default(),
        early_z_cull: 0.4,
        post_transform_hit_ratio: 0.6,
        bench_min_loads: BTreeMap::from([(Stage::Om, 1.0e6)]),
    }
}
