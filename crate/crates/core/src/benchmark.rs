//! Calibration suite run against a simulated GPU.
//!
//! Every measurement is the median of several single-frame runs at nominal
//! frequency. The suite measures the empty-pipeline baseline, prices every
//! opcode of every programmable stage, sweeps each stage's load geometrically
//! until a frame exceeds the cap, and measures the early-z discount with a
//! depth-only pass.
//!
//! Sweep samples are stored normalized: the time of any auxiliary stage the
//! configuration cannot avoid is removed and the marginal time is multiplied
//! by the core count, so the resulting functions do not depend on it.
//!
//! Stage configurations, with every other stage idle or running a one-op
//! `mov` pass-through:
//!
//! | stage | swept quantity | configuration |
//! |---|---|---|
//! | IA | bytes | no shaders, 12 bytes per vertex |
//! | VS, HS, DS, GS, CS | `add` count | one invocation |
//! | Tess | points | `mov` HS/PCF/DS, patches of 10 points |
//! | OM | render target area | 4-vertex quad, one fragment, no PS |
//! | Ras | fragments | quad, 1x1 target, no PS |
//! | PS | `add` count | quad, one fragment, 1x1 target |

use std::collections::BTreeMap;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::il::{is_sampling_opcode, OpcodeCostTable, ShaderProgram};
use crate::perf::{PerfFunction, PerfModel};
use crate::sim::{GpuProfile, Simulator};
use crate::trace::{BatchRecord, FrameRecord};
use crate::{Error, Result, Stage};

/// `(load, frame ms)` pairs of one sweep.
pub type Samples = Vec<(f64, f64)>;
/// Raw sweeps keyed by stage.
pub type Sweeps = BTreeMap<Stage, Samples>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub cap_ms: f64,
    pub repetitions: usize,
    pub growth: f64,
    pub max_steps: usize,
    pub seed: u64,
    /// Opcode copies in a single-opcode shader. Noisy profiles grow this
    /// until the measured time is well above the noise.
    pub opcode_iterations: u64,
    /// Starting sweep loads, in the swept quantity of each stage.
    pub min_loads: BTreeMap<Stage, f64>,
    /// Fragments and `add` count of the depth-only benchmark.
    pub early_z_fragments: u64,
    pub early_z_ops: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            cap_ms: 100.0,
            repetitions: 9,
            growth: 1.5,
            max_steps: 64,
            seed: 0,
            opcode_iterations: 1000,
            min_loads: BTreeMap::from([
                (Stage::Ia, 1024.0),
                (Stage::Vs, 64.0),
                (Stage::Hs, 64.0),
                (Stage::Tess, 10.0),
                (Stage::Ds, 64.0),
                (Stage::Gs, 64.0),
                (Stage::Ras, 64.0),
                (Stage::Ps, 64.0),
                (Stage::Om, 64.0),
                (Stage::Cs, 64.0),
            ]),
            early_z_fragments: 100_000,
            early_z_ops: 64,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cap_ms > 0.0
            && self.repetitions >= 1
            && self.growth > 1.0
            && self.max_steps >= 2
            && self.opcode_iterations >= 1
            && self.early_z_fragments >= 1
            && self.early_z_ops >= 1
            && self.min_loads.values().all(|v| *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("invalid benchmark configuration".into()))
        }
    }
}

const TESS_POINTS_PER_PATCH: u64 = 10;
const QUAD_VERTICES: u64 = 4;
const BYTES_PER_VERTEX: u64 = 12;

fn program(id: &str, opcode: &str, count: u64) -> ShaderProgram {
    ShaderProgram::from_histogram(id, BTreeMap::from([(opcode.to_string(), count)]))
}

fn pass_through() -> ShaderProgram {
    program("pass", "mov", 1)
}

fn quad(fragments: u64, width: u32, height: u32) -> BatchRecord {
    BatchRecord {
        ia_bytes: QUAD_VERTICES * BYTES_PER_VERTEX,
        vertex_count: QUAD_VERTICES,
        fragment_count: fragments,
        rt_width: width,
        rt_height: height,
        ..Default::default()
    }
}

/// One invocation of `shader` on a programmable stage. The pixel shader runs
/// on a single-fragment quad.
fn unit_invocation(stage: Stage, shader: &str) -> BatchRecord {
    let id = Some(shader.to_string());
    let pass = Some("pass".to_string());
    match stage {
        Stage::Vs => BatchRecord {
            vertex_count: 1,
            vs_shader: id,
            ..Default::default()
        },
        Stage::Hs => BatchRecord {
            vertex_count: 1,
            hs_shader: id,
            pcf_shader: pass.clone(),
            ds_shader: pass,
            ..Default::default()
        },
        Stage::Ds => BatchRecord {
            hs_shader: pass.clone(),
            pcf_shader: pass.clone(),
            ds_shader: id,
            ds_vertex_count: 1,
            ..Default::default()
        },
        Stage::Gs => BatchRecord {
            gs_shader: id,
            gs_vertex_count: 1,
            ..Default::default()
        },
        Stage::Cs => BatchRecord {
            cs_shader: id,
            cs_input_count: 1,
            ..Default::default()
        },
        Stage::Ps => BatchRecord {
            ps_shader: id,
            ..quad(1, 1, 1)
        },
        _ => unreachable!("{stage} is not a shader stage"),
    }
}

/// Benchmark session over one profile.
pub struct Bench<'a> {
    sim: Simulator<'a>,
    config: BenchConfig,
    baseline: f64,
    noisy: bool,
    tables: BTreeMap<Stage, OpcodeCostTable>,
    functions: BTreeMap<Stage, PerfFunction>,
    sweeps: Sweeps,
    quad_ms: Option<f64>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

impl<'a> Bench<'a> {
    /// Starts a session and measures the baseline.
    pub fn new(profile: &'a GpuProfile, config: BenchConfig) -> Result<Self> {
        config.validate()?;
        let sim = Simulator::new(profile, Vec::new(), config.seed)?;
        let mut bench = Bench {
            sim,
            config,
            baseline: 0.0,
            noisy: false,
            tables: BTreeMap::new(),
            functions: BTreeMap::new(),
            sweeps: BTreeMap::new(),
            quad_ms: None,
        };
        let samples = bench.runs(&BatchRecord::default(), &BTreeMap::new())?;
        bench.noisy = samples.iter().any(|t| *t != samples[0]);
        bench.baseline = median(samples);
        info!("baseline {:.6} ms", bench.baseline);
        Ok(bench)
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn config(&self) -> &BenchConfig {
        &self.config
    }

    fn omega(&self) -> f64 {
        self.sim.profile().omega as f64
    }

    fn runs(
        &mut self,
        batch: &BatchRecord,
        programs: &BTreeMap<String, ShaderProgram>,
    ) -> Result<Vec<f64>> {
        let frame = FrameRecord {
            frame_index: 0,
            batches: vec![batch.clone()],
        };
        let mhz = self.sim.profile().frequency.nominal_mhz;
        (0..self.config.repetitions)
            .map(|_| self.sim.frame_time_at(&frame, programs, 0, mhz))
            .collect()
    }

    /// Median single-batch frame time.
    pub fn measure(
        &mut self,
        batch: &BatchRecord,
        programs: &BTreeMap<String, ShaderProgram>,
    ) -> Result<f64> {
        Ok(median(self.runs(batch, programs)?))
    }

    /// Time of the bare quad used by rasterizing configurations: input
    /// assembly of four vertices, one fragment and a 1x1 target.
    fn quad_ms(&mut self) -> Result<f64> {
        if let Some(t) = self.quad_ms {
            return Ok(t);
        }
        let t = self.measure(&quad(1, 1, 1), &BTreeMap::new())?;
        self.quad_ms = Some(t);
        Ok(t)
    }

    /// Time outside the measured stage in the unit-invocation configuration.
    fn unit_aux(&mut self, stage: Stage) -> Result<f64> {
        if stage == Stage::Ps {
            Ok(self.quad_ms()? - self.baseline)
        } else {
            Ok(0.0)
        }
    }

    fn shader_programs(shader: ShaderProgram) -> BTreeMap<String, ShaderProgram> {
        BTreeMap::from([
            ("pass".to_string(), pass_through()),
            (shader.id.clone(), shader),
        ])
    }

    /// Cost of one execution of `opcode` on `stage`, from a shader of
    /// `iterations` copies run once.
    pub fn bench_opcode(&mut self, stage: Stage, opcode: &str, iterations: u64) -> Result<f64> {
        if iterations < 1 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !stage.is_programmable() || stage == Stage::Pcf {
            return Err(Error::InvalidConfig(format!("{stage} has no opcodes")));
        }
        if is_sampling_opcode(opcode) && stage != Stage::Ps {
            return Err(Error::InvalidConfig(format!(
                "sampling opcode `{opcode}` is only valid on ps"
            )));
        }
        let aux = self.unit_aux(stage)?;
        let span = self.config.cap_ms - self.baseline;
        let mut k = iterations;
        loop {
            let programs = Self::shader_programs(program("op", opcode, k));
            let t = self.measure(&unit_invocation(stage, "op"), &programs)?;
            let marginal = t - self.baseline - aux;
            let done = !self.noisy || marginal >= 0.25 * span || k >= 1 << 40;
            if done {
                let op = marginal * self.omega() / k as f64;
                if !(op > 0.0) {
                    return Err(Error::NonPositiveOpcode {
                        stage,
                        opcode: opcode.to_string(),
                        value: op,
                    });
                }
                debug!("{stage} {opcode}: {op:.6e} ms over {k} iterations");
                return Ok(op);
            }
            k = if marginal > 0.0 {
                ((k as f64 * 0.5 * span / marginal).ceil() as u64).max(2 * k)
            } else {
                k.saturating_mul(1000)
            };
        }
    }

    /// Prices every opcode the profile exposes for `stage`.
    pub fn opcode_table(&mut self, stage: Stage) -> Result<OpcodeCostTable> {
        let opcodes: Vec<String> = self
            .sim
            .profile()
            .opcode_costs
            .get(&stage)
            .map(|c| c.keys().cloned().collect())
            .unwrap_or_default();
        let mut costs = BTreeMap::new();
        for op in opcodes {
            let c = self.bench_opcode(stage, &op, self.config.opcode_iterations)?;
            costs.insert(op, c);
        }
        OpcodeCostTable::new(stage, costs)
    }

    fn op_cost(&self, stage: Stage, opcode: &str) -> Result<f64> {
        self.tables
            .get(&stage.cost_stage())
            .and_then(|t| t.get(opcode))
            .ok_or(Error::MissingStageData {
                stage,
                what: "benchmarked opcode cost",
            })
    }

    fn perf(&self, stage: Stage, load: f64) -> Result<f64> {
        self.functions
            .get(&stage)
            .map(|f| f.eval(load))
            .ok_or(Error::MissingStageData {
                stage,
                what: "performance function",
            })
    }

    /// Configuration for one sweep step: the batch, its programs, the load
    /// it represents and the auxiliary time (ms, after the core division)
    /// to remove from the measurement.
    fn sweep_point(
        &mut self,
        stage: Stage,
        n: u64,
    ) -> Result<(BatchRecord, BTreeMap<String, ShaderProgram>, f64, f64)> {
        let omega = self.omega();
        let none = BTreeMap::new();
        Ok(match stage {
            Stage::Ia => (
                BatchRecord {
                    ia_bytes: n,
                    vertex_count: n.div_ceil(BYTES_PER_VERTEX),
                    ..Default::default()
                },
                none,
                n as f64,
                0.0,
            ),
            Stage::Vs | Stage::Hs | Stage::Ds | Stage::Gs | Stage::Cs => (
                unit_invocation(stage, "load"),
                Self::shader_programs(program("load", "add", n)),
                n as f64 * self.op_cost(stage, "add")?,
                0.0,
            ),
            Stage::Tess => {
                let patches = n.div_ceil(TESS_POINTS_PER_PATCH);
                let mut points = vec![TESS_POINTS_PER_PATCH; patches as usize];
                if let Some(last) = points.last_mut() {
                    *last = n - TESS_POINTS_PER_PATCH * (patches - 1);
                }
                let pcf_load = patches as f64 * self.op_cost(Stage::Pcf, "mov")?;
                let aux = self.perf(Stage::Hs, pcf_load)? / omega;
                let pass = Some("pass".to_string());
                (
                    BatchRecord {
                        hs_shader: pass.clone(),
                        pcf_shader: pass.clone(),
                        ds_shader: pass,
                        patch_count: patches,
                        tess_points_per_patch: points,
                        ..Default::default()
                    },
                    BTreeMap::from([("pass".to_string(), pass_through())]),
                    n as f64,
                    aux,
                )
            }
            Stage::Om => {
                let w = (n as f64).sqrt().ceil().max(1.0) as u64;
                let h = n.div_ceil(w).max(1);
                let (w, h) = (
                    u32::try_from(w).map_err(|_| Error::InvalidConfig("OM target too wide".into()))?,
                    u32::try_from(h).map_err(|_| Error::InvalidConfig("OM target too tall".into()))?,
                );
                let aux = self.quad_ms()? - self.baseline;
                (quad(1, w, h), none, w as f64 * h as f64 - 1.0, aux)
            }
            Stage::Ras => {
                let aux = (self.perf(Stage::Ia, (QUAD_VERTICES * BYTES_PER_VERTEX) as f64)?
                    + self.perf(Stage::Om, n as f64)?)
                    / omega;
                (quad(n, 1, 1), none, n as f64, aux)
            }
            Stage::Ps => {
                let aux = self.quad_ms()? - self.baseline;
                (
                    unit_invocation(Stage::Ps, "load"),
                    Self::shader_programs(program("load", "add", n)),
                    n as f64 * self.op_cost(stage, "add")?,
                    aux,
                )
            }
            Stage::Pcf => {
                return Err(Error::InvalidConfig(
                    "pcf is measured with the hull shader".into(),
                ))
            }
        })
    }

    fn min_load(&self, stage: Stage) -> f64 {
        self.sim
            .profile()
            .bench_min_loads
            .get(&stage)
            .or_else(|| self.config.min_loads.get(&stage))
            .copied()
            .unwrap_or(64.0)
    }

    /// Raw `(load, frame ms)` samples of a geometric sweep, ending with the
    /// first sample over the cap, plus the auxiliary time of every sample.
    fn sweep_raw(&mut self, stage: Stage) -> Result<(Samples, Vec<f64>)> {
        let cap = self.config.cap_ms;
        let mut x = self.min_load(stage);
        let mut prev = 0u64;
        let mut samples = Vec::new();
        let mut aux = Vec::new();
        for step in 0..self.config.max_steps {
            let n = (x.ceil() as u64).max(prev + 1);
            prev = n;
            x *= self.config.growth;
            let (batch, programs, load, a) = self.sweep_point(stage, n)?;
            let t = self.measure(&batch, &programs)?;
            samples.push((load, t));
            aux.push(a);
            if t > cap {
                if step == 0 {
                    return Err(Error::CapAtMinimum { stage, cap_ms: cap });
                }
                debug!("{stage} sweep: {} samples, last load {load:.6e}", samples.len());
                return Ok((samples, aux));
            }
        }
        Err(Error::CapUnreachable {
            stage,
            cap_ms: cap,
            steps: self.config.max_steps,
        })
    }

    /// Geometric load sweep of one stage. Returns `(load, frame ms)` samples;
    /// only the last one exceeds the cap.
    pub fn sweep_stage(&mut self, stage: Stage) -> Result<Vec<(f64, f64)>> {
        Ok(self.sweep_raw(stage)?.0)
    }

    /// Sweeps a stage and stores its performance function.
    pub fn calibrate_stage(&mut self, stage: Stage) -> Result<&PerfFunction> {
        let (raw, aux) = self.sweep_raw(stage)?;
        let omega = self.omega();
        let b = self.baseline;
        let normalized: Vec<(f64, f64)> = raw
            .iter()
            .zip(&aux)
            .map(|(&(l, t), a)| (l, b + (t - b - a) * omega))
            .collect();
        let f = PerfFunction::build(stage, &normalized, b)?;
        self.sweeps.insert(stage, raw);
        self.functions.insert(stage, f);
        Ok(&self.functions[&stage])
    }

    /// Fraction of PS and OM work removed on depth-only batches.
    pub fn early_z(&mut self) -> Result<f64> {
        let n = self.config.early_z_fragments;
        let programs = Self::shader_programs(program("load", "add", self.config.early_z_ops));
        let shaded = BatchRecord {
            ps_shader: Some("load".to_string()),
            ..quad(n, 1, 1)
        };
        let full = self.measure(&shaded, &programs)?;
        let culled = self.measure(
            &BatchRecord {
                depth_only: true,
                ..shaded.clone()
            },
            &programs,
        )?;
        let bare = self.measure(&quad(n, 1, 1), &BTreeMap::new())?;
        let om = self.perf(Stage::Om, n as f64)? / self.omega();
        let affected = full - bare + om;
        if !(affected > 0.0) {
            return Ok(0.0);
        }
        Ok(((full - culled) / affected).clamp(0.0, 0.999))
    }

    /// Raw `(load, frame ms)` samples of every stage calibrated so far.
    pub fn sweeps(&self) -> &Sweeps {
        &self.sweeps
    }

    /// Runs the whole suite and assembles a performance model.
    pub fn run_suite(self) -> Result<PerfModel> {
        Ok(self.run_suite_with_sweeps()?.0)
    }

    /// As [`run_suite`](Self::run_suite), also returning the raw sweeps.
    pub fn run_suite_with_sweeps(mut self) -> Result<(PerfModel, Sweeps)> {
        let profile = self.sim.profile();
        let with_cs = profile.has_compute();
        let mut shader_stages = vec![Stage::Vs, Stage::Hs, Stage::Ds, Stage::Gs, Stage::Ps];
        if with_cs {
            shader_stages.push(Stage::Cs);
        }
        for stage in shader_stages.iter().copied() {
            if profile.opcode_costs.contains_key(&stage) {
                let t = self.opcode_table(stage)?;
                info!("{stage}: {} opcodes", t.costs.len());
                self.tables.insert(stage, t);
            }
        }
        let mut order = vec![Stage::Ia, Stage::Vs, Stage::Hs, Stage::Ds, Stage::Gs];
        if with_cs {
            order.push(Stage::Cs);
        }
        order.extend([Stage::Tess, Stage::Om, Stage::Ras, Stage::Ps]);
        for stage in order {
            let f = self.calibrate_stage(stage)?;
            info!("{stage}: {} breakpoints", f.breakpoints().len());
        }
        let early_z_discount = self.early_z()?;
        let model = PerfModel {
            omega: self.sim.profile().omega,
            beta0_baseline_ms: self.baseline,
            functions: self.functions,
            cost_tables: self.tables,
            early_z_discount,
        };
        model.validate()?;
        Ok((model, self.sweeps))
    }
}

/// Median empty-pipeline frame time.
pub fn measure_baseline(profile: &GpuProfile, config: &BenchConfig) -> Result<f64> {
    Ok(Bench::new(profile, config.clone())?.baseline())
}

/// Runs the full suite against a profile.
pub fn run_suite(profile: &GpuProfile, config: &BenchConfig) -> Result<PerfModel> {
    Bench::new(profile, config.clone())?.run_suite()
}
