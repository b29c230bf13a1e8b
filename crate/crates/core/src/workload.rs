//! Per-stage loads of a batch and the explanatory vector built from them.
//!
//! Programmable stages load as complexity times invocation count; fixed
//! function stages load as their element count (bytes for the input
//! assembler, generated points for the tessellator, fragments for the
//! rasterizer, and render-target area times fragments for the output merger).
//! Each load is mapped through its stage's performance function and divided
//! by the core count.

use std::collections::{BTreeMap, HashMap};

use crate::il::{complexity, OpcodeCostTable, ShaderProgram};
use crate::perf::PerfModel;
use crate::trace::{BatchRecord, FrameRecord};
use crate::{Error, Result, Stage};

/// Largest explanatory vector: intercept, nine pipeline stages, compute.
pub const MAX_DIM: usize = 11;
pub const BASE_DIM: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageLoadVector {
    pub ia: f64,
    pub vs: f64,
    pub hs: f64,
    pub pcf: f64,
    pub tess: f64,
    pub ds: f64,
    pub gs: f64,
    pub ras: f64,
    pub ps: f64,
    pub om: f64,
    pub cs: f64,
}

impl StageLoadVector {
    pub fn get(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Ia => self.ia,
            Stage::Vs => self.vs,
            Stage::Hs => self.hs,
            Stage::Pcf => self.pcf,
            Stage::Tess => self.tess,
            Stage::Ds => self.ds,
            Stage::Gs => self.gs,
            Stage::Ras => self.ras,
            Stage::Ps => self.ps,
            Stage::Om => self.om,
            Stage::Cs => self.cs,
        }
    }

    pub fn get_mut(&mut self, stage: Stage) -> &mut f64 {
        match stage {
            Stage::Ia => &mut self.ia,
            Stage::Vs => &mut self.vs,
            Stage::Hs => &mut self.hs,
            Stage::Pcf => &mut self.pcf,
            Stage::Tess => &mut self.tess,
            Stage::Ds => &mut self.ds,
            Stage::Gs => &mut self.gs,
            Stage::Ras => &mut self.ras,
            Stage::Ps => &mut self.ps,
            Stage::Om => &mut self.om,
            Stage::Cs => &mut self.cs,
        }
    }
}

/// Computes stage loads, asking `complexity_of` for the complexity of each
/// active shader. `early_z_discount` scales PS and OM loads of depth-only
/// batches.
pub fn stage_loads_with(
    batch: &BatchRecord,
    mut complexity_of: impl FnMut(Stage, &str) -> Result<f64>,
    early_z_discount: f64,
) -> Result<StageLoadVector> {
    let mut shader_load = |stage: Stage, count: u64| -> Result<f64> {
        match batch.shader(stage) {
            Some(id) => Ok(complexity_of(stage, id)? * count as f64),
            None => Ok(0.0),
        }
    };
    let mut loads = StageLoadVector {
        ia: batch.ia_bytes as f64,
        vs: shader_load(Stage::Vs, batch.vertex_count)?,
        ds: shader_load(Stage::Ds, batch.ds_vertex_count)?,
        gs: shader_load(Stage::Gs, batch.gs_vertex_count)?,
        ras: batch.fragment_count as f64,
        ps: shader_load(Stage::Ps, batch.fragment_count)?,
        om: batch.rt_width as f64 * batch.rt_height as f64 * batch.fragment_count as f64,
        cs: shader_load(Stage::Cs, batch.cs_input_count)?,
        ..Default::default()
    };
    if batch.tessellation_active() {
        loads.hs = shader_load(Stage::Hs, batch.vertex_count)?;
        loads.pcf = shader_load(Stage::Pcf, batch.patch_count)?;
        loads.tess = batch.tess_points_per_patch.iter().sum::<u64>() as f64;
    }
    if batch.depth_only {
        let keep = 1.0 - early_z_discount;
        loads.ps *= keep;
        loads.om *= keep;
    }
    Ok(loads)
}

/// Stage loads from parsed programs and per-stage cost tables.
pub fn stage_loads(
    batch: &BatchRecord,
    programs: &BTreeMap<String, ShaderProgram>,
    costs: &BTreeMap<Stage, OpcodeCostTable>,
    early_z_discount: f64,
) -> Result<StageLoadVector> {
    stage_loads_with(
        batch,
        |stage, id| shader_complexity(programs, costs, stage, id),
        early_z_discount,
    )
}

fn shader_complexity(
    programs: &BTreeMap<String, ShaderProgram>,
    costs: &BTreeMap<Stage, OpcodeCostTable>,
    stage: Stage,
    id: &str,
) -> Result<f64> {
    let program = programs
        .get(id)
        .ok_or_else(|| Error::UnresolvedShader(id.to_string()))?;
    let table = costs
        .get(&stage.cost_stage())
        .ok_or(Error::MissingStageData {
            stage,
            what: "opcode cost table",
        })?;
    complexity(program, table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorLayout {
    /// Adds the compute-shader regressor as an eleventh slot.
    pub with_cs: bool,
    /// Allows loads beyond the last measured breakpoint.
    pub extrapolate: bool,
}

impl Default for VectorLayout {
    fn default() -> Self {
        VectorLayout {
            with_cs: false,
            extrapolate: true,
        }
    }
}

impl VectorLayout {
    pub fn with_cs(with_cs: bool) -> Self {
        VectorLayout {
            with_cs,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        if self.with_cs {
            MAX_DIM
        } else {
            BASE_DIM
        }
    }
}

/// Regressor vector `[1, w_IA, w_VS, w_HS, w_Tess, w_DS, w_GS, w_Ras, w_PS,
/// w_OM (, w_CS)]` in machine milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplanatoryVector {
    values: [f64; MAX_DIM],
    dim: usize,
}

impl ExplanatoryVector {
    /// The vector of an all-inactive batch.
    pub fn unit(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} out of range");
        let mut values = [0.0; MAX_DIM];
        values[0] = 1.0;
        ExplanatoryVector { values, dim }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.len() > MAX_DIM {
            return Err(Error::DimensionMismatch {
                expected: BASE_DIM,
                got: values.len(),
            });
        }
        let mut v = [0.0; MAX_DIM];
        v[..values.len()].copy_from_slice(values);
        Ok(ExplanatoryVector {
            values: v,
            dim: values.len(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.dim]
    }

    pub fn get(&self, slot: usize) -> f64 {
        self.as_slice()[slot]
    }
}

/// Maps loads through the performance functions and divides by the core
/// count. The hull shader slot carries the hull and patch-constant terms.
pub fn explanatory_vector(
    loads: &StageLoadVector,
    perf: &PerfModel,
    layout: VectorLayout,
) -> Result<ExplanatoryVector> {
    if perf.omega < 1 {
        return Err(Error::InvalidPerfModel("omega must be >= 1".into()));
    }
    let omega = perf.omega as f64;
    let mut w = ExplanatoryVector::unit(layout.dim());
    let time = |stage: Stage| -> Result<f64> {
        let load = loads.get(stage);
        if load <= 0.0 {
            return Ok(0.0);
        }
        let f = perf.function(stage).ok_or(Error::MissingStageData {
            stage,
            what: "performance function",
        })?;
        if layout.extrapolate {
            Ok(f.eval(load))
        } else {
            f.eval_bounded(load)
        }
    };
    for stage in [
        Stage::Ia,
        Stage::Vs,
        Stage::Tess,
        Stage::Ds,
        Stage::Gs,
        Stage::Ras,
        Stage::Ps,
        Stage::Om,
    ] {
        w.values[stage.slot()] = time(stage)? / omega;
    }
    w.values[Stage::Hs.slot()] = (time(Stage::Hs)? + time(Stage::Pcf)?) / omega;
    if layout.with_cs {
        w.values[Stage::Cs.slot()] = time(Stage::Cs)? / omega;
    } else if loads.cs > 0.0 {
        return Err(Error::InvalidConfig(
            "compute shader load present but the model has no compute slot".into(),
        ));
    }
    Ok(w)
}

/// Batch-to-vector pipeline with shader complexities computed once up front.
pub struct Featurizer<'a> {
    perf: &'a PerfModel,
    programs: &'a BTreeMap<String, ShaderProgram>,
    layout: VectorLayout,
    complexities: HashMap<(Stage, String), f64>,
}

impl<'a> Featurizer<'a> {
    pub fn new(
        perf: &'a PerfModel,
        programs: &'a BTreeMap<String, ShaderProgram>,
        layout: VectorLayout,
    ) -> Self {
        let mut complexities = HashMap::new();
        for (id, program) in programs {
            for (stage, table) in &perf.cost_tables {
                if let Ok(c) = complexity(program, table) {
                    complexities.insert((*stage, id.clone()), c);
                }
            }
        }
        Featurizer {
            perf,
            programs,
            layout,
            complexities,
        }
    }

    pub fn layout(&self) -> VectorLayout {
        self.layout
    }

    pub fn loads(&self, batch: &BatchRecord) -> Result<StageLoadVector> {
        stage_loads_with(
            batch,
            |stage, id| match self.complexities.get(&(stage.cost_stage(), id.to_string())) {
                Some(&c) => Ok(c),
                None => shader_complexity(self.programs, &self.perf.cost_tables, stage, id),
            },
            self.perf.early_z_discount,
        )
    }

    pub fn batch_vector(&self, batch: &BatchRecord) -> Result<ExplanatoryVector> {
        explanatory_vector(&self.loads(batch)?, self.perf, self.layout)
    }

    pub fn frame_vectors(&self, frame: &FrameRecord) -> Result<Vec<ExplanatoryVector>> {
        frame.batches.iter().map(|b| self.batch_vector(b)).collect()
    }
}
