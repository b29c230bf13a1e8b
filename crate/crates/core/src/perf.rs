//! Benchmark-derived performance functions and opcode cost tables.
//!
//! A [`PerfFunction`] maps a stage load to marginal processing time (ms,
//! before division by the core count). It is a monotone piecewise-linear
//! curve anchored at the origin and extrapolated linearly with the slope of
//! its last segment.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::il::OpcodeCostTable;
use crate::{Error, Result, Stage};

#[derive(Debug, Clone, PartialEq)]
pub struct PerfFunction {
    stage: Stage,
    breakpoints: Vec<(f64, f64)>,
}

impl PerfFunction {
    /// Wraps explicit breakpoints, checking the invariants: first point at
    /// the origin, strictly increasing loads, non-decreasing times.
    pub fn from_breakpoints(stage: Stage, breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidPerfModel(format!("{stage}: {m}")));
        if breakpoints.len() < 2 {
            return bad("needs at least two breakpoints".into());
        }
        if breakpoints[0] != (0.0, 0.0) {
            return bad("first breakpoint must be (0, 0)".into());
        }
        for pair in breakpoints.windows(2) {
            let ((l0, t0), (l1, t1)) = (pair[0], pair[1]);
            if !(l1.is_finite() && t1.is_finite()) {
                return bad("non-finite breakpoint".into());
            }
            if l1 <= l0 {
                return bad(format!("loads not strictly increasing at {l1}"));
            }
            if t1 < t0 {
                return bad(format!("times decrease at load {l1}"));
            }
        }
        Ok(PerfFunction { stage, breakpoints })
    }

    /// Builds a function from raw benchmark samples `(load, total ms)`.
    ///
    /// The baseline is subtracted and negative results clamped to zero, then
    /// samples are sorted by load, made monotone with a running maximum and
    /// prefixed with the origin. Zero-load samples collapse into the origin.
    pub fn build(stage: Stage, samples: &[(f64, f64)], baseline_ms: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooFewSamples(samples.len()));
        }
        if samples
            .iter()
            .any(|&(l, t)| !(l.is_finite() && t.is_finite()) || l < 0.0)
        {
            return Err(Error::InvalidPerfModel(format!(
                "{stage}: samples must be finite with non-negative load"
            )));
        }
        let mut sorted: Vec<(f64, f64)> = samples
            .iter()
            .map(|&(l, t)| (l, (t - baseline_ms).max(0.0)))
            .collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidPerfModel(format!(
                "{stage}: sample loads must be distinct"
            )));
        }
        let mut breakpoints = vec![(0.0, 0.0)];
        let mut running = 0.0f64;
        for (load, time) in sorted.into_iter().filter(|&(l, _)| l > 0.0) {
            running = running.max(time);
            breakpoints.push((load, running));
        }
        if breakpoints.len() < 2 {
            return Err(Error::TooFewSamples(breakpoints.len() - 1));
        }
        Ok(PerfFunction { stage, breakpoints })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn max_load(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1].0
    }

    pub fn extrapolation_slope(&self) -> f64 {
        let n = self.breakpoints.len();
        let (l0, t0) = self.breakpoints[n - 2];
        let (l1, t1) = self.breakpoints[n - 1];
        (t1 - t0) / (l1 - l0)
    }

    /// Piecewise-linear evaluation; exact at breakpoint loads.
    pub fn eval(&self, load: f64) -> f64 {
        if load <= 0.0 {
            return 0.0;
        }
        let bps = &self.breakpoints;
        // index of the last breakpoint with load <= `load`
        let i = bps.partition_point(|&(l, _)| l <= load) - 1;
        let (l0, t0) = bps[i];
        if load == l0 {
            return t0;
        }
        let slope = if i + 1 < bps.len() {
            let (l1, t1) = bps[i + 1];
            (t1 - t0) / (l1 - l0)
        } else {
            self.extrapolation_slope()
        };
        t0 + (load - l0) * slope
    }

    /// As [`eval`](Self::eval), but refuses to extrapolate past the last
    /// measured load.
    pub fn eval_bounded(&self, load: f64) -> Result<f64> {
        if load > self.max_load() {
            return Err(Error::OutOfDomain {
                stage: self.stage,
                load,
                max: self.max_load(),
            });
        }
        Ok(self.eval(load))
    }
}

/// Per-stage performance functions and opcode costs for one machine.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfModel {
    pub omega: u32,
    pub beta0_baseline_ms: f64,
    pub functions: BTreeMap<Stage, PerfFunction>,
    pub cost_tables: BTreeMap<Stage, OpcodeCostTable>,
    /// Fraction of PS/OM load removed by early-z on depth-only batches, as
    /// measured by the depth-only benchmark.
    pub early_z_discount: f64,
}

#[derive(Serialize, Deserialize)]
struct StageDoc {
    #[serde(default)]
    breakpoints: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    opcodes: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct PerfDoc {
    omega: u32,
    beta0_baseline_ms: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    early_z_discount: f64,
    stages: BTreeMap<Stage, StageDoc>,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl PerfModel {
    pub fn validate(&self) -> Result<()> {
        if self.omega < 1 {
            return Err(Error::InvalidPerfModel("omega must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.early_z_discount) {
            return Err(Error::InvalidPerfModel(
                "early_z_discount must lie in [0, 1)".into(),
            ));
        }
        for (stage, f) in &self.functions {
            if f.stage != *stage {
                return Err(Error::InvalidPerfModel(format!(
                    "function for {} stored under {stage}",
                    f.stage
                )));
            }
        }
        for (stage, t) in &self.cost_tables {
            if t.stage != *stage || !stage.is_programmable() {
                return Err(Error::InvalidPerfModel(format!(
                    "cost table misplaced under {stage}"
                )));
            }
            t.validate()?;
        }
        Ok(())
    }

    /// The function used for a stage; PCF falls back to the hull shader's.
    pub fn function(&self, stage: Stage) -> Option<&PerfFunction> {
        self.functions.get(&stage).or_else(|| match stage {
            Stage::Pcf => self.functions.get(&Stage::Hs),
            _ => None,
        })
    }

    pub fn cost_table(&self, stage: Stage) -> Option<&OpcodeCostTable> {
        self.cost_tables.get(&stage.cost_stage())
    }

    /// True when all nine graphics stages have a function.
    pub fn covers_pipeline(&self) -> bool {
        Stage::PIPELINE.iter().all(|s| self.functions.contains_key(s))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut stages: BTreeMap<Stage, StageDoc> = BTreeMap::new();
        for (stage, f) in &self.functions {
            stages.entry(*stage).or_insert_with(empty_doc).breakpoints =
                f.breakpoints.iter().map(|&(l, t)| [l, t]).collect();
        }
        for (stage, t) in &self.cost_tables {
            stages.entry(*stage).or_insert_with(empty_doc).opcodes = t.costs.clone();
        }
        let doc = PerfDoc {
            omega: self.omega,
            beta0_baseline_ms: self.beta0_baseline_ms,
            early_z_discount: self.early_z_discount,
            stages,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PerfDoc = serde_json::from_str(text)?;
        let mut functions = BTreeMap::new();
        let mut cost_tables = BTreeMap::new();
        for (stage, sd) in doc.stages {
            if !sd.breakpoints.is_empty() {
                let bps = sd.breakpoints.iter().map(|p| (p[0], p[1])).collect();
                functions.insert(stage, PerfFunction::from_breakpoints(stage, bps)?);
            }
            if !sd.opcodes.is_empty() {
                cost_tables.insert(stage, OpcodeCostTable::new(stage, sd.opcodes)?);
            }
        }
        let model = PerfModel {
            omega: doc.omega,
            beta0_baseline_ms: doc.beta0_baseline_ms,
            functions,
            cost_tables,
            early_z_discount: doc.early_z_discount,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

fn empty_doc() -> StageDoc {
    StageDoc {
        breakpoints: Vec::new(),
        opcodes: BTreeMap::new(),
    }
}
