//! Head-to-head runs of the workload model and the comparison predictors over
//! one trace.
//!
//! Every model is calibrated on a separate training sequence (offline weights
//! for GM, the normalizers for FCM, a warm history for AR and FRQ) and then
//! streams the evaluation frames in order, predicting each frame before its
//! actual time is revealed.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::info;

use crate::baselines::{ArState, FcmFeatures, FcmState, FrqState};
use crate::metrics::{overhead_report, ModelResult};
use crate::mlr::{predict_frame, ModelWeights};
use crate::perf::PerfModel;
use crate::trace::FrameSequence;
use crate::trainer::{build_observations, offline_train, TrainConfig, TrainReport, TrainerState};
use crate::workload::{Featurizer, VectorLayout};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    /// Workload model with hybrid offline/online training.
    GmHybrid,
    /// Workload model with frozen offline weights.
    GmOffline,
    Ar,
    Fcm,
    Frq,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::GmHybrid,
        ModelKind::GmOffline,
        ModelKind::Ar,
        ModelKind::Fcm,
        ModelKind::Frq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GmHybrid => "gm-h",
            ModelKind::GmOffline => "gm-of",
            ModelKind::Ar => "ar",
            ModelKind::Fcm => "fcm",
            ModelKind::Frq => "frq",
        }
    }

    /// Parses a comma-separated list, keeping the given order and dropping
    /// repeats.
    pub fn parse_list(s: &str) -> Result<Vec<ModelKind>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: ModelKind = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidConfig("no models requested".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model `{s}`")))
    }
}

/// A trace with its measured frametimes and, optionally, the GPU frequency
/// of every frame.
#[derive(Debug, Clone, Copy)]
pub struct Run<'a> {
    pub sequence: &'a FrameSequence,
    pub actuals: &'a [f64],
    pub frequencies: Option<&'a [f64]>,
}

impl<'a> Run<'a> {
    fn check(&self) -> Result<()> {
        let n = self.sequence.frames.len();
        if n != self.actuals.len() {
            return Err(Error::LengthMismatch {
                left: n,
                right: self.actuals.len(),
            });
        }
        if let Some(f) = self.frequencies {
            if f.len() != n {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: f.len(),
                });
            }
        }
        Ok(())
    }

    /// Frequency of frame `i`; a constant when the run has none.
    fn frequency(&self, i: usize) -> f64 {
        self.frequencies.map_or(1.0, |f| f[i])
    }
}

/// Calibrated state of every model before evaluation.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub gm: TrainReport,
    pub fcm: FcmState,
    pub ar: ArState,
    pub frq: FrqState,
}

fn layout_for(perf: &PerfModel, runs: &[&Run<'_>]) -> VectorLayout {
    VectorLayout::with_cs(
        perf.functions.contains_key(&crate::Stage::Cs)
            && runs.iter().any(|r| r.sequence.uses_compute()),
    )
}

/// Calibrates every model on a training run. GM weights come from
/// [`offline_train`] with `config`; FCM gets an intercept when
/// `config.fcm_intercept` is set.
pub fn calibrate(perf: &PerfModel, train: &Run<'_>, config: &TrainConfig) -> Result<Calibration> {
    train.check()?;
    let programs = train.sequence.programs()?;
    let featurizer = Featurizer::new(perf, &programs, layout_for(perf, &[train]));
    let obs = build_observations(&featurizer, train.sequence, train.actuals, usize::MAX)?;
    let gm = offline_train(&obs, config)?;
    info!(
        "offline weights: train MAE {:.4} ms, test MAE {:.4} ms",
        gm.train_mae_ms, gm.test_mae_ms
    );
    let features: Vec<FcmFeatures> = train
        .sequence
        .frames
        .iter()
        .map(FcmFeatures::from_frame)
        .collect();
    let fcm = FcmState::calibrate(&features, train.actuals, config.fcm_intercept)?;
    let mut ar = ArState::default();
    let mut frq = FrqState::default();
    for (i, &a) in train.actuals.iter().enumerate() {
        ar.update(a);
        frq.update(train.frequency(i), a)?;
    }
    Ok(Calibration { gm, fcm, ar, frq })
}

/// Per-frame estimates of one model, with optional predict-path timings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub model: ModelKind,
    pub estimates: Vec<f64>,
    pub timings_ms: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub config: TrainConfig,
    /// Record wall-clock time of every prediction (training excluded).
    pub measure_overhead: bool,
}

fn timed<T>(on: bool, timings: &mut Vec<f64>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    if !on {
        return f();
    }
    let start = Instant::now();
    let out = f()?;
    timings.push(start.elapsed().as_secs_f64() * 1e3);
    Ok(out)
}

/// Streams the evaluation run through one calibrated model.
pub fn run_model(
    model: ModelKind,
    perf: &PerfModel,
    calibration: &Calibration,
    eval: &Run<'_>,
    options: &EvalOptions,
) -> Result<ModelRun> {
    eval.check()?;
    let n = eval.actuals.len();
    let measure = options.measure_overhead;
    let mut timings = Vec::with_capacity(if measure { n } else { 0 });
    let mut estimates = Vec::with_capacity(n);
    match model {
        ModelKind::GmHybrid | ModelKind::GmOffline => {
            let weights: &ModelWeights = &calibration.gm.weights;
            let programs = eval.sequence.programs()?;
            let layout = VectorLayout::with_cs(weights.dim == VectorLayout::with_cs(true).dim());
            let featurizer = Featurizer::new(perf, &programs, layout);
            let mut state = TrainerState::new(weights.clone(), &options.config)?;
            let hybrid = model == ModelKind::GmHybrid;
            for (frame, &actual) in eval.sequence.frames.iter().zip(eval.actuals) {
                let vectors = timed(measure, &mut timings, || {
                    let v = featurizer.frame_vectors(frame)?;
                    if hybrid {
                        state.estimates(&v)?;
                    } else {
                        predict_frame(weights, &v)?;
                    }
                    Ok(v)
                })?;
                let log = state.process_frame(&vectors, actual, hybrid)?;
                estimates.push(log.estimate());
            }
        }
        ModelKind::Ar => {
            let mut ar = calibration.ar.clone();
            for &actual in eval.actuals {
                estimates.push(timed(measure, &mut timings, || Ok(ar.predict()))?);
                ar.update(actual);
            }
        }
        ModelKind::Fcm => {
            for frame in &eval.sequence.frames {
                estimates.push(timed(measure, &mut timings, || {
                    calibration.fcm.predict(&FcmFeatures::from_frame(frame))
                })?);
            }
        }
        ModelKind::Frq => {
            let mut frq = calibration.frq.clone();
            for (i, &actual) in eval.actuals.iter().enumerate() {
                let f = eval.frequency(i);
                estimates.push(timed(measure, &mut timings, || frq.predict(f))?);
                frq.update(f, actual)?;
            }
        }
    }
    Ok(ModelRun {
        model,
        estimates,
        timings_ms: measure.then_some(timings),
    })
}

/// Calibrates on `train`, evaluates every requested model on `eval`, and
/// returns metrics in the order the models were requested.
pub fn compare(
    perf: &PerfModel,
    train: &Run<'_>,
    eval: &Run<'_>,
    models: &[ModelKind],
    scenario: &str,
    seed: u64,
    options: &EvalOptions,
) -> Result<(Vec<ModelRun>, Vec<ModelResult>)> {
    let calibration = calibrate(perf, train, &options.config)?;
    evaluate(perf, &calibration, eval, models, scenario, seed, options)
}

/// Evaluates already calibrated models.
pub fn evaluate(
    perf: &PerfModel,
    calibration: &Calibration,
    eval: &Run<'_>,
    models: &[ModelKind],
    scenario: &str,
    seed: u64,
    options: &EvalOptions,
) -> Result<(Vec<ModelRun>, Vec<ModelResult>)> {
    let mut runs = Vec::with_capacity(models.len());
    let mut results = Vec::with_capacity(models.len());
    for &m in models {
        let run = run_model(m, perf, calibration, eval, options)?;
        let mut result = ModelResult::evaluate(m.name(), scenario, seed, &run.estimates, eval.actuals, 0.0)?;
        if let Some(t) = &run.timings_ms {
            result.overhead = Some(overhead_report(t, eval.actuals)?);
            result.rss_mb = crate::metrics::rss_mb();
        }
        runs.push(run);
        results.push(result);
    }
    Ok((runs, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names_round_trip() {
        for m in ModelKind::ALL {
            assert_eq!(m.name().parse::<ModelKind>().unwrap(), m);
        }
        assert_eq!(
            ModelKind::parse_list("gm-h, fcm,gm-h").unwrap(),
            vec![ModelKind::GmHybrid, ModelKind::Fcm]
        );
        assert!(ModelKind::parse_list("gm-h,xyz").is_err());
        assert!(ModelKind::parse_list("").is_err());
    }
}
