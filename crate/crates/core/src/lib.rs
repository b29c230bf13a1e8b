//! Stage-level workload model and frametime estimator for rasterization
//! graphics pipelines.
//!
//! The crate is organised bottom-up:
//!
//! * [`trace`] and [`il`] hold the input data: per-frame batch records and
//!   shader programs in IL assembly.
//! * [`workload`] turns a batch into per-stage loads and the explanatory
//!   vector fed to the regression, using the benchmark-derived [`perf`] model.
//! * [`mlr`] is the regression core (SVD least squares, batch and frame
//!   prediction) and [`trainer`] wraps it with offline fitting, per-frame LMS
//!   updates and the offline/online mode machine.
//! * [`baselines`] implements the AR, FCM and FRQ comparison predictors.
//! * [`sim`] is a deterministic synthetic GPU used as ground truth, and
//!   [`benchmark`] runs the calibration suite against it.
//! * [`metrics`] and [`experiment`] compute and report the evaluation metrics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod benchmark;
mod error;
pub mod experiment;
pub mod il;
pub mod metrics;
pub mod mlr;
pub mod perf;
mod stage;
pub mod sim;
pub mod trace;
pub mod trainer;
pub mod workload;

pub use error::{Error, Result};
pub use il::{complexity, parse_program, OpcodeCostTable, ShaderProgram};
pub use mlr::{fit_svd, predict_batch, predict_frame, sliding_rmse, ModelWeights, ObservationSet};
pub use perf::{PerfFunction, PerfModel};
pub use stage::Stage;
pub use trace::{parse_trace, write_trace, BatchRecord, FrameRecord, FrameSequence};
pub use trainer::{Mode, TrainConfig, TrainerState};
pub use workload::{explanatory_vector, stage_loads, ExplanatoryVector, StageLoadVector, VectorLayout};
