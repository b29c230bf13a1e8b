//! Offline fitting, per-frame online updates and the offline/online mode
//! machine.
//!
//! A session starts in offline mode with frozen weights from
//! [`offline_train`]. Each frame is estimated with both the online and the
//! offline weights; the estimate of the current mode is reported, the actual
//! time is recorded in both error windows and [`decide`] picks the mode for
//! the next frame. While online, [`TrainerState::online_step`] runs one LMS
//! pass over the frame's batches.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mlr::{dot, fit_svd, predict_frame, sliding_rmse, FitOptions, ModelWeights, Scaler};
use crate::mlr::{FitMeta, ObservationSet};
use crate::trace::FrameSequence;
use crate::workload::{ExplanatoryVector, Featurizer};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Svd,
    Sgd,
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd" => Ok(Solver::Svd),
            "sgd" => Ok(Solver::Sgd),
            _ => Err(Error::InvalidConfig(format!("unknown solver `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub offline_epochs: usize,
    pub offline_batch_size: usize,
    /// Fraction of offline samples held out for testing.
    pub train_test_split: f64,
    pub patience: u32,
    pub rmse_threshold_ms: f64,
    pub rmse_window: usize,
    pub offline_frame_count: usize,
    pub solver: Solver,
    /// Relative singular value cutoff for the SVD solver.
    pub rcond: Option<f64>,
    pub seed: u64,
    /// Fit the FCM baseline with a constant term.
    pub fcm_intercept: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.01,
            offline_epochs: 200,
            offline_batch_size: 32,
            train_test_split: 0.3,
            patience: 10,
            rmse_threshold_ms: 0.5,
            rmse_window: 10,
            offline_frame_count: 720,
            solver: Solver::Svd,
            rcond: Some(1e-10),
            seed: 0,
            fcm_intercept: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if !(self.train_test_split > 0.0 && self.train_test_split < 1.0) {
            return bad("train_test_split must lie in (0, 1)");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.rmse_window < 1 {
            return bad("rmse_window must be at least 1");
        }
        if self.offline_batch_size < 1 || self.offline_epochs < 1 {
            return bad("offline_batch_size and offline_epochs must be at least 1");
        }
        if !(self.rmse_threshold_ms >= 0.0) {
            return bad("rmse_threshold_ms must be non-negative");
        }
        Ok(())
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { rcond: self.rcond }
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let config: TrainConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Offline,
    Online,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Offline => "offline",
            Mode::Online => "online",
        })
    }
}

/// Outcome of one mode decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub mode: Mode,
    pub n_v: u32,
    pub entered_online: bool,
    pub left_online: bool,
}

/// One step of the mode decision algorithm. The violation counter only grows
/// while online, when the online error is over threshold and worse than the
/// offline error; exceeding `patience` returns to offline and clears it.
pub fn decide(
    mode: Mode,
    n_v: u32,
    rmse_on: f64,
    rmse_off: f64,
    threshold: f64,
    patience: u32,
) -> Decision {
    let mut d = Decision {
        mode,
        n_v,
        entered_online: false,
        left_online: false,
    };
    match mode {
        Mode::Online => {
            if rmse_on > threshold {
                if rmse_on > rmse_off {
                    d.n_v += 1;
                }
                if d.n_v > patience {
                    d.mode = Mode::Offline;
                    d.n_v = 0;
                    d.left_online = true;
                }
            }
        }
        Mode::Offline => {
            if rmse_off > threshold {
                d.mode = Mode::Online;
                d.n_v = 0;
                d.entered_online = true;
            }
        }
    }
    d
}

/// Result of [`offline_train`]: the weights plus the held-out report, which
/// is also copied into `weights.meta`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub weights: ModelWeights,
    pub train_mae_ms: f64,
    pub test_mae_ms: f64,
    pub train_samples: usize,
    pub test_samples: usize,
}

fn split_indices(m: usize, config: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let n_test = ((m as f64) * config.train_test_split).round() as usize;
    let n_test = n_test.min(m.saturating_sub(1));
    let test = idx.split_off(m - n_test);
    (idx, test)
}

fn mean_abs_error(weights: &ModelWeights, obs: &ObservationSet) -> f64 {
    if obs.is_empty() {
        return 0.0;
    }
    (0..obs.len())
        .map(|i| (dot(&weights.beta, obs.row(i)) - obs.target(i)).abs())
        .sum::<f64>()
        / obs.len() as f64
}

/// Fits frozen offline weights on a shuffled train split and reports the
/// mean absolute error on both splits.
pub fn offline_train(obs: &ObservationSet, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let dim = obs.dim();
    let (train_idx, test_idx) = split_indices(obs.len(), config);
    if train_idx.len() < dim {
        return Err(Error::InsufficientData {
            rows: train_idx.len(),
            dim,
        });
    }
    let train = obs.subset(&train_idx);
    let test = obs.subset(&test_idx);
    let mut weights = match config.solver {
        Solver::Svd => fit_svd(&train, &config.fit_options())?,
        Solver::Sgd => fit_sgd(&train, &test, config)?,
    };
    let train_mae_ms = mean_abs_error(&weights, &train);
    let test_mae_ms = mean_abs_error(&weights, &test);
    weights.meta.train_mae_ms = Some(train_mae_ms);
    weights.meta.test_mae_ms = Some(test_mae_ms);
    weights.meta.test_samples = Some(test.len());
    Ok(TrainReport {
        weights,
        train_mae_ms,
        test_mae_ms,
        train_samples: train.len(),
        test_samples: test.len(),
    })
}

/// Standardized per-batch samples `(z, t)` from frame rows: the row is divided
/// by its batch count so every sample describes an average batch.
fn per_batch_samples(obs: &ObservationSet, scaler: &Scaler) -> Vec<(Vec<f64>, f64)> {
    (0..obs.len())
        .filter(|&i| obs.row(i)[0] > 0.0)
        .map(|i| {
            let row = obs.row(i);
            let x: Vec<f64> = row.iter().map(|v| v / row[0]).collect();
            (scaler.standardize(&x), obs.target(i) / row[0])
        })
        .collect()
}

fn sample_mse(beta: &[f64], samples: &[(Vec<f64>, f64)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(|(z, t)| (dot(beta, z) - t).powi(2))
        .sum::<f64>()
        / samples.len() as f64
}

/// Mini-batch gradient descent on squared error, with early stopping on the
/// test split after `patience` epochs without improvement.
fn fit_sgd(
    train: &ObservationSet,
    test: &ObservationSet,
    config: &TrainConfig,
) -> Result<ModelWeights> {
    let dim = train.dim();
    let scaler = Scaler::fit(train);
    let train_s = per_batch_samples(train, &scaler);
    let test_s = per_batch_samples(test, &scaler);
    if train_s.len() < dim {
        return Err(Error::InsufficientData {
            rows: train_s.len(),
            dim,
        });
    }
    let mut beta = vec![0.0; dim];
    beta[0] = train_s.iter().map(|(_, t)| t).sum::<f64>() / train_s.len() as f64;
    let monitor = if test_s.is_empty() { &train_s } else { &test_s };
    let mut best = (sample_mse(&beta, monitor), beta.clone());
    let mut stale = 0;
    let mut epochs = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_s.len()).collect();
    for _ in 0..config.offline_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.offline_batch_size) {
            let mut grad = vec![0.0; dim];
            for &i in chunk {
                let (z, t) = &train_s[i];
                let e = dot(&beta, z) - t;
                for (g, zj) in grad.iter_mut().zip(z) {
                    *g += 2.0 * e * zj;
                }
            }
            let scale = config.initial_lr / chunk.len() as f64;
            for (b, g) in beta.iter_mut().zip(&grad) {
                *b -= scale * g;
            }
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("sgd weights diverged"));
        }
        let mse = sample_mse(&beta, monitor);
        if mse < best.0 {
            best = (mse, beta.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let beta = scaler.from_standard(&best.1);
    let residual_norm = (0..train.len())
        .map(|i| (train.target(i) - dot(&beta, train.row(i))).powi(2))
        .sum::<f64>()
        .sqrt();
    ModelWeights::new(
        beta,
        Scaler::fit_batches(train),
        FitMeta {
            solver: "sgd".to_string(),
            samples: train.len(),
            residual_norm,
            epochs: Some(epochs),
            ..Default::default()
        },
    )
}

/// Frame-aggregated observations for the first `limit` frames of a sequence.
pub fn build_observations(
    featurizer: &Featurizer<'_>,
    seq: &FrameSequence,
    actuals: &[f64],
    limit: usize,
) -> Result<ObservationSet> {
    if seq.frames.len() != actuals.len() {
        return Err(Error::LengthMismatch {
            left: seq.frames.len(),
            right: actuals.len(),
        });
    }
    let mut obs = ObservationSet::new(featurizer.layout().dim());
    for (frame, &actual) in seq.frames.iter().zip(actuals).take(limit) {
        obs.push_frame(&featurizer.frame_vectors(frame)?, actual)?;
    }
    Ok(obs)
}

/// One row of the per-frame training log. `mode` is the mode whose estimate
/// was reported for this frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLog {
    pub frame: u64,
    pub mode: Mode,
    pub estimate_on: f64,
    pub estimate_off: f64,
    pub actual: f64,
    pub rmse_on: f64,
    pub rmse_off: f64,
    pub n_v: u32,
}

impl FrameLog {
    pub fn estimate(&self) -> f64 {
        match self.mode {
            Mode::Online => self.estimate_on,
            Mode::Offline => self.estimate_off,
        }
    }
}

pub fn write_log<W: Write>(logs: &[FrameLog], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for row in logs {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainerState {
    mode: Mode,
    offline: ModelWeights,
    online: ModelWeights,
    online_std: Vec<f64>,
    n_v: u32,
    window_on: VecDeque<(f64, f64)>,
    window_off: VecDeque<(f64, f64)>,
    frame: u64,
    lr: f64,
    threshold: f64,
    patience: u32,
    window: usize,
}

impl TrainerState {
    pub fn new(offline: ModelWeights, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        offline.validate()?;
        Ok(TrainerState {
            mode: Mode::Offline,
            online: offline.clone(),
            online_std: offline.standard_beta(),
            offline,
            n_v: 0,
            window_on: VecDeque::with_capacity(config.rmse_window),
            window_off: VecDeque::with_capacity(config.rmse_window),
            frame: 0,
            lr: config.initial_lr,
            threshold: config.rmse_threshold_ms,
            patience: config.patience,
            window: config.rmse_window,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n_v(&self) -> u32 {
        self.n_v
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn offline_weights(&self) -> &ModelWeights {
        &self.offline
    }

    pub fn online_weights(&self) -> &ModelWeights {
        &self.online
    }

    /// `(estimate_on, estimate_off)` for a frame.
    pub fn estimates(&self, batches: &[ExplanatoryVector]) -> Result<(f64, f64)> {
        Ok((
            predict_frame(&self.online, batches)?,
            predict_frame(&self.offline, batches)?,
        ))
    }

    pub fn rmse_on(&self) -> Option<f64> {
        sliding_rmse(&self.window_on).ok()
    }

    pub fn rmse_off(&self) -> Option<f64> {
        sliding_rmse(&self.window_off).ok()
    }

    fn push(window: &mut VecDeque<(f64, f64)>, cap: usize, pair: (f64, f64)) {
        if window.len() == cap {
            window.pop_front();
        }
        window.push_back(pair);
    }

    fn reset_online(&mut self) {
        self.online = self.offline.clone();
        self.online_std = self.offline.standard_beta();
    }

    /// Records the frame's errors and applies one mode decision.
    pub fn mode_decide(&mut self, estimate_on: f64, estimate_off: f64, actual: f64) -> Decision {
        Self::push(&mut self.window_on, self.window, (estimate_on, actual));
        Self::push(&mut self.window_off, self.window, (estimate_off, actual));
        let rmse_on = self.rmse_on().unwrap_or(0.0);
        let rmse_off = self.rmse_off().unwrap_or(0.0);
        let d = decide(
            self.mode,
            self.n_v,
            rmse_on,
            rmse_off,
            self.threshold,
            self.patience,
        );
        if d.entered_online || d.left_online {
            self.reset_online();
        }
        if d.entered_online {
            // The fresh online weights equal the offline ones, so they share
            // its error history.
            self.window_on = self.window_off.clone();
        }
        self.mode = d.mode;
        self.n_v = d.n_v;
        d
    }

    /// One LMS epoch over the frame's batches on standardized features. The
    /// actual frame time is split across batches in proportion to their
    /// current (non-negative) predictions, or uniformly if all are zero.
    pub fn online_step(&mut self, batches: &[ExplanatoryVector], actual: f64) -> Result<()> {
        if self.mode != Mode::Online {
            return Err(Error::NotOnline);
        }
        if batches.is_empty() {
            return Ok(());
        }
        if let Some(w) = batches.iter().find(|w| w.dim() != self.online.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.online.dim,
                got: w.dim(),
            });
        }
        let preds: Vec<f64> = batches
            .iter()
            .map(|w| dot(&self.online.beta, w.as_slice()).max(0.0))
            .collect();
        let total: f64 = preds.iter().sum();
        let scaler = &self.online.scaler;
        let mut changed = false;
        for (w, p) in batches.iter().zip(&preds) {
            let target = if total > 0.0 {
                actual * p / total
            } else {
                actual / batches.len() as f64
            };
            let z = scaler.standardize(w.as_slice());
            let e = target - dot(&self.online_std, &z);
            if e != 0.0 {
                changed = true;
                // An outlying batch would overshoot its own target; cap the
                // step at the normalized-LMS rate.
                let lr = self.lr.min(1.0 / dot(&z, &z));
                for (b, zj) in self.online_std.iter_mut().zip(&z) {
                    *b += lr * e * zj;
                }
            }
        }
        if self.online_std.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("online weights diverged"));
        }
        if changed {
            let std = self.online_std.clone();
            self.online.set_standard_beta(&std);
        }
        Ok(())
    }

    /// Full per-frame cycle. In hybrid operation the mode machine runs and
    /// online updates happen while online; otherwise the offline estimate is
    /// always reported and the mode never changes.
    pub fn process_frame(
        &mut self,
        batches: &[ExplanatoryVector],
        actual: f64,
        hybrid: bool,
    ) -> Result<FrameLog> {
        let (estimate_on, estimate_off) = self.estimates(batches)?;
        let mode = self.mode;
        if hybrid {
            self.mode_decide(estimate_on, estimate_off, actual);
            if self.mode == Mode::Online {
                self.online_step(batches, actual)?;
            }
        } else {
            Self::push(&mut self.window_on, self.window, (estimate_on, actual));
            Self::push(&mut self.window_off, self.window, (estimate_off, actual));
        }
        let log = FrameLog {
            frame: self.frame,
            mode,
            estimate_on,
            estimate_off,
            actual,
            rmse_on: self.rmse_on().unwrap_or(0.0),
            rmse_off: self.rmse_off().unwrap_or(0.0),
            n_v: self.n_v,
        };
        self.frame += 1;
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(beta: Vec<f64>) -> ModelWeights {
        let dim = beta.len();
        ModelWeights::new(beta, Scaler::identity(dim), FitMeta::default()).unwrap()
    }

    #[test]
    fn defaults_match_table() {
        let c = TrainConfig::default();
        assert_eq!(c.initial_lr, 0.01);
        assert_eq!(c.offline_epochs, 200);
        assert_eq!(c.offline_batch_size, 32);
        assert_eq!(c.train_test_split, 0.3);
        assert_eq!(c.patience, 10);
        assert_eq!(c.rmse_threshold_ms, 0.5);
        assert_eq!(c.rmse_window, 10);
        assert_eq!(c.offline_frame_count, 720);
        assert_eq!(c.solver, Solver::Svd);
    }

    #[test]
    fn config_parsing_and_validation() {
        let c = TrainConfig::parse("solver = \"sgd\"\npatience = 3\n").unwrap();
        assert_eq!(c.solver, Solver::Sgd);
        assert_eq!(c.patience, 3);
        let c = TrainConfig::parse("{\"rmse_window\": 4}").unwrap();
        assert_eq!(c.rmse_window, 4);
        assert!(TrainConfig::parse("train_test_split = 1.0").is_err());
        assert!(TrainConfig::parse("initial_lr = 0.0").is_err());
        assert!(TrainConfig::parse("bogus = 1").is_err());
    }

    #[test]
    fn offline_stays_below_threshold() {
        let d = decide(Mode::Offline, 0, 0.0, 0.4, 0.5, 10);
        assert_eq!(d.mode, Mode::Offline);
    }

    #[test]
    fn offline_switches_above_threshold() {
        let d = decide(Mode::Offline, 0, 0.0, 0.6, 0.5, 10);
        assert_eq!(d.mode, Mode::Online);
        assert!(d.entered_online);
    }

    #[test]
    fn patience_exceeded_on_eleventh_violation() {
        let (mut mode, mut n_v) = (Mode::Online, 0);
        for i in 1..=11 {
            let d = decide(mode, n_v, 0.8, 0.6, 0.5, 10);
            mode = d.mode;
            n_v = d.n_v;
            if i < 11 {
                assert_eq!(mode, Mode::Online, "frame {i}");
                assert_eq!(n_v, i);
            }
        }
        assert_eq!(mode, Mode::Offline);
        assert_eq!(n_v, 0);
    }

    #[test]
    fn online_step_requires_online_mode() {
        let mut s = TrainerState::new(weights(vec![1.0, 1.0]), &TrainConfig::default()).unwrap();
        let w = ExplanatoryVector::from_slice(&[1.0, 2.0]).unwrap();
        assert!(matches!(s.online_step(&[w], 3.0), Err(Error::NotOnline)));
    }

    #[test]
    fn lms_single_batch_step() {
        let mut s = TrainerState::new(weights(vec![1.0, 1.0]), &TrainConfig::default()).unwrap();
        s.mode = Mode::Online;
        let w = ExplanatoryVector::from_slice(&[1.0, 2.0]).unwrap();
        // prediction 3, actual 5, residual 2
        s.online_step(&[w], 5.0).unwrap();
        assert!((s.online.beta[0] - (1.0 + 0.01 * 2.0)).abs() < 1e-15);
        assert!((s.online.beta[1] - (1.0 + 0.01 * 2.0 * 2.0)).abs() < 1e-15);
        assert_eq!(s.offline.beta, vec![1.0, 1.0]);
    }

    #[test]
    fn lms_fixed_point() {
        let mut s = TrainerState::new(weights(vec![1.0, 0.5]), &TrainConfig::default()).unwrap();
        s.mode = Mode::Online;
        let a = ExplanatoryVector::from_slice(&[1.0, 2.0]).unwrap();
        let b = ExplanatoryVector::from_slice(&[1.0, 4.0]).unwrap();
        s.online_step(&[a, b], 5.0).unwrap();
        assert_eq!(s.online.beta, vec![1.0, 0.5]);
    }

    #[test]
    fn offline_run_never_goes_online() {
        let mut s = TrainerState::new(weights(vec![1.0, 0.0]), &TrainConfig::default()).unwrap();
        let w = ExplanatoryVector::from_slice(&[1.0, 0.0]).unwrap();
        for _ in 0..50 {
            let log = s.process_frame(&[w], 10.0, false).unwrap();
            assert_eq!(log.mode, Mode::Offline);
            assert_eq!(log.estimate(), 1.0);
        }
        assert_eq!(s.mode(), Mode::Offline);
    }

    #[test]
    fn hybrid_enters_online_and_adapts() {
        let mut s = TrainerState::new(weights(vec![1.0, 0.0]), &TrainConfig::default()).unwrap();
        let w = ExplanatoryVector::from_slice(&[1.0, 0.0]).unwrap();
        let first = s.process_frame(&[w], 10.0, true).unwrap();
        assert_eq!(first.mode, Mode::Offline);
        assert_eq!(s.mode(), Mode::Online);
        let second = s.process_frame(&[w], 10.0, true).unwrap();
        assert_eq!(second.mode, Mode::Online);
        assert!(second.estimate_on > first.estimate_on);
    }

    #[test]
    fn log_csv_header() {
        let log = FrameLog {
            frame: 0,
            mode: Mode::Online,
            estimate_on: 1.5,
            estimate_off: 1.0,
            actual: 2.0,
            rmse_on: 0.5,
            rmse_off: 1.0,
            n_v: 0,
        };
        let mut out = Vec::new();
        write_log(&[log], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with(
            "frame,mode,estimate_on,estimate_off,actual,rmse_on,rmse_off,n_v\n0,online,1.5,"
        ));
    }
}
