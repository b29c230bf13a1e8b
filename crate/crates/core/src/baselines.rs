//! Comparison predictors: an autoregressive frametime filter (AR), a frame
//! complexity model over vertex, texture and command counts (FCM), and a
//! frequency-scaling model (FRQ).
//!
//! AR and FRQ adapt with normalized LMS steps; FCM is calibrated once by least
//! squares and then stays fixed.

use std::collections::VecDeque;

use crate::trace::FrameRecord;
use crate::{Error, Result};

const NLMS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ArState {
    coefficients: Vec<f64>,
    /// Most recent first.
    history: VecDeque<f64>,
    lr: f64,
}

impl ArState {
    pub const DEFAULT_ORDER: usize = 10;
    pub const DEFAULT_LR: f64 = 0.05;

    /// Coefficients start as a plain moving average.
    pub fn new(order: usize, lr: f64) -> Self {
        assert!(order >= 1, "AR order must be at least 1");
        ArState {
            coefficients: vec![1.0 / order as f64; order],
            history: VecDeque::with_capacity(order),
            lr,
        }
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn warmed_up(&self) -> bool {
        self.history.len() == self.order()
    }

    /// Prediction for the next frame. During warm-up this is the last observed
    /// frametime, or 0 before any frame.
    pub fn predict(&self) -> f64 {
        if !self.warmed_up() {
            return self.history.front().copied().unwrap_or(0.0);
        }
        self.coefficients
            .iter()
            .zip(&self.history)
            .map(|(c, x)| c * x)
            .sum()
    }

    pub fn update(&mut self, actual: f64) {
        if self.warmed_up() {
            let e = actual - self.predict();
            let norm: f64 = self.history.iter().map(|x| x * x).sum();
            let step = self.lr * e / (NLMS_EPS + norm);
            for (c, x) in self.coefficients.iter_mut().zip(&self.history) {
                *c += step * x;
            }
            self.history.pop_back();
        }
        self.history.push_front(actual);
    }

    /// Predicts the coming frame, then learns from its actual time.
    pub fn predict_update(&mut self, actual: f64) -> f64 {
        let p = self.predict();
        self.update(actual);
        p
    }
}

impl Default for ArState {
    fn default() -> Self {
        ArState::new(Self::DEFAULT_ORDER, Self::DEFAULT_LR)
    }
}

/// Frame-level inputs of the frame complexity model.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FcmFeatures {
    pub vertices: f64,
    /// Texture bytes, approximated by the 4-byte render target area of every
    /// batch that runs a pixel shader.
    pub texture_bytes: f64,
    pub commands: f64,
}

impl FcmFeatures {
    pub fn from_frame(frame: &FrameRecord) -> Self {
        let mut f = FcmFeatures::default();
        for b in &frame.batches {
            f.vertices += b.vertex_count as f64;
            if b.ps_shader.is_some() {
                f.texture_bytes += 4.0 * b.rt_width as f64 * b.rt_height as f64;
            }
            f.commands += 1.0;
        }
        f
    }

    pub fn scaled(&self, k: f64) -> Self {
        FcmFeatures {
            vertices: self.vertices * k,
            texture_bytes: self.texture_bytes * k,
            commands: self.commands * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcmState {
    /// Weight of each of the three terms.
    pub weight: f64,
    /// Per-unit normalizers for vertices, texture bytes and commands.
    pub nu: f64,
    pub tau: f64,
    pub kappa: f64,
    pub scale: f64,
    pub intercept: Option<f64>,
}

impl FcmState {
    /// Least-squares calibration of the normalizers on frame features and
    /// actual times. The term weights stay at 1/3 and the scale at 1.
    pub fn calibrate(features: &[FcmFeatures], actuals: &[f64], intercept: bool) -> Result<Self> {
        if features.len() != actuals.len() {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: actuals.len(),
            });
        }
        let coeffs = fit_scaled(features, actuals, intercept)?;
        Ok(FcmState {
            weight: 1.0 / 3.0,
            nu: 3.0 * coeffs[1],
            tau: 3.0 * coeffs[2],
            kappa: 3.0 * coeffs[3],
            scale: 1.0,
            intercept: intercept.then_some(coeffs[0]),
        })
    }

    pub fn predict(&self, f: &FcmFeatures) -> Result<f64> {
        if !(self.scale > 0.0) {
            return Err(Error::Uncalibrated("fcm"));
        }
        let body = self.weight
            * (f.vertices * self.nu + f.texture_bytes * self.tau + f.commands * self.kappa);
        Ok(self.scale * body + self.intercept.unwrap_or(0.0))
    }
}

/// Least squares on max-abs scaled columns. Returns `[intercept, v, t, c]`,
/// with the intercept 0 when it is not fitted.
fn fit_scaled(features: &[FcmFeatures], actuals: &[f64], intercept: bool) -> Result<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(4);
    if intercept {
        cols.push(vec![1.0; features.len()]);
    }
    cols.push(features.iter().map(|f| f.vertices).collect());
    cols.push(features.iter().map(|f| f.texture_bytes).collect());
    cols.push(features.iter().map(|f| f.commands).collect());
    let (m, n) = (features.len(), cols.len());
    if m < n {
        return Err(Error::InsufficientData { rows: m, dim: n });
    }
    if features
        .iter()
        .flat_map(|f| [f.vertices, f.texture_bytes, f.commands])
        .chain(actuals.iter().copied())
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("fcm calibration data"));
    }
    let scales: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE))
        .collect();
    let rows: Vec<f64> = (0..m)
        .flat_map(|i| (0..n).map(|j| cols[j][i] / scales[j]).collect::<Vec<_>>())
        .collect();
    let (x, _) = crate::mlr::svd_solve(&rows, m, n, actuals, Some(1e-10));
    let mut out: Vec<f64> = x.iter().zip(&scales).map(|(x, s)| x / s).collect();
    if !intercept {
        out.insert(0, 0.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrqState {
    sensitivity: f64,
    last_frametime: Option<f64>,
    last_frequency: Option<f64>,
    lr: f64,
}

impl FrqState {
    pub const DEFAULT_LR: f64 = 0.1;

    pub fn new(lr: f64) -> Self {
        FrqState {
            sensitivity: 1.0,
            last_frametime: None,
            last_frequency: None,
            lr,
        }
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    /// `last * (f_last / f) ^ s`; 0 before the first frame.
    pub fn predict(&self, frequency: f64) -> Result<f64> {
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::InvalidFrequency(frequency));
        }
        Ok(match (self.last_frametime, self.last_frequency) {
            (Some(t), Some(f)) => t * (f / frequency).powf(self.sensitivity),
            _ => 0.0,
        })
    }

    pub fn update(&mut self, frequency: f64, actual: f64) -> Result<()> {
        let p = self.predict(frequency)?;
        if let Some(f_last) = self.last_frequency {
            let ratio = f_last / frequency;
            if ratio != 1.0 {
                let g = p * ratio.ln();
                let e = actual - p;
                self.sensitivity += self.lr * e * g / (NLMS_EPS + g * g);
                self.sensitivity = self.sensitivity.clamp(0.0, 1.0);
            }
        }
        self.last_frametime = Some(actual);
        self.last_frequency = Some(frequency);
        Ok(())
    }

    pub fn predict_update(&mut self, frequency: f64, actual: f64) -> Result<f64> {
        let p = self.predict(frequency)?;
        self.update(frequency, actual)?;
        Ok(p)
    }
}

impl Default for FrqState {
    fn default() -> Self {
        FrqState::new(Self::DEFAULT_LR)
    }
}
