//! Multiple linear regression over explanatory vectors.
//!
//! A batch predicts `beta . w`, a frame the sum over its batches. Weights are
//! fitted by SVD least squares on standardized features: every column except
//! the intercept is centred and scaled before the decomposition, and the
//! solution is mapped back so that stored coefficients apply to raw vectors.
//!
//! Rows of an [`ObservationSet`] may be single batches or whole frames. A
//! frame row is the sum of its batch vectors, so its intercept column holds
//! the batch count; by linearity the frame prediction is still `beta . row`.

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::workload::ExplanatoryVector;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    dim: usize,
    rows: Vec<f64>,
    /// Per-row sum of squared batch vectors, for per-batch statistics.
    squares: Vec<f64>,
    targets: Vec<f64>,
}

impl ObservationSet {
    pub fn new(dim: usize) -> Self {
        ObservationSet {
            dim,
            rows: Vec::new(),
            squares: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Adds an aggregated row. For per-batch statistics it counts as
    /// `row[0]` identical average batches.
    pub fn push_row(&mut self, row: &[f64], target: f64) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        let n = if row[0] > 0.0 { row[0] } else { 1.0 };
        let squares: Vec<f64> = row.iter().map(|v| v * v / n).collect();
        self.push_with_squares(row, &squares, target);
        Ok(())
    }

    fn push_with_squares(&mut self, row: &[f64], squares: &[f64], target: f64) {
        self.rows.extend_from_slice(row);
        self.squares.extend_from_slice(squares);
        self.targets.push(target);
    }

    /// Adds one frame as the sum of its batch vectors.
    pub fn push_frame(&mut self, batches: &[ExplanatoryVector], target: f64) -> Result<()> {
        let mut row = vec![0.0; self.dim];
        let mut squares = vec![0.0; self.dim];
        for w in batches {
            if w.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: w.dim(),
                });
            }
            for ((acc, sq), v) in row.iter_mut().zip(&mut squares).zip(w.as_slice()) {
                *acc += v;
                *sq += v * v;
            }
        }
        self.push_with_squares(&row, &squares, target);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn subset(&self, indices: &[usize]) -> ObservationSet {
        let mut out = ObservationSet::new(self.dim);
        for &i in indices {
            let sq = &self.squares[i * self.dim..(i + 1) * self.dim];
            out.push_with_squares(self.row(i), sq, self.targets[i]);
        }
        out
    }

    fn check_finite(&self) -> Result<()> {
        if self.rows.iter().chain(&self.targets).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("observations"))
        }
    }
}

/// Per-feature centring and scaling. Slot 0 (the intercept) is exempt and
/// always holds mean 0, std 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Scaler {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Statistics of the per-batch average `row / row[0]` over all rows with a
    /// positive intercept column. Constant columns get std 1.
    pub fn fit(obs: &ObservationSet) -> Self {
        let dim = obs.dim();
        let mut scaler = Scaler::identity(dim);
        let averages: Vec<Vec<f64>> = (0..obs.len())
            .map(|i| obs.row(i))
            .filter(|r| r[0] > 0.0)
            .map(|r| r.iter().map(|v| v / r[0]).collect())
            .collect();
        if averages.is_empty() {
            return scaler;
        }
        let m = averages.len() as f64;
        for j in 1..dim {
            let mean = averages.iter().map(|a| a[j]).sum::<f64>() / m;
            let var = averages.iter().map(|a| (a[j] - mean).powi(2)).sum::<f64>() / m;
            let std = var.sqrt();
            scaler.mean[j] = mean;
            scaler.std[j] = if std > 1e-12 * mean.abs().max(f64::MIN_POSITIVE) {
                std
            } else {
                1.0
            };
        }
        scaler
    }

    /// Statistics of individual batch vectors, pooled over all frames.
    pub fn fit_batches(obs: &ObservationSet) -> Self {
        let dim = obs.dim();
        let mut scaler = Scaler::identity(dim);
        let positive: Vec<usize> = (0..obs.len()).filter(|&i| obs.row(i)[0] > 0.0).collect();
        let n: f64 = positive.iter().map(|&i| obs.row(i)[0]).sum();
        if positive.is_empty() {
            return scaler;
        }
        for j in 1..dim {
            let sum: f64 = positive.iter().map(|&i| obs.row(i)[j]).sum();
            let sq: f64 = positive.iter().map(|&i| obs.squares[i * dim + j]).sum();
            let mean = sum / n;
            let std = (sq / n - mean * mean).max(0.0).sqrt();
            scaler.mean[j] = mean;
            scaler.std[j] = if std > 1e-12 * mean.abs().max(f64::MIN_POSITIVE) {
                std
            } else {
                1.0
            };
        }
        scaler
    }

    /// Standardizes a raw row. Centring is proportional to the intercept
    /// column so that aggregated frame rows stay consistent.
    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(row.len());
        z.push(row[0]);
        for j in 1..row.len() {
            z.push((row[j] - row[0] * self.mean[j]) / self.std[j]);
        }
        z
    }

    /// Coefficients acting on standardized rows that reproduce `beta` on raw
    /// rows.
    pub fn to_standard(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = beta.to_vec();
        for j in 1..beta.len() {
            out[0] += beta[j] * self.mean[j];
            out[j] = beta[j] * self.std[j];
        }
        out
    }

    pub fn from_standard(&self, beta_std: &[f64]) -> Vec<f64> {
        let mut out = beta_std.to_vec();
        for j in 1..beta_std.len() {
            out[j] = beta_std[j] / self.std[j];
            out[0] -= out[j] * self.mean[j];
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub solver: String,
    /// Number of observation rows used for the fit.
    pub samples: usize,
    pub residual_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_mae_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_mae_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    /// `[beta_0, beta_1, ...]` acting on raw explanatory vectors.
    pub beta: Vec<f64>,
    pub scaler: Scaler,
    pub dim: usize,
    pub meta: FitMeta,
}

impl ModelWeights {
    pub fn new(beta: Vec<f64>, scaler: Scaler, meta: FitMeta) -> Result<Self> {
        let w = ModelWeights {
            dim: beta.len(),
            beta,
            scaler,
            meta,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.beta.len();
        if n != self.dim || self.scaler.mean.len() != n || self.scaler.std.len() != n {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: n,
            });
        }
        if self.scaler.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig("scaler std must be positive".into()));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        Ok(())
    }

    pub fn standard_beta(&self) -> Vec<f64> {
        self.scaler.to_standard(&self.beta)
    }

    pub fn set_standard_beta(&mut self, beta_std: &[f64]) {
        self.beta = self.scaler.from_standard(beta_std);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: ModelWeights = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
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

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Singular values below `rcond * s_max` are treated as zero. `None`
    /// disables pruning, in which case an all-zero feature column is an error.
    pub rcond: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { rcond: Some(1e-10) }
    }
}

/// Minimum-norm least-squares coefficients `V S^+ U^T y` for a dense
/// row-major system. Returns the solution and the numerical rank.
///
/// The decomposition is a one-sided Jacobi SVD: plane rotations applied to
/// pairs of columns until every pair is orthogonal. The columns then hold
/// `U S` and the accumulated rotations `V`. It is accurate to working
/// precision on the tall, narrow systems met here.
pub(crate) fn svd_solve(
    rows: &[f64],
    m: usize,
    n: usize,
    y: &[f64],
    rcond: Option<f64>,
) -> (Vec<f64>, usize) {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| rows[i * n + j]).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut cols, &mut v] {
                    let (lo, hi) = mat.split_at_mut(q);
                    for (a, b) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                        let (x, z) = (*a, *b);
                        *a = c * x - s * z;
                        *b = s * x + c * z;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let s_max = sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = rcond.map_or(0.0, |r| r * s_max);
    let mut x = vec![0.0; n];
    let mut rank = 0;
    for k in 0..n {
        if sigma[k] > cutoff && sigma[k] > 0.0 {
            rank += 1;
            // u_k . y / sigma_k with u_k = col_k / sigma_k
            let coef = dot(&cols[k], y) / (sigma[k] * sigma[k]);
            for (xi, vi) in x.iter_mut().zip(&v[k]) {
                *xi += coef * vi;
            }
        }
    }
    (x, rank)
}

/// Fits `beta` by SVD least squares on standardized features.
pub fn fit_svd(obs: &ObservationSet, opts: &FitOptions) -> Result<ModelWeights> {
    let (m, dim) = (obs.len(), obs.dim());
    if m < dim || dim == 0 {
        return Err(Error::InsufficientData { rows: m, dim });
    }
    obs.check_finite()?;
    if opts.rcond.is_none() {
        if let Some(j) = (1..dim).find(|&j| (0..m).all(|i| obs.row(i)[j] == 0.0)) {
            return Err(Error::ZeroColumn(j));
        }
    }
    let scaler = Scaler::fit_batches(obs);
    let z: Vec<f64> = (0..m).flat_map(|i| scaler.standardize(obs.row(i))).collect();
    let (beta_std, rank) = svd_solve(&z, m, dim, obs.targets(), opts.rcond);
    let beta = scaler.from_standard(&beta_std);
    if let Some((j, b)) = beta.iter().enumerate().skip(1).find(|(_, b)| **b < 0.0) {
        warn!("negative coefficient beta_{j} = {b:.6}; stage cost is unphysical");
    }
    let residual_norm = (0..m)
        .map(|i| {
            let r = obs.target(i) - dot(&beta, obs.row(i));
            r * r
        })
        .sum::<f64>()
        .sqrt();
    ModelWeights::new(
        beta,
        scaler,
        FitMeta {
            solver: "svd".to_string(),
            samples: m,
            residual_norm,
            rank: Some(rank),
            ..Default::default()
        },
    )
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// `beta . w` for one batch; an all-inactive batch predicts exactly `beta_0`.
pub fn predict_batch(weights: &ModelWeights, w: &ExplanatoryVector) -> Result<f64> {
    if w.dim() != weights.dim {
        return Err(Error::DimensionMismatch {
            expected: weights.dim,
            got: w.dim(),
        });
    }
    Ok(dot(&weights.beta, w.as_slice()))
}

/// Sum of batch predictions; an empty frame predicts zero.
pub fn predict_frame(weights: &ModelWeights, batches: &[ExplanatoryVector]) -> Result<f64> {
    batches
        .iter()
        .try_fold(0.0, |acc, w| Ok(acc + predict_batch(weights, w)?))
}

/// Root mean squared error over `(estimate, actual)` pairs, in ms.
pub fn sliding_rmse<'a>(window: impl IntoIterator<Item = &'a (f64, f64)>) -> Result<f64> {
    let (sum, n) = window
        .into_iter()
        .fold((0.0, 0usize), |(s, n), (e, a)| (s + (e - a).powi(2), n + 1));
    if n == 0 {
        return Err(Error::EmptyInput("rmse window"));
    }
    Ok((sum / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(beta: Vec<f64>) -> ModelWeights {
        let dim = beta.len();
        ModelWeights::new(beta, Scaler::identity(dim), FitMeta::default()).unwrap()
    }

    #[test]
    fn unit_vector_predicts_intercept() {
        let mut beta = vec![0.0; 10];
        beta[0] = 6.966;
        beta[3] = 2.5;
        assert_eq!(
            predict_batch(&weights(beta), &ExplanatoryVector::unit(10)).unwrap(),
            6.966
        );
    }

    #[test]
    fn zero_beta_predicts_zero() {
        let w = ExplanatoryVector::from_slice(&[1.0, 3.0, 4.0, 5.0, 0.0, 1.0, 2.0, 9.0, 1.0, 1.0])
            .unwrap();
        assert_eq!(predict_batch(&weights(vec![0.0; 10]), &w).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let err = predict_batch(&weights(vec![1.0; 10]), &ExplanatoryVector::unit(11));
        assert!(matches!(err, Err(Error::DimensionMismatch { expected: 10, got: 11 })));
    }

    #[test]
    fn frame_is_sum_of_batches() {
        let mut beta = vec![0.0; 10];
        beta[0] = 2.0;
        let w = weights(beta);
        assert_eq!(predict_frame(&w, &[]).unwrap(), 0.0);
        let unit = ExplanatoryVector::unit(10);
        assert_eq!(predict_frame(&w, &[unit, unit, unit]).unwrap(), 6.0);
    }

    #[test]
    fn rmse_basics() {
        assert_eq!(sliding_rmse(&[(3.0, 3.0), (4.0, 4.0)]).unwrap(), 0.0);
        assert_eq!(sliding_rmse(&[(10.0, 9.0)]).unwrap(), 1.0);
        assert!(sliding_rmse(&[]).is_err());
    }

    #[test]
    fn intercept_only_fit() {
        let mut obs = ObservationSet::new(10);
        for i in 0..30 {
            let mut row = vec![0.0; 10];
            row[0] = 1.0 + (i % 4) as f64;
            obs.push_row(&row, 4.25 * row[0]).unwrap();
        }
        let w = fit_svd(&obs, &FitOptions::default()).unwrap();
        assert!((w.beta[0] - 4.25).abs() < 1e-12);
        assert!(w.beta[1..].iter().all(|b| *b == 0.0));
    }

    #[test]
    fn zero_column_without_pruning() {
        let mut obs = ObservationSet::new(3);
        for i in 0..10 {
            obs.push_row(&[1.0, i as f64, 0.0], i as f64).unwrap();
        }
        assert!(matches!(
            fit_svd(&obs, &FitOptions { rcond: None }),
            Err(Error::ZeroColumn(2))
        ));
        let w = fit_svd(&obs, &FitOptions::default()).unwrap();
        assert_eq!(w.beta[2], 0.0);
        assert!((w.beta[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn insufficient_rows() {
        let mut obs = ObservationSet::new(10);
        obs.push_row(&[1.0; 10], 1.0).unwrap();
        assert!(matches!(
            fit_svd(&obs, &FitOptions::default()),
            Err(Error::InsufficientData { rows: 1, dim: 10 })
        ));
    }

    #[test]
    fn nan_rejected() {
        let mut obs = ObservationSet::new(2);
        obs.push_row(&[1.0, f64::NAN], 1.0).unwrap();
        obs.push_row(&[1.0, 1.0], 1.0).unwrap();
        assert!(matches!(
            fit_svd(&obs, &FitOptions::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn standard_beta_round_trip() {
        let scaler = Scaler {
            mean: vec![0.0, 2.0, -1.0],
            std: vec![1.0, 0.5, 3.0],
        };
        let beta = vec![1.5, 0.25, -2.0];
        let back = scaler.from_standard(&scaler.to_standard(&beta));
        for (a, b) in beta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        let row = [2.0, 3.0, 4.0];
        let z = scaler.standardize(&row);
        assert!((dot(&beta, &row) - dot(&scaler.to_standard(&beta), &z)).abs() < 1e-12);
    }

    #[test]
    fn weights_json_shape() {
        let w = weights(vec![1.0, 2.0]);
        let v: serde_json::Value = serde_json::from_str(&w.to_json().unwrap()).unwrap();
        assert_eq!(v["dim"], 2);
        assert_eq!(v["scaler"]["std"][0], 1.0);
        assert_eq!(v["beta"][1], 2.0);
        assert_eq!(ModelWeights::from_json(&w.to_json().unwrap()).unwrap(), w);
    }
}
