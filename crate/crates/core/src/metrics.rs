//! Evaluation metrics and comparison reports.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check_pair(estimates: &[f64], actuals: &[f64]) -> Result<()> {
    if estimates.len() != actuals.len() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: actuals.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::EmptyInput("estimates"));
    }
    Ok(())
}

/// Missed frames ratio in percent: frames whose estimate falls strictly
/// below `actual * (1 - margin)`.
pub fn mfr(estimates: &[f64], actuals: &[f64], margin: f64) -> Result<f64> {
    check_pair(estimates, actuals)?;
    if !(margin >= 0.0) {
        return Err(Error::InvalidConfig(format!("negative MFR margin {margin}")));
    }
    let missed = estimates
        .iter()
        .zip(actuals)
        .filter(|(e, a)| **e < **a * (1.0 - margin))
        .count();
    Ok(100.0 * missed as f64 / estimates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean_abs: f64,
    pub max_abs: f64,
    pub min_abs: f64,
    pub mean_pct: f64,
}

pub fn error_stats(estimates: &[f64], actuals: &[f64]) -> Result<ErrorStats> {
    check_pair(estimates, actuals)?;
    if let Some((index, &value)) = actuals.iter().enumerate().find(|(_, a)| !(**a > 0.0)) {
        return Err(Error::NonPositiveActual { index, value });
    }
    let n = estimates.len() as f64;
    let mut stats = ErrorStats {
        mean_abs: 0.0,
        max_abs: 0.0,
        min_abs: f64::INFINITY,
        mean_pct: 0.0,
    };
    for (e, a) in estimates.iter().zip(actuals) {
        let d = (e - a).abs();
        stats.mean_abs += d;
        stats.max_abs = stats.max_abs.max(d);
        stats.min_abs = stats.min_abs.min(d);
        stats.mean_pct += d / a;
    }
    stats.mean_abs /= n;
    stats.mean_pct *= 100.0 / n;
    // The running sum can land a rounding step outside [min, max].
    stats.mean_abs = stats.mean_abs.clamp(stats.min_abs, stats.max_abs);
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overhead {
    pub mean_ms: f64,
    pub pct: f64,
}

/// Mean prediction time and its mean share of the frametime.
pub fn overhead_report(timings_ms: &[f64], frametimes_ms: &[f64]) -> Result<Overhead> {
    check_pair(timings_ms, frametimes_ms)?;
    if let Some((index, &value)) = frametimes_ms.iter().enumerate().find(|(_, f)| !(**f > 0.0)) {
        return Err(Error::NonPositiveActual { index, value });
    }
    let n = timings_ms.len() as f64;
    Ok(Overhead {
        mean_ms: timings_ms.iter().sum::<f64>() / n,
        pct: 100.0
            * timings_ms
                .iter()
                .zip(frametimes_ms)
                .map(|(t, f)| t / f)
                .sum::<f64>()
            / n,
    })
}

/// Resident set size of this process in MiB, from `/proc/self/statm`.
/// Approximate; `None` where procfs is unavailable.
pub fn rss_mb() -> Option<f64> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: f64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * 4096.0 / (1024.0 * 1024.0))
}

/// Metrics of one model on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: String,
    pub scenario: String,
    pub seed: u64,
    pub mfr_pct: f64,
    /// Relative margin the MFR count was taken with.
    pub mfr_margin: f64,
    pub errors: ErrorStats,
    pub overhead: Option<Overhead>,
    pub rss_mb: Option<f64>,
}

impl ModelResult {
    pub fn evaluate(
        model: &str,
        scenario: &str,
        seed: u64,
        estimates: &[f64],
        actuals: &[f64],
        margin: f64,
    ) -> Result<Self> {
        Ok(ModelResult {
            model: model.to_string(),
            scenario: scenario.to_string(),
            seed,
            mfr_pct: mfr(estimates, actuals, margin)?,
            mfr_margin: margin,
            errors: error_stats(estimates, actuals)?,
            overhead: None,
            rss_mb: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Text,
}

pub const REPORT_HEADER: &str =
    "model,scenario,seed,mfr_pct,mean_abs_ms,max_abs_ms,min_abs_ms,mean_pct,overhead_ms,overhead_pct,rss_mb";

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn opt6(x: Option<f64>) -> String {
    x.map(f6).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders results as a table. Rows keep the order they are given in.
pub fn render_report(results: &[ModelResult], format: ReportFormat) -> Result<String> {
    if results.is_empty() {
        return Err(Error::EmptyInput("results"));
    }
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(REPORT_HEADER);
            out.push('\n');
            for r in results {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    csv_field(&r.model),
                    csv_field(&r.scenario),
                    r.seed,
                    f6(r.mfr_pct),
                    f6(r.errors.mean_abs),
                    f6(r.errors.max_abs),
                    f6(r.errors.min_abs),
                    f6(r.errors.mean_pct),
                    opt6(r.overhead.map(|o| o.mean_ms)),
                    opt6(r.overhead.map(|o| o.pct)),
                    opt6(r.rss_mb),
                );
            }
        }
        ReportFormat::Text => {
            let _ = writeln!(
                out,
                "{:<8} {:<16} {:>6} {:>8} {:>10} {:>10} {:>10} {:>8}",
                "model", "scenario", "seed", "MFR %", "mean ms", "max ms", "min ms", "mean %"
            );
            for r in results {
                let _ = writeln!(
                    out,
                    "{:<8} {:<16} {:>6} {:>8.2} {:>10.3} {:>10.3} {:>10.3} {:>8.2}",
                    r.model,
                    r.scenario,
                    r.seed,
                    r.mfr_pct,
                    r.errors.mean_abs,
                    r.errors.max_abs,
                    r.errors.min_abs,
                    r.errors.mean_pct
                );
            }
            out.push('\n');
            out.push_str(&summary(results));
            let margins: Vec<String> = {
                let mut m: Vec<f64> = results.iter().map(|r| r.mfr_margin).collect();
                m.sort_by(f64::total_cmp);
                m.dedup();
                m.iter().map(|x| format!("{x}")).collect()
            };
            let _ = writeln!(
                out,
                "note: MFR counts frames whose estimate is below actual * (1 - margin); margin {}",
                margins.join(", ")
            );
        }
    }
    Ok(out)
}

/// Head-to-head summary: models ranked by mean absolute error averaged over
/// all scenarios they appear in.
pub fn summary(results: &[ModelResult]) -> String {
    let mut models: Vec<(String, f64, f64, usize)> = Vec::new();
    for r in results {
        match models.iter_mut().find(|m| m.0 == r.model) {
            Some(m) => {
                m.1 += r.errors.mean_abs;
                m.2 += r.mfr_pct;
                m.3 += 1;
            }
            None => models.push((r.model.clone(), r.errors.mean_abs, r.mfr_pct, 1)),
        }
    }
    for m in &mut models {
        m.1 /= m.3 as f64;
        m.2 /= m.3 as f64;
    }
    models.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let mut out = String::from("rank by mean abs error:\n");
    for (i, (name, mae, mfr, _)) in models.iter().enumerate() {
        let _ = writeln!(out, "  {}. {name:<8} {mae:.3} ms  MFR {mfr:.2} %", i + 1);
    }
    out
}

pub fn emit_report<W: Write>(results: &[ModelResult], format: ReportFormat, mut sink: W) -> Result<()> {
    sink.write_all(render_report(results, format)?.as_bytes())?;
    sink.flush()?;
    Ok(())
}
