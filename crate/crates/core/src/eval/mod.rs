//! Regularity scoring and anomaly detection on top of a trained model.
//!
//! The pipeline per clip: [`sliding_errors`] over every window start,
//! [`regularity`] normalization, [`persistence1d`] to find distinct minima,
//! [`filter_extrema`] at a threshold, [`propose_regions`], and finally
//! [`evaluate`] against ground truth. [`sweep`] repeats the last three steps
//! over the thresholds `0.05, 0.10, ..., 1.00`.

mod metrics;
mod persistence;
mod regions;

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

pub use metrics::{evaluate, DetectionReport};
pub use persistence::{filter_extrema, persistence1d, ExtremaPair};
pub use regions::{merge_regions, propose_regions, AnomalyRegion};

use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::interval::{normalize, Interval};
use crate::net::Model;

/// Which part of the composite error drives the score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ErrorSource {
    Reconstruction,
    Prediction,
    /// The training loss: mean over reconstructed and predicted frames.
    #[default]
    Combined,
}

impl FromStr for ErrorSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reconstruction" => Ok(ErrorSource::Reconstruction),
            "prediction" => Ok(ErrorSource::Prediction),
            "combined" => Ok(ErrorSource::Combined),
            other => Err(format!("unknown error source `{other}`")),
        }
    }
}

impl fmt::Display for ErrorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorSource::Reconstruction => "reconstruction",
            ErrorSource::Prediction => "prediction",
            ErrorSource::Combined => "combined",
        })
    }
}

/// Error of the window starting at every frame `i` with a full
/// `input_len + output_len` frames after it.
///
/// Windows are scored in parallel on the current rayon pool; the result does
/// not depend on the number of threads.
pub fn sliding_errors(model: &Model, clip: &VideoClip, source: ErrorSource) -> Result<Vec<f64>> {
    let c = &model.config;
    let w = c.window_len();
    if clip.len() < w {
        return Err(Error::domain(format!(
            "clip has {} frames, a window needs {w}",
            clip.len()
        )));
    }
    if source == ErrorSource::Reconstruction && !c.composite {
        return Err(Error::usage("the future-only model has no reconstruction error"));
    }
    if clip.side() != c.frame_size {
        return Err(Error::domain(format!(
            "clip frames are {0}x{0}, the model expects {1}x{1}",
            clip.side(),
            c.frame_size
        )));
    }
    (0..=clip.len() - w)
        .into_par_iter()
        .map(|i| {
            let (x, y) = clip.window(i, c.input_len, c.output_len)?;
            let out = model.forward_composite(&x, &y)?;
            let e = match source {
                ErrorSource::Combined => out.loss,
                ErrorSource::Prediction => out.prediction_loss,
                ErrorSource::Reconstruction => out.reconstruction_loss.unwrap_or(out.loss),
            };
            if e.is_finite() {
                Ok(e)
            } else {
                Err(Error::Numeric(format!("error of window {i} is {e}")))
            }
        })
        .collect()
}

/// `g_i = 1 - (e_i - min e) / max e`, clamped to `[min e / max e, 1]` against
/// rounding; all ones when every error is zero.
pub fn regularity(errors: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::usage("regularity of an empty error series"));
    }
    if let Some(e) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::domain(format!("errors must be finite and >= 0, got {e}")));
    }
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let max = errors.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(vec![1.0; errors.len()]);
    }
    let floor = min / max;
    Ok(errors
        .iter()
        .map(|&e| (1.0 - (e - min) / max).clamp(floor, 1.0))
        .collect())
}

/// Map frame-level ground truth to window starts: a window of `window_len`
/// frames starting at `i` is anomalous when it shares a frame with an interval.
/// Intervals are clipped to the `n_windows` valid starts.
pub fn frames_to_windows(ground_truth: &[Interval], window_len: usize, n_windows: usize) -> Vec<Interval> {
    let mapped = ground_truth
        .iter()
        .map(|g| Interval {
            start: (g.start + 1).saturating_sub(window_len),
            end: g.end.min(n_windows.saturating_sub(1)),
        })
        .filter(|g| g.start < n_windows && g.start <= g.end)
        .collect();
    normalize(mapped)
}

/// Region-proposal and matching parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectOptions {
    /// Half-width of the region around each minimum.
    pub window: usize,
    /// Minima this close belong to one event.
    pub merge_distance: usize,
    /// Fraction of a proposal that must lie inside a ground-truth interval.
    pub overlap: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            window: 50,
            merge_distance: 50,
            overlap: 0.5,
        }
    }
}

/// Regions for one regularity series at one persistence threshold.
pub fn detect(regularity: &[f64], threshold: f64, opts: &DetectOptions) -> Vec<AnomalyRegion> {
    let pairs = persistence1d(regularity);
    let (minima, maxima) = filter_extrema(&pairs, threshold);
    propose_regions(&minima, &maxima, regularity.len(), opts.window, opts.merge_distance)
}

/// `0.05, 0.10, ..., 1.00`
pub fn sweep_thresholds() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 20.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    /// Counts summed over all clips.
    pub report: DetectionReport,
    /// Per clip.
    pub detections: Vec<Vec<Interval>>,
}

/// Detect and evaluate every clip at each threshold of [`sweep_thresholds`].
///
/// `clips` pairs each regularity series with its ground truth, both indexed
/// by window start.
pub fn sweep(clips: &[(Vec<f64>, Vec<Interval>)], opts: &DetectOptions) -> Result<Vec<SweepRow>> {
    sweep_thresholds()
        .into_iter()
        .map(|threshold| {
            let mut report = DetectionReport::default();
            let mut detections = Vec::with_capacity(clips.len());
            for (g, gt) in clips {
                let found: Vec<Interval> = detect(g, threshold, opts).iter().map(AnomalyRegion::interval).collect();
                report.accumulate(&evaluate(&found, gt, opts.overlap)?);
                detections.push(found);
            }
            Ok(SweepRow {
                threshold,
                report,
                detections,
            })
        })
        .collect()
}

/// Highest F1; ties go to the lower threshold.
pub fn best_f1(rows: &[SweepRow]) -> Option<&SweepRow> {
    rows.iter()
        .rev()
        .max_by(|a, b| a.report.f1().total_cmp(&b.report.f1()))
}

pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::from("threshold  tp  fp  fn  precision  recall  f1\n");
    for r in rows {
        let p = &r.report;
        let _ = writeln!(
            s,
            "{:>9.2} {:>3} {:>3} {:>3} {:>10.4} {:>7.4} {:>6.4}",
            r.threshold,
            p.true_positives,
            p.false_positives,
            p.false_negatives,
            p.precision(),
            p.recall(),
            p.f1()
        );
    }
    s
}

/// `window_start,error,regularity` rows.
pub fn render_regularity_csv(errors: &[f64], regularity: &[f64]) -> String {
    let mut s = String::from("window_start,error,regularity\n");
    for (i, (e, g)) in errors.iter().zip(regularity).enumerate() {
        let _ = writeln!(s, "{i},{e:e},{g:e}");
    }
    s
}

/// Returns `(errors, regularity)`; rows must be numbered `0, 1, 2, ...`.
pub fn parse_regularity_csv(text: &str, origin: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "window_start,error,regularity" => {}
        _ => return Err(Error::format(origin, "missing `window_start,error,regularity` header")),
    }
    let (mut errors, mut regularity) = (Vec::new(), Vec::new());
    for (n, line) in lines {
        let bad = || Error::format(origin, format!("line {}: malformed row {line:?}", n + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad());
        }
        let i: usize = f[0].parse().map_err(|_| bad())?;
        if i != errors.len() {
            return Err(Error::format(origin, format!("line {}: expected window {}, got {i}", n + 1, errors.len())));
        }
        let e: f64 = f[1].parse().map_err(|_| bad())?;
        let g: f64 = f[2].parse().map_err(|_| bad())?;
        if !(e.is_finite() && g.is_finite()) {
            return Err(bad());
        }
        errors.push(e);
        regularity.push(g);
    }
    if errors.is_empty() {
        return Err(Error::format(origin, "no rows"));
    }
    Ok((errors, regularity))
}

pub fn read_regularity_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_regularity_csv(&text, path)
}
