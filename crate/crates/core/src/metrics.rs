//! Evaluation: trajectory error series, recovery time, the positional
//! uncertainty scalar and quality/uncertainty phase statistics.

use std::io::Write;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_diff, PoseEstimate, TimedTransformBuffer, Transform2D};

const PSD_TOLERANCE: f64 = 1e-12;

/// Square root of the largest eigenvalue of the positional (x, y) block of
/// the covariance, in meters.
pub fn uncertainty(estimate: &PoseEstimate) -> Result<f64> {
    let c = &estimate.covariance;
    let (a, b, d) = (c[(0, 0)], 0.5 * (c[(0, 1)] + c[(1, 0)]), c[(1, 1)]);
    if !(a.is_finite() && b.is_finite() && d.is_finite()) {
        return Err(Error::Numeric("covariance has non-finite entries".into()));
    }
    let half_trace = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (lo, hi) = (half_trace - radius, half_trace + radius);
    if lo < -PSD_TOLERANCE {
        return Err(Error::Numeric(format!(
            "positional covariance is not positive semi-definite (eigenvalue {lo:e})"
        )));
    }
    Ok(hi.max(0.0).sqrt())
}

/// One localizer output as consumed by the evaluator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateSample {
    pub t: f64,
    pub pose: Transform2D,
    pub covariance: [f64; 9],
    pub quality: f64,
    pub n_hyp: usize,
}

impl EstimateSample {
    pub fn pose_estimate(&self) -> PoseEstimate {
        PoseEstimate::new(self.pose, Matrix3::from_row_slice(&self.covariance))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub t: f64,
    pub pos_err: f64,
    pub yaw_err: f64,
    pub quality: f64,
    pub uncertainty: f64,
    pub n_hyp: usize,
    pub cpu_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorSeries {
    pub samples: Vec<ErrorSample>,
}

pub const CSV_HEADER: &str = "t,pos_err,yaw_err,quality,uncertainty,n_hyp,cpu_s";

impl ErrorSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples with `t >= start`.
    pub fn since(&self, start: f64) -> ErrorSeries {
        ErrorSeries {
            samples: self.samples.iter().copied().filter(|s| s.t >= start).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.t, s.pos_err, s.yaw_err, s.quality, s.uncertainty, s.n_hyp, s.cpu_s
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl ErrorStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 0 {
            0.5 * (sorted[mid - 1] + sorted[mid])
        } else {
            sorted[mid]
        };
        Some(Self {
            count: values.len(),
            mean,
            std,
            median,
        })
    }
}

/// Matches every estimate to the ground truth interpolated at its timestamp.
/// Estimates outside the ground-truth span are dropped. `cpu` optionally
/// supplies per-correction CPU seconds keyed by estimate time.
pub fn trajectory_error(
    estimates: &[EstimateSample],
    ground_truth: &[(f64, Transform2D)],
    cpu: Option<&[(f64, f64)]>,
) -> Result<(ErrorSeries, ErrorStats)> {
    let mut gt = TimedTransformBuffer::new(f64::INFINITY);
    for &(t, pose) in ground_truth {
        // duplicate stamps carry no extra information for interpolation
        if gt.span().is_some_and(|(_, last)| t <= last) {
            continue;
        }
        gt.insert(t, pose)?;
    }
    let mut samples = Vec::new();
    let mut cpu_iter = cpu.unwrap_or(&[]).iter().peekable();
    for est in estimates {
        let Ok(truth) = gt.lookup_interpolated(est.t) else {
            continue;
        };
        if samples.last().is_some_and(|s: &ErrorSample| est.t <= s.t) {
            continue;
        }
        let mut cpu_s = 0.0;
        while let Some(&&(t, secs)) = cpu_iter.peek() {
            if t > est.t {
                break;
            }
            if t == est.t {
                cpu_s = secs;
            }
            cpu_iter.next();
        }
        samples.push(ErrorSample {
            t: est.t,
            pos_err: (est.pose.x - truth.x).hypot(est.pose.y - truth.y),
            yaw_err: angle_diff(est.pose.yaw, truth.yaw).abs(),
            quality: est.quality,
            uncertainty: uncertainty(&est.pose_estimate())?,
            n_hyp: est.n_hyp,
            cpu_s,
        });
    }
    let errors: Vec<f64> = samples.iter().map(|s| s.pos_err).collect();
    let stats = ErrorStats::from_values(&errors).ok_or(Error::NoOverlap)?;
    Ok((ErrorSeries { samples }, stats))
}

/// First sample time `t` from which the position error stays below
/// `threshold` for every sample in `[t, t + hold]`. The series must extend
/// to at least `t + hold`. `None` means not recovered.
pub fn recovery_time(series: &ErrorSeries, threshold: f64, hold: f64) -> Option<f64> {
    let s = &series.samples;
    let last_t = s.last()?.t;
    let mut run_start: Option<usize> = None;
    for (i, sample) in s.iter().enumerate() {
        if sample.pos_err < threshold {
            let start = *run_start.get_or_insert(i);
            if sample.t - s[start].t >= hold {
                return Some(s[start].t);
            }
        } else {
            run_start = None;
        }
    }
    // a run that reached the end of the series without the full hold span
    // does not count, unless hold is zero
    match run_start {
        Some(start) if hold <= 0.0 || last_t - s[start].t >= hold => Some(s[start].t),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub samples: usize,
    pub mean_quality: Option<f64>,
    pub mean_uncertainty: Option<f64>,
}

/// Quality and uncertainty averaged separately over correct (error below
/// threshold) and incorrect samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Discrimination {
    pub correct: PhaseStats,
    pub incorrect: PhaseStats,
}

pub fn discrimination<'a, I>(samples: I, threshold: f64) -> Discrimination
where
    I: IntoIterator<Item = &'a ErrorSample>,
{
    let mut acc = [(0usize, 0.0, 0.0); 2];
    for s in samples {
        let slot = &mut acc[usize::from(s.pos_err >= threshold)];
        slot.0 += 1;
        slot.1 += s.quality;
        slot.2 += s.uncertainty;
    }
    let phase = |(n, q, u): (usize, f64, f64)| PhaseStats {
        samples: n,
        mean_quality: (n > 0).then(|| q / n as f64),
        mean_uncertainty: (n > 0).then(|| u / n as f64),
    };
    Discrimination {
        correct: phase(acc[0]),
        incorrect: phase(acc[1]),
    }
}

/// Document written next to the CSV by `bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub recovery_threshold: f64,
    pub recovery_hold: f64,
    /// Seconds from the first sample to recovery.
    pub recovery_time: Option<f64>,
    pub recovered: bool,
    pub mean_cpu_s: f64,
    pub discrimination: Discrimination,
}

impl Summary {
    pub fn new(series: &ErrorSeries, stats: &ErrorStats, threshold: f64, hold: f64) -> Self {
        let start = series.samples.first().map_or(0.0, |s| s.t);
        let recovery = recovery_time(series, threshold, hold).map(|t| t - start);
        let mean_cpu_s = if series.is_empty() {
            0.0
        } else {
            series.samples.iter().map(|s| s.cpu_s).sum::<f64>() / series.len() as f64
        };
        Summary {
            samples: stats.count,
            mean: stats.mean,
            std: stats.std,
            median: stats.median,
            recovery_threshold: threshold,
            recovery_hold: hold,
            recovery_time: recovery,
            recovered: recovery.is_some(),
            mean_cpu_s,
            discrimination: discrimination(&series.samples, threshold),
        }
    }
}
