//! Planar rigid transforms, a timestamped odometry buffer and weighted pose
//! statistics.

use std::f64::consts::{PI, TAU};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Signed shortest-arc difference `to - from`, in `(-pi, pi]`.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    normalize_angle(to - from)
}

/// A rigid transform in SE(2). The yaw is kept normalized by every constructor
/// and operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Default for Transform2D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform2D {
    pub const IDENTITY: Transform2D = Transform2D {
        x: 0.0,
        y: 0.0,
        yaw: 0.0,
    };

    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    /// `self ∘ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Transform2D) -> Transform2D {
        let (s, c) = self.yaw.sin_cos();
        Transform2D::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.yaw + other.yaw,
        )
    }

    pub fn inverse(&self) -> Transform2D {
        let (s, c) = self.yaw.sin_cos();
        Transform2D::new(-c * self.x - s * self.y, s * self.x - c * self.y, -self.yaw)
    }

    /// Maps a point given in this transform's child frame into its parent frame.
    pub fn transform_point(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Component-wise closeness, with the yaw compared on the circle.
    pub fn approx_eq(&self, other: &Transform2D, tol: f64) -> bool {
        (self.x - other.x).abs() <= tol
            && (self.y - other.y).abs() <= tol
            && angle_diff(self.yaw, other.yaw).abs() <= tol
    }

    /// Linear interpolation of the translation and shortest-arc interpolation
    /// of the yaw. `s = 0` yields `self`, `s = 1` yields `other`.
    pub fn interpolate(&self, other: &Transform2D, s: f64) -> Transform2D {
        Transform2D::new(
            self.x + s * (other.x - self.x),
            self.y + s * (other.y - self.y),
            self.yaw + s * angle_diff(other.yaw, self.yaw),
        )
    }
}

/// Time-indexed history of one frame pair (e.g. odom -> base).
///
/// Writers need `&mut self`, so a reader holding `&self` always sees a
/// complete record set. Wrap in a lock to share across threads.
#[derive(Debug, Clone)]
pub struct TimedTransformBuffer {
    records: Vec<(f64, Transform2D)>,
    capacity: f64,
}

impl TimedTransformBuffer {
    /// `capacity` is the retained duration in seconds; `f64::INFINITY` keeps
    /// everything.
    pub fn new(capacity: f64) -> Self {
        Self {
            records: Vec::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[(f64, Transform2D)] {
        &self.records
    }

    /// Stored `[first, last]` timestamps.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.records.first()?.0, self.records.last()?.0))
    }

    pub fn insert(&mut self, t: f64, transform: Transform2D) -> Result<()> {
        if let Some(&(last, _)) = self.records.last() {
            if t <= last {
                return Err(Error::NonMonotonicTime { t, last });
            }
        }
        self.records.push((t, transform));
        if self.capacity.is_finite() {
            let horizon = t - self.capacity;
            // keep the newest record at or before the horizon so that
            // lookups at exactly `t - capacity` still succeed
            let keep_from = self.records.partition_point(|&(ts, _)| ts <= horizon).saturating_sub(1);
            if keep_from > 0 {
                self.records.drain(..keep_from);
            }
        }
        Ok(())
    }

    pub fn lookup_interpolated(&self, t: f64) -> Result<Transform2D> {
        let (start, end) = self.span().ok_or(Error::EmptyBuffer)?;
        if !(start..=end).contains(&t) {
            return Err(Error::OutOfRange { t, start, end });
        }
        let idx = self.records.partition_point(|&(ts, _)| ts < t);
        let (t1, tf1) = self.records[idx];
        if t1 == t || idx == 0 {
            return Ok(tf1);
        }
        let (t0, tf0) = self.records[idx - 1];
        Ok(tf0.interpolate(&tf1, (t - t0) / (t1 - t0)))
    }

    /// Relative motion between `t0` and `t1`: `odom(t0)^-1 ∘ odom(t1)`.
    pub fn odom_delta(&self, t0: f64, t1: f64) -> Result<Transform2D> {
        if t1 < t0 {
            return Err(Error::param("t1", format!("{t1} precedes t0 = {t0}")));
        }
        let a = self.lookup_interpolated(t0)?;
        let b = self.lookup_interpolated(t1)?;
        Ok(a.inverse().compose(&b))
    }
}

/// Gaussian summary of a pose belief: mean and 3×3 covariance over
/// `(x, y, yaw)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub mean: Transform2D,
    pub covariance: Matrix3<f64>,
}

impl PoseEstimate {
    pub fn new(mean: Transform2D, covariance: Matrix3<f64>) -> Self {
        Self { mean, covariance }
    }

    /// Row-major covariance entries.
    pub fn covariance_row_major(&self) -> [f64; 9] {
        let c = &self.covariance;
        [
            c[(0, 0)],
            c[(0, 1)],
            c[(0, 2)],
            c[(1, 0)],
            c[(1, 1)],
            c[(1, 2)],
            c[(2, 0)],
            c[(2, 1)],
            c[(2, 2)],
        ]
    }
}

/// Weighted mean and population covariance of a set of poses.
///
/// The yaw mean is the weighted circular mean and yaw deviations are taken
/// along the shortest arc. Weights need not be normalized.
pub fn weighted_mean_cov<I>(poses: I) -> Result<PoseEstimate>
where
    I: IntoIterator<Item = (Transform2D, f64)>,
    I::IntoIter: Clone,
{
    let iter = poses.into_iter();
    let mut total = 0.0;
    let (mut sx, mut sy, mut ss, mut sc) = (0.0, 0.0, 0.0, 0.0);
    for (pose, w) in iter.clone() {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::Degenerate("weights must be finite and non-negative"));
        }
        total += w;
        sx += w * pose.x;
        sy += w * pose.y;
        let (s, c) = pose.yaw.sin_cos();
        ss += w * s;
        sc += w * c;
    }
    if total <= 0.0 {
        return Err(Error::Degenerate("all weights are zero"));
    }
    let mean = Transform2D::new(sx / total, sy / total, ss.atan2(sc));

    let mut cov = Matrix3::zeros();
    for (pose, w) in iter {
        if w == 0.0 {
            continue;
        }
        let d = [pose.x - mean.x, pose.y - mean.y, angle_diff(pose.yaw, mean.yaw)];
        let wn = w / total;
        for r in 0..3 {
            for c in r..3 {
                cov[(r, c)] += wn * d[r] * d[c];
            }
        }
    }
    for r in 0..3 {
        for c in 0..r {
            cov[(r, c)] = cov[(c, r)];
        }
    }
    Ok(PoseEstimate::new(mean, cov))
}
