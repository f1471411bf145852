//! Ground-truth world simulation: scripted trajectories, drifting odometry,
//! ray-cast scans and kidnap events, written as a replayable run log.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{LaserScan, MotionNoiseParams};
use crate::geometry::Transform2D;
use crate::gridmap::{Cell, OccupancyGrid};
use crate::rng::{stream, Stream};
use crate::runlog::{Record, RunLog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    pub beam_count: usize,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_max: f64,
    pub range_noise_std: f64,
    /// base → laser.
    pub mount: Transform2D,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            beam_count: 180,
            angle_min: -PI,
            angle_increment: 2.0 * PI / 180.0,
            range_max: 10.0,
            range_noise_std: 0.01,
            mount: Transform2D::IDENTITY,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.beam_count == 0 {
            return Err(Error::param("beam_count", "must be >= 1"));
        }
        if !(self.range_max > 0.0) || !self.range_max.is_finite() {
            return Err(Error::param("range_max", "must be finite and > 0"));
        }
        if !(self.range_noise_std >= 0.0) {
            return Err(Error::param("range_noise_std", "must be >= 0"));
        }
        if !self.angle_min.is_finite() || !self.angle_increment.is_finite() {
            return Err(Error::param("angle_increment", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    /// Be at `[x, y, yaw]` at this time.
    Pose([f64; 3]),
    /// Drive with `[v, w]` (m/s, rad/s) until the next waypoint.
    Velocity([f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    #[serde(flatten)]
    pub motion: Motion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kidnap {
    pub t: f64,
    pub pose: [f64; 3],
}

fn pose_of(p: [f64; 3]) -> Transform2D {
    Transform2D::new(p[0], p[1], p[2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub duration: f64,
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub kidnaps: Vec<Kidnap>,
    #[serde(default = "zero_noise")]
    pub odom_noise: MotionNoiseParams,
    #[serde(default = "default_odom_hz")]
    pub odom_hz: f64,
    #[serde(default = "default_scan_hz")]
    pub scan_hz: f64,
    #[serde(default)]
    pub seed: u64,
}

fn zero_noise() -> MotionNoiseParams {
    MotionNoiseParams::ZERO
}

fn default_odom_hz() -> f64 {
    100.0
}

fn default_scan_hz() -> f64 {
    10.0
}

impl ScenarioScript {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::param("duration", "must be finite and > 0"));
        }
        if !(self.odom_hz > 0.0) || !self.odom_hz.is_finite() {
            return Err(Error::param("odom_hz", "must be finite and > 0"));
        }
        if !(self.scan_hz > 0.0) || !self.scan_hz.is_finite() {
            return Err(Error::param("scan_hz", "must be finite and > 0"));
        }
        self.odom_noise.validate().map_err(|e| e.within("odom_noise"))?;
        match self.waypoints.first() {
            Some(Waypoint {
                t,
                motion: Motion::Pose(_),
            }) if *t == 0.0 => {}
            _ => return Err(Error::param("waypoints", "must start with a pose at t = 0")),
        }
        if self.waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::param("waypoints", "times must be strictly increasing"));
        }
        if self.kidnaps.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::param("kidnaps", "times must be strictly increasing"));
        }
        if self.kidnaps.iter().any(|k| !(k.t >= 0.0 && k.t <= self.duration)) {
            return Err(Error::param("kidnaps", "times must lie within the scenario duration"));
        }
        Ok(())
    }
}

/// Piecewise scripted motion before kidnaps are applied.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `(start time, start pose, motion)` per segment.
    segments: Vec<(f64, Transform2D, Motion)>,
    next_pose: Vec<Option<Transform2D>>,
}

fn unicycle(start: &Transform2D, v: f64, w: f64, dt: f64) -> Transform2D {
    let th = start.yaw;
    if w.abs() < 1e-12 {
        return Transform2D::new(start.x + v * dt * th.cos(), start.y + v * dt * th.sin(), th);
    }
    let r = v / w;
    let th1 = th + w * dt;
    Transform2D::new(
        start.x + r * (th1.sin() - th.sin()),
        start.y - r * (th1.cos() - th.cos()),
        th1,
    )
}

impl Trajectory {
    pub fn new(waypoints: &[Waypoint]) -> Result<Self> {
        let mut segments: Vec<(f64, Transform2D, Motion)> = Vec::with_capacity(waypoints.len());
        for (i, wp) in waypoints.iter().enumerate() {
            let start = match (wp.motion, segments.last()) {
                (Motion::Pose(p), None) => pose_of(p),
                (_, None) => return Err(Error::Scenario("first waypoint must be a pose".into())),
                (motion, Some(&(t0, p0, prev))) => {
                    let reached = match prev {
                        Motion::Velocity([v, w]) => unicycle(&p0, v, w, wp.t - t0),
                        Motion::Pose(_) => match motion {
                            Motion::Pose(p) => pose_of(p),
                            Motion::Velocity(_) => p0,
                        },
                    };
                    if let Motion::Pose(p) = motion {
                        let target = pose_of(p);
                        if !target.approx_eq(&reached, 1e-6) {
                            return Err(Error::Scenario(format!(
                                "pose waypoint {i} at t = {} does not continue the preceding velocity segment",
                                wp.t
                            )));
                        }
                        target
                    } else {
                        reached
                    }
                }
            };
            segments.push((wp.t, start, wp.motion));
        }
        let next_pose = (0..segments.len())
            .map(|i| match (segments[i].2, segments.get(i + 1)) {
                (Motion::Pose(_), Some(&(_, p, Motion::Pose(_)))) => Some(p),
                _ => None,
            })
            .collect();
        Ok(Self { segments, next_pose })
    }

    pub fn pose_at(&self, t: f64) -> Transform2D {
        let i = self.segments.partition_point(|s| s.0 <= t).saturating_sub(1);
        let (t0, p0, motion) = self.segments[i];
        match motion {
            Motion::Velocity([v, w]) => unicycle(&p0, v, w, t - t0),
            Motion::Pose(_) => match self.next_pose[i] {
                Some(p1) => {
                    let t1 = self.segments[i + 1].0;
                    p0.interpolate(&p1, ((t - t0) / (t1 - t0)).clamp(0.0, 1.0))
                }
                None => p0,
            },
        }
    }
}

/// Ray-casts every beam from `laser_pose`. Hits get Gaussian range noise
/// clamped to `[0, range_max]`; misses report `range_max`.
pub fn scan_raycast<R: Rng + ?Sized>(
    grid: &OccupancyGrid,
    laser_pose: &Transform2D,
    stamp: f64,
    spec: &SensorSpec,
    rng: &mut R,
) -> LaserScan {
    let ranges = (0..spec.beam_count)
        .map(|j| {
            let angle = spec.angle_min + j as f64 * spec.angle_increment;
            match grid.cast_ray(laser_pose, angle, spec.range_max) {
                Some(d) => {
                    let n: f64 = StandardNormal.sample(rng);
                    (d + n * spec.range_noise_std).clamp(0.0, spec.range_max)
                }
                None => spec.range_max,
            }
        })
        .collect();
    LaserScan {
        stamp,
        angle_min: spec.angle_min,
        angle_increment: spec.angle_increment,
        range_max: spec.range_max,
        ranges,
    }
}

/// Per-run odometry calibration error. Each factor is drawn once, so the
/// integrated odometry drifts in proportion to the distance travelled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryError {
    /// Relative scale error of translation.
    pub trans_scale: f64,
    /// Extra forward displacement per radian turned.
    pub trans_per_rot: f64,
    /// Relative scale error of rotation.
    pub rot_scale: f64,
    /// Heading drift per meter travelled.
    pub rot_per_trans: f64,
}

impl OdometryError {
    pub fn sample<R: Rng + ?Sized>(noise: &MotionNoiseParams, rng: &mut R) -> Self {
        let mut draw = |std: f64| Normal::new(0.0, std).map_or(0.0, |d| d.sample(rng));
        Self {
            trans_scale: draw(noise.trans_per_trans),
            trans_per_rot: draw(noise.trans_per_rot),
            rot_scale: draw(noise.rot_per_rot),
            rot_per_trans: draw(noise.rot_per_trans),
        }
    }

    /// Distorts a true displacement into what the wheel encoders report.
    pub fn apply(&self, u: &Transform2D) -> Transform2D {
        let d = u.translation_norm();
        let r = u.yaw.abs();
        Transform2D::new(
            u.x * (1.0 + self.trans_scale) + self.trans_per_rot * r,
            u.y * (1.0 + self.trans_scale),
            u.yaw * (1.0 + self.rot_scale) + self.rot_per_trans * d,
        )
    }
}

fn rate_times(duration: f64, hz: f64) -> Vec<f64> {
    let n = (duration * hz + 1e-9).floor() as u64;
    (0..=n).map(|k| k as f64 / hz).collect()
}

/// Ground truth including kidnaps. Each kidnap re-anchors the scripted
/// motion at the new pose, so relative motion continues unchanged.
pub struct GroundTruth {
    trajectory: Trajectory,
    /// `(time, correction)`: truth = correction ∘ scripted pose from `time` on.
    corrections: Vec<(f64, Transform2D)>,
}

impl GroundTruth {
    pub fn new(script: &ScenarioScript) -> Result<Self> {
        let trajectory = Trajectory::new(&script.waypoints)?;
        let corrections = script
            .kidnaps
            .iter()
            .map(|k| (k.t, pose_of(k.pose).compose(&trajectory.pose_at(k.t).inverse())))
            .collect();
        Ok(Self {
            trajectory,
            corrections,
        })
    }

    pub fn scripted(&self, t: f64) -> Transform2D {
        self.trajectory.pose_at(t)
    }

    pub fn pose_at(&self, t: f64) -> Transform2D {
        let nominal = self.trajectory.pose_at(t);
        match self.corrections.partition_point(|c| c.0 <= t).checked_sub(1) {
            Some(i) => self.corrections[i].1.compose(&nominal),
            None => nominal,
        }
    }
}

/// Produces odometry, scan and ground-truth records at the scripted rates.
/// Every ground-truth sample must lie in a Free cell.
pub fn simulate(grid: &OccupancyGrid, script: &ScenarioScript, spec: &SensorSpec) -> Result<RunLog> {
    script.validate()?;
    spec.validate()?;
    let truth = GroundTruth::new(script)?;
    let mut odom_rng = stream(script.seed, Stream::Odometry);
    let mut sensor_rng = stream(script.seed, Stream::SensorNoise);
    let calibration = OdometryError::sample(&script.odom_noise, &mut odom_rng);

    let mut records = Vec::new();
    let mut odom = Transform2D::IDENTITY;
    let mut prev_t: Option<f64> = None;
    for t in rate_times(script.duration, script.odom_hz) {
        if let Some(t0) = prev_t {
            let u = truth.scripted(t0).inverse().compose(&truth.scripted(t));
            odom = odom.compose(&calibration.apply(&u));
        }
        prev_t = Some(t);
        let gt = truth.pose_at(t);
        if grid.world_to_cell(gt.x, gt.y).map(|(c, r)| grid.get(c, r)) != Some(Cell::Free) {
            return Err(Error::Scenario(format!(
                "ground truth at t = {t} ({:.3}, {:.3}) is not in a Free cell",
                gt.x, gt.y
            )));
        }
        records.push(Record::odom(t, &odom));
        records.push(Record::gt(t, &gt));
    }
    for t in rate_times(script.duration, script.scan_hz) {
        let laser = truth.pose_at(t).compose(&spec.mount);
        records.push(Record::scan(&scan_raycast(grid, &laser, t, spec, &mut sensor_rng)));
    }
    // stable: at equal times odom and gt precede the scan
    records.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(RunLog { records })
}
