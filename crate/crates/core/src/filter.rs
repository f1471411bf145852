//! A single adaptive Monte Carlo population: prediction, hits-based
//! correction, quality, reseeding and particle-count adaptation.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{weighted_mean_cov, PoseEstimate, Transform2D};
use crate::gridmap::OccupancyGrid;
use crate::metrics;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Transform2D,
    pub weight: f64,
    /// Beams that matched the map in the last correction.
    pub hits: u32,
}

/// Odometry noise scales. Standard deviations grow with the magnitude of the
/// displacement: translation noise per meter travelled and per radian turned,
/// rotation noise per radian turned and per meter travelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionNoiseParams {
    pub trans_per_trans: f64,
    pub trans_per_rot: f64,
    pub rot_per_rot: f64,
    pub rot_per_trans: f64,
}

impl Default for MotionNoiseParams {
    fn default() -> Self {
        Self {
            trans_per_trans: 0.05,
            trans_per_rot: 0.01,
            rot_per_rot: 0.05,
            rot_per_trans: 0.02,
        }
    }
}

impl MotionNoiseParams {
    pub const ZERO: MotionNoiseParams = MotionNoiseParams {
        trans_per_trans: 0.0,
        trans_per_rot: 0.0,
        rot_per_rot: 0.0,
        rot_per_trans: 0.0,
    };

    /// `(translation std, rotation std)` for a displacement.
    pub fn std_for(&self, u: &Transform2D) -> (f64, f64) {
        let trans = u.translation_norm();
        let rot = u.yaw.abs();
        (
            self.trans_per_trans * trans + self.trans_per_rot * rot,
            self.rot_per_rot * rot + self.rot_per_trans * trans,
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("trans_per_trans", self.trans_per_trans),
            ("trans_per_rot", self.trans_per_rot),
            ("rot_per_rot", self.rot_per_rot),
            ("rot_per_trans", self.rot_per_trans),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModelParams {
    /// Range accuracy of the sensor, meters.
    pub sigma: f64,
    /// A beam counts as a hit when its error is at most this many sigmas.
    pub hit_threshold_factor: f64,
    pub max_usable_range: f64,
    /// Use every n-th beam.
    pub beam_stride: usize,
}

impl Default for SensorModelParams {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            hit_threshold_factor: 2.0,
            max_usable_range: 8.0,
            beam_stride: 1,
        }
    }
}

impl SensorModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::param("sigma", "must be > 0"));
        }
        if !(self.hit_threshold_factor > 0.0) {
            return Err(Error::param("hit_threshold_factor", "must be > 0"));
        }
        if !(self.max_usable_range > 0.0) {
            return Err(Error::param("max_usable_range", "must be > 0"));
        }
        if self.beam_stride == 0 {
            return Err(Error::param("beam_stride", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaserScan {
    pub stamp: f64,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_max: f64,
    pub ranges: Vec<f64>,
}

impl LaserScan {
    pub fn angle(&self, j: usize) -> f64 {
        self.angle_min + j as f64 * self.angle_increment
    }

    /// `(angle, range)` of every beam the observation model consumes: every
    /// `stride`-th beam whose range is finite, positive, below the scan's
    /// `range_max` and below `max_usable_range`.
    pub fn usable_beams(&self, stride: usize, max_usable_range: f64) -> Vec<(f64, f64)> {
        self.ranges
            .iter()
            .enumerate()
            .step_by(stride.max(1))
            .filter(|&(_, &r)| r.is_finite() && r > 0.0 && r < self.range_max && r < max_usable_range)
            .map(|(j, &r)| (self.angle(j), r))
            .collect()
    }
}

/// Per-beam likelihood of a range error under the sensor's Gaussian model.
pub fn beam_likelihood(error: f64, sigma: f64) -> f64 {
    (1.0 / (sigma * (2.0 * PI).sqrt())) * (-0.5 * (error / sigma).powi(2)).exp()
}

fn beam_log_likelihood(error: f64, sigma: f64) -> f64 {
    -(sigma * (2.0 * PI).sqrt()).ln() - 0.5 * (error / sigma).powi(2)
}

/// Counts of matched beams for one pose; shared with the map matcher.
pub fn count_hits(
    grid: &OccupancyGrid,
    laser_pose: &Transform2D,
    beams: &[(f64, f64)],
    sigma: f64,
    hit_threshold: f64,
) -> u32 {
    beams
        .iter()
        .filter(|&&(angle, range)| grid.beam_error(laser_pose, angle, range, sigma) <= hit_threshold)
        .count() as u32
}

/// Outcome of one correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrectionReport {
    pub beams_used: usize,
    /// Every weight collapsed to zero; weights were reset to uniform.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReseedParams {
    pub winner_pct: f64,
    pub loser_pct: f64,
    /// Std of the perturbation applied to reseeded particles: x, y (m), yaw (rad).
    pub jitter: [f64; 3],
}

impl Default for ReseedParams {
    fn default() -> Self {
        Self {
            winner_pct: 0.1,
            loser_pct: 0.5,
            jitter: [0.03, 0.03, 0.03],
        }
    }
}

impl ReseedParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.winner_pct) {
            return Err(Error::param("winner_pct", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.loser_pct) {
            return Err(Error::param("loser_pct", "must lie in [0, 1]"));
        }
        if self.winner_pct + self.loser_pct > 1.0 {
            return Err(Error::param("winner_pct", "winner_pct + loser_pct must not exceed 1"));
        }
        if self.jitter.iter().any(|j| !(*j >= 0.0)) {
            return Err(Error::param("jitter", "must be >= 0"));
        }
        Ok(())
    }
}

/// Everything needed to create and run one population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub particles_min: usize,
    pub particles_max: usize,
    pub initial_particles: usize,
    /// Spread `(x, y, yaw)` of a population started at a known pose.
    pub initial_std: [f64; 3],
    pub motion_noise: MotionNoiseParams,
    pub sensor: SensorModelParams,
    pub reseed: ReseedParams,
    /// Positional uncertainty (m) above which the population grows.
    pub grow_above: f64,
    /// Positional uncertainty (m) below which the population shrinks.
    pub shrink_below: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            particles_min: 100,
            particles_max: 500,
            initial_particles: 200,
            initial_std: [0.1, 0.1, 0.1],
            motion_noise: MotionNoiseParams::default(),
            sensor: SensorModelParams::default(),
            reseed: ReseedParams::default(),
            grow_above: 0.25,
            shrink_below: 0.05,
        }
    }
}

impl FilterParams {
    pub fn bounds(&self) -> (usize, usize) {
        (self.particles_min, self.particles_max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles_min == 0 {
            return Err(Error::param("particles_min", "must be >= 1"));
        }
        if self.particles_max < self.particles_min {
            return Err(Error::param("particles_max", "must be >= particles_min"));
        }
        if !(self.particles_min..=self.particles_max).contains(&self.initial_particles) {
            return Err(Error::param(
                "initial_particles",
                "must lie in [particles_min, particles_max]",
            ));
        }
        if self.initial_std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::param("initial_std", "must be finite and >= 0"));
        }
        self.motion_noise.validate().map_err(|e| e.within("motion_noise"))?;
        self.sensor.validate().map_err(|e| e.within("sensor"))?;
        self.reseed.validate().map_err(|e| e.within("reseed"))?;
        if !(self.shrink_below > 0.0) {
            return Err(Error::param("shrink_below", "must be > 0"));
        }
        if !(self.grow_above > self.shrink_below) {
            return Err(Error::param("grow_above", "must be > shrink_below"));
        }
        Ok(())
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let n: f64 = StandardNormal.sample(rng);
    n * std
}

fn jittered<R: Rng + ?Sized>(pose: &Transform2D, jitter: &[f64; 3], rng: &mut R) -> Transform2D {
    Transform2D::new(
        pose.x + gaussian(rng, jitter[0]),
        pose.y + gaussian(rng, jitter[1]),
        pose.yaw + gaussian(rng, jitter[2]),
    )
}

/// Draws a winner index from a half-normal with std `n_winners / 2`, so the
/// best-ranked winners are chosen most often.
fn winner_index<R: Rng + ?Sized>(n_winners: usize, rng: &mut R) -> usize {
    let draw = gaussian(rng, n_winners as f64 / 2.0).abs().floor();
    (draw as usize).min(n_winners - 1)
}

#[derive(Debug, Clone)]
pub struct ParticleSet {
    particles: Vec<Particle>,
    min_particles: usize,
    max_particles: usize,
    /// Time the poses were last propagated to.
    pub last_prediction_time: Option<f64>,
    beams_used: Option<usize>,
}

impl ParticleSet {
    /// `n` particles drawn from `N(pose, diag(std²))` with uniform weights.
    pub fn init_gaussian<R: Rng + ?Sized>(
        pose: Transform2D,
        std: [f64; 3],
        n: usize,
        bounds: (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        let (min_particles, max_particles) = bounds;
        if min_particles == 0 || min_particles > max_particles {
            return Err(Error::param(
                "particles_min",
                "need 1 <= particles_min <= particles_max",
            ));
        }
        if !(min_particles..=max_particles).contains(&n) {
            return Err(Error::param(
                "n",
                format!("{n} outside [{min_particles}, {max_particles}]"),
            ));
        }
        let weight = 1.0 / n as f64;
        let particles = (0..n)
            .map(|_| Particle {
                pose: jittered(&pose, &std, rng),
                weight,
                hits: 0,
            })
            .collect();
        Ok(Self {
            particles,
            min_particles,
            max_particles,
            last_prediction_time: None,
            beams_used: None,
        })
    }

    /// Builds a set from explicit particles; weights are normalized.
    pub fn from_particles(particles: Vec<Particle>, bounds: (usize, usize)) -> Result<Self> {
        let (min_particles, max_particles) = bounds;
        if min_particles == 0 || min_particles > max_particles {
            return Err(Error::param(
                "particles_min",
                "need 1 <= particles_min <= particles_max",
            ));
        }
        if !(min_particles..=max_particles).contains(&particles.len()) {
            return Err(Error::param(
                "particles",
                format!("{} outside [{min_particles}, {max_particles}]", particles.len()),
            ));
        }
        let mut set = Self {
            particles,
            min_particles,
            max_particles,
            last_prediction_time: None,
            beams_used: None,
        };
        if !set.normalize() {
            set.set_uniform();
        }
        Ok(set)
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn bounds(&self) -> (usize, usize) {
        (self.min_particles, self.max_particles)
    }

    pub fn beams_used(&self) -> Option<usize> {
        self.beams_used
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    fn normalize(&mut self) -> bool {
        let total = self.weight_sum();
        if !(total > 0.0) || !total.is_finite() {
            return false;
        }
        for p in &mut self.particles {
            p.weight /= total;
        }
        true
    }

    fn set_uniform(&mut self) {
        let w = 1.0 / self.particles.len() as f64;
        for p in &mut self.particles {
            p.weight = w;
        }
    }

    fn sort_by_weight(&mut self) {
        self.particles.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    }

    /// Applies the odometry displacement `u`, perturbed per particle by
    /// zero-mean Gaussian noise scaled with `|u|`.
    pub fn predict<R: Rng + ?Sized>(&mut self, u: &Transform2D, noise: &MotionNoiseParams, rng: &mut R) {
        let (std_t, std_r) = noise.std_for(u);
        for p in &mut self.particles {
            let noisy = Transform2D::new(
                u.x + gaussian(rng, std_t),
                u.y + gaussian(rng, std_t),
                u.yaw + gaussian(rng, std_r),
            );
            p.pose = p.pose.compose(&noisy);
        }
    }

    /// Multiplies every weight by the product of per-beam Gaussian likelihoods
    /// (accumulated in log space), records hit counts and renormalizes.
    pub fn correct(
        &mut self,
        scan: &LaserScan,
        grid: &OccupancyGrid,
        base_to_laser: &Transform2D,
        params: &SensorModelParams,
    ) -> Result<CorrectionReport> {
        if scan.ranges.is_empty() {
            return Err(Error::InvalidState("scan has no ranges"));
        }
        let beams = scan.usable_beams(params.beam_stride, params.max_usable_range);
        if beams.is_empty() {
            return Ok(CorrectionReport {
                beams_used: 0,
                degenerate: false,
            });
        }
        let sigma = params.sigma;
        let hit_threshold = params.hit_threshold_factor * sigma;
        let scored: Vec<(f64, u32)> = self
            .particles
            .par_iter()
            .map(|p| {
                let laser = p.pose.compose(base_to_laser);
                let mut log_w = p.weight.ln();
                let mut hits = 0;
                for &(angle, range) in &beams {
                    let err = grid.beam_error(&laser, angle, range, sigma);
                    log_w += beam_log_likelihood(err, sigma);
                    if err <= hit_threshold {
                        hits += 1;
                    }
                }
                (log_w, hits)
            })
            .collect();

        let max_log = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        for (p, &(_, hits)) in self.particles.iter_mut().zip(&scored) {
            p.hits = hits;
        }
        self.beams_used = Some(beams.len());
        if !max_log.is_finite() {
            self.set_uniform();
            return Ok(CorrectionReport {
                beams_used: beams.len(),
                degenerate: true,
            });
        }
        for (p, &(log_w, _)) in self.particles.iter_mut().zip(&scored) {
            p.weight = (log_w - max_log).exp();
        }
        let normalized = self.normalize();
        debug_assert!(normalized);
        Ok(CorrectionReport {
            beams_used: beams.len(),
            degenerate: false,
        })
    }

    /// Mean over particles of the fraction of used beams that hit.
    pub fn quality(&self) -> Result<f64> {
        let beams = match self.beams_used {
            Some(n) if n > 0 => n as f64,
            _ => return Err(Error::InvalidState("quality requested before any correction")),
        };
        let total: f64 = self.particles.iter().map(|p| p.hits as f64 / beams).sum();
        Ok(total / self.particles.len() as f64)
    }

    /// Replaces the lowest-weight particles with perturbed copies of the
    /// winners and resets weights to uniform. Sets with fewer than two
    /// particles are left alone.
    pub fn reseed<R: Rng + ?Sized>(&mut self, params: &ReseedParams, rng: &mut R) {
        let n = self.particles.len();
        if n < 2 {
            return;
        }
        self.sort_by_weight();
        let n_winners = ((params.winner_pct * n as f64).ceil() as usize).clamp(1, n);
        let n_losers = ((params.loser_pct * n as f64).floor() as usize).min(n - n_winners);
        for i in n - n_losers..n {
            let src = self.particles[winner_index(n_winners, rng)];
            self.particles[i] = Particle {
                pose: jittered(&src.pose, &params.jitter, rng),
                ..src
            };
        }
        self.set_uniform();
    }

    /// Grows the set by half when the positional uncertainty exceeds
    /// `grow_above`, shrinks it by a quarter below `shrink_below`, always
    /// within the configured bounds. Returns the new size.
    pub fn adapt_size<R: Rng + ?Sized>(
        &mut self,
        estimate: &PoseEstimate,
        grow_above: f64,
        shrink_below: f64,
        reseed: &ReseedParams,
        rng: &mut R,
    ) -> Result<usize> {
        if !(grow_above > shrink_below && shrink_below > 0.0) {
            return Err(Error::param("grow_above", "need grow_above > shrink_below > 0"));
        }
        let u = metrics::uncertainty(estimate)?;
        let n = self.particles.len();
        let target = if u > grow_above {
            (n as f64 * 1.5).ceil() as usize
        } else if u < shrink_below {
            (n as f64 * 0.75).floor() as usize
        } else {
            n
        }
        .clamp(self.min_particles, self.max_particles);

        if target != n {
            self.sort_by_weight();
            if target < n {
                self.particles.truncate(target);
            } else {
                let n_winners = ((reseed.winner_pct * n as f64).ceil() as usize).clamp(1, n);
                for _ in n..target {
                    let src = self.particles[winner_index(n_winners, rng)];
                    self.particles.push(Particle {
                        pose: jittered(&src.pose, &reseed.jitter, rng),
                        ..src
                    });
                }
            }
            if !self.normalize() {
                self.set_uniform();
            }
        }
        Ok(target)
    }

    pub fn estimate(&self) -> Result<PoseEstimate> {
        weighted_mean_cov(self.particles.iter().map(|p| (p.pose, p.weight)))
    }

    /// Union of two sets truncated to the larger size, keeping the heaviest
    /// particles. Weights of the result are renormalized.
    pub fn merged_with(&self, other: &ParticleSet) -> ParticleSet {
        let keep = self.len().max(other.len());
        let mut particles: Vec<Particle> = self.particles.iter().chain(&other.particles).copied().collect();
        particles.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        particles.truncate(keep);
        let mut set = ParticleSet {
            particles,
            min_particles: self.min_particles.min(other.min_particles),
            max_particles: self.max_particles.max(other.max_particles),
            last_prediction_time: match (self.last_prediction_time, other.last_prediction_time) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
            beams_used: self.beams_used.or(other.beams_used),
        };
        if !set.normalize() {
            set.set_uniform();
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gridmap::Cell;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn set_at(pose: Transform2D, n: usize) -> ParticleSet {
        ParticleSet::init_gaussian(pose, [0.0; 3], n, (1, 10_000), &mut rng()).unwrap()
    }

    #[test]
    fn init_examples() {
        let pose = Transform2D::new(1.0, 2.0, 0.5);
        let s = set_at(pose, 100);
        assert!(s.particles().iter().all(|p| p.pose == pose && p.hits == 0));
        assert!(s.particles().iter().all(|p| p.weight == 0.01));

        let mut r = rng();
        let s = ParticleSet::init_gaussian(pose, [0.1, 0.1, 0.05], 10_000, (1, 10_000), &mut r).unwrap();
        let n = s.len() as f64;
        let mx = s.particles().iter().map(|p| p.pose.x).sum::<f64>() / n;
        let my = s.particles().iter().map(|p| p.pose.y).sum::<f64>() / n;
        let myaw = s.particles().iter().map(|p| p.pose.yaw).sum::<f64>() / n;
        assert!((mx - 1.0).abs() < 3.0 * 0.1 / n.sqrt());
        assert!((my - 2.0).abs() < 3.0 * 0.1 / n.sqrt());
        assert!((myaw - 0.5).abs() < 3.0 * 0.05 / n.sqrt());
    }

    #[test]
    fn init_rejects_out_of_bounds() {
        let mut r = rng();
        assert!(ParticleSet::init_gaussian(Transform2D::IDENTITY, [0.0; 3], 5, (10, 20), &mut r).is_err());
        assert!(ParticleSet::init_gaussian(Transform2D::IDENTITY, [0.0; 3], 25, (10, 20), &mut r).is_err());
        assert!(ParticleSet::init_gaussian(Transform2D::IDENTITY, [0.0; 3], 5, (0, 20), &mut r).is_err());
    }

    #[test]
    fn predict_examples() {
        let mut r = rng();
        let mut s = ParticleSet::init_gaussian(Transform2D::IDENTITY, [1.0, 1.0, 1.0], 50, (1, 100), &mut r).unwrap();
        let before: Vec<_> = s.particles().iter().map(|p| p.pose).collect();
        s.predict(&Transform2D::IDENTITY, &MotionNoiseParams::default(), &mut r);
        for (p, b) in s.particles().iter().zip(&before) {
            assert_eq!(p.pose, *b);
        }

        let mut s = set_at(Transform2D::IDENTITY, 1);
        s.particles[0].pose = Transform2D::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        s.predict(&Transform2D::new(1.0, 0.0, 0.0), &MotionNoiseParams::ZERO, &mut r);
        assert!(s.particles()[0]
            .pose
            .approx_eq(&Transform2D::new(0.0, 1.0, std::f64::consts::FRAC_PI_2), 1e-12));
    }

    #[test]
    fn predict_noise_matches_configured_std() {
        let mut r = rng();
        let mut s = set_at(Transform2D::IDENTITY, 10_000);
        let noise = MotionNoiseParams {
            trans_per_trans: 0.1,
            ..MotionNoiseParams::ZERO
        };
        s.predict(&Transform2D::new(1.0, 0.0, 0.0), &noise, &mut r);
        let n = s.len() as f64;
        let xs: Vec<f64> = s.particles().iter().map(|p| p.pose.x).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.1).abs() < 0.005, "std {std}");
    }

    #[test]
    fn predict_keeps_weights_and_hits() {
        let mut r = rng();
        let mut s = set_at(Transform2D::IDENTITY, 10);
        for (i, p) in s.particles.iter_mut().enumerate() {
            p.weight = i as f64;
            p.hits = i as u32;
        }
        s.predict(&Transform2D::new(0.3, 0.1, 0.2), &MotionNoiseParams::default(), &mut r);
        for (i, p) in s.particles().iter().enumerate() {
            assert_eq!(p.weight, i as f64);
            assert_eq!(p.hits, i as u32);
        }
    }

    #[test]
    fn beam_likelihood_at_zero_error() {
        assert!((beam_likelihood(0.0, 0.1) - 3.989_422_804_014_327).abs() < 1e-12);
    }

    #[test]
    fn quality_examples() {
        let mut s = set_at(Transform2D::IDENTITY, 2);
        assert!(s.quality().is_err());
        s.beams_used = Some(20);
        s.particles[0].hits = 10;
        s.particles[1].hits = 20;
        assert!((s.quality().unwrap() - 0.75).abs() < 1e-15);
        s.particles[0].hits = 20;
        assert_eq!(s.quality().unwrap(), 1.0);
        s.particles[0].hits = 0;
        s.particles[1].hits = 0;
        assert_eq!(s.quality().unwrap(), 0.0);
    }

    fn weighted_set(n: usize) -> ParticleSet {
        let mut s = set_at(Transform2D::IDENTITY, n);
        for (i, p) in s.particles.iter_mut().enumerate() {
            p.pose = Transform2D::new(i as f64, 0.0, 0.0);
            p.weight = (i + 1) as f64;
        }
        s.normalize();
        s
    }

    #[test]
    fn reseed_without_losers_only_renormalizes() {
        let mut s = weighted_set(20);
        let mut poses: Vec<f64> = s.particles().iter().map(|p| p.pose.x).collect();
        let params = ReseedParams {
            winner_pct: 0.1,
            loser_pct: 0.0,
            jitter: [0.1; 3],
        };
        s.reseed(&params, &mut rng());
        let mut after: Vec<f64> = s.particles().iter().map(|p| p.pose.x).collect();
        poses.sort_by(f64::total_cmp);
        after.sort_by(f64::total_cmp);
        assert_eq!(poses, after);
        assert!(s.particles().iter().all(|p| p.weight == 1.0 / 20.0));
    }

    #[test]
    fn reseed_replaces_losers() {
        let mut s = weighted_set(100);
        let params = ReseedParams {
            winner_pct: 0.1,
            loser_pct: 0.3,
            jitter: [0.0; 3],
        };
        s.reseed(&params, &mut rng());
        assert_eq!(s.len(), 100);
        // the 30 lightest particles sat at x = 0..29; winners are x = 90..99
        assert!(s.particles().iter().all(|p| p.pose.x >= 30.0));
        assert!((s.weight_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reseed_single_dominant_winner() {
        let mut s = weighted_set(10);
        s.particles[3].weight = 1.0;
        for (i, p) in s.particles.iter_mut().enumerate() {
            if i != 3 {
                p.weight = 1e-12;
            }
        }
        let params = ReseedParams {
            winner_pct: 0.1,
            loser_pct: 0.9,
            jitter: [0.0; 3],
        };
        s.reseed(&params, &mut rng());
        assert!(s.particles().iter().all(|p| p.pose.x == 3.0));
    }

    #[test]
    fn reseed_tiny_set_is_noop() {
        let mut s = set_at(Transform2D::new(1.0, 0.0, 0.0), 1);
        s.particles[0].weight = 0.3;
        s.reseed(&ReseedParams::default(), &mut rng());
        assert_eq!(s.particles()[0].weight, 0.3);
    }

    fn est_with_var(var: f64) -> PoseEstimate {
        let mut c = nalgebra::Matrix3::zeros();
        c[(0, 0)] = var;
        c[(1, 1)] = var;
        PoseEstimate::new(Transform2D::IDENTITY, c)
    }

    #[test]
    fn adapt_size_examples() {
        let mut r = rng();
        let params = ReseedParams::default();
        let mut s = ParticleSet::init_gaussian(Transform2D::IDENTITY, [0.1; 3], 200, (100, 400), &mut r).unwrap();
        assert_eq!(
            s.adapt_size(&est_with_var(0.01), 0.5, 0.05, &params, &mut r).unwrap(),
            200
        );
        assert_eq!(
            s.adapt_size(&est_with_var(0.0001), 0.5, 0.05, &params, &mut r).unwrap(),
            150
        );
        assert_eq!(s.len(), 150);
        assert_eq!(
            s.adapt_size(&est_with_var(1.0), 0.5, 0.05, &params, &mut r).unwrap(),
            225
        );
        assert_eq!(s.len(), 225);
        assert!((s.weight_sum() - 1.0).abs() < 1e-12);

        let mut s = ParticleSet::init_gaussian(Transform2D::IDENTITY, [0.1; 3], 400, (100, 400), &mut r).unwrap();
        assert_eq!(
            s.adapt_size(&est_with_var(4.0), 0.5, 0.05, &params, &mut r).unwrap(),
            400
        );
        assert!(s.adapt_size(&est_with_var(4.0), 0.05, 0.5, &params, &mut r).is_err());
    }

    fn corridor() -> OccupancyGrid {
        // 4 m × 2 m box, one-cell walls, 0.05 m cells
        let (w, h) = (80, 40);
        let mut g = OccupancyGrid::filled(w, h, 0.05, Transform2D::IDENTITY, Cell::Free).unwrap();
        for col in 0..w {
            g.set(col, 0, Cell::Occupied);
            g.set(col, h - 1, Cell::Occupied);
        }
        for row in 0..h {
            g.set(0, row, Cell::Occupied);
            g.set(w - 1, row, Cell::Occupied);
        }
        g
    }

    fn perfect_scan(grid: &OccupancyGrid, pose: &Transform2D, beams: usize) -> LaserScan {
        let angle_increment = 2.0 * PI / beams as f64;
        let ranges = (0..beams)
            .map(|j| {
                let a = -PI + j as f64 * angle_increment;
                grid.cast_ray(pose, a, 10.0).unwrap_or(10.0)
            })
            .collect();
        LaserScan {
            stamp: 0.0,
            angle_min: -PI,
            angle_increment,
            range_max: 10.0,
            ranges,
        }
    }

    #[test]
    fn correct_true_pose_hits_every_beam() {
        let grid = corridor();
        let truth = Transform2D::new(1.3, 0.9, 0.2);
        let scan = perfect_scan(&grid, &truth, 20);
        let mut s = set_at(truth, 3);
        let report = s
            .correct(&scan, &grid, &Transform2D::IDENTITY, &SensorModelParams::default())
            .unwrap();
        assert_eq!(report.beams_used, 20);
        assert!(s.particles().iter().all(|p| p.hits == 20));
        assert_eq!(s.quality().unwrap(), 1.0);
        assert!((s.weight_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correct_prefers_true_pose() {
        let grid = corridor();
        let truth = Transform2D::new(1.3, 0.9, 0.0);
        let scan = perfect_scan(&grid, &truth, 20);
        let mut s = set_at(truth, 2);
        s.particles[1].pose = Transform2D::new(2.3, 0.9, 0.0);
        let params = SensorModelParams::default();
        s.correct(&scan, &grid, &Transform2D::IDENTITY, &params).unwrap();

        // independent product of per-beam density ratios
        let (mut w_true, mut w_off) = (1.0f64, 1.0f64);
        for (j, &r) in scan.ranges.iter().enumerate() {
            let a = scan.angle(j);
            w_true *= beam_likelihood(grid.beam_error(&truth, a, r, 0.05), 0.05) / 10.0;
            w_off *= beam_likelihood(grid.beam_error(&s.particles[1].pose, a, r, 0.05), 0.05) / 10.0;
        }
        let expected = w_true / (w_true + w_off);
        assert!(expected > 0.99);
        assert!((s.particles()[0].weight - expected).abs() < 1e-9);
    }

    #[test]
    fn correct_never_moves_particles() {
        let grid = corridor();
        let scan = perfect_scan(&grid, &Transform2D::new(2.0, 1.0, 0.0), 36);
        let mut r = rng();
        let mut s =
            ParticleSet::init_gaussian(Transform2D::new(2.0, 1.0, 0.0), [0.3, 0.3, 0.3], 50, (1, 100), &mut r).unwrap();
        let before: Vec<_> = s.particles().iter().map(|p| p.pose).collect();
        s.correct(&scan, &grid, &Transform2D::IDENTITY, &SensorModelParams::default())
            .unwrap();
        assert!(s.particles().iter().zip(&before).all(|(p, b)| p.pose == *b));
    }

    #[test]
    fn degenerate_correction_resets_uniform() {
        let grid = corridor();
        let scan = perfect_scan(&grid, &Transform2D::new(2.0, 1.0, 0.0), 8);
        let mut s = set_at(Transform2D::new(2.0, 1.0, 0.0), 4);
        for p in &mut s.particles {
            p.weight = 0.0;
        }
        let report = s
            .correct(&scan, &grid, &Transform2D::IDENTITY, &SensorModelParams::default())
            .unwrap();
        assert!(report.degenerate);
        assert!(s.particles().iter().all(|p| p.weight == 0.25));
    }

    #[test]
    fn unusable_beams_are_skipped() {
        let scan = LaserScan {
            stamp: 0.0,
            angle_min: 0.0,
            angle_increment: 0.1,
            range_max: 5.0,
            ranges: vec![1.0, f64::NAN, 5.0, 0.0, -1.0, 2.0, f64::INFINITY, 3.0, 9.0],
        };
        let beams = scan.usable_beams(1, 2.5);
        assert_eq!(beams.len(), 2);
        assert!((beams[1].0 - 0.5).abs() < 1e-12);
        // stride 2 keeps beams 0, 2, 4, 6, 8 of which only beam 0 is valid
        assert_eq!(scan.usable_beams(2, 10.0).len(), 1);
    }

    #[test]
    fn merged_keeps_larger_size() {
        let a = weighted_set(30);
        let b = weighted_set(50);
        let m = a.merged_with(&b);
        assert_eq!(m.len(), 50);
        assert!((m.weight_sum() - 1.0).abs() < 1e-12);
    }
}
