//! The hypothesis collection and the phase scheduler that drives it.
//!
//! Every hypothesis is an independent particle population. Populations are
//! started at a known pose or spawned from map-matching candidates, destroyed
//! when their quality collapses and merged when their estimates coincide. The
//! reported pose is the estimate of the highest-quality population.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{FilterParams, LaserScan, ParticleSet};
use crate::geometry::{angle_diff, PoseEstimate, TimedTransformBuffer, Transform2D};
use crate::gridmap::GridPyramid;
use crate::matcher::{cascade_match, MatchCandidate, MatcherParams};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub predict_hz: f64,
    pub correct_hz: f64,
    pub reseed_hz: f64,
    pub match_period_s: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            predict_hz: 100.0,
            correct_hz: 10.0,
            reseed_hz: 0.3,
            match_period_s: 5.0,
        }
    }
}

impl Rates {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("predict_hz", self.predict_hz),
            ("correct_hz", self.correct_hz),
            ("reseed_hz", self.reseed_hz),
            ("match_period_s", self.match_period_s),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(name, "must be finite and > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiHypParams {
    /// Smoothed quality below which a hypothesis is destroyed.
    pub destroy_below: f64,
    /// Match score a candidate needs to start a hypothesis.
    pub spawn_above: f64,
    pub merge_dist: f64,
    pub merge_yaw: f64,
    pub max_hypotheses: usize,
    pub rates: Rates,
    /// Weight of the newest quality in the exponential smoothing; 1 disables it.
    pub quality_alpha: f64,
    /// Input gap (s) that produces a stall record.
    pub stall_timeout: f64,
    /// Spread `(x, y, yaw)` of a hypothesis spawned at a match candidate.
    pub spawn_std: [f64; 3],
    /// One hypothesis at most, spawned from matching only while none exists.
    pub single_hypothesis: bool,
}

impl Default for MultiHypParams {
    fn default() -> Self {
        Self {
            destroy_below: 0.25,
            spawn_above: 0.5,
            merge_dist: 0.5,
            merge_yaw: 0.3,
            max_hypotheses: 5,
            rates: Rates::default(),
            quality_alpha: 0.5,
            stall_timeout: 1.0,
            spawn_std: [0.1, 0.1, 0.2],
            single_hypothesis: false,
        }
    }
}

impl MultiHypParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.destroy_below) {
            return Err(Error::param("destroy_below", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.spawn_above) {
            return Err(Error::param("spawn_above", "must lie in [0, 1]"));
        }
        if !(self.merge_dist > 0.0) {
            return Err(Error::param("merge_dist", "must be > 0"));
        }
        if !(self.merge_yaw > 0.0) {
            return Err(Error::param("merge_yaw", "must be > 0"));
        }
        if self.max_hypotheses == 0 {
            return Err(Error::param("max_hypotheses", "must be >= 1"));
        }
        self.rates.validate().map_err(|e| e.within("rates"))?;
        if !(self.quality_alpha > 0.0 && self.quality_alpha <= 1.0) {
            return Err(Error::param("quality_alpha", "must lie in (0, 1]"));
        }
        if !(self.stall_timeout > 0.0) {
            return Err(Error::param("stall_timeout", "must be > 0"));
        }
        if self.spawn_std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::param("spawn_std", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        if self.single_hypothesis {
            1
        } else {
            self.max_hypotheses
        }
    }
}

#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub id: u64,
    pub set: ParticleSet,
    /// Smoothed quality; 0 until the first correction.
    pub quality: f64,
    pub created_at: f64,
    corrected: bool,
}

impl Hypothesis {
    pub fn corrected(&self) -> bool {
        self.corrected
    }

    /// Folds a fresh quality value into the smoothed one.
    pub fn observe_quality(&mut self, raw: f64, alpha: f64) {
        self.quality = if self.corrected {
            alpha * raw + (1.0 - alpha) * self.quality
        } else {
            raw
        };
        self.corrected = true;
    }
}

#[derive(Debug, Clone)]
pub struct HypothesisSet {
    hypotheses: Vec<Hypothesis>,
    pub params: MultiHypParams,
    pub filter: FilterParams,
    next_id: u64,
}

impl HypothesisSet {
    /// One hypothesis around `initial_pose` if given, otherwise an empty set
    /// that the first match cycle populates.
    pub fn start<R: Rng + ?Sized>(
        initial_pose: Option<Transform2D>,
        t: f64,
        params: MultiHypParams,
        filter: FilterParams,
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        filter.validate()?;
        let mut hs = Self {
            hypotheses: Vec::new(),
            params,
            filter,
            next_id: 0,
        };
        if let Some(pose) = initial_pose {
            hs.spawn(pose, filter.initial_std, t, rng)?;
        }
        Ok(hs)
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn hypotheses_mut(&mut self) -> &mut [Hypothesis] {
        &mut self.hypotheses
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// Adds a hypothesis regardless of capacity; returns its id.
    pub fn spawn<R: Rng + ?Sized>(&mut self, pose: Transform2D, std: [f64; 3], t: f64, rng: &mut R) -> Result<u64> {
        let mut set = ParticleSet::init_gaussian(pose, std, self.filter.initial_particles, self.filter.bounds(), rng)?;
        set.last_prediction_time = Some(t);
        let id = self.next_id;
        self.next_id += 1;
        self.hypotheses.push(Hypothesis {
            id,
            set,
            quality: 0.0,
            created_at: t,
            corrected: false,
        });
        Ok(id)
    }

    fn is_close(&self, a: &Transform2D, b: &Transform2D) -> bool {
        (a.x - b.x).hypot(a.y - b.y) < self.params.merge_dist && angle_diff(a.yaw, b.yaw).abs() < self.params.merge_yaw
    }

    /// Spawns hypotheses at candidates scoring at least `spawn_above` that
    /// are not close to an existing hypothesis, while capacity allows.
    /// `candidates` must be sorted by score descending. Returns the new ids.
    pub fn on_match_results<R: Rng + ?Sized>(
        &mut self,
        candidates: &[MatchCandidate],
        t: f64,
        rng: &mut R,
    ) -> Result<Vec<u64>> {
        let mut occupied: Vec<Transform2D> = self
            .hypotheses
            .iter()
            .map(|h| h.set.estimate().map(|e| e.mean))
            .collect::<Result<_>>()?;
        let mut spawned = Vec::new();
        for c in candidates {
            if c.score < self.params.spawn_above || self.hypotheses.len() >= self.params.capacity() {
                break;
            }
            if occupied.iter().any(|p| self.is_close(p, &c.pose)) {
                continue;
            }
            spawned.push(self.spawn(c.pose, self.params.spawn_std, t, rng)?);
            occupied.push(c.pose);
        }
        Ok(spawned)
    }

    /// Removes hypotheses whose quality fell below `destroy_below`. The best
    /// hypothesis survives even when every quality is below the threshold.
    pub fn prune(&mut self) -> Vec<u64> {
        let Some(keep) = self.best_index() else {
            return Vec::new();
        };
        let keep_id = self.hypotheses[keep].id;
        let threshold = self.params.destroy_below;
        let mut removed = Vec::new();
        self.hypotheses.retain(|h| {
            let stays = h.id == keep_id || h.quality >= threshold;
            if !stays {
                removed.push(h.id);
            }
            stays
        });
        removed
    }

    /// Merges pairs of hypotheses with coinciding estimates until no pair
    /// qualifies. The older hypothesis absorbs the younger one.
    pub fn merge(&mut self) -> Result<usize> {
        let mut merges = 0;
        loop {
            let means: Vec<Transform2D> = self
                .hypotheses
                .iter()
                .map(|h| h.set.estimate().map(|e| e.mean))
                .collect::<Result<_>>()?;
            let pair = (0..means.len())
                .flat_map(|i| (i + 1..means.len()).map(move |j| (i, j)))
                .find(|&(i, j)| self.is_close(&means[i], &means[j]));
            let Some((i, j)) = pair else {
                return Ok(merges);
            };
            let absorbed = self.hypotheses.remove(j);
            let kept = &mut self.hypotheses[i];
            kept.set = kept.set.merged_with(&absorbed.set);
            kept.quality = kept.quality.max(absorbed.quality);
            kept.corrected |= absorbed.corrected;
            kept.created_at = kept.created_at.min(absorbed.created_at);
            merges += 1;
        }
    }

    fn best_index(&self) -> Option<usize> {
        // hypotheses are kept in id order, so the first maximum has the lowest id
        let mut best: Option<usize> = None;
        for (i, h) in self.hypotheses.iter().enumerate() {
            if best.is_none_or(|b| h.quality > self.hypotheses[b].quality) {
                best = Some(i);
            }
        }
        best
    }

    /// The highest-quality hypothesis (lowest id on ties) and its estimate.
    pub fn best(&self) -> Result<Option<(&Hypothesis, PoseEstimate)>> {
        match self.best_index() {
            None => Ok(None),
            Some(i) => {
                let h = &self.hypotheses[i];
                Ok(Some((h, h.set.estimate()?)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    Predict,
    Correct,
    Reseed,
    Match,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PhaseCounts {
    pub predict: usize,
    pub correct: usize,
    pub reseed: usize,
    pub matching: usize,
}

/// Best-hypothesis output emitted after a correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub t: f64,
    pub pose: Transform2D,
    pub covariance: [f64; 9],
    pub quality: f64,
    pub n_hyp: usize,
    pub hyp_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stall {
    pub t: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub estimates: Vec<Estimate>,
    pub stalls: Vec<Stall>,
    pub counts: PhaseCounts,
    /// `(t, seconds)` wall time of each correction and lifecycle block.
    pub cpu: Vec<(f64, f64)>,
}

/// Replay inputs: odometry (odom → base) and time-ordered scans.
pub struct Inputs<'a> {
    pub odom: &'a TimedTransformBuffer,
    pub scans: &'a [LaserScan],
}

pub struct Environment<'a> {
    pub pyramid: &'a GridPyramid,
    pub base_to_laser: Transform2D,
    pub matcher: MatcherParams,
    pub seed: u64,
}

const TICK_EPS: f64 = 1e-9;

fn phase_ticks(t_start: f64, t_end: f64, period: f64, phase: Phase, out: &mut Vec<(i64, Phase, f64)>) {
    let mut k = 1u64;
    loop {
        let t = t_start + k as f64 * period;
        if t > t_end + TICK_EPS {
            break;
        }
        out.push(((t * 1e6).round() as i64, phase, t));
        k += 1;
    }
}

/// Newest scan stamped at or before `t`.
fn latest_scan(scans: &[LaserScan], t: f64) -> Option<usize> {
    scans.partition_point(|s| s.stamp <= t + TICK_EPS).checked_sub(1)
}

fn advance(hs: &mut HypothesisSet, odom: &TimedTransformBuffer, t: f64, rng: &mut impl Rng) -> Result<()> {
    let noise = hs.filter.motion_noise;
    for h in hs.hypotheses_mut() {
        let Some(t0) = h.set.last_prediction_time else {
            continue;
        };
        if t0 >= t {
            continue;
        }
        let u = odom.odom_delta(t0, t)?;
        h.set.predict(&u, &noise, rng);
        h.set.last_prediction_time = Some(t);
    }
    Ok(())
}

fn input_stalls(inputs: &Inputs, timeout: f64) -> Vec<Stall> {
    let mut times: Vec<f64> = inputs
        .odom
        .records()
        .iter()
        .map(|(t, _)| *t)
        .chain(inputs.scans.iter().map(|s| s.stamp))
        .collect();
    times.sort_by(f64::total_cmp);
    times
        .windows(2)
        .filter(|w| w[1] - w[0] > timeout)
        .map(|w| Stall {
            t: w[1],
            gap: w[1] - w[0],
        })
        .collect()
}

/// Replays the inputs on their own clock. Phases tick at multiples of their
/// period after the first input; when several are due at the same instant
/// they run in the order predict, correct, reseed, match.
pub fn run(hs: &mut HypothesisSet, inputs: &Inputs, env: &Environment) -> Result<RunOutput> {
    let mut output = RunOutput {
        stalls: input_stalls(inputs, hs.params.stall_timeout),
        ..RunOutput::default()
    };
    let (odom_start, odom_end) = inputs.odom.span().ok_or(Error::EmptyBuffer)?;
    let t_start = inputs.scans.first().map_or(odom_start, |s| s.stamp.min(odom_start));
    let t_end = inputs.scans.last().map_or(odom_end, |s| s.stamp.max(odom_end));

    let rates = hs.params.rates;
    let mut ticks = Vec::new();
    phase_ticks(t_start, t_end, 1.0 / rates.predict_hz, Phase::Predict, &mut ticks);
    phase_ticks(t_start, t_end, 1.0 / rates.correct_hz, Phase::Correct, &mut ticks);
    phase_ticks(t_start, t_end, 1.0 / rates.reseed_hz, Phase::Reseed, &mut ticks);
    phase_ticks(t_start, t_end, rates.match_period_s, Phase::Match, &mut ticks);
    ticks.sort_by_key(|&(key, phase, _)| (key, phase));

    let mut motion_rng = stream(env.seed, Stream::Motion);
    let mut reseed_rng = stream(env.seed, Stream::Reseed);
    let mut spawn_rng = stream(env.seed, Stream::Spawn);
    let mut next_scan = 0usize;
    // ticks may overshoot the last odometry record by rounding only
    let in_odom = |t: f64| (t >= odom_start && t <= odom_end + TICK_EPS).then(|| t.min(odom_end));

    for (_, phase, t) in ticks {
        match phase {
            Phase::Predict => {
                if let Some(t) = in_odom(t) {
                    advance(hs, inputs.odom, t, &mut motion_rng)?;
                    output.counts.predict += 1;
                }
            }
            Phase::Correct => {
                let Some(i) = latest_scan(inputs.scans, t) else {
                    continue;
                };
                if i < next_scan {
                    continue;
                }
                next_scan = i + 1;
                output.counts.correct += 1;
                let started = Instant::now();
                if let Some(t) = in_odom(t) {
                    advance(hs, inputs.odom, t, &mut motion_rng)?;
                }
                correct_all(hs, &inputs.scans[i], env)?;
                hs.prune();
                hs.merge()?;
                if let Some((h, est)) = hs.best()? {
                    output.estimates.push(Estimate {
                        t,
                        pose: est.mean,
                        covariance: est.covariance_row_major(),
                        quality: h.quality,
                        n_hyp: hs.len(),
                        hyp_id: h.id,
                    });
                }
                output.cpu.push((t, started.elapsed().as_secs_f64()));
            }
            Phase::Reseed => {
                output.counts.reseed += 1;
                let filter = hs.filter;
                for h in hs.hypotheses_mut() {
                    let est = h.set.estimate()?;
                    h.set.adapt_size(
                        &est,
                        filter.grow_above,
                        filter.shrink_below,
                        &filter.reseed,
                        &mut reseed_rng,
                    )?;
                    h.set.reseed(&filter.reseed, &mut reseed_rng);
                }
            }
            Phase::Match => {
                let Some(i) = latest_scan(inputs.scans, t) else {
                    continue;
                };
                output.counts.matching += 1;
                if hs.params.single_hypothesis && !hs.is_empty() {
                    continue;
                }
                let scan = &inputs.scans[i];
                let result = cascade_match(env.pyramid, scan, &env.base_to_laser, &env.matcher, &hs.filter.sensor)?;
                let floor = env.matcher.min_score;
                let candidates: Vec<MatchCandidate> =
                    result.candidates.into_iter().filter(|c| c.score >= floor).collect();
                hs.on_match_results(&candidates, scan.stamp.clamp(odom_start, odom_end), &mut spawn_rng)?;
            }
        }
    }
    Ok(output)
}

fn correct_all(hs: &mut HypothesisSet, scan: &LaserScan, env: &Environment) -> Result<()> {
    let sensor = hs.filter.sensor;
    let alpha = hs.params.quality_alpha;
    let grid = env.pyramid.level(0);
    for h in hs.hypotheses_mut() {
        let report = h.set.correct(scan, grid, &env.base_to_laser, &sensor)?;
        let raw = if report.beams_used == 0 { 0.0 } else { h.set.quality()? };
        h.observe_quality(raw, alpha);
    }
    Ok(())
}
