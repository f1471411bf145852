//! Cascade map matching over a grid pyramid. Every candidate cell of the
//! coarsest level is bounded for all 16 orientations; finer levels are only
//! visited beneath cells whose bound can still beat the best level-0 scores
//! found so far, so the result equals an exhaustive level-0 search.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{count_hits, LaserScan, SensorModelParams};
use crate::geometry::Transform2D;
use crate::gridmap::{Cell, GridPyramid, OccupancyGrid};

/// Orientation spacing of the search.
pub const ANGLE_STEP: f64 = PI / 8.0;
pub const ORIENTATIONS: usize = 16;

pub fn orientation(index: usize) -> f64 {
    Transform2D::new(0.0, 0.0, index as f64 * ANGLE_STEP).yaw
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherParams {
    pub levels: usize,
    pub keep_per_level: usize,
    /// Suggested floor for acting on a candidate. The matcher itself returns
    /// candidates regardless; callers filter.
    pub min_score: f64,
}

impl Default for MatcherParams {
    fn default() -> Self {
        Self {
            levels: 4,
            keep_per_level: 16,
            min_score: 0.5,
        }
    }
}

impl MatcherParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::param("levels", "must be >= 1"));
        }
        if self.keep_per_level == 0 {
            return Err(Error::param("keep_per_level", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(Error::param("min_score", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCandidate {
    pub pose: Transform2D,
    pub score: f64,
    pub level: usize,
    pub col: usize,
    pub row: usize,
    pub yaw_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    /// Sorted by score descending, then `(row, col, yaw_index)` ascending.
    pub candidates: Vec<MatchCandidate>,
    /// Number of pose evaluations per level (index = level).
    pub evaluations: Vec<usize>,
}

/// Fraction of used beams that hit the map with the robot at `pose`.
pub fn score_pose(
    grid: &OccupancyGrid,
    scan: &LaserScan,
    pose: &Transform2D,
    base_to_laser: &Transform2D,
    sigma_eff: f64,
    sensor: &SensorModelParams,
) -> f64 {
    let beams = scan.usable_beams(sensor.beam_stride, sensor.max_usable_range);
    score_beams(
        grid,
        &beams,
        pose,
        base_to_laser,
        sigma_eff,
        sensor.hit_threshold_factor,
    )
}

fn score_beams(
    grid: &OccupancyGrid,
    beams: &[(f64, f64)],
    pose: &Transform2D,
    base_to_laser: &Transform2D,
    sigma_eff: f64,
    hit_factor: f64,
) -> f64 {
    if beams.is_empty() {
        return 0.0;
    }
    let laser = pose.compose(base_to_laser);
    count_hits(grid, &laser, beams, sigma_eff, hit_factor * sigma_eff) as f64 / beams.len() as f64
}

/// Scoring tolerance used at a pyramid level.
pub fn sigma_for_level(grid: &OccupancyGrid, sensor_sigma: f64) -> f64 {
    sensor_sigma.max(grid.resolution())
}

fn candidate_order(a: &MatchCandidate, b: &MatchCandidate) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then((a.row, a.col, a.yaw_index).cmp(&(b.row, b.col, b.yaw_index)))
}

#[derive(Debug, Clone, Copy)]
struct Node {
    level: usize,
    col: usize,
    row: usize,
    yaw_index: usize,
    bound: f64,
}

fn node_order(a: &Node, b: &Node) -> std::cmp::Ordering {
    b.bound
        .total_cmp(&a.bound)
        .then((a.row, a.col, a.yaw_index).cmp(&(b.row, b.col, b.yaw_index)))
}

struct Search<'a> {
    pyramid: &'a GridPyramid,
    beams: Vec<(f64, f64)>,
    base_to_laser: Transform2D,
    sigma: f64,
    hit_factor: f64,
    keep: usize,
    evaluations: Vec<usize>,
    best: Vec<MatchCandidate>,
}

impl Search<'_> {
    /// Upper bound on the level-0 score of any pose whose cell lies under
    /// `(level, col, row)` with orientation `yaw_index`.
    ///
    /// A beam can only hit if an Occupied cell lies within the hit tolerance
    /// of its endpoint along the beam. Over all cell centers in the block the
    /// endpoints sweep a translated rectangle; the beam is counted when the
    /// rectangle, grown by the tolerance, touches any Occupied cell.
    fn bound(&self, level: usize, col: usize, row: usize, yaw_index: usize) -> f64 {
        if self.beams.is_empty() {
            return 0.0;
        }
        let hit = self.hit_factor * self.sigma;
        // errors are capped at 3σ, so a tolerance at or beyond the cap accepts every beam
        if hit >= 3.0 * self.sigma {
            return 1.0;
        }
        let base = self.pyramid.level(0);
        let res = base.resolution();
        let scale = 1usize << level;
        let c_hi = ((col + 1) * scale).min(base.width()) - 1;
        let r_hi = ((row + 1) * scale).min(base.height()) - 1;
        let (x_lo, x_hi) = ((col * scale) as f64 * res + 0.5 * res, c_hi as f64 * res + 0.5 * res);
        let (y_lo, y_hi) = ((row * scale) as f64 * res + 0.5 * res, r_hi as f64 * res + 0.5 * res);

        let yaw = orientation(yaw_index) - base.origin().yaw;
        let (s, c) = yaw.sin_cos();
        let m = &self.base_to_laser;
        let (ox, oy) = (c * m.x - s * m.y, s * m.x + c * m.y);
        let eps = 1e-9;
        let cell = |v: f64| (v / res).floor() as i64;

        let possible = self
            .beams
            .iter()
            .filter(|&&(angle, range)| {
                let (sp, cp) = (yaw + m.yaw + angle).sin_cos();
                let (ex, ey) = (ox + range * cp, oy + range * sp);
                let (hx, hy) = (hit * cp.abs() + eps, hit * sp.abs() + eps);
                self.pyramid.any_occupied(
                    cell(x_lo + ex - hx),
                    cell(y_lo + ey - hy),
                    cell(x_hi + ex + hx),
                    cell(y_hi + ey + hy),
                )
            })
            .count();
        possible as f64 / self.beams.len() as f64
    }

    fn threshold(&self) -> Option<f64> {
        (self.best.len() >= self.keep).then(|| self.best[self.best.len() - 1].score)
    }

    fn descend(&mut self, node: Node) {
        if self.threshold().is_some_and(|th| node.bound <= th) {
            return;
        }
        if node.level == 0 {
            self.evaluations[0] += 1;
            let grid = self.pyramid.level(0);
            let (x, y) = grid.cell_to_world(node.col, node.row);
            let pose = Transform2D::new(x, y, orientation(node.yaw_index));
            let candidate = MatchCandidate {
                pose,
                score: score_beams(
                    grid,
                    &self.beams,
                    &pose,
                    &self.base_to_laser,
                    self.sigma,
                    self.hit_factor,
                ),
                level: 0,
                col: node.col,
                row: node.row,
                yaw_index: node.yaw_index,
            };
            let at = self.best.partition_point(|c| candidate_order(c, &candidate).is_lt());
            self.best.insert(at, candidate);
            self.best.truncate(self.keep);
            return;
        }

        let level = node.level - 1;
        let finer = self.pyramid.level(level);
        let mut children: Vec<Node> = [(0, 0), (1, 0), (0, 1), (1, 1)]
            .into_iter()
            .map(|(dc, dr)| (2 * node.col + dc, 2 * node.row + dr))
            .filter(|&(col, row)| {
                col < finer.width() && row < finer.height() && is_candidate_cell(self.pyramid, level, col, row)
            })
            .map(|(col, row)| Node {
                level,
                col,
                row,
                yaw_index: node.yaw_index,
                bound: self.bound(level, col, row, node.yaw_index),
            })
            .collect();
        if level > 0 {
            self.evaluations[level] += children.len();
        }
        children.sort_by(node_order);
        for child in children {
            self.descend(child);
        }
    }
}

/// Exhaustive-equivalent global match. The coarsest level is enumerated in
/// full (every candidate cell × 16 orientations); finer levels are visited
/// only beneath cells whose score bound can still beat the current
/// `keep_per_level`-th best level-0 score. Returns the best
/// `keep_per_level` level-0 poses.
pub fn cascade_match(
    pyramid: &GridPyramid,
    scan: &LaserScan,
    base_to_laser: &Transform2D,
    params: &MatcherParams,
    sensor: &SensorModelParams,
) -> Result<MatchResult> {
    params.validate()?;
    if pyramid.num_levels() < params.levels {
        return Err(Error::param(
            "levels",
            format!(
                "pyramid has {} levels, matcher needs {}",
                pyramid.num_levels(),
                params.levels
            ),
        ));
    }
    let top = params.levels - 1;
    let mut search = Search {
        pyramid,
        beams: scan.usable_beams(sensor.beam_stride, sensor.max_usable_range),
        base_to_laser: *base_to_laser,
        sigma: sigma_for_level(pyramid.level(0), sensor.sigma),
        hit_factor: sensor.hit_threshold_factor,
        keep: params.keep_per_level,
        evaluations: vec![0; params.levels],
        best: Vec::new(),
    };

    let coarsest = pyramid.level(top);
    let keys: Vec<(usize, usize, usize)> = (0..coarsest.height())
        .flat_map(|row| (0..coarsest.width()).map(move |col| (row, col)))
        .filter(|&(row, col)| is_candidate_cell(pyramid, top, col, row))
        .flat_map(|(row, col)| (0..ORIENTATIONS).map(move |k| (row, col, k)))
        .collect();
    let mut roots: Vec<Node> = if top == 0 {
        keys.iter()
            .map(|&(row, col, yaw_index)| Node {
                level: 0,
                col,
                row,
                yaw_index,
                bound: f64::INFINITY,
            })
            .collect()
    } else {
        search.evaluations[top] = keys.len();
        let s = &search;
        keys.par_iter()
            .map(|&(row, col, yaw_index)| Node {
                level: top,
                col,
                row,
                yaw_index,
                bound: s.bound(top, col, row, yaw_index),
            })
            .collect()
    };
    roots.sort_by(node_order);
    for root in roots {
        search.descend(root);
    }
    Ok(MatchResult {
        candidates: search.best,
        evaluations: search.evaluations,
    })
}

/// Level 0 admits Free cells only; coarser levels admit any cell that covers
/// at least one Free level-0 cell.
fn is_candidate_cell(pyramid: &GridPyramid, level: usize, col: usize, row: usize) -> bool {
    if level == 0 {
        pyramid.level(0).get(col, row) == Cell::Free
    } else {
        pyramid.covers_free(level, col, row)
    }
}
