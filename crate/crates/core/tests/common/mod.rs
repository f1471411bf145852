//! Shared worlds, scenarios and run helpers for the integration tests.
#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::PathBuf;

use mh_amcl::cli::{bench, localize, LocalizeOptions};
use mh_amcl::config::{Config, EvaluationParams, MapPaths};
use mh_amcl::filter::{LaserScan, MotionNoiseParams, SensorModelParams};
use mh_amcl::geometry::Transform2D;
use mh_amcl::gridmap::{Cell, GridPyramid, OccupancyGrid};
use mh_amcl::matcher::{orientation, score_pose, sigma_for_level, ORIENTATIONS};
use mh_amcl::metrics::{ErrorSeries, Summary};
use mh_amcl::multihyp::RunOutput;
use mh_amcl::runlog::RunLog;
use mh_amcl::sim::{simulate, Kidnap, Motion, ScenarioScript, SensorSpec, Waypoint};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const RES: f64 = 0.05;

pub fn fill_rect(g: &mut OccupancyGrid, x0: f64, y0: f64, x1: f64, y1: f64) {
    let (c0, r0) = ((x0 / RES).round() as usize, (y0 / RES).round() as usize);
    let (c1, r1) = ((x1 / RES).round() as usize, (y1 / RES).round() as usize);
    for r in r0..r1 {
        for c in c0..c1 {
            g.set(c, r, Cell::Occupied);
        }
    }
}

pub fn walled(width_m: f64, height_m: f64) -> OccupancyGrid {
    let (w, h) = ((width_m / RES).round() as usize, (height_m / RES).round() as usize);
    let mut g = OccupancyGrid::filled(w, h, RES, Transform2D::IDENTITY, Cell::Free).unwrap();
    fill_rect(&mut g, 0.0, 0.0, width_m, 0.1);
    fill_rect(&mut g, 0.0, height_m - 0.1, width_m, height_m);
    fill_rect(&mut g, 0.0, 0.0, 0.1, height_m);
    fill_rect(&mut g, width_m - 0.1, 0.0, width_m, height_m);
    g
}

/// 10 x 10 m room with interior walls, furniture and wall alcoves, none of
/// it symmetric. The corridor 0.5 to 1.5 m from the outer walls is clear.
pub fn arena() -> OccupancyGrid {
    let mut g = walled(10.0, 10.0);
    for (x0, y0, x1, y1) in [
        (2.0, 3.0, 2.2, 8.0),
        (4.0, 7.3, 8.0, 7.5),
        (6.5, 2.0, 7.0, 4.0),
        (4.4, 4.4, 4.7, 4.7),
        (3.5, 2.2, 4.0, 2.5),
        (5.0, 5.5, 6.0, 6.0),
        (7.8, 4.5, 8.0, 6.0),
        (3.0, 5.0, 3.6, 5.3),
        (4.0, 0.1, 4.2, 0.5),
        (6.0, 0.1, 7.5, 0.4),
        (9.5, 6.0, 9.9, 6.2),
        (9.6, 3.0, 9.9, 4.5),
        (2.5, 9.6, 2.7, 9.9),
        (5.0, 9.5, 5.3, 9.9),
        (0.1, 4.0, 0.5, 4.3),
        (0.1, 7.0, 0.4, 8.0),
    ] {
        fill_rect(&mut g, x0, y0, x1, y1);
    }
    g
}

pub fn sensor() -> SensorSpec {
    SensorSpec::default()
}

pub fn config() -> Config {
    Config {
        map: MapPaths {
            image: PathBuf::from("unused.pgm"),
            metadata: PathBuf::from("unused.yaml"),
        },
        seed: 0,
        laser: sensor(),
        filter: Default::default(),
        matcher: Default::default(),
        multihyp: Default::default(),
        evaluation: EvaluationParams::default(),
    }
}

/// Settings used by the closed-loop acceptance runs: defaults with a
/// tighter spread for hypotheses spawned from matches.
pub fn tuned_config() -> Config {
    let mut c = config();
    c.multihyp.spawn_std = [0.05, 0.05, 0.1];
    c
}

/// Bordered square map with random rectangles until `min_occupied` of the
/// cells are Occupied.
pub fn random_map(rng: &mut ChaCha8Rng, size: usize, min_occupied: f64) -> OccupancyGrid {
    let mut g = OccupancyGrid::filled(size, size, RES, Transform2D::IDENTITY, Cell::Free).unwrap();
    for i in 0..size {
        g.set(i, 0, Cell::Occupied);
        g.set(i, size - 1, Cell::Occupied);
        g.set(0, i, Cell::Occupied);
        g.set(size - 1, i, Cell::Occupied);
    }
    while (g.count(Cell::Occupied) as f64) < min_occupied * (size * size) as f64 {
        let (w, h) = (rng.random_range(1..8), rng.random_range(1..8));
        let (c0, r0) = (rng.random_range(0..size - w), rng.random_range(0..size - h));
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                g.set(c, r, Cell::Occupied);
            }
        }
    }
    g
}

pub fn free_cells(g: &OccupancyGrid) -> Vec<(usize, usize)> {
    (0..g.height())
        .flat_map(|r| (0..g.width()).map(move |c| (c, r)))
        .filter(|&(c, r)| g.get(c, r) == Cell::Free)
        .collect()
}

/// Noise-free full-circle scan by plain ray casting.
pub fn scan_from(grid: &OccupancyGrid, pose: &Transform2D, beams: usize) -> LaserScan {
    let inc = 2.0 * PI / beams as f64;
    LaserScan {
        stamp: 0.0,
        angle_min: -PI,
        angle_increment: inc,
        range_max: 10.0,
        ranges: (0..beams)
            .map(|j| grid.cast_ray(pose, -PI + j as f64 * inc, 10.0).unwrap_or(10.0))
            .collect(),
    }
}

pub fn matcher_sensor() -> SensorModelParams {
    SensorModelParams {
        sigma: 0.05,
        hit_threshold_factor: 2.0,
        max_usable_range: 10.0,
        beam_stride: 1,
    }
}

/// Best level-0 score over every Free cell and orientation, and the number
/// of poses scored.
pub fn exhaustive_best(grid: &OccupancyGrid, scan: &LaserScan, sensor: &SensorModelParams) -> (f64, usize) {
    let sigma = sigma_for_level(grid, sensor.sigma);
    let mut best = f64::NEG_INFINITY;
    let mut evals = 0;
    for (col, row) in free_cells(grid) {
        let (x, y) = grid.cell_to_world(col, row);
        for k in 0..ORIENTATIONS {
            let pose = Transform2D::new(x, y, orientation(k));
            best = best.max(score_pose(grid, scan, &pose, &Transform2D::IDENTITY, sigma, sensor));
            evals += 1;
        }
    }
    (best, evals)
}

fn pose_wp(t: f64, x: f64, y: f64, yaw: f64) -> Waypoint {
    Waypoint {
        t,
        motion: Motion::Pose([x, y, yaw]),
    }
}

/// Laps of the outer corridor: straight legs at `speed`, 90 degree turns in
/// place taking 2 s, until `duration`.
pub fn loop_waypoints(duration: f64, speed: f64) -> Vec<Waypoint> {
    let corners = [(1.0, 1.0), (9.0, 1.0), (9.0, 9.0), (1.0, 9.0)];
    let mut wps = vec![pose_wp(0.0, 1.0, 1.0, 0.0)];
    let mut t = 0.0;
    let mut i = 0;
    while t < duration {
        let heading = (i % 4) as f64 * FRAC_PI_2;
        let (x, y) = corners[(i + 1) % 4];
        t += 8.0 / speed;
        wps.push(pose_wp(t, x, y, heading));
        t += 2.0;
        wps.push(pose_wp(t, x, y, heading + FRAC_PI_2));
        i += 1;
    }
    wps
}

pub fn tracking_script(seed: u64) -> ScenarioScript {
    ScenarioScript {
        duration: 120.0,
        waypoints: loop_waypoints(120.0, 0.4),
        kidnaps: vec![],
        odom_noise: MotionNoiseParams {
            trans_per_trans: 0.02,
            trans_per_rot: 0.0,
            rot_per_rot: 0.02,
            rot_per_trans: 0.0,
        },
        odom_hz: 100.0,
        scan_hz: 10.0,
        seed,
    }
}

pub const KIDNAP_AT: f64 = 30.0;

/// Free poses with at least `clearance` to the nearest non-Free cell.
pub fn clear_pose(g: &OccupancyGrid, rng: &mut ChaCha8Rng, clearance: f64) -> Transform2D {
    let reach = (clearance / RES).ceil() as i64;
    loop {
        let x = rng.random_range(0.5..g.width() as f64 * RES - 0.5);
        let y = rng.random_range(0.5..g.height() as f64 * RES - 0.5);
        let (c, r) = g.world_to_cell_signed(x, y);
        let clear = (-reach..=reach).all(|dr| (-reach..=reach).all(|dc| g.get_signed(c + dc, r + dr) == Cell::Free));
        if clear {
            return Transform2D::new(x, y, rng.random_range(-PI..PI));
        }
    }
}

/// Drives the corridor (pausing after the last full leg) until the kidnap,
/// then turns in place so the motion after the teleport stays collision free
/// wherever it lands.
pub fn kidnap_script(target: Transform2D, seed: u64) -> ScenarioScript {
    let mut waypoints: Vec<Waypoint> = loop_waypoints(KIDNAP_AT, 0.4)
        .into_iter()
        .filter(|w| w.t < KIDNAP_AT)
        .collect();
    waypoints.push(Waypoint {
        t: KIDNAP_AT,
        motion: Motion::Velocity([0.0, 0.25]),
    });
    ScenarioScript {
        duration: KIDNAP_AT + 35.0,
        waypoints,
        kidnaps: vec![Kidnap {
            t: KIDNAP_AT,
            pose: [target.x, target.y, target.yaw],
        }],
        odom_noise: MotionNoiseParams {
            trans_per_trans: 0.02,
            trans_per_rot: 0.0,
            rot_per_rot: 0.02,
            rot_per_trans: 0.0,
        },
        odom_hz: 100.0,
        scan_hz: 10.0,
        seed,
    }
}

pub struct Outcome {
    pub log: RunLog,
    pub estimates: RunLog,
    pub output: RunOutput,
    pub series: ErrorSeries,
    pub summary: Summary,
}

pub fn run_localizer(config: &Config, pyramid: &GridPyramid, log: &RunLog, options: &LocalizeOptions) -> Outcome {
    let (estimates, output) = localize(config, pyramid, log, options).unwrap();
    let (series, summary) = bench(&estimates, log, Some(&output.cpu), &config.evaluation).unwrap();
    Outcome {
        log: log.clone(),
        estimates,
        output,
        series,
        summary,
    }
}

pub fn simulate_on(grid: &OccupancyGrid, script: &ScenarioScript) -> RunLog {
    simulate(grid, script, &sensor()).unwrap()
}
