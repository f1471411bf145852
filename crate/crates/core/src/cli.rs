//! The four commands behind the binary. Each has a pure core usable from
//! tests and a `cmd_*` wrapper that handles files and exit codes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::{load_scenario, Config, EvaluationParams};
use crate::error::Error;
use crate::geometry::Transform2D;
use crate::gridmap::GridPyramid;
use crate::matcher::{cascade_match, MatchResult};
use crate::metrics::{trajectory_error, ErrorSeries, Summary, CSV_HEADER};
use crate::multihyp::{run, Environment, HypothesisSet, Inputs, RunOutput};
use crate::rng::{stream, Stream};
use crate::runlog::{Record, RunLog};
use crate::sim::simulate;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// A failed command: exit code plus the diagnostic to print.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(e: impl ToString) -> Self {
        Self {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }

    pub fn runtime(e: impl ToString) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Parses `"x y yaw"`; commas are accepted as separators too.
pub fn parse_pose(text: &str) -> Result<Transform2D, String> {
    let parts: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [x, y, yaw] if parts.iter().all(|v| v.is_finite()) => Ok(Transform2D::new(x, y, yaw)),
        _ => Err(format!("expected \"x y yaw\", got {text:?}")),
    }
}

pub fn timing_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".timing.csv");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LocalizeOptions {
    pub initial_pose: Option<Transform2D>,
    pub single_hypothesis: bool,
    pub seed: Option<u64>,
}

/// Replays `input` through the scheduler. Returns the estimate/stall log and
/// the raw run output (phase counts, timing).
pub fn localize(
    config: &Config,
    pyramid: &GridPyramid,
    input: &RunLog,
    options: &LocalizeOptions,
) -> crate::Result<(RunLog, RunOutput)> {
    let scans = input.scans();
    if scans.is_empty() {
        return Err(Error::InvalidState("input log has no scan records"));
    }
    let odom = input.odometry()?;
    let (t_start, _) = odom
        .span()
        .ok_or(Error::InvalidState("input log has no odometry records"))?;
    let seed = options.seed.unwrap_or(config.seed);
    let mut params = config.multihyp;
    params.single_hypothesis |= options.single_hypothesis;
    let mut hs = HypothesisSet::start(
        options.initial_pose,
        t_start,
        params,
        config.filter,
        &mut stream(seed, Stream::Init),
    )?;
    let env = Environment {
        pyramid,
        base_to_laser: config.laser.mount,
        matcher: config.matcher,
        seed,
    };
    let output = run(
        &mut hs,
        &Inputs {
            odom: &odom,
            scans: &scans,
        },
        &env,
    )?;
    let estimates = RunLog {
        records: output.estimates.iter().map(Record::estimate).collect(),
    };
    let stalls = RunLog {
        records: output.stalls.iter().map(Record::stall).collect(),
    };
    Ok((estimates.merge(stalls), output))
}

/// Candidates for the newest scan stamped at or before `time`.
pub fn match_at(config: &Config, pyramid: &GridPyramid, input: &RunLog, time: f64) -> crate::Result<MatchResult> {
    let scans = input.scans();
    let scan = scans
        .iter()
        .rev()
        .find(|s| s.stamp <= time + 1e-9)
        .ok_or_else(|| Error::Scenario(format!("no scan at or before t = {time}")))?;
    cascade_match(
        pyramid,
        scan,
        &config.laser.mount,
        &config.matcher,
        &config.filter.sensor,
    )
}

pub fn write_candidates<W: Write>(result: &MatchResult, mut out: W) -> std::io::Result<()> {
    writeln!(out, "rank,x,y,yaw,score,level")?;
    for (i, c) in result.candidates.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i + 1,
            c.pose.x,
            c.pose.y,
            c.pose.yaw,
            c.score,
            c.level
        )?;
    }
    out.flush()
}

/// Error series and summary of an estimate log against a ground-truth log.
pub fn bench(
    estimates: &RunLog,
    truth: &RunLog,
    cpu: Option<&[(f64, f64)]>,
    eval: &EvaluationParams,
) -> crate::Result<(ErrorSeries, Summary)> {
    let gt = truth.ground_truth()?;
    if gt.is_empty() {
        return Err(Error::InvalidState("no ground truth records"));
    }
    let (series, stats) = trajectory_error(&estimates.estimates(), gt.records(), cpu)?;
    let summary = Summary::new(&series, &stats, eval.recovery_threshold, eval.recovery_hold);
    Ok((series, summary))
}

fn read_timing(path: &Path) -> CmdResult<Option<Vec<(f64, f64)>>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(Error::io(path, e)))?;
    let rows = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (t, s) = l.split_once(',')?;
            Some((t.trim().parse().ok()?, s.trim().parse().ok()?))
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Failure::usage(format!("{}: malformed timing row", path.display())))?;
    Ok(Some(rows))
}

fn create(path: &Path) -> CmdResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::runtime(Error::io(path, e)))
}

pub fn cmd_simulate(config_path: &Path, scenario_path: &Path, out: &Path, seed: Option<u64>) -> CmdResult {
    let config = Config::load(config_path).map_err(Failure::usage)?;
    let mut scenario = load_scenario(scenario_path).map_err(Failure::usage)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let grid = config.load_grid().map_err(Failure::usage)?;
    let log = simulate(&grid, &scenario, &config.laser).map_err(Failure::runtime)?;
    log.write(out).map_err(Failure::runtime)?;
    log::info!("wrote {} records to {}", log.records.len(), out.display());
    Ok(())
}

pub fn cmd_localize(config_path: &Path, input: &Path, out: &Path, options: &LocalizeOptions) -> CmdResult {
    let config = Config::load(config_path).map_err(Failure::usage)?;
    let pyramid = config.load_pyramid().map_err(Failure::usage)?;
    let log = RunLog::read(input).map_err(Failure::usage)?;
    let (estimates, output) = localize(&config, &pyramid, &log, options).map_err(Failure::runtime)?;
    estimates.write(out).map_err(Failure::runtime)?;

    // wall-clock timing varies run to run, so it stays out of the log
    let timing = timing_path(out);
    let mut w = create(&timing)?;
    let io = |e| Failure::runtime(Error::io(&timing, e));
    writeln!(w, "t,cpu_s").map_err(io)?;
    for (t, s) in &output.cpu {
        writeln!(w, "{t},{s}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    let c = output.counts;
    log::info!(
        "{} estimates; phases: predict {} correct {} reseed {} match {}",
        output.estimates.len(),
        c.predict,
        c.correct,
        c.reseed,
        c.matching
    );
    Ok(())
}

pub fn cmd_match(config_path: &Path, input: &Path, time: f64, out: Option<&Path>) -> CmdResult {
    let config = Config::load(config_path).map_err(Failure::usage)?;
    let pyramid = config.load_pyramid().map_err(Failure::usage)?;
    let log = RunLog::read(input).map_err(Failure::usage)?;
    let result = match_at(&config, &pyramid, &log, time).map_err(Failure::runtime)?;
    match out {
        Some(path) => write_candidates(&result, create(path)?),
        None => write_candidates(&result, std::io::stdout().lock()),
    }
    .map_err(Failure::runtime)
}

pub fn cmd_bench(config_path: &Path, est: &Path, gt: &Path, out_dir: &Path) -> CmdResult {
    let config = Config::load(config_path).map_err(Failure::usage)?;
    let estimates = RunLog::read(est).map_err(Failure::usage)?;
    let truth = RunLog::read(gt).map_err(Failure::usage)?;
    let cpu = read_timing(&timing_path(est))?;
    let (series, summary) = bench(&estimates, &truth, cpu.as_deref(), &config.evaluation).map_err(Failure::runtime)?;

    fs::create_dir_all(out_dir).map_err(|e| Failure::runtime(Error::io(out_dir, e)))?;
    let csv = out_dir.join("errors.csv");
    series
        .write_csv(create(&csv)?)
        .map_err(|e| Failure::runtime(Error::io(&csv, e)))?;
    let json = out_dir.join("summary.json");
    let mut w = create(&json)?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(Failure::runtime)?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| Failure::runtime(Error::io(&json, e)))?;
    log::info!(
        "{} samples ({CSV_HEADER}); mean {:.4} m, median {:.4} m",
        summary.samples,
        summary.mean,
        summary.median
    );
    Ok(())
}
