use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mh_amcl::cli::{self, parse_pose, Failure, LocalizeOptions, EXIT_USAGE};
use mh_amcl::geometry::Transform2D;

#[derive(Parser)]
#[command(
    name = "mh-amcl",
    version,
    about = "Multi-hypothesis Monte Carlo localization on 2D occupancy grids"
)]
struct Args {
    /// JSON configuration (map, filter, matcher and scheduler parameters).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed from the configuration or scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulates a scenario and writes odometry, scans and ground truth.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replays a log through the localizer and writes estimate records.
    Localize {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Known start pose, "x y yaw".
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        initial_pose: Option<Transform2D>,
        /// At most one hypothesis; matching only seeds it while none exists.
        #[arg(long)]
        single_hypothesis: bool,
    },
    /// Prints ranked map-matching candidates for one scan as CSV.
    Match {
        #[arg(long)]
        log: PathBuf,
        /// Uses the newest scan stamped at or before this time.
        #[arg(long)]
        time: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compares estimates with ground truth; writes errors.csv and summary.json.
    Bench {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(args: Args) -> Result<(), Failure> {
    let config = args
        .config
        .ok_or_else(|| Failure::usage("--config <path> is required"))?;
    match args.command {
        Command::Simulate { scenario, out } => cli::cmd_simulate(&config, &scenario, &out, args.seed),
        Command::Localize {
            log,
            out,
            initial_pose,
            single_hypothesis,
        } => {
            let options = LocalizeOptions {
                initial_pose,
                single_hypothesis,
                seed: args.seed,
            };
            cli::cmd_localize(&config, &log, &out, &options)
        }
        Command::Match { log, time, out } => cli::cmd_match(&config, &log, time, out.as_deref()),
        Command::Bench { est, gt, out } => cli::cmd_bench(&config, &est, &gt, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match dispatch(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
