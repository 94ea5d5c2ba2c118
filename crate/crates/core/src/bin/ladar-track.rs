use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use ladar_track::cli::{builtin_scenario_names, load_tracker_config, run_eval, run_simulate, run_track};
use ladar_track::Error;

#[derive(Parser)]
#[command(name = "ladar-track", version, about = "Vehicle tracking from simulated 2D LADAR scans")]
struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scenario to a scan log.
    Simulate {
        /// Scenario file, or the name of a bundled scenario
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the scenario seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track a scan log and score it against any truth it carries.
    Track {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        tracker_config: Option<PathBuf>,
        /// Overrides the tracker RANSAC seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate a scenario and track it.
    Eval {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        tracker_config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> ladar_track::Result<()> {
    match cli.command {
        Command::Simulate { scenario, out, seed } => {
            let path = run_simulate(&scenario, seed, &out)?;
            println!("{}", path.display());
        }
        Command::Track { log, out, tracker_config, seed } => {
            let mut cfg = load_tracker_config(tracker_config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let res = run_track(&log, &cfg, &out)?;
            println!("{} frames -> {}, {}", res.frames, res.tracks_path.display(), res.metrics_path.display());
        }
        Command::Eval { scenario, out, tracker_config, seed } => {
            let mut cfg = load_tracker_config(tracker_config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let res = run_eval(&scenario, seed, &cfg, &out)?;
            for o in &res.metrics.objects {
                println!(
                    "object {:>2} {:?}: continuity {:5.1}%  position rmse {:.3} m  1 s prediction error {:.3} m",
                    o.object_id,
                    o.kind,
                    o.continuity,
                    o.position_rmse,
                    o.prediction_error.last().copied().unwrap_or(f64::NAN)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            if code == 1 {
                eprintln!("bundled scenarios: {}", builtin_scenario_names().collect::<Vec<_>>().join(", "));
            }
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
