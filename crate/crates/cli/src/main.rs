//! `bac`: simulate a multi-IMU rig, calibrate it, evaluate fusion methods
//! track by track and consolidate the results into plot-ready tables.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bac_core::calibration::CalibrationFile;
use bac_core::dataset_io::{self, ToolConfig};
use bac_core::experiment::{calibrate_dataset, run_experiment, ExperimentReport, Method, ReportSummary};
use bac_core::simulator::{generate_trajectory, simulate_rig, TrajectorySpec};
use bac_core::{Error, ErrorClass};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "bac", version, about = "Multi-IMU fusion by best axes composition")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ToolConfig, Error> {
        match &self.config {
            Some(p) => ToolConfig::load(p),
            None => Ok(ToolConfig::default()),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Profile {
    /// Evaluation tracks (trajectory settings from the config).
    Track,
    /// High-excitation motion for Stage I.
    Calibration,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a rig and write a dataset directory.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Seeds both the trajectory and the sensor noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Length in seconds (defaults to the config's trajectory duration).
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, value_enum, default_value_t = Profile::Track)]
        profile: Profile,
        #[arg(long)]
        output: PathBuf,
    },
    /// Stage I calibration of a dataset.
    Calibrate {
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        /// Calibration JSON to write.
        #[arg(long)]
        output: PathBuf,
        /// Also write the per-iteration cost as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate one method on every track and write a report fragment.
    Run {
        dataset: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// ave, bac, bac2 or single:<i>.
        #[arg(long)]
        method: String,
    },
    /// Like `run` for AVE, BAC, BAC-2 and every single IMU.
    Evaluate {
        dataset: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Merge report fragments into ratio, utilization and error tables.
    Report {
        #[arg(required = true)]
        fragments: Vec<PathBuf>,
        /// Directory for the CSV tables and summary.json.
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the default configuration as TOML.
    PrintDefaultConfig,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Calibration JSON from `calibrate`.
    #[arg(long)]
    calibration: PathBuf,
    /// Selection window in IMU samples.
    #[arg(long)]
    window_p: Option<usize>,
    /// Evaluate only the first N tracks.
    #[arg(long)]
    tracks: Option<usize>,
    /// Report fragment JSON to write.
    #[arg(long)]
    output: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn simulate(config: &ConfigArg, seed: u64, duration: Option<f64>, profile: Profile, output: &Path) -> Result<(), Error> {
    let cfg = config.load()?;
    let duration = duration.unwrap_or(cfg.trajectory.duration);
    let spec = match profile {
        Profile::Track => TrajectorySpec {
            duration,
            seed,
            ..cfg.trajectory.clone()
        },
        Profile::Calibration => TrajectorySpec::calibration(duration, seed),
    };
    let traj = generate_trajectory(&spec)?;
    let dataset = simulate_rig(&traj, &cfg.rig, seed)?;
    let manifest = dataset_io::write_dataset(&dataset, output)?;
    println!(
        "wrote {} IMUs x {} samples at {} Hz, {} Master poses at {} Hz to {}",
        manifest.imu_files.len(),
        manifest.ground_truth_file.rows,
        cfg.rig.imu_rate,
        manifest.master_file.rows,
        cfg.rig.master_rate,
        output.display()
    );
    Ok(())
}

fn calibrate(dataset: &Path, config: &ConfigArg, output: &Path, report: Option<&Path>) -> Result<(), Error> {
    let cfg = config.load()?;
    let data = dataset_io::read_dataset(dataset)?;
    let estimate = calibrate_dataset(&data, &cfg.cost_config(&data.rig))?;
    let file = CalibrationFile::from_estimate(&estimate);
    dataset_io::write_calibration(output, &file)?;
    if let Some(path) = report {
        let mut csv = String::from("iteration,cost,gradient_norm,step\n");
        for r in &estimate.report.history {
            writeln!(csv, "{},{:.16e},{:.16e},{:.16e}", r.iteration, r.cost, r.gradient_norm, r.step).unwrap();
        }
        std::fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    }
    let r = &estimate.report;
    println!(
        "stage I: {} iterations ({:?}), cost {:.6e} -> {:.6e}",
        r.iterations, r.termination, r.initial_cost, r.final_cost
    );
    if estimate.excitation_warning {
        println!("warning: weak rotational excitation, calibration may be poorly identified");
    }
    Ok(())
}

fn run(dataset: &Path, args: &RunArgs, methods: &[Method]) -> Result<(), Error> {
    let cfg = args.config.load()?;
    let mut exp = cfg.experiment.clone();
    if let Some(p) = args.window_p {
        exp.window_p = p;
    }
    if let Some(n) = args.tracks {
        exp.max_tracks = Some(n);
    }
    let data = dataset_io::read_dataset(dataset)?;
    let calibration = dataset_io::read_calibration(&args.calibration)?.calibration()?;
    let report = run_experiment(&data, &calibration, methods, &exp)?;
    dataset_io::write_report(&args.output, &report)?;
    let tracks = report.methods.first().map_or(0, |m| m.tracks.len());
    println!("evaluated {} method(s) on {tracks} track(s), wrote {}", methods.len(), args.output.display());
    Ok(())
}

fn print_summary(s: &ReportSummary) {
    println!("{:<10} {:>6} {:>10} {:>10} {:>10} {:>10} {:>12} {:>12}", "method", "tracks", "ori@0.2s", "ori@1s", "pos@0.2s", "pos@1s", "ori cross", "pos cross");
    let cross = |c: Option<f64>| c.map_or("-".to_string(), |h| format!("{h:.3} s"));
    for m in &s.methods {
        println!(
            "{:<10} {:>6} {:>9.1}% {:>9.1}% {:>9.1}% {:>9.1}% {:>12} {:>12}",
            m.method,
            m.tracks,
            m.orientation_ratio_0_2s,
            m.orientation_ratio_1s,
            m.position_ratio_0_2s,
            m.position_ratio_1s,
            cross(m.orientation_crossover),
            cross(m.position_crossover)
        );
    }
}

fn report(fragments: &[PathBuf], output: &Path) -> Result<(), Error> {
    let parts = fragments.iter().map(|p| dataset_io::read_report(p)).collect::<Result<Vec<_>, _>>()?;
    let merged = ExperimentReport::merge(parts)?;
    let summary = dataset_io::write_report_tables(&merged, output)?;
    println!("median error ratio to AVE (percent, lower is better):");
    print_summary(&summary);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            duration,
            profile,
            output,
        } => simulate(&config, seed, duration, profile, &output),
        Command::Calibrate {
            dataset,
            config,
            output,
            report,
        } => calibrate(&dataset, &config, &output, report.as_deref()),
        Command::Run { dataset, run: args, method } => {
            let method: Method = method.parse()?;
            run(&dataset, &args, &[method])
        }
        Command::Evaluate { dataset, run: args } => {
            let imus = dataset_io::read_manifest(&dataset)?.imu_files.len();
            run(&dataset, &args, &Method::all(imus))
        }
        Command::Report { fragments, output } => report(&fragments, &output),
        Command::PrintDefaultConfig => {
            print!("{}", ToolConfig::default().to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
