use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use discocal_cli::config::SEED_ENV;
use discocal_cli::{cmd_calibrate, cmd_detect, cmd_mc, cmd_synth, cmd_uncmap, CliError, RunConfig};

/// Circle-grid camera calibration with centroid uncertainty.
#[derive(Debug, Parser)]
#[command(name = "discocal", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Seed; overrides the file and the DISCOCAL_SEED variable.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Configuration override as a dotted key, e.g. `detect.sigma=1.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, short, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect the target in every image of a directory.
    Detect {
        images: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Calibrate from every image of a directory.
    Calibrate {
        images: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Uncertainty map of a calibration report.
    Uncmap {
        report: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Render a synthetic dataset with ground truth.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Monte-Carlo calibration study on a synthetic dataset.
    Mc {
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = RunConfig::load(cli.config.as_deref(), env_seed.as_deref(), &overrides)?;
    match cli.command {
        Command::Detect { images, out } => {
            let s = cmd_detect(&images, &out, &cfg)?;
            for img in s.images.iter().filter(|i| !i.detected) {
                eprintln!("warning: {}: {}", img.file, img.error.as_deref().unwrap_or("not detected"));
            }
            println!("{} detected, {} failed", s.detected, s.failed);
        }
        Command::Calibrate { images, out } => {
            let r = cmd_calibrate(&images, &out, &cfg)?;
            for img in &r.failed {
                eprintln!("warning: {}: {}", img.file, img.error.as_deref().unwrap_or("not detected"));
            }
            for ((name, v), s) in r.param_names.iter().zip(intrinsic_values(&r)).zip(&r.param_std) {
                println!("{name} = {v:.6} +/- {s:.6}");
            }
            println!("rms = {:.4} px over {} views", r.rms_reproj, r.views.len());
        }
        Command::Uncmap { report, out } => {
            let a = cmd_uncmap(&report, &out, &cfg)?;
            println!(
                "mean {:.6} px, range [{:.6}, {:.6}] px, coverage {:.4}",
                a.sidecar.mean, a.sidecar.min, a.sidecar.max, a.report.coverage
            );
        }
        Command::Synth { out } => {
            let gt = cmd_synth(&out, &cfg)?;
            println!("{} images written to {}", gt.images.len(), out.display());
        }
        Command::Mc { out } => {
            let a = cmd_mc(&out, &cfg)?;
            println!("{} detected, {} failed", a.detection.detected, a.detection.failed);
            for arm in &a.arms {
                let cells: Vec<String> = arm
                    .names
                    .iter()
                    .zip(arm.mean.iter().zip(&arm.std))
                    .map(|(n, (m, s))| format!("{n} {m:.4}+/-{s:.4}"))
                    .collect();
                println!("{:?}: {} ({} failed)", arm.arm, cells.join(", "), arm.failures);
            }
        }
    }
    Ok(())
}

fn intrinsic_values(r: &discocal_cli::report::CalibrationReport) -> Vec<f64> {
    let k = &r.intrinsics;
    let mut v = vec![k.fx, k.fy, k.cx, k.cy];
    if r.param_names.iter().any(|n| n == "eta") {
        v.push(k.eta);
    }
    v.extend_from_slice(&r.distortion);
    v
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
