//! `higs`: experiment runner for the higs-control toolkit.

mod artifacts;
mod config;
mod error;
mod experiments;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use artifacts::Artifacts;
use config::ExperimentConfig;
use error::{CliError, CliResult};

/// Environment variable giving the default output directory.
const OUT_DIR_ENV: &str = "HIGS_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "higs",
    version,
    about = "Simulation and certification experiments for hybrid integrator-gain control of lightly damped plants"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory (overrides the config and HIGS_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override for every randomized component.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Time-domain run: a step-disturbance or Lyapunov-monitor experiment.
    Simulate(RunArgs),
    /// Stepped-sine frequency-response estimation.
    Frf(RunArgs),
    /// Frequency-sweep negative-imaginary test.
    NiCheck(RunArgs),
    /// Storage-matrix certificate search.
    Certify(RunArgs),
    /// Describing-function sweep.
    Df(RunArgs),
    /// Bimodal-vs-trimodal control-noise comparison.
    NoiseStudy(RunArgs),
    /// Run the bundled experiment suite on the built-in force-sensor
    /// model and write a pass/fail summary.
    ReproducePaper(CommonArgs),
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // ignore failure: the global pool can only be set once
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

fn resolve_out_dir(flag: &Option<PathBuf>, cfg: Option<&PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| cfg.cloned())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("./higs-out"))
}

fn allowed_kinds(cmd: &Command) -> &'static [&'static str] {
    match cmd {
        Command::Simulate(_) => &["step", "lyapunov"],
        Command::Frf(_) => &["frf"],
        Command::NiCheck(_) => &["ni-check"],
        Command::Certify(_) => &["certify"],
        Command::Df(_) => &["df"],
        Command::NoiseStudy(_) => &["noise-study"],
        Command::ReproducePaper(_) => &[],
    }
}

fn run_config_command(cmd: &Command, args: &RunArgs) -> CliResult<()> {
    init_threads(args.common.threads);
    let raw = std::fs::read(&args.config)?;
    let text = String::from_utf8(raw.clone())
        .map_err(|_| CliError::schema("", "config is not valid UTF-8"))?;
    let cfg = ExperimentConfig::from_json_str(&text)?;

    let kinds = allowed_kinds(cmd);
    if !kinds.contains(&cfg.experiment.kind()) {
        return Err(CliError::schema(
            "experiment.kind",
            &format!(
                "kind {:?} does not match this subcommand (expected one of {kinds:?})",
                cfg.experiment.kind()
            ),
        ));
    }

    let out_dir = resolve_out_dir(&args.common.out, cfg.out_dir.as_ref());
    let seed = args.common.seed.unwrap_or(cfg.seed);
    let mut art = Artifacts::create(&out_dir, &raw)?;
    let summary = experiments::run_experiment(&cfg, seed, &mut art)?;
    println!(
        "{} -> {} [{}] (config {}) {}",
        cfg.experiment.kind(),
        out_dir.display(),
        art.written().join(", "),
        &art.config_sha256()[..12],
        summary
    );
    Ok(())
}

fn run_reproduce(common: &CommonArgs) -> CliResult<()> {
    init_threads(common.threads);
    let seed = common.seed.unwrap_or(0);
    let out_dir = resolve_out_dir(&common.out, None);
    let settings = reproduce::canonical_settings(seed);
    let mut art = Artifacts::create(&out_dir, &settings)?;
    let summary = reproduce::run(&mut art, seed)?;
    let all_passed = summary["all_passed"].as_bool().unwrap_or(false);
    for check in summary["checks"].as_array().into_iter().flatten() {
        println!(
            "{:<40} {}",
            check["name"].as_str().unwrap_or("?"),
            if check["passed"].as_bool().unwrap_or(false) {
                "PASS"
            } else {
                "FAIL"
            }
        );
    }
    println!(
        "suite {} -> {} [{}]",
        if all_passed { "PASS" } else { "FAIL" },
        out_dir.display(),
        art.written().join(", ")
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::ReproducePaper(common) => run_reproduce(common),
        cmd => {
            let args = match cmd {
                Command::Simulate(a)
                | Command::Frf(a)
                | Command::NiCheck(a)
                | Command::Certify(a)
                | Command::Df(a)
                | Command::NoiseStudy(a) => a,
                Command::ReproducePaper(_) => unreachable!(),
            };
            run_config_command(cmd, args)
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::to_string(&e.record())
                .unwrap_or_else(|_| format!("{{\"message\": \"{e}\"}}"));
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
