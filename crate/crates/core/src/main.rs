use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stochgradadam::runner::config::hex;
use stochgradadam::runner::{
    load_checkpoint, run_experiment_from, run_sweep, run_verify, ConfigError, ExperimentConfig, RunError,
};

#[derive(Parser)]
#[command(name = "stochgradadam", version, about = "StochGradAdam experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir`
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics, summary and checkpoints
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by the same configuration
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// One run per sampling rate in `sweep.s_values`
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Numerical checks of the convergence analysis
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Print the header and tensor table of a checkpoint
    InspectCheckpoint { path: PathBuf },
}

fn load(common: &Common) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cmd: Command) -> Result<(), RunError> {
    match cmd {
        Command::Train { common, resume } => {
            let cfg = load(&common)?;
            let ck = match &resume {
                Some(p) => Some(load_checkpoint(p, Some(&cfg.trajectory_hash()))?),
                None => None,
            };
            let outcome = run_experiment_from(&cfg, ck.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("summary serializes"));
        }
        Command::Sweep { common } => {
            let cfg = load(&common)?;
            let outcome = run_sweep(&cfg, &cfg.sweep.s_values)?;
            print!("{}", stochgradadam::runner::sweep::comparison_csv(&outcome.comparison));
        }
        Command::Verify { common } => {
            let cfg = load(&common)?;
            let report = run_verify(&cfg)?;
            println!("check,instances,passed,failed");
            for t in report.tallies() {
                println!("{},{},{},{}", t.check, t.instances, t.passed, t.instances - t.passed);
            }
        }
        Command::InspectCheckpoint { path } => {
            let ck = load_checkpoint(&path, None)?;
            let m = &ck.meta;
            println!("config_hash  {}", hex(&ck.config_hash));
            println!("t            {}", m.t);
            println!("epoch        {}", m.epoch);
            println!("global_step  {}", m.global_step);
            println!("h_untrained  {}", m.untrained_entropy);
            println!("h_first      {}", m.first_epoch_entropy);
            println!("rng_states   {:?}", ck.rng_states);
            for (name, t) in &ck.tensors {
                println!("{name:<12} {:?} l2={}", t.shape(), t.l2_norm());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
