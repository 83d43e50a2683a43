use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dybw::config::ExperimentConfig;
use dybw::experiment::{self, OutputOptions};
use dybw::Error;

#[derive(Parser)]
#[command(name = "dybw", version, about = "Decentralized SGD with dynamic backup workers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured strategy once per replication.
    Simulate(RunArgs),
    /// Run full, static-p and DTUR on the same seeds and delay draws.
    Compare(RunArgs),
    /// Short DTUR run verifying the mixing and connectivity assumptions.
    Check(CheckArgs),
    /// Print a default configuration.
    GenConfig {
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// key.path=value, parsed as JSON when possible. Repeatable.
    #[arg(long = "override", value_name = "K=V")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        ExperimentConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replications run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write per-iteration compute times.
    #[arg(long)]
    log_delays: bool,
    /// Write per-iteration participation plans as JSON lines.
    #[arg(long)]
    log_plans: bool,
    /// Write every mixing matrix.
    #[arg(long)]
    dump_matrices: bool,
}

impl RunArgs {
    fn options(&self) -> OutputOptions {
        OutputOptions {
            log_delays: self.log_delays,
            log_plans: self.log_plans,
            dump_matrices: self.dump_matrices,
        }
    }
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Drop one direction of an active link (tests the failure path).
    #[arg(long, hide = true)]
    inject_asymmetry: bool,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    args.load()
        .map_err(|e| Failure::Validation(format!("{}: {e}", args.config.display())))
}

fn gen_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default_synthetic();
    cfg.comment = Some(serde_json::json!([
        "graph.kind: ring | path | complete (with n), random (n, p, seed), explicit (n, edges)",
        "dataset.kind: synth (n_examples, dim, n_classes, n_test, seed) or idx (images, labels, limit, test_images, test_labels, test_limit)",
        "partition.mode: iid or label_skew (s classes per worker)",
        "strategy: full | static_p | dtur; static_p takes an optional per-worker list, default ceil(degree / 2)",
        "delay.kind: exponential (rate), shifted_exponential (shift, rate), lognormal (mu, sigma), fixed_heterogeneous (means, jitter)",
        "eta: eta0 * delta^k (mode geometric) or eta0 (mode constant)",
        "straggler_applies_local: idle workers keep their local step instead of discarding it",
        "replications r run seeds seed, seed + 1, ..., seed + r - 1",
    ]));
    cfg
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = load(&args.config)?;
            let out = experiment::default_out_dir(&cfg, args.out.clone());
            let summaries = experiment::simulate(&cfg, &out, args.jobs, args.options())?;
            for s in &summaries {
                println!(
                    "seed {}  {}  final loss {}  sim time {:.3}  consensus phase {} iterations",
                    s.seed,
                    s.strategy,
                    s.final_loss.map_or("-".into(), |x| format!("{x:.6}")),
                    s.total_sim_time,
                    s.consensus_phase_iters
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Compare(args) => {
            let cfg = load(&args.config)?;
            let out = experiment::default_out_dir(&cfg, args.out.clone());
            let reports = experiment::compare(&cfg, &out, args.jobs, args.options())?;
            for c in &reports {
                for r in [&c.full, &c.static_p, &c.dtur] {
                    println!(
                        "seed {}  {:<8}  mean duration {:.4}  ratio vs full {:.3}  time to target {}",
                        c.seed,
                        r.strategy,
                        r.mean_duration,
                        r.duration_ratio_vs_full,
                        r.time_to_target.map_or("-".into(), |t| format!("{t:.3}"))
                    );
                }
            }
            println!("wrote {}", out.display());
        }
        Command::Check(args) => {
            let cfg = load(&args.config)?;
            let report = experiment::check(&cfg, cfg.seed, args.inject_asymmetry)?;
            print!("{}", report.table());
            if !report.passed() {
                return Err(Failure::Runtime("one or more checks failed".into()));
            }
        }
        Command::GenConfig { out } => {
            let text = gen_config().to_json_pretty() + "\n";
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| Failure::Runtime(e.to_string()))?,
                None => print!("{text}"),
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
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
