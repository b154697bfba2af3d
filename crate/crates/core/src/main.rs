use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use delay_koopman::config::{RunConfig, Seeds};
use delay_koopman::eval::EvalReport;
use delay_koopman::pipeline::{self, Family};
use delay_koopman::Result;

/// Koopman surrogate models for the delayed two-tank benchmark.
#[derive(Parser)]
#[command(name = "delay-koopman", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate clean and noisy trajectories.
    Simulate(Common),
    /// Fit one model family on the training half.
    Train {
        #[command(flatten)]
        common: Common,
        /// edmd-known, edmd-unknown or dko
        #[arg(long)]
        family: String,
    },
    /// Evaluate all available checkpoints on the test half.
    Evaluate(Common),
    /// simulate, train every family, evaluate.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Base seed; expands to signal, noise, init and shuffle seeds s..s+3.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated samples.
    #[arg(long)]
    samples: Option<usize>,
    /// DKO training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seeds = Seeds::from_base(s);
        }
        if let Some(n) = self.samples {
            cfg.signal.samples = n;
        }
        if let Some(e) = self.epochs {
            cfg.dko.epochs = e;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_report(report: &EvalReport) {
    println!("{:<14} {:>12} {:>10}", "model", "MAE [m]", "MAE [%]");
    for m in &report.models {
        println!("{:<14} {:>12.6} {:>10.1}", m.summary.name, m.summary.mae, m.summary.mae_percent);
    }
    println!("linearized truth eigenvalues: {:?}", report.truth_eigenvalues);
    for m in &report.models {
        let top: Vec<String> = m
            .summary
            .eigenvalues
            .iter()
            .take(4)
            .map(|[re, im]| format!("{re:.5}{im:+.5}i"))
            .collect();
        println!("{:<14} leading eigenvalues: {}", m.summary.name, top.join(", "));
    }
}

fn epoch_progress(e: &delay_koopman::dko::EpochStats) {
    if e.epoch % 10 == 0 {
        eprintln!(
            "epoch {:>4}  loss {:.6e}  (step {:.3e}, pred {:.3e}, lpred {:.3e})  |grad| {:.3e}",
            e.epoch, e.loss.total, e.loss.step, e.loss.pred, e.loss.lpred, e.grad_norm
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.load()?;
            let m = pipeline::cmd_simulate(&cfg, &cfg.output.dir)?;
            println!("wrote {} samples to {}", m.samples, pipeline::data_dir(&cfg.output.dir).display());
        }
        Command::Train { common, family } => {
            let cfg = common.load()?;
            let family: Family = family.parse()?;
            let summary = pipeline::cmd_train(&cfg, family, &cfg.output.dir, epoch_progress)?;
            match summary {
                pipeline::TrainSummary::Edmd { lifted_dim, residual } => {
                    println!("{family}: lifted dimension {lifted_dim}, residual {residual:.6e}");
                }
                pipeline::TrainSummary::Dko {
                    a_shape,
                    b_shape,
                    final_loss,
                    precheck,
                } => {
                    if let Some(p) = precheck {
                        println!("gradient pre-check: max relative error {p:.3e}");
                    }
                    println!(
                        "dko: A_K {}x{}, B_K {}x{}, final loss {:?}",
                        a_shape.0, a_shape.1, b_shape.0, b_shape.1, final_loss
                    );
                }
            }
        }
        Command::Evaluate(c) => {
            let cfg = c.load()?;
            let report = pipeline::cmd_evaluate(&cfg, &cfg.output.dir)?;
            print_report(&report);
        }
        Command::Run(c) => {
            let cfg = c.load()?;
            let report = pipeline::run_all(&cfg, &cfg.output.dir, |msg| eprintln!("{msg}"))?;
            print_report(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
