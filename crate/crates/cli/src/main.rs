use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use brex::config::{ExperimentConfig, Overrides};
use brex::pipeline::{self, Run};
use brex::BrexError;
use clap::{Args, Parser, Subcommand};

/// Bayesian reward extrapolation from pairwise preferences, with high-confidence policy
/// evaluation.
#[derive(Parser)]
#[command(name = "brex", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample demonstrations and label all pairs by ground-truth return.
    GenDemos(Common),
    /// Fit the feature map and reward weights on the ranking loss; cache trajectory features.
    Pretrain(Common),
    /// Run the Metropolis-Hastings sampler over reward weights.
    Mcmc(Common),
    /// Evaluate the configured policies against the posterior.
    Eval(Common),
    /// Measure coverage of the VaR bound on synthetic well-specified problems.
    Calibrate(Common),
    /// Check whether a feature-looping policy shows the reward-hacking signature.
    HackProbe(Common),
    /// gen-demos, pretrain, mcmc and eval in sequence.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "mcmc.n-steps")]
    n_steps: Option<usize>,
    #[arg(long = "mcmc.sigma")]
    sigma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out_dir: self.out.clone(),
            n_steps: self.n_steps,
            sigma: self.sigma,
            beta: self.beta,
            delta: self.delta,
        }
    }
}

fn timed<T>(name: &str, f: impl FnOnce() -> brex::Result<T>) -> brex::Result<T> {
    let start = Instant::now();
    let out = f()?;
    eprintln!("{name}: {:.2}s", start.elapsed().as_secs_f64());
    Ok(out)
}

fn execute(command: Command) -> brex::Result<()> {
    let (common, stages): (&Common, &[&str]) = match &command {
        Command::GenDemos(c) => (c, &["gen-demos"]),
        Command::Pretrain(c) => (c, &["pretrain"]),
        Command::Mcmc(c) => (c, &["mcmc"]),
        Command::Eval(c) => (c, &["eval"]),
        Command::Calibrate(c) => (c, &["calibrate"]),
        Command::HackProbe(c) => (c, &["hack-probe"]),
        Command::Pipeline(c) => (c, &["gen-demos", "pretrain", "mcmc", "eval"]),
    };
    let config = ExperimentConfig::load(&common.config, &common.overrides())?;
    let run = Run::new(config)?;
    for &stage in stages {
        match stage {
            "gen-demos" => timed(stage, || pipeline::cmd_gen_demos(&run))?,
            "pretrain" => {
                let o = timed(stage, || pipeline::cmd_pretrain(&run))?;
                eprintln!(
                    "  loss {:.6} -> {:.6}, pair accuracy {:.3}",
                    o.initial_loss, o.final_loss, o.pair_accuracy
                );
            }
            "mcmc" => {
                let chain = timed(stage, || pipeline::cmd_mcmc(&run))?;
                eprintln!(
                    "  {} samples retained, accept rate {:.4}",
                    chain.len(),
                    chain.accept_rate.unwrap_or(0.0)
                );
            }
            "eval" => {
                for row in timed(stage, || pipeline::cmd_eval(&run))? {
                    eprintln!("  {:<12} mean {:>12.4}  var {:>12.4}", row.policy, row.mean_chain, row.var_chain);
                }
            }
            "calibrate" => {
                let r = timed(stage, || pipeline::cmd_calibrate(&run))?;
                for (d, c) in r.deltas.iter().zip(&r.coverage) {
                    eprintln!("  delta {d}: coverage {c:.3}");
                }
                eprintln!("  {}", if r.pass { "pass" } else { "fail" });
            }
            "hack-probe" => {
                let r = timed(stage, || pipeline::cmd_hack_probe(&run))?;
                eprintln!("  flag {}", r.flag);
            }
            _ => unreachable!(),
        }
    }
    eprintln!("outputs in {}", run.out().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}

fn is_validation(e: &BrexError) -> bool {
    match e {
        BrexError::Trial { source, .. } => is_validation(source),
        _ => e.is_validation(),
    }
}
