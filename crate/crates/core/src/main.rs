use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use meta_kgr::meta::Method;
use meta_kgr::workbench::{ExperimentConfig, Run};

#[derive(Parser)]
#[command(name = "meta-kgr", version, about = "Few-shot multi-hop reasoning over knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Meta-train (or pre-train) the configured method; writes loss.csv and model.ckpt.
    Train(Args),
    /// Select fine-tuning steps on meta-dev, then report Initial and Best on meta-test.
    Finetune(Args),
    /// Initial meta-test metrics without fine-tuning.
    Eval(Args),
    /// Evaluate each configured method at every support size.
    Sweep(Args),
    /// Compare encoder representations from few and many shots with a random one.
    Ablate(Args),
    /// Run the finite-difference gradient suites.
    Gradcheck(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated support sizes.
    #[arg(long, value_delimiter = ',')]
    shots: Vec<usize>,
    #[arg(long)]
    method: Option<Method>,
    /// Model to evaluate; trained from the config when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn configure(args: &Args, cmd: &Cmd) -> Result<Run> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(method) = args.method {
        cfg.method = method;
        cfg.sweep.methods = vec![method];
    }
    if !args.shots.is_empty() {
        match cmd {
            Cmd::Sweep(_) => cfg.sweep.shots = args.shots.clone(),
            Cmd::Ablate(_) => cfg.ablate.shots = args.shots.clone(),
            _ if args.shots.len() == 1 => cfg.eval.shots = args.shots[0],
            _ => bail!("--shots takes a single value for this command"),
        }
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.method.name()));
    Ok(Run::new(cfg, out)?)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("META_KGR_THREADS") {
        let n: usize = v.parse().with_context(|| format!("META_KGR_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    let args = match &cli.cmd {
        Cmd::Train(a) | Cmd::Finetune(a) | Cmd::Eval(a) | Cmd::Sweep(a) | Cmd::Ablate(a) | Cmd::Gradcheck(a) => a,
    };
    let run = configure(args, &cli.cmd)?;
    let checkpoint = args.checkpoint.as_deref();
    match &cli.cmd {
        Cmd::Train(_) => {
            let curve = run.train()?;
            if let Some(last) = curve.last() {
                println!("step {} loss {:.4} reward {:.3}", last.step, last.loss, last.reward);
            }
        }
        Cmd::Finetune(_) => {
            let r = run.finetune(checkpoint)?;
            println!(
                "steps {} initial mrr {:.4} hits@10 {:.4} best mrr {:.4} hits@10 {:.4}",
                r.schedule.frozen_steps()?,
                r.initial.macro_avg.mrr,
                r.initial.macro_avg.hits10,
                r.best.macro_avg.mrr,
                r.best.macro_avg.hits10
            );
        }
        Cmd::Eval(_) => {
            let r = run.eval(checkpoint)?;
            println!("mrr {:.4} hits@1 {:.4} hits@3 {:.4} hits@10 {:.4}", r.macro_avg.mrr, r.macro_avg.hits1, r.macro_avg.hits3, r.macro_avg.hits10);
        }
        Cmd::Sweep(_) => {
            for r in run.sweep()? {
                println!("{} shots {} initial mrr {:.4} best mrr {:.4}", r.method.name(), r.shots, r.initial.mrr, r.best.mrr);
            }
        }
        Cmd::Ablate(_) => {
            for r in run.ablate()? {
                println!("{} mrr {:.4} hits@10 {:.4}", r.name, r.metrics.mrr, r.metrics.hits10);
            }
        }
        Cmd::Gradcheck(_) => {
            let results = run.gradcheck()?;
            for r in &results {
                println!("{:<12} seeds {} max rel-err {:.3e} {}", r.suite, r.seeds, r.max_rel_err, if r.passed() { "ok" } else { "FAIL" });
            }
            return Ok(results.iter().all(|r| r.passed()));
        }
    }
    println!("outputs in {}", run.out.display());
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
