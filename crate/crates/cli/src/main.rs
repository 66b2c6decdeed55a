use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ssmlab::harness::check::run_self_checks;
use ssmlab::harness::config::Config;
use ssmlab::harness::exp1::{run_exp1, Exp1Config};
use ssmlab::harness::exp2::{run_exp2, Exp2Config};
use ssmlab::harness::exp3::{run_exp3, Exp3Config};
use ssmlab::harness::RunContext;
use ssmlab::oracle::{bayes_oracle_lgssm, corr_path, OracleConfig};
use ssmlab::par::{configure_workers, Execution};

#[derive(Parser, Debug)]
#[command(
    name = "ssmlab",
    version,
    about = "In-context learning experiments for state-space models"
)]
struct Cli {
    /// Master seed; every task, evaluation sequence and initialization derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key=value configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; each experiment writes into its own subdirectory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Use the full-size settings instead of the desk-scale defaults.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Worker threads (1 forces sequential execution).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Excess risk vs number of training tasks on random LG-SSMs.
    Exp1,
    /// Correlated-noise separation: augmented filter vs ERM vs trained SSMs.
    Exp2,
    /// Next-character accuracy vs context length on random HMMs.
    Exp3,
    /// Run every oracle and gradient self-check.
    Check,
    /// One-off oracle prediction on a context file (one observation per line).
    Oracle(OracleArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OracleKind {
    /// Importance-sampling Bayes oracle under the random LG-SSM prior.
    Lgssm,
    /// Augmented Kalman filter for a scalar system with AR(1) noise.
    Corr,
}

#[derive(clap::Args, Debug)]
struct OracleArgs {
    /// Whitespace-separated observation vector per line; `#` starts a comment.
    context: PathBuf,
    #[arg(long, value_enum, default_value = "lgssm")]
    kind: OracleKind,
    /// Importance samples (lgssm).
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Latent transition coefficient (corr).
    #[arg(long, default_value_t = 0.9)]
    a: f64,
    /// Process-noise variance (corr).
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Noise autocorrelation (corr).
    #[arg(long, default_value_t = 0.95)]
    rho: f64,
}

fn read_context(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: not a number", path.display(), i + 1))?;
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                bail!(
                    "{}:{}: expected {} values, found {}",
                    path.display(),
                    i + 1,
                    first.len(),
                    row.len()
                );
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: empty context", path.display());
    }
    Ok(rows)
}

fn run_oracle(args: &OracleArgs, cfg: &Config, ctx: &RunContext) -> Result<()> {
    let context = read_context(&args.context)?;
    match args.kind {
        OracleKind::Lgssm => {
            let mut exp = Exp1Config::from_config(cfg, ctx.paper_scale)?;
            exp.prior.obs_dim = context[0].len();
            let pred = bayes_oracle_lgssm(
                &context,
                &exp.prior,
                &OracleConfig {
                    samples: args.samples,
                    seed: ctx.seed,
                    exec: ctx.exec,
                    ..Default::default()
                },
            )?;
            let mean: Vec<String> = pred.mean.iter().map(|v| format!("{v:.6}")).collect();
            println!("prediction: {}", mean.join(" "));
            println!(
                "ess: {:.1} of {} samples{}",
                pred.ess,
                pred.samples,
                if pred.degenerate { " (degenerate)" } else { "" }
            );
        }
        OracleKind::Corr => {
            if context[0].len() != 1 {
                bail!("corr oracle expects scalar observations");
            }
            let xs: Vec<f64> = context.iter().map(|r| r[0]).collect();
            let path = corr_path(&xs, args.a, args.q, args.rho, None)?;
            let k = xs.len();
            println!("prediction: {:.6}", path.known[k - 1]);
            println!("predictive variance: {:.6}", path.known_var[k - 1]);
        }
    }
    Ok(())
}

fn print_summary(dir: &Path) {
    if let Ok(text) = std::fs::read_to_string(dir.join("summary.txt")) {
        print!("{text}");
    }
    println!("results written to {}", dir.display());
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = match cli.seed {
        Some(s) => s,
        None => cfg.get("seed")?.unwrap_or(0),
    };
    let workers: Option<usize> = match cli.workers {
        Some(w) => Some(w),
        None => cfg.get("workers")?,
    };
    let mut ctx = RunContext::new(seed, cli.out.clone());
    ctx.paper_scale = cli.paper_scale;
    if let Some(w) = workers {
        if w == 0 {
            bail!("--workers must be at least 1");
        }
        configure_workers(w);
        if w == 1 {
            ctx.exec = Execution::Sequential;
        }
    }
    match &cli.command {
        Command::Exp1 => {
            let c = Exp1Config::from_config(&cfg, ctx.paper_scale)?;
            ctx.out_dir = cli.out.join("exp1");
            run_exp1(&c, &ctx)?;
            print_summary(&ctx.out_dir);
        }
        Command::Exp2 => {
            let c = Exp2Config::from_config(&cfg, ctx.paper_scale)?;
            ctx.out_dir = cli.out.join("exp2");
            run_exp2(&c, &ctx)?;
            print_summary(&ctx.out_dir);
        }
        Command::Exp3 => {
            let c = Exp3Config::from_config(&cfg, ctx.paper_scale)?;
            ctx.out_dir = cli.out.join("exp3");
            run_exp3(&c, &ctx)?;
            print_summary(&ctx.out_dir);
        }
        Command::Check => {
            let outcomes = run_self_checks(seed)?;
            let mut csv = String::from("check,passed,value,threshold,seconds\n");
            for o in &outcomes {
                println!("{}", o.line());
                csv.push_str(&format!(
                    "{},{},{:e},{:e},{:.3}\n",
                    o.name, o.passed, o.value, o.threshold, o.seconds
                ));
            }
            ctx.write("checks.csv", &csv)?;
            return Ok(outcomes.iter().all(|o| o.passed));
        }
        Command::Oracle(args) => run_oracle(args, &cfg, &ctx)?,
    }
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
