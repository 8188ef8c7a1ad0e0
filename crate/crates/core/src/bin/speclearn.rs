use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use speclearn::error::{EXIT_CONFIG, EXIT_GATE};
use speclearn::experiment::{cmd_causal, cmd_eval, cmd_generate, cmd_refine, cmd_train, ExperimentConfig};
use speclearn::report::cmd_report;
use speclearn::Result;

#[derive(Parser)]
#[command(name = "speclearn", version, about = "Learn, refine and probe user-type trajectory specifications")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    ckpt: Option<PathBuf>,
    /// Worker threads for independent training jobs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/test scenes and demonstrations.
    Generate,
    /// Train one checkpoint per user type, ablation and seed.
    Train,
    /// Accuracy against trajectories per scene.
    Eval,
    /// Refine invalid trajectories on the test scenes.
    Refine,
    /// Intervention report; exits 3 when the expected flag pattern fails.
    Causal,
    /// Collate CSV outputs from the given directories into report.md.
    Report { dirs: Vec<PathBuf> },
}

fn run(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    let data = cli.data.clone().unwrap_or_else(|| "data".into());
    let ckpt = cli.ckpt.clone().unwrap_or_else(|| "ckpt".into());
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| default.into());
    match cli.command {
        Command::Generate => {
            let dir = out("data");
            let ds = cmd_generate(&cfg, &dir)?;
            println!(
                "wrote {} train and {} test scenes to {}",
                ds.train_scenes.len(),
                ds.test_scenes.len(),
                dir.display()
            );
        }
        Command::Train => {
            let dir = cli.out.clone().unwrap_or(ckpt);
            for stem in cmd_train(&cfg, &data, &dir)? {
                println!("{}", stem.display());
            }
        }
        Command::Eval => {
            let dir = out("results");
            for p in cmd_eval(&cfg, &data, &ckpt, &dir)? {
                println!("{:<10} {:<10} k={:<2} mean={:.3} q1={:.3} q3={:.3}", p.user_type, p.model, p.k, p.mean, p.q1, p.q3);
            }
        }
        Command::Refine => {
            let table = cmd_refine(&cfg, &data, &ckpt, &out("results"))?;
            for (u, r) in table.rates() {
                println!("{u:<10} {r:.3}");
            }
        }
        Command::Causal => {
            let output = cmd_causal(&cfg, &data, &ckpt, &out("results"))?;
            print!("{}", output.report.to_table());
            let bad = output.report.direction_violations();
            if !bad.is_empty() {
                for b in &bad {
                    eprintln!("gate: {b}");
                }
                return Ok(EXIT_GATE);
            }
        }
        Command::Report { dirs } => {
            let dirs = if dirs.is_empty() { vec![out("results")] } else { dirs };
            print!("{}", cmd_report(&dirs, &out("results"))?);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
