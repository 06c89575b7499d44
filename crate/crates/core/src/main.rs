use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddpm_bound::config::ExperimentConfig;
use ddpm_bound::experiment;

#[derive(Parser)]
#[command(name = "ddpm-bound", version, about = "Train a toy DDPM and certify a W1 bound")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value` lines). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to load. Defaults to `<out>/model.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training set to data.csv / data.json.
    GenData(Common),
    /// Train and write model.ckpt, loss.csv, schedule.csv, manifest.json.
    Train(Common),
    /// Evaluate the bound over the λ grid: bound.json, bound.csv.
    Bound(WithCheckpoint),
    /// Check the bound against empirical W1 and run the contraction checks.
    Validate(WithCheckpoint),
    /// Write generated points to samples.csv.
    Sample {
        #[command(flatten)]
        inner: WithCheckpoint,
        /// Number of points (default `sample.n`).
        #[arg(long)]
        n: Option<usize>,
    },
}

fn setup(common: &Common) -> ddpm_bound::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&common.overrides)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn checkpoint_path(w: &WithCheckpoint, out: &std::path::Path) -> PathBuf {
    w.checkpoint
        .clone()
        .unwrap_or_else(|| experiment::default_checkpoint(out))
}

fn run(cli: Cli) -> ddpm_bound::Result<bool> {
    match cli.command {
        Command::GenData(c) => {
            let (cfg, out) = setup(&c)?;
            let data = experiment::cmd_gen_data(&cfg, &out)?;
            println!("wrote {} points to {}", data.len(), out.display());
        }
        Command::Train(c) => {
            let (cfg, out) = setup(&c)?;
            let t = experiment::cmd_train(&cfg, &out)?;
            println!(
                "trained {} steps, final loss {:.6}, checkpoint sha256 {}",
                t.manifest.steps, t.manifest.final_loss, t.manifest.checkpoint_sha256
            );
        }
        Command::Bound(w) => {
            let (cfg, out) = setup(&w.common)?;
            let b = experiment::cmd_bound(&cfg, &checkpoint_path(&w, &out), &out)?;
            print!("{}", ddpm_bound::bound::reports_to_csv(&b.reports));
        }
        Command::Validate(w) => {
            let (cfg, out) = setup(&w.common)?;
            let v = experiment::cmd_validate(&cfg, &checkpoint_path(&w, &out), &out)?;
            for r in &v.runs {
                println!(
                    "seed {}: total {:.4} (se {:.4}) vs sliced {:.4}, exact {:.4}, trivial {:.4}: {}",
                    r.seed,
                    r.total,
                    r.total_std_err,
                    r.sliced_lower.value,
                    r.exact.value,
                    r.trivial_upper.value,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            for c in v.contraction.iter().chain(&v.iterated) {
                let step = c.t.map_or("all".to_string(), |t| t.to_string());
                println!(
                    "contraction t={step}: {} (margin {:.3e}, {} of {} trials over their own slack)",
                    if c.pass { "pass" } else { "FAIL" },
                    c.margin,
                    c.trial_exceedances,
                    c.n_trials
                );
            }
            println!("overall: {}", if v.pass { "pass" } else { "FAIL" });
            return Ok(v.pass);
        }
        Command::Sample { inner, n } => {
            let (cfg, out) = setup(&inner.common)?;
            let s = experiment::cmd_sample(&cfg, &checkpoint_path(&inner, &out), n, &out)?;
            println!("wrote {} samples to {}", s.len(), out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
