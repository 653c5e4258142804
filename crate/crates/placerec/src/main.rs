use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use placerec::commands::{self, CommandError};
use placerec::config::RunConfig;

#[derive(Parser)]
#[command(name = "placerec", version, about = "LiDAR place recognition with sparse spherical voxels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a processed dataset (raw scans or the synthetic world) with its split.
    Preprocess(Common),
    /// Train a network on the train split.
    Train(Common),
    /// Compute AR@X on the test split with `eval.checkpoint`.
    Eval(Common),
    /// Sweep one quantization or input axis and report recall per value.
    Ablate(Common),
    /// Time quantization and inference.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<RunConfig, CommandError> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        Ok(match &self.config {
            Some(p) => RunConfig::load(p, &overrides)?,
            None => RunConfig::from_toml_str("", &overrides)?,
        })
    }
}

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {
        let _ = writeln!(std::io::stdout(), $($arg)*);
    };
}

fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Preprocess(c) => {
            let d = commands::preprocess(&c.config()?, &c.out)?;
            say!("wrote {} clouds ({} train, {} test) to {}", d.poses.len(), d.split.train.len(), d.split.test.len(), c.out.display());
        }
        Command::Train(c) => {
            let t = commands::train(&c.config()?, &c.out)?;
            for (m, ar1) in &t.epochs {
                let ar = ar1.map(|a| format!(" AR@1 {a:.3}")).unwrap_or_default();
                say!("epoch {} loss {:.4} active {:.3}{ar}", m.epoch + 1, m.mean_loss, m.active_ratio);
            }
            say!("checkpoint {}", t.checkpoint.display());
        }
        Command::Eval(c) => {
            let r = commands::eval(&c.config()?, &c.out)?;
            for (x, ar) in &r.recall {
                say!("AR@{x} {ar:.4}");
            }
            say!("AR@1% {:.4}", r.recall_one_percent);
        }
        Command::Ablate(c) => {
            for r in commands::ablate(&c.config()?, &c.out)? {
                say!("{} AR@1 {:.4} AR@1% {:.4}", r.label, r.ar1, r.ar1_percent);
            }
        }
        Command::Bench(c) => {
            let b = commands::bench(&c.config()?, &c.out)?;
            for (name, s) in b.repeated.stages() {
                say!("{name} {:.3} ms (std {:.3})", s.mean_ms, s.std_ms);
            }
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
