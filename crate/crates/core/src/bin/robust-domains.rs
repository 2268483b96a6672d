use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use robust_domains::experiments::{
    cmd_bound, cmd_eval, cmd_generate, cmd_train, EvalTarget, GenerateConfig, RunConfig,
};
use robust_domains::Error;

/// Robust minimax training over several domains.
#[derive(Debug, Parser)]
#[command(name = "robust-domains", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic noisy-domain dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        /// Examples per domain.
        #[arg(long, default_value_t = 500)]
        size: usize,
        /// Test examples per domain (0 for none).
        #[arg(long, default_value_t = 0)]
        test_size: usize,
        /// Per-domain noise levels, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0,4,8,12")]
        noise: Vec<f64>,
        #[arg(long, default_value_t = 3.0)]
        center_scale: f64,
        #[arg(long, default_value_t = 1.0)]
        cluster_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one method and write a run directory.
    Train {
        /// key = value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// key=value override, applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a run directory, or a checkpoint against a manifest.
    Eval {
        #[arg(long, conflicts_with_all = ["manifest", "checkpoint"])]
        run: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        test_manifest: Option<PathBuf>,
    },
    /// Print the optimal shrink constant and the regret bounds.
    Bound {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        horizon: usize,
    },
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Generate {
            out,
            classes,
            dim,
            size,
            test_size,
            noise,
            center_scale,
            cluster_std,
            seed,
        } => {
            let config = GenerateConfig {
                num_classes: classes,
                dim,
                size,
                test_size,
                noise,
                center_scale,
                cluster_std,
                seed,
            };
            let manifest = cmd_generate(&config, &out)?;
            println!("{}", manifest.display());
        }
        Command::Train { config, overrides } => {
            let mut run_config = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            for assignment in &overrides {
                run_config.apply_override(assignment)?;
            }
            let outcome = cmd_train(&run_config)?;
            println!("schedule = {}", outcome.schedule);
            print!("{}", outcome.report.render_summary());
            if let Some(dir) = outcome.dir {
                println!("run_dir = {}", dir.display());
            }
        }
        Command::Eval {
            run,
            manifest,
            checkpoint,
            test_manifest,
        } => {
            let target = match (run, manifest, checkpoint) {
                (Some(dir), _, _) => EvalTarget::Run(dir),
                (None, Some(manifest), Some(checkpoint)) => EvalTarget::Checkpoint {
                    manifest,
                    checkpoint,
                    test_manifest,
                },
                _ => return Err(Error::Config("eval needs --run or --manifest with --checkpoint".into())),
            };
            print!("{}", cmd_eval(&target)?.render_summary());
        }
        Command::Bound { mu, lambda, horizon } => print!("{}", cmd_bound(mu, lambda, horizon)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_numerical() { 2 } else { 1 })
        }
    }
}
