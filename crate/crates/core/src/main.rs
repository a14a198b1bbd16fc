use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use flashnet::cli::{self, ExperimentSpec};

#[derive(Parser)]
#[command(name = "flashnet", version, about = "Flash-crash contagion experiments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write its result files.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a spec without running it.
    Validate { config: PathBuf },
    /// Print every parameter with its default, sampled domains and presets.
    Presets,
    /// Emit the desk-scale specs for a figure (fig3 to fig9).
    Replicate {
        figure: String,
        /// Write `<name>.toml` files here instead of printing them.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run each spec into `<out>/<name>/`.
        #[arg(long, requires = "out")]
        run: bool,
    },
}

fn run(spec: &ExperimentSpec) -> Result<()> {
    let workers = spec.resolve_workers()?;
    let points = spec.n_points();
    eprintln!(
        "{}: {points} point(s) x {} trial(s) on {workers} worker(s) -> {}",
        spec.name,
        spec.trials,
        spec.output.dir.display()
    );
    let report = cli::run_experiment(spec, workers)?;
    let cascades = report.metrics.iter().filter(|m| m.cascade).count();
    eprintln!("{} trials done, {cascades} with a default cascade", report.trials);
    Ok(())
}

fn main_inner() -> Result<()> {
    match Args::parse().command {
        Command::Run { config, out } => {
            let mut spec = cli::load_config(&config)?;
            if let Some(out) = out {
                spec.output.dir = out;
            }
            run(&spec)
        }
        Command::Validate { config } => {
            let spec = cli::load_config(&config)?;
            println!(
                "{}: ok, {} point(s) x {} trial(s), seed {}",
                config.display(),
                spec.n_points(),
                spec.trials,
                spec.base_seed()
            );
            Ok(())
        }
        Command::Presets => {
            print!("{}", cli::presets_text());
            Ok(())
        }
        Command::Replicate { figure, out, run: execute } => {
            let Some(specs) = cli::replicate_specs(&figure) else {
                bail!("unknown figure `{figure}`; expected one of {}", cli::FIGURES.join(", "));
            };
            let Some(out) = out else {
                for (name, text) in &specs {
                    println!("# {name}\n{text}");
                }
                return Ok(());
            };
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (name, text) in &specs {
                let path = out.join(format!("{name}.toml"));
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
                if execute {
                    let mut spec = cli::parse_config(text)?;
                    spec.output.dir = out.join(name);
                    run(&spec)?;
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
