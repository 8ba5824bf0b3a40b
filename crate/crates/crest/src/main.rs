use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crest::config::RunConfig;
use crest::error::{CliError, Result};
use crest::plot::{plot_file, PlotKind};
use crest::run::{execute, MANIFEST_FILE};
use crest::sweep::{run_sweep, Axis};
use crest_core::data::{write_csv_dataset, ClassProfile, DatasetManifest, SynthParams};
use crest_core::rng::derive_seed;

#[derive(Parser)]
#[command(name = "crest", version, about = "Class-rebalancing self-training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a long-tailed Gaussian-mixture train set and a balanced test set.
    Synth(SynthArgs),
    /// Run one experiment from a JSON config.
    Run { config: PathBuf },
    /// Re-run an experiment from a previous run's manifest.json.
    Rerun {
        manifest: PathBuf,
        /// Output directory; defaults to the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vary one parameter of a config and summarise mean recall.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: Axis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        /// Run sweep points concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Render SVG charts from a metrics.csv.
    Plot {
        csv: PathBuf,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "per_class_bars,recall_over_generations"
        )]
        kind: Vec<PlotKind>,
        /// Output directory; defaults to the CSV's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 100.0)]
    gamma: f64,
    #[arg(long, default_value_t = 500)]
    n1: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,
    #[arg(long)]
    out: PathBuf,
}

fn synth(a: &SynthArgs) -> Result<()> {
    let params = SynthParams {
        num_classes: a.classes,
        gamma: a.gamma,
        n1: a.n1,
        dim: a.dim,
        separation: a.separation,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
    };
    let train = params.generate()?;
    let test_counts = ClassProfile::uniform(a.classes, a.test_per_class)?;
    let test = params
        .mixture()?
        .sample(test_counts.counts(), derive_seed(a.seed, "test"))?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    write_csv_dataset(&train, &a.out.join("train.csv"))?;
    write_csv_dataset(&test, &a.out.join("test.csv"))?;
    let manifest = serde_json::to_string_pretty(&DatasetManifest::new(&params, &train))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = a.out.join(MANIFEST_FILE);
    std::fs::write(&path, manifest + "\n").map_err(|e| CliError::io(&path, e))?;
    println!(
        "wrote {} training and {} test rows to {}",
        train.len(),
        test.len(),
        a.out.display()
    );
    Ok(())
}

fn report_run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let outcome = execute(cfg, out)?;
    for r in &outcome.reports {
        println!(
            "generation {}: test mean recall {:.4}, selected {}",
            r.generation, r.test_mean_recall, r.selected_total
        );
    }
    println!("results in {}", outcome.output_dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            report_run(&cfg, &cfg.output_dir())
        }
        Command::Rerun { manifest, out } => {
            let cfg = crest::run::config_from_manifest(&manifest)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            report_run(&cfg, &dir)
        }
        Command::Sweep {
            config,
            axis,
            values,
            parallel,
        } => {
            let cfg = RunConfig::load(&config)?;
            let out = cfg.output_dir();
            let outcome = run_sweep(&cfg, axis, &values, &out, parallel)?;
            print!("{}", outcome.summary);
            if outcome.failures.is_empty() {
                Ok(())
            } else {
                for (label, err) in &outcome.failures {
                    eprintln!("{label}: {err}");
                }
                Err(CliError::Runtime(format!(
                    "{} sweep point(s) failed",
                    outcome.failures.len()
                )))
            }
        }
        Command::Plot { csv, kind, out } => {
            let dir = match out {
                Some(d) => d,
                None => csv.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            for p in plot_file(&csv, &kind, &dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
