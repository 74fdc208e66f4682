use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use csd_core::data::{generate_blobs, write_table, BlobConfig};
use csd_core::harness::{
    emit_plot_data, evaluate_checkpoint, load_record, run_component_ablation, run_experiment, run_lambda_grid,
    summary_table, write_plot_data,
};
use csd_core::{ComponentMask, ExperimentConfig};

#[derive(Parser)]
#[command(name = "csd", version, about = "Continual representation learning experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location; overrides `output.dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Zero wall-clock fields and run cells sequentially.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Replace existing results from a different config.
    #[arg(long, global = true)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment and print the summary table.
    Run,
    /// Run the (lambda_kd, lambda_csd) grid.
    Grid {
        #[arg(long, value_delimiter = ',', default_value = "0.1,1,10")]
        values: Vec<f64>,
    },
    /// Run one sequence per loss-component mask.
    Ablate {
        /// Masks such as `ce+csd`; defaults to all eight masks containing CE.
        #[arg(long, value_delimiter = ',')]
        masks: Vec<ComponentMask>,
    },
    /// Evaluate a stored model checkpoint on the config's test splits.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Emit forgetting-curve data from finished run directories.
    Plotdata {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(short, default_value_t = 1)]
        k: usize,
    },
    /// Generate a Gaussian-blob dataset; `--out` names the manifest.
    Synth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
    },
}

/// Bad invocation, reported with exit code 1 like a config error.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn load_config(global: &Global) -> Result<ExperimentConfig> {
    let path = global
        .config
        .as_deref()
        .ok_or_else(|| Usage("--config is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = global.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &global.out {
        config.output.dir = Some(out.clone());
    }
    config.deterministic |= global.deterministic;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Run => {
            let config = load_config(g)?;
            let record = run_experiment(&config, g.overwrite)?;
            for &k in &config.eval.k {
                print!("{}", summary_table(std::slice::from_ref(&record), k));
            }
        }
        Command::Grid { values } => {
            let config = load_config(g)?;
            let grid = run_lambda_grid(&config, &values, g.overwrite)?;
            let k = config.eval.k[0];
            print!("{}", grid.to_table(k));
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let average = |kd: f64, csd: f64| {
                grid.cell(kd, csd)
                    .and_then(|c| c.record.summary(k))
                    .map(|s| s.average.mean)
            };
            if let (Some(small), Some(unit)) = (average(lo, lo), average(1.0, 1.0)) {
                println!(
                    "# ordering: lambda=({lo},{lo}) average {:.1} vs lambda=(1,1) average {:.1}",
                    100.0 * small,
                    100.0 * unit
                );
            }
        }
        Command::Ablate { masks } => {
            let config = load_config(g)?;
            let masks = if masks.is_empty() {
                ComponentMask::all_with_ce()
            } else {
                masks
            };
            let records = run_component_ablation(&config, &masks, g.overwrite)?;
            print!("{}", summary_table(&records, config.eval.k[0]));
        }
        Command::Eval { checkpoint } => {
            let config = load_config(g)?;
            let seed = g.seed.unwrap_or(config.seeds[0]);
            print!("{}", evaluate_checkpoint(&config, seed, &checkpoint)?.to_text());
        }
        Command::Plotdata { runs, k } => {
            let records = runs
                .iter()
                .map(|d| load_record(d).with_context(|| format!("reading run in {}", d.display())))
                .collect::<Result<Vec<_>>>()?;
            match &g.out {
                Some(path) => write_plot_data(&records, k, path)?,
                None => print!("{}", emit_plot_data(&records, k)?),
            }
        }
        Command::Synth {
            classes,
            dim,
            per_class,
            spread,
        } => {
            let out = g
                .out
                .as_deref()
                .ok_or_else(|| Usage("synth needs --out <manifest>".into()))?;
            let dataset = generate_blobs(&BlobConfig {
                classes,
                dim,
                per_class,
                spread,
                seed: g.seed.unwrap_or(0),
            })?;
            if out.exists() && !g.overwrite {
                return Err(csd_core::Error::OutputExists(out.to_path_buf()).into());
            }
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            write_table(&dataset, out)?;
            println!("wrote {} samples to {}", dataset.len(), out.display());
        }
    }
    Ok(())
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.is::<Usage>()
            || cause
                .downcast_ref::<csd_core::Error>()
                .is_some_and(csd_core::Error::is_validation)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
