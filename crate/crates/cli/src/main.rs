use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chi_core::checkpoint::load_checkpoint;
use chi_core::config::ExperimentConfig;
use chi_core::experiment::{self, write_boundary, write_features};
use chi_core::objectives::Method;
use chi_core::Error;

/// Semi-supervised experiments on synthetic data.
#[derive(Parser)]
#[command(name = "chimodel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment file (TOML).
    config: PathBuf,
    /// Override one config key, e.g. `--set train.eta=0.05`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the sample pool and its split to the output directory.
    Generate(ConfigArgs),
    /// Train and evaluate one configuration.
    Run(ConfigArgs),
    /// Run every (method, label ratio, seed) cell and aggregate over seeds.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Decision-boundary grid of a checkpointed two-moons model.
    Boundary {
        checkpoint: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extractor features of every sample for a checkpointed model.
    DumpFeatures {
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue training from a checkpoint.
    Resume {
        checkpoint: PathBuf,
        /// Train to this many epochs instead of the configured count.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &ConfigArgs) -> chi_core::Result<ExperimentConfig> {
    ExperimentConfig::load(&args.config, &args.overrides)
}

fn summary(method: Method, epoch: usize, columns: &[String], values: &[f64]) -> String {
    let cells: Vec<String> = columns.iter().zip(values).map(|(c, v)| format!("{c}={v:.4}")).collect();
    format!("{method} epoch {epoch}: {}", cells.join(" "))
}

fn checkpoint_dir(out: Option<PathBuf>, cfg: &ExperimentConfig) -> std::io::Result<PathBuf> {
    let dir = out.unwrap_or_else(|| cfg.output_dir());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn report_run(outcome: &experiment::RunOutcome, method: Method) {
    if let Some(r) = outcome.state.history.records.last() {
        println!(
            "{}",
            summary(method, r.epoch, &r.metrics.columns(), &r.metrics.values())
        );
    }
    println!("outputs in {}", outcome.dir.display());
}

fn execute(cmd: Command) -> chi_core::Result<()> {
    match cmd {
        Command::Generate(args) => {
            let cfg = load(&args)?;
            let dir = cfg.output_dir();
            let data = experiment::export_dataset(&cfg, &dir)?;
            println!(
                "{} labeled, {} unlabeled, {} test samples in {}",
                data.labeled.len(),
                data.unlabeled.len(),
                data.test.len(),
                dir.display()
            );
        }
        Command::Run(args) => {
            let cfg = load(&args)?;
            let outcome = experiment::run(&cfg)?;
            report_run(&outcome, cfg.train.method);
        }
        Command::Sweep {
            cfg: args,
            methods,
            ratios,
            seeds,
        } => {
            let mut cfg = load(&args)?;
            if let Some(ms) = methods {
                cfg.sweep.methods = ms
                    .iter()
                    .map(|m| {
                        Method::parse(m).ok_or_else(|| Error::config("sweep.methods", format!("unknown method {m}")))
                    })
                    .collect::<chi_core::Result<_>>()?;
            }
            if let Some(r) = ratios {
                cfg.sweep.ratios = r;
            }
            if let Some(s) = seeds {
                cfg.sweep.seeds = s;
            }
            cfg.validate()?;
            let (dir, rows) = experiment::run_sweep(&cfg)?;
            for r in &rows {
                println!(
                    "ratio {} {}",
                    r.ratio,
                    summary(r.method, cfg.train.epochs, &r.columns, &r.mean)
                );
            }
            println!("outputs in {}", dir.display());
        }
        Command::Boundary {
            checkpoint,
            resolution,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let dir = checkpoint_dir(out, &ck.config)?;
            let resolution = resolution.unwrap_or(ck.config.output.boundary_resolution);
            write_boundary(&dir, &ck.state.bundle, &ck.config, resolution)?;
            println!("boundary.csv and boundary.pgm in {}", dir.display());
        }
        Command::DumpFeatures { checkpoint, out } => {
            let ck = load_checkpoint(&checkpoint)?;
            let dir = checkpoint_dir(out, &ck.config)?;
            let data = ck.config.split()?;
            write_features(&dir.join("features.csv"), &ck.state.bundle, &data)?;
            println!("features.csv in {}", dir.display());
        }
        Command::Resume {
            checkpoint,
            epochs,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let method = ck.config.train.method;
            let outcome = experiment::resume(ck, epochs, out)?;
            report_run(&outcome, method);
        }
    }
    Ok(())
}

/// One line, `error: <kind>: <detail>`, and the exit status for it.
fn classify(e: &Error) -> (u8, String) {
    let flat = |s: String| s.replace('\n', " ");
    match e {
        Error::Config { key, message } => (2, flat(format!("error: config: {key}: {message}"))),
        Error::Numeric(m) => (3, flat(format!("error: numeric: {m}"))),
        Error::Format(m) => (1, flat(format!("error: format: {m}"))),
        Error::Io(err) => (1, flat(format!("error: io: {err}"))),
        other => (1, flat(format!("error: runtime: {other}"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, line) = classify(&e);
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
