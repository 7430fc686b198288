use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsrc_cli::commands;
use tsrc_cli::config::parse_override_args;
use tsrc_cli::{CliError, CurveSelection, ExperimentConfig, ResultRow};

#[derive(Parser)]
#[command(name = "tsrc", version, about = "Tensor sparse-representation classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Field overrides such as `--trials 3` or `--solver.tol=1e-5`.
    #[arg(last = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a benchmark or multi-look dataset.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory; defaults to the config's `dataset`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn a structured dictionary and save it as `<stem>.t3/.json`.
    TrainDl {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify every test sample and write per-sample predictions.
    Classify {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Saved dictionary stem to use instead of the raw one.
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run all methods, combos and trials and write the results table.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Separate test samples into object and ground parts.
    Denoise {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Samples per noise level.
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
    /// Compare shifted and stacked multi-look classification.
    MultilookEval {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Turn a results table into accuracy-versus-noise curves.
    EmitCurves {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated methods to keep.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Comma-separated channel combos to keep.
        #[arg(long, value_delimiter = ',')]
        combos: Option<Vec<String>>,
    },
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, CliError> {
    let base = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let cfg = base.with_overrides(&parse_override_args(&args.overrides)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_means(rows: &[ResultRow]) {
    for r in rows.iter().filter(|r| r.trial == "mean") {
        println!(
            "{:<20} {:<8} noise {:<4} {:6.2}% ± {:.2}",
            r.method,
            r.combo,
            r.noise_level,
            r.accuracy,
            r.std.unwrap_or(0.0)
        );
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { cfg, out } => {
            let cfg = load(&cfg)?;
            let dir = out.unwrap_or_else(|| cfg.dataset.clone());
            let ds = commands::gen_data(&cfg, &dir)?;
            println!("wrote {} samples to {}", ds.len(), dir.display());
        }
        Command::TrainDl { cfg, out } => {
            let dict = commands::train_dl(&load(&cfg)?, &out)?;
            println!("wrote {} atoms to {}", dict.atoms().cols(), out.display());
        }
        Command::Classify { cfg, dictionary, out } => {
            let preds = commands::classify(&load(&cfg)?, dictionary.as_deref(), &out)?;
            let correct = preds.iter().filter(|p| p.correct).count();
            println!("{correct}/{} correct; predictions in {}", preds.len(), out.display());
        }
        Command::Eval { cfg } => {
            let cfg = load(&cfg)?;
            print_means(&commands::eval(&cfg)?);
            println!("results in {}", cfg.output.display());
        }
        Command::Denoise { cfg, out, count } => {
            let n = commands::denoise(&load(&cfg)?, &out, count)?;
            println!("separated {n} samples into {}", out.display());
        }
        Command::MultilookEval { cfg } => {
            let cfg = load(&cfg)?;
            print_means(&commands::multilook_eval(&cfg)?);
            println!("results in {}", cfg.output.display());
        }
        Command::EmitCurves {
            results,
            out,
            methods,
            combos,
        } => {
            let n = commands::curves(&results, &out, &CurveSelection { methods, combos })?;
            println!("wrote {n} curve points to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
