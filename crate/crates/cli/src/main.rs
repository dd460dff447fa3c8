mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Override;

/// Learning-aided Kalman filtering for bounding-box motion.
///
/// Every configuration key can also be set with `--<section>.<key> <value>`,
/// e.g. `--train.epochs 10` or `--data.alpha_p 0.2`.
#[derive(Debug, Parser)]
#[command(name = "lakf", version)]
struct Cli {
    /// TOML run configuration with [data], [model], [train], [eval] and [track] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `runs/<subcommand>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate measurements for ground truth and write a split dataset.
    Gen(GenArgs),
    /// Adjacent-frame AIoU per dataset and category.
    Aiou,
    /// Train a learned filter on the dataset.
    Train,
    /// Score one model on a dataset split.
    Eval(EvalArgs),
    /// mAR of several models on test sets re-simulated at several noise levels.
    Grid,
    /// Run the BYTE tracker and write MOTChallenge result files.
    Track(EvalArgs),
    /// Render CSV reports as SVG charts.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Shorthand for `--data.alpha_p`.
    #[arg(long)]
    alpha_p: Option<f64>,
    /// Shorthand for `--data.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Shorthand for `--model.kind`.
    #[arg(long)]
    model: Option<String>,
    /// Shorthand for `--model.alpha_p`.
    #[arg(long)]
    alpha_p: Option<f64>,
    /// Shorthand for `--model.checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// CSV files written by `aiou`, `train`, `eval` or `grid`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

/// Errors that mean the invocation itself was wrong.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn shorthand(section: &str, key: &str, v: Option<String>) -> Option<Override> {
    v.map(|raw| Override {
        section: section.into(),
        key: key.into(),
        raw,
    })
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LAKF_NUM_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| UsageError(format!("LAKF_NUM_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(UsageError("LAKF_NUM_THREADS must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run() -> anyhow::Result<()> {
    let argv: Vec<String> = std::env::args().collect();
    let (argv, mut overrides) = config::extract_overrides(argv).map_err(|e| UsageError(format!("{e:#}")))?;
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        if matches!(
            e.kind(),
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
        ) {
            let _ = e.print();
            std::process::exit(0);
        }
        UsageError(e.render().to_string())
    })?;
    configure_threads()?;

    // Shorthand flags go first so dotted overrides win on conflict.
    let mut short = Vec::new();
    match &cli.command {
        Command::Gen(a) => {
            short.extend(shorthand("data", "alpha_p", a.alpha_p.map(|v| v.to_string())));
            short.extend(shorthand("data", "seed", a.seed.map(|v| v.to_string())));
        }
        Command::Eval(a) | Command::Track(a) => {
            short.extend(shorthand("model", "kind", a.model.as_deref().map(quoted)));
            short.extend(shorthand("model", "alpha_p", a.alpha_p.map(|v| v.to_string())));
            short.extend(shorthand(
                "model",
                "checkpoint",
                a.checkpoint.as_ref().map(|p| quoted(&p.to_string_lossy())),
            ));
        }
        _ => {}
    }
    short.append(&mut overrides);
    let cfg = config::load(cli.config.as_deref(), &short).map_err(|e| UsageError(format!("{e:#}")))?;

    let name = match &cli.command {
        Command::Gen(_) => "gen",
        Command::Aiou => "aiou",
        Command::Train => "train",
        Command::Eval(_) => "eval",
        Command::Grid => "grid",
        Command::Track(_) => "track",
        Command::Plot(_) => "plot",
    };
    let out = cli.out.unwrap_or_else(|| PathBuf::from("runs").join(name));
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;

    match cli.command {
        Command::Gen(_) => commands::gen(&cfg, &out),
        Command::Aiou => commands::aiou(&cfg, &out),
        Command::Train => commands::train(&cfg, &out),
        Command::Eval(_) => commands::eval(&cfg, &out),
        Command::Grid => commands::grid(&cfg, &out),
        Command::Track(_) => commands::track(&cfg, &out),
        Command::Plot(a) => plot::plot_all(&a.inputs, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("{u}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}
