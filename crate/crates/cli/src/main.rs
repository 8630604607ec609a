//! `stagemoe` command-line driver.
//!
//! Failures print one line `error[<kind>]: <message>` on stderr. Exit code 1
//! means bad input or configuration, 2 means the numerics diverged.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "stagemoe", version, about = "Stage-aware mixture-of-experts progression models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic cohort with known ground truth.
    Generate(GenerateArgs),
    /// Train a model on a cohort and write the checkpoint and reports.
    Fit(FitArgs),
    /// Place subjects on a trained trajectory.
    Align(AlignArgs),
    /// Write the trained trajectory as CSV.
    Predict(PredictArgs),
    /// Align a cohort and report SSE and mean Pearson correlation.
    Evaluate(EvaluateArgs),
    /// Render a trajectory, gate or error-map CSV as SVG.
    ExportPlot(PlotArgs),
    /// Print configuration defaults.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Generator settings (key = value); defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for cohort.jsonl, truth.json and connectome.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Subjects, one JSON object per line.
    #[arg(long)]
    cohort: PathBuf,
    /// Connectome CSV: region-name header and an n×n weight matrix.
    #[arg(long)]
    connectome: PathBuf,
    /// Fit settings (key = value); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for alignment; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Run on a single thread.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    cohort: PathBuf,
    /// Placements CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Integrate up to this time; defaults to the trained horizon. Must be a
    /// whole number of steps.
    #[arg(long)]
    horizon: Option<f64>,
    /// Report only these times (comma-separated) instead of the whole grid.
    #[arg(long, value_delimiter = ',')]
    t: Vec<f64>,
    /// Trajectory CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    cohort: PathBuf,
    /// Fit report whose split selects the subjects; needs --split.
    #[arg(long, requires = "split")]
    report: Option<PathBuf>,
    #[arg(long, value_enum, requires = "report")]
    split: Option<SplitName>,
    /// Metrics JSON to write; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Trajectory, gate-curve or error-map CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PlotKind::Auto)]
    kind: PlotKind,
    #[arg(long)]
    title: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlotKind {
    /// Heat map for error-map tables, lines otherwise.
    Auto,
    Lines,
    Heat,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Print every key with its default value.
    #[arg(long, required = true)]
    dump: bool,
    /// Show the synthetic generator settings instead of the fit settings.
    #[arg(long)]
    synthetic: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let body = text.split("\n\nUsage:").next().unwrap_or("");
            let line: Vec<&str> = body.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            eprintln!("error[usage]: {}", line.join(" ").trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{kind}]: {message}");
            ExitCode::from(code)
        }
    }
}

/// Error kind label and exit code for the first library error in the chain.
fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    use stagemoe::Error as E;
    let Some(err) = e.chain().find_map(|c| c.downcast_ref::<E>()) else {
        return ("input", 1);
    };
    if err.is_divergence() {
        return ("divergence", 2);
    }
    let kind = match err {
        E::Parse { .. } | E::Json(_) => "parse",
        E::InvalidConfig(_) => "config",
        E::Checkpoint(_) => "checkpoint",
        E::Io(_) => "io",
        E::InvalidSubject { .. } | E::InfeasibleWindow { .. } | E::DegenerateRange(_) => "data",
        E::NonSquare { .. }
        | E::NegativeWeight { .. }
        | E::AsymmetryTooLarge { .. }
        | E::DuplicateRegionName(_)
        | E::InvalidConnectome(_) => "connectome",
        _ => "validation",
    };
    (kind, 1)
}
