//! `dwn`: data preparation, training, export, RTL emission and reporting.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use dwn_core::train::TrainConfig;

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "dwn", version, about = "Weightless LUT networks for activity recognition")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a dataset root, build load caches and print split statistics.
    PrepareData(PrepareArgs),
    /// Train a model; every config key is also accepted as `--key-name VALUE`.
    Train(TrainArgs),
    /// Score a checkpoint or frozen model on a split.
    Eval(EvalArgs),
    /// Freeze a checkpoint into an inference model file.
    Export(ExportArgs),
    /// Lower a model to SystemVerilog.
    EmitRtl(EmitArgs),
    /// Measure single-threaded inference throughput.
    Bench(BenchArgs),
    /// Energy of a FLOP count at 0.761 nJ per FLOP.
    EstimateEnergy(EnergyArgs),
    /// Comparison table from a FLOP/size manifest plus a local model summary.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Dataset root holding `train/` and `test/`.
    #[arg(long)]
    pub data: PathBuf,
    /// Instead of reading, write a synthetic dataset with this many windows
    /// per class and split.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub synthetic_seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the frozen model here.
    #[arg(long)]
    pub frozen: Option<PathBuf>,
    /// Epoch log (JSON lines); default `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Hold out this fraction of training windows for validation instead of
    /// scoring the test split each epoch.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(skip)]
    pub overrides: Vec<(String, String)>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Confusion grid output; default `<model>.confusion.txt`.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EmitArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "dwn_top")]
    pub module: String,
    /// Register stages; default one per LUT layer plus one after the popcount.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Node-count report; default `<out>.report.txt`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Interpret the netlist on this many random inputs and compare with the
    /// model.
    #[arg(long)]
    pub check: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset root; random windows are used when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 256)]
    pub random_windows: usize,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EnergyArgs {
    #[arg(long)]
    pub flops: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// JSON list of {name, flops, size_kib, accuracy, macro_f1}; published
    /// baseline figures are used when absent.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Local models to summarize.
    #[arg(long = "model", num_args = 1..)]
    pub models: Vec<PathBuf>,
    /// Score local models on this dataset's test split.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> clap::Command {
    Cli::command().mut_subcommand("train", |mut c| {
        for key in TrainConfig::KEYS {
            let help = format!("override config key `{key}` (default {})", TrainConfig::default().get(key).unwrap());
            c = c.arg(
                Arg::new(*key)
                    .long(flag_name(key))
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .help(help),
            );
        }
        c
    })
}

fn parse() -> Result<Cli, clap::Error> {
    let matches = command().try_get_matches()?;
    let mut cli = Cli::from_arg_matches(&matches)?;
    if let (Command::Train(t), Some(("train", sub))) = (&mut cli.command, matches.subcommand()) {
        t.overrides = overrides(sub);
    }
    Ok(cli)
}

fn overrides(m: &ArgMatches) -> Vec<(String, String)> {
    TrainConfig::KEYS
        .iter()
        .filter_map(|k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::new("usage", e))?;
    }
    match cli.command {
        Command::PrepareData(a) => commands::prepare_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Export(a) => commands::export(&a),
        Command::EmitRtl(a) => commands::emit_rtl(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::EstimateEnergy(a) => commands::estimate_energy(&a),
        Command::Report(a) => commands::report(&a),
    }
}

fn main() -> ExitCode {
    let cli = match parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::FAILURE
        }
    }
}
