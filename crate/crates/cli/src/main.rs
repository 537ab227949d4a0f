mod config;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use thiserror::Error;
use uarpo_lab::chart::{build_dataset, load_dataset, ChartError};
use uarpo_lab::eval::{
    compare_runs, evaluate, evaluate_naive, table1_markdown, write_eval_outputs, EvalError,
};
use uarpo_lab::policy::{load_checkpoint, PolicyError};
use uarpo_lab::train::{run_training, TrainError};

use config::RunConfig;
use plot::{LinePlot, Series};

#[derive(Debug, Error)]
pub enum CliError {
    /// Exit code 2.
    #[error("{0}")]
    Config(String),
    /// Malformed input file; exit code 2.
    #[error("{0}")]
    Input(String),
    /// Exit code 3.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Unreadable or inconsistent data on disk; exit code 3.
    #[error("{0}")]
    Data(String),
    /// Exit code 4.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Io { .. } | CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<ChartError> for CliError {
    fn from(e: ChartError) -> Self {
        match e {
            ChartError::Config(_) | ChartError::InvalidSpec { .. } => {
                CliError::Config(e.to_string())
            }
            ChartError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Config(_) => CliError::Config(e.to_string()),
            PolicyError::Io { path, source } => CliError::Io { path, source },
            PolicyError::NonFinite(_) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Dataset(e) => e.into(),
            TrainError::Policy(e) => e.into(),
            TrainError::Io { path, source } => CliError::Io { path, source },
            TrainError::NonFiniteLoss { .. } | TrainError::Autodiff(_) => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Uarpo(ref u) if !matches!(u, uarpo_lab::uarpo::UarpoError::Hyper(_)) => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Policy(e) => e.into(),
            EvalError::Dataset(e) => e.into(),
            EvalError::Io { path, source } => CliError::Io { path, source },
            EvalError::ImageSize { .. } => CliError::Config(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "uarpo-lab",
    version,
    about = "Synthetic chart data, UARPO/GRPO training, evaluation and plots"
)]
struct Cli {
    /// TOML run config; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides data.seed and train.seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory of the subcommand.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides one config key, e.g. --set train.iterations=3. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into --out (default: train.dataset).
    GenData,
    /// Train a policy; writes metrics.csv, timing.csv and checkpoints into
    /// --out (default: train.output).
    Train,
    /// Greedy evaluation of a checkpoint on a dataset split; writes
    /// report.csv, records.csv, groups.csv, table1.md and table2.md.
    Eval {
        /// Default: eval.checkpoint, else <train.output>/final.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Default: train.dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Align one metrics column of several runs by global_step. Runs are
    /// given as NAME=PATH or PATH. Writes <out>/compare.csv, or stdout.
    Compare {
        #[arg(required = true, value_name = "RUN")]
        runs: Vec<String>,
        #[arg(long, default_value = "train_accuracy")]
        column: String,
    },
    /// Line plots (PPM) of a metrics CSV (rewards.ppm, loss.ppm,
    /// accuracy.ppm) or of a compare CSV (compare.ppm).
    Plot {
        #[arg(value_name = "CSV")]
        input: PathBuf,
    },
}

fn cli_command() -> clap::Command {
    use config::defaults_help;
    Cli::command()
        .mut_subcommand("gen-data", |c| {
            c.after_help(defaults_help(&["data", "train"]))
        })
        .mut_subcommand("train", |c| {
            c.after_help(defaults_help(&[
                "model",
                "reward",
                "uarpo",
                "warm_start",
                "train",
            ]))
        })
        .mut_subcommand("eval", |c| c.after_help(defaults_help(&["eval", "train"])))
        .after_help(defaults_help(&[
            "data",
            "model",
            "reward",
            "uarpo",
            "warm_start",
            "train",
            "eval",
        ]))
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = config::load(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let manifest = build_dataset(&cfg.data, out)?;
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    println!("wrote {} samples to {}", manifest.total, out.display());
    Ok(())
}

fn train(mut cfg: RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    if let Some(out) = out {
        cfg.train.output = out;
    }
    if !cfg
        .train
        .dataset
        .join(uarpo_lab::chart::MANIFEST_FILE)
        .exists()
    {
        return Err(CliError::io(
            cfg.train.dataset.join(uarpo_lab::chart::MANIFEST_FILE),
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset manifest not found"),
        ));
    }
    let setup = cfg.train_setup();
    setup.validate()?;
    fs::create_dir_all(&cfg.train.output).map_err(|e| CliError::io(&cfg.train.output, e))?;
    let resolved = toml::to_string(&cfg).expect("config serializes");
    write(&cfg.train.output.join("config.toml"), resolved)?;
    let summary = run_training(&setup)?;
    println!(
        "{} steps; final checkpoint {}",
        summary.rows.len(),
        summary.final_checkpoint.display()
    );
    Ok(())
}

fn eval(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let checkpoint = checkpoint.unwrap_or_else(|| cfg.eval_checkpoint());
    let params = load_checkpoint(&checkpoint)?;
    let dataset = load_dataset(&dataset.unwrap_or_else(|| cfg.train.dataset.clone()))?;
    let out = out.unwrap_or_else(|| cfg.eval_output());
    let (report, records) = evaluate(&params, &dataset, cfg.eval.split, cfg.eval.max_len)?;
    let naive = if cfg.eval.include_naive {
        Some(evaluate_naive(&dataset, cfg.eval.split)?.0)
    } else {
        None
    };
    let groups = write_eval_outputs(
        &out,
        &cfg.eval.model_name,
        &report,
        &records,
        naive.as_ref(),
    )?;
    if groups.is_none() {
        log::warn!("fewer than 3 evaluated samples; confidence groups skipped");
    }
    let mut rows = Vec::new();
    if let Some(n) = &naive {
        rows.push(("Naive", n));
    }
    rows.push((cfg.eval.model_name.as_str(), &report));
    print!("{}", table1_markdown(&rows));
    Ok(())
}

fn run_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    match path
        .parent()
        .and_then(Path::file_name)
        .and_then(|s| s.to_str())
    {
        Some(parent) if stem == "metrics" => parent.to_string(),
        _ => stem.to_string(),
    }
}

fn compare(runs: &[String], column: &str, out: Option<PathBuf>) -> Result<(), CliError> {
    let runs: Vec<(String, PathBuf)> = runs
        .iter()
        .map(|r| match r.split_once('=') {
            Some((name, path)) => (name.to_string(), PathBuf::from(path)),
            None => (run_name(Path::new(r)), PathBuf::from(r)),
        })
        .collect();
    let table = compare_runs(&runs, column)?;
    match out {
        Some(dir) => {
            fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            write(&dir.join("compare.csv"), table)
        }
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

/// Numeric columns of a CSV keyed by header; blanks are `None`.
fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>), CliError> {
    let bad =
        |row: usize, msg: String| CliError::Input(format!("{}: row {row}: {msg}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| bad(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.iter().all(String::is_empty) {
        return Err(bad(1, "empty file".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| bad(row, e.to_string()))?;
        let mut values = Vec::with_capacity(rec.len());
        for (field, name) in rec.iter().zip(&headers) {
            if field.is_empty() {
                values.push(None);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| bad(row, format!("{name}: {field:?} is not a number")))?;
                values.push(Some(v));
            }
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(bad(2, "no data rows".into()));
    }
    Ok((headers, rows))
}

fn series(headers: &[String], rows: &[Vec<Option<f64>>], x: usize, names: &[&str]) -> Vec<Series> {
    names
        .iter()
        .filter_map(|n| headers.iter().position(|h| h == n))
        .map(|col| Series {
            name: headers[col].clone(),
            points: rows
                .iter()
                .map(|r| Some((r[x]?, r[col]?)).filter(|(a, b)| a.is_finite() && b.is_finite()))
                .collect(),
        })
        .collect()
}

fn plot(input: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let (headers, rows) = read_numeric_csv(input)?;
    let x = headers
        .iter()
        .position(|h| h == "global_step")
        .ok_or_else(|| {
            CliError::Input(format!("{}: row 1: no global_step column", input.display()))
        })?;
    let dir = out.unwrap_or_else(|| input.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let figures: Vec<(&str, &str, Vec<Series>)> = if headers.iter().any(|h| h == "reward_total") {
        vec![
            (
                "rewards",
                "mean reward",
                series(
                    &headers,
                    &rows,
                    x,
                    &[
                        "reward_accuracy",
                        "reward_format",
                        "reward_length",
                        "reward_total",
                    ],
                ),
            ),
            ("loss", "loss", series(&headers, &rows, x, &["loss"])),
            (
                "accuracy",
                "fraction",
                series(&headers, &rows, x, &["train_accuracy", "format_valid"]),
            ),
        ]
    } else {
        let names: Vec<&str> = headers
            .iter()
            .filter(|h| h.as_str() != "global_step")
            .map(String::as_str)
            .collect();
        vec![("compare", "accuracy", series(&headers, &rows, x, &names))]
    };
    for (name, y_label, s) in &figures {
        let plot = LinePlot {
            title: name,
            x_label: "global step",
            y_label,
            series: s,
        };
        let canvas = plot.render().ok_or_else(|| {
            CliError::Input(format!(
                "{}: no finite values to plot for {name}",
                input.display()
            ))
        })?;
        let path = dir.join(format!("{name}.ppm"));
        write(&path, canvas.to_ppm())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData => {
            let cfg = load_config(&cli)?;
            let out = cli.out.clone().unwrap_or_else(|| cfg.train.dataset.clone());
            gen_data(&cfg, &out)
        }
        Command::Train => train(load_config(&cli)?, cli.out.clone()),
        Command::Eval {
            checkpoint,
            dataset,
        } => eval(
            &load_config(&cli)?,
            checkpoint.clone(),
            dataset.clone(),
            cli.out.clone(),
        ),
        Command::Compare { runs, column } => compare(runs, column, cli.out.clone()),
        Command::Plot { input } => plot(input, cli.out.clone()),
    }
}

fn main() -> ExitCode {
    let matches = cli_command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
