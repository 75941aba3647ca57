//! `unlbench` subcommands. [`run`] parses arguments, executes, and returns
//! the process exit code: 0 on success, 1 when a sweep cell (or other
//! runtime step) fails, 2 for configuration and input errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use unlbench_core::nncore::encode_checkpoint;
use unlbench_core::results::ResultsWriter;
use unlbench_core::sweep::{execute, Schedule};
use unlbench_core::{analyze, read_results, render_report, Error, HarnessConfig, MetricRecord, SweepPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "unlbench",
    version,
    about = "Seed-sensitivity benchmark for machine-unlearning methods"
)]
pub struct Cli {
    /// Worker threads. Affects scheduling only; results are identical for any value.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train, unlearn and evaluate every cell of the configured grid(s).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Variance decomposition, quantiles and W2 from a results CSV.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// SVG figures from a results CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_config() { EXIT_CONFIG } else { EXIT_FAILURE };
        let message = match &e {
            Error::Json(_) => format!("configuration error: {e}"),
            _ => e.to_string(),
        };
        Failure { code, message }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Failure::from(Error::io(path, e)))
}

fn read_records(path: &Path) -> Result<Vec<MetricRecord>, Failure> {
    let file = fs::File::open(path).map_err(|e| config_failure(format!("cannot open {}: {e}", path.display())))?;
    Ok(read_results(file)?)
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("unlbench: {}", f.message);
            f.code
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    match cli.threads {
        Some(0) => return Err(config_failure("--threads must be at least 1")),
        Some(n) => pool = pool.num_threads(n),
        None => {}
    }
    let pool = pool.build().map_err(|e| Failure {
        code: EXIT_FAILURE,
        message: format!("thread pool: {e}"),
    })?;
    pool.install(|| match &cli.command {
        Command::Sweep { config, out } => sweep(config, out.as_deref()),
        Command::Analyze { input, out } => {
            let summary = analyze(&read_records(input)?)?;
            write_file(out, summary.to_json_pretty() + "\n")
        }
        Command::Report { input, out } => {
            for fig in render_report(&read_records(input)?)? {
                write_file(&out.join(&fig.file_name), fig.svg)?;
            }
            Ok(())
        }
    })
}

/// Relative path of the checkpoint for training seed `seed` of `plan`.
pub fn checkpoint_path(plan: &SweepPlan, seed: unlbench_core::Seed) -> PathBuf {
    let t = plan.experiment.target;
    PathBuf::from("checkpoints")
        .join(plan.protocol.as_str())
        .join(format!("{}-{}", t.kind.as_str(), t.id))
        .join(format!("train-{}.ckpt", seed.0))
}

fn sweep(config_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let config = HarnessConfig::load(config_path).map_err(|e| match e {
        Error::Io { .. } => config_failure(e.to_string()),
        e => Failure::from(e),
    })?;
    let out = match (out, &config.output_dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => PathBuf::from(o),
        (None, None) => return Err(config_failure("no output directory: pass --out or set `output_dir`")),
    };
    let plans = config.plans()?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_file(&out.join("config.json"), config.to_json_pretty() + "\n")?;
    let plans_json = serde_json::to_string_pretty(&plans).expect("plans serialise");
    write_file(&out.join("plans.json"), plans_json + "\n")?;

    let csv_path = out.join("results.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut writer = ResultsWriter::new(std::io::BufWriter::new(file))?;
    let mut failure = None;
    for plan in &plans {
        let run = execute(plan, Schedule::Parallel);
        for r in &run.records {
            writer.write(r)?;
        }
        for model in &run.trained {
            write_file(
                &out.join(checkpoint_path(plan, model.seed)),
                encode_checkpoint(&model.params),
            )?;
        }
        if let Some(e) = run.failure {
            let t = plan.experiment.target;
            failure = Some(Failure {
                code: if e.is_config() { EXIT_CONFIG } else { EXIT_FAILURE },
                message: format!(
                    "{} sweep on {} {} stopped: {e}; partial results in {}",
                    plan.protocol.as_str(),
                    t.kind.as_str(),
                    t.id,
                    csv_path.display()
                ),
            });
            break;
        }
    }
    writer.finish()?;
    failure.map_or(Ok(()), Err)
}
