//! `slsp` command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage error,
//! 3 I/O or format error.

use std::io::Write;
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use slsp_core::container::ContainerError;
use slsp_core::pattern::{parse_pair, parse_ratio, Ratio};
use slsp_core::{DType, QuantFormat, SparsityPattern};

mod analyze;
mod bench;
mod commands;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "SLSP_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] slsp_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use slsp_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::Core(
                E::InvalidPattern(_)
                | E::AlreadyCompliant { .. }
                | E::InsufficientCapacity { .. }
                | E::NonIntegralWindowCount { .. },
            ) => EXIT_USAGE,
            CliError::Core(E::NotCompliant { .. } | E::Unplaced { .. }) => EXIT_VERIFY,
            CliError::Container(ContainerError::Core(e)) => CliError::Core(e.clone()).exit_code(),
            _ => EXIT_IO,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "slsp", version, about = "Pack Z:L sparse weights onto M:N hardware windows, and check the result")]
pub struct Cli {
    /// Seed for every generated tensor.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores). SLSP_THREADS takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress summaries on stdout.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct HwArgs {
    /// Hardware pattern `m:n`.
    #[arg(long, value_parser = parse_pair, default_value = "2:4")]
    pub hw: (usize, usize),
    /// Hardware speedup of m:n over dense (decimal or fraction); defaults to n/m.
    #[arg(long, value_parser = parse_ratio)]
    pub alpha: Option<Ratio>,
}

impl HwArgs {
    pub fn pattern(&self, (z, l): (usize, usize)) -> CliResult<SparsityPattern> {
        let p = SparsityPattern::new(z, l, self.hw.0, self.hw.1)?;
        Ok(match self.alpha {
            Some(a) => p.with_alpha(a)?,
            None => p,
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random dense container (Z:L-compliant when --pattern is given).
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value = "int8")]
        dtype: DType,
        /// Source pattern `z:l` the rows must satisfy.
        #[arg(long, value_parser = parse_pair)]
        pattern: Option<(usize, usize)>,
    },
    /// Pack a dense weight container into hardware windows.
    Pack {
        input: PathBuf,
        output: PathBuf,
        /// Source pattern `z:l`.
        #[arg(long, value_parser = parse_pair)]
        pattern: (usize, usize),
        #[command(flatten)]
        hw: HwArgs,
        /// Magnitude-prune each block to the pattern first.
        #[arg(long)]
        prune: bool,
        /// Write the compressed values-plus-metadata form.
        #[arg(long)]
        compress: bool,
    },
    /// Check sparse and dense products agree on random activations.
    Verify {
        weights: PathBuf,
        /// Source pattern, required when the weights are dense.
        #[arg(long, value_parser = parse_pair)]
        pattern: Option<(usize, usize)>,
        #[command(flatten)]
        hw: HwArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Activation columns per trial.
        #[arg(long, default_value_t = 8)]
        tokens: usize,
        /// Largest allowed |diff| / (|w_i| |x_t|) for real dtypes.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Quantize, lift and pack a dense activation container.
    Lift {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_parser = parse_pair)]
        pattern: (usize, usize),
        #[command(flatten)]
        hw: HwArgs,
        #[arg(long, default_value = "int8")]
        format: QuantFormat,
    },
    /// Closed-form reports: one pattern, the case table, R_theory or efficiency.
    #[command(group(ArgGroup::new("mode").required(true).args(["pattern", "table", "r_theory", "efficiency"])))]
    Analyze {
        #[arg(long, value_parser = parse_pair)]
        pattern: Option<(usize, usize)>,
        #[command(flatten)]
        hw: HwArgs,
        /// Case table over --family.
        #[arg(long)]
        table: bool,
        #[arg(long, value_parser = parse_pair, value_delimiter = ',')]
        family: Vec<(usize, usize)>,
        /// Theoretical speedup ratio table against 2:4.
        #[arg(long)]
        r_theory: bool,
        /// CSV with header `s_24,s_pattern,z,l`.
        #[arg(long)]
        efficiency: Option<PathBuf>,
        /// Activation rows for the I/O model (with --pattern).
        #[arg(long, default_value_t = 1)]
        rows: usize,
        /// Activation columns for the I/O model; defaults to l.
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Time dense vs sparse GEMM and quantize-only vs fused activation paths.
    Bench {
        weights: PathBuf,
        /// Source pattern, required when the weights are dense.
        #[arg(long, value_parser = parse_pair)]
        pattern: Option<(usize, usize)>,
        #[command(flatten)]
        hw: HwArgs,
        /// Token counts to run.
        #[arg(long, value_delimiter = ',', default_value = "1,16,64")]
        m_list: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Thread count from the environment, then the flag, then all cores.
pub fn resolve_threads(flag: Option<usize>) -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))),
        _ => Ok(flag.unwrap_or(0)),
    }
}

pub struct Ctx<'a> {
    pub seed: u64,
    pub quiet: bool,
    out: &'a mut (dyn Write + Send),
}

impl Ctx<'_> {
    /// Summary line, dropped under `--quiet`.
    pub fn say(&mut self, line: impl AsRef<str>) -> CliResult {
        if !self.quiet {
            writeln!(self.out, "{}", line.as_ref())?;
        }
        Ok(())
    }
}

pub fn execute(cli: Cli, out: &mut (dyn Write + Send)) -> CliResult {
    let threads = resolve_threads(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
    let mut ctx = Ctx { seed: cli.seed, quiet: cli.quiet, out };
    pool.install(|| match cli.command {
        Command::Gen { out, rows, cols, dtype, pattern } => commands::gen(&mut ctx, &out, rows, cols, dtype, pattern),
        Command::Pack { input, output, pattern, hw, prune, compress } => {
            commands::pack(&mut ctx, &input, &output, hw.pattern(pattern)?, prune, compress)
        }
        Command::Verify { weights, pattern, hw, trials, tokens, tolerance } => {
            let pattern = pattern.map(|p| hw.pattern(p)).transpose()?;
            commands::verify(&mut ctx, &weights, pattern, trials, tokens, tolerance)
        }
        Command::Lift { input, output, pattern, hw, format } => {
            commands::lift(&mut ctx, &input, &output, hw.pattern(pattern)?, format)
        }
        Command::Analyze { pattern, hw, table, family, r_theory, efficiency, rows, cols, json, csv } => {
            let mode = if let Some(p) = pattern {
                analyze::Mode::Pattern { pattern: hw.pattern(p)?, rows, cols }
            } else if table {
                analyze::Mode::Table { hw, family }
            } else if r_theory {
                analyze::Mode::RTheory
            } else {
                analyze::Mode::Efficiency(efficiency.expect("clap requires one mode"))
            };
            analyze::run(&mut ctx, mode, json.as_deref(), csv.as_deref())
        }
        Command::Bench { weights, pattern, hw, m_list, repeats, warmup, out } => {
            let pattern = pattern.map(|p| hw.pattern(p)).transpose()?;
            let opts = bench::Options { m_list, repeats, warmup };
            bench::run(&mut ctx, &weights, pattern, &opts, out.as_deref())
        }
    })
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Diagnostics go to `err`.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
