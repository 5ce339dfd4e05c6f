//! Command-line driver: `watch`, `compose`, `eval` and `strategy-compare`.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod scene_file;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const THREADS_ENV: &str = "WATCHFORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "watchforge", version, about = "Synthetic pose and box datasets from a voxel scene")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a viewpoint set and write images with pose and box labels.
    Watch(RunArgs),
    /// Paste annotated objects from a watch dataset onto background images.
    Compose(RunArgs),
    /// Score nearest-view pose estimation of gallery datasets on a query set.
    Eval(EvalArgs),
    /// Compare Loop, Helix and Random galleries on a shared random query set.
    StrategyCompare(CompareArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Source watch dataset (compose).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub theta_step: Option<f64>,
    #[arg(long)]
    pub phi_step: Option<f64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Gallery dataset directories; one results row each.
    #[arg(required = true)]
    pub galleries: Vec<PathBuf>,
    /// Query dataset directory.
    #[arg(long, conflicts_with = "self_query", required_unless_present = "self_query")]
    pub query: Option<PathBuf>,
    /// Query each gallery with its own images.
    #[arg(long = "self")]
    pub self_query: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Query dataset directory instead of a generated random set.
    #[arg(long)]
    pub query: Option<PathBuf>,
}

impl RunArgs {
    /// Config file first, then flags on top.
    pub fn to_config(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let here = Path::new("");
        let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(k, &v, here));
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        set("scene", path(&self.scene))?;
        set("out", path(&self.out))?;
        set("dataset", path(&self.dataset))?;
        set("backgrounds", path(&self.backgrounds))?;
        set("strategy", self.strategy.clone())?;
        set("theta_step", self.theta_step.map(|v| v.to_string()))?;
        set("phi_step", self.phi_step.map(|v| v.to_string()))?;
        set("count", self.count.map(|v| v.to_string()))?;
        set("gamma", self.gamma.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("n", self.n.map(|v| v.to_string()))?;
        Ok(cfg)
    }
}

/// Runs a parsed command and returns the text to print on success.
pub fn execute(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Watch(a) => {
            let cfg = a.to_config()?;
            let m = commands::watch(&cfg)?;
            let valid = m.records.iter().filter(|r| r.valid).count();
            Ok(format!(
                "wrote {} images ({valid} valid) to {}",
                m.records.len(),
                cfg.require_output()?.display()
            ))
        }
        Command::Compose(a) => {
            let cfg = a.to_config()?;
            let m = commands::compose(&cfg)?;
            Ok(format!(
                "wrote {} composites ({} skipped) to {}",
                m.records.len(),
                m.skipped,
                cfg.require_output()?.display()
            ))
        }
        Command::Eval(a) => {
            let query = if a.self_query { None } else { a.query.as_deref() };
            let r = commands::eval(&a.galleries, query, a.out.as_deref())?;
            Ok(commands::format_table(&r))
        }
        Command::StrategyCompare(a) => {
            let cfg = a.run.to_config()?;
            let r = commands::strategy_compare(&cfg, a.query.as_deref())?;
            Ok(commands::format_table(&r))
        }
    }
}

/// Worker count from `WATCHFORGE_THREADS`; `None` leaves rayon's default.
pub fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_ENV}='{v}' must be a positive integer"))),
        },
    }
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Full entry point: parse, run, report. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let head = text.split("\n\nUsage").next().unwrap_or_default();
            let msg = head.split_whitespace().collect::<Vec<_>>().join(" ");
            let msg = msg.trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Config(msg).line());
            return 2;
        }
    };
    let result = threads_from_env().and_then(|t| with_threads(t, || execute(&cli))).and_then(|r| r);
    match result {
        Ok(text) => {
            println!("{}", text.trim_end());
            0
        }
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
