//! Command-line front end for `tubetopo`.
//!
//! [`run`] parses argv, layers the configuration, sizes the worker pool and
//! dispatches one subcommand. Exit codes: 0 success, 2 usage error, 3 data
//! error, 4 internal invariant violation.

mod commands;
pub mod config;
mod selftest;

use std::ffi::OsString;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use config::{at, load_file, parse_assignment, resolve, Settings};

pub use selftest::{run_checks, Check};

/// Environment variable read for the worker count when no flag is given.
pub const THREADS_ENV: &str = "TUBETOPO_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] tubetopo::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Data(tubetopo::Error::InvalidConfig(_)) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Data(e) => e.code(),
            CliError::Internal(_) => "Internal",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tubetopo", version, about = "Topology tools for tubular segmentation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML or JSON config file; a report written by this tool also works.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set edm.window=[12,12,12]`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: $TUBETOPO_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the report as JSON on stdout and errors as JSON on stderr.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Args, Default)]
struct ThinningArgs {
    /// Soft-skeleton erosion steps.
    #[arg(long)]
    iterations: Option<usize>,
    /// Read float inputs as logits.
    #[arg(long)]
    logits: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Soft skeleton of a mask or score volume.
    Skeletonize {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        thinning: ThinningArgs,
    },
    /// Skeleton endpoints of a mask.
    Endpoints {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// The input already is a skeleton.
        #[arg(long)]
        skeleton: bool,
        #[command(flatten)]
        thinning: ThinningArgs,
    },
    /// Discontinuity mask from ground truth and prediction.
    Mine {
        gt: PathBuf,
        pred: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Cube window, `N` or `Z,Y,X`.
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        min_pts: Option<usize>,
        /// `random` or `medoid`.
        #[arg(long)]
        representative: Option<String>,
        #[arg(long)]
        std_multiplier: Option<f64>,
        #[command(flatten)]
        thinning: ThinningArgs,
    },
    /// Dice, clDice, Betti numbers and Hausdorff distance.
    Metrics {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Comma-separated foreground labels.
        #[arg(long)]
        classes: Option<String>,
        /// Use the 95th-percentile Hausdorff distance.
        #[arg(long)]
        hd95: bool,
        /// Average the Betti error over patches of this size.
        #[arg(long)]
        patch: Option<String>,
        #[arg(long)]
        stride: Option<String>,
        #[command(flatten)]
        thinning: ThinningArgs,
    },
    /// Dual-attention refinement of segmentation logits.
    DarApply {
        seg: PathBuf,
        ske: PathBuf,
        dis: PathBuf,
        #[arg(long)]
        hr: Option<PathBuf>,
        #[arg(long)]
        hc: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Total training objective from head outputs or component values.
    LossEval {
        /// Component values `{l_seg, l_dis, l_ske, l_con, l_dar}` (JSON or TOML).
        #[arg(long, conflicts_with_all = ["gt", "seg", "ske", "dis", "refined"])]
        parts: Option<PathBuf>,
        #[arg(long, requires_all = ["seg", "ske", "dis", "refined"])]
        gt: Option<PathBuf>,
        #[arg(long)]
        seg: Option<PathBuf>,
        #[arg(long)]
        ske: Option<PathBuf>,
        #[arg(long)]
        dis: Option<PathBuf>,
        #[arg(long)]
        refined: Option<PathBuf>,
        /// Discontinuity target; mined from `gt` and `seg` when absent.
        #[arg(long)]
        dis_gt: Option<PathBuf>,
        /// Skeleton target; the skeleton of `gt` when absent.
        #[arg(long)]
        ske_gt: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Synthetic tube network with injected cuts.
    Synth {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        cuts: Option<usize>,
        #[arg(long)]
        branches: Option<usize>,
        /// Volume shape, `N`, `Y,X` or `Z,Y,X`.
        #[arg(long)]
        shape: Option<String>,
        /// `nii`, `nii.gz` or `pgm`.
        #[arg(long, default_value = "nii.gz")]
        format: String,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

/// `N` or a comma list of three (or two, padded with z = 1) extents.
pub(crate) fn parse_triple(text: &str, what: &str) -> Result<[usize; 3], CliError> {
    let parts: Result<Vec<usize>, _> = text.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match parts.as_deref() {
        Ok([n]) => Ok([*n; 3]),
        Ok([y, x]) => Ok([1, *y, *x]),
        Ok([z, y, x]) => Ok([*z, *y, *x]),
        _ => Err(CliError::Usage(format!("{what} expects N, Y,X or Z,Y,X; got {text:?}"))),
    }
}

fn thinning_layers(t: &ThinningArgs, layers: &mut Vec<Value>) {
    if let Some(n) = t.iterations {
        layers.push(at("thinning.iterations", json!(n)));
    }
    if t.logits {
        layers.push(at("input.logits", json!(true)));
    }
}

/// Flag overrides of a subcommand, as config layers.
fn flag_layers(cmd: &Command) -> Result<Vec<Value>, CliError> {
    let mut layers = Vec::new();
    match cmd {
        Command::Skeletonize { thinning, .. } => thinning_layers(thinning, &mut layers),
        Command::Endpoints { thinning, skeleton, .. } => {
            thinning_layers(thinning, &mut layers);
            if *skeleton {
                layers.push(at("input.is_skeleton", json!(true)));
            }
        }
        Command::Mine { window, eps, min_pts, representative, std_multiplier, thinning, .. } => {
            thinning_layers(thinning, &mut layers);
            if let Some(w) = window {
                layers.push(at("edm.window", json!(parse_triple(w, "--window")?)));
            }
            if let Some(e) = eps {
                layers.push(at("edm.dbscan_eps", json!(e)));
            }
            if let Some(m) = min_pts {
                layers.push(at("edm.dbscan_min_pts", json!(m)));
            }
            if let Some(r) = representative {
                layers.push(at("edm.representative", json!(r)));
            }
            if let Some(m) = std_multiplier {
                layers.push(at("edm.std_multiplier", json!(m)));
            }
        }
        Command::Metrics { classes, hd95, patch, stride, thinning, .. } => {
            thinning_layers(thinning, &mut layers);
            if let Some(c) = classes {
                let list: Result<Vec<u32>, _> = c.split(',').map(|p| p.trim().parse::<u32>()).collect();
                let list = list.map_err(|_| CliError::Usage(format!("--classes expects a comma list, got {c:?}")))?;
                layers.push(at("metrics.classes", json!(list)));
            }
            if *hd95 {
                layers.push(at("metrics.hausdorff", json!("percentile95")));
            }
            if let Some(p) = patch {
                let p = parse_triple(p, "--patch")?;
                let s = match stride {
                    Some(s) => parse_triple(s, "--stride")?,
                    None => p,
                };
                layers.push(at("metrics.patch", json!({"mode": "patches", "patch_shape": p, "stride": s})));
            } else if stride.is_some() {
                return Err(CliError::Usage("--stride needs --patch".into()));
            }
        }
        Command::LossEval { alpha, beta, .. } => {
            if let Some(a) = alpha {
                layers.push(at("loss.alpha", json!(a)));
            }
            if let Some(b) = beta {
                layers.push(at("loss.beta", json!(b)));
            }
        }
        Command::Synth { cuts, branches, shape, .. } => {
            if let Some(c) = cuts {
                layers.push(at("synth.cuts.n_cuts", json!(c)));
            }
            if let Some(b) = branches {
                layers.push(at("synth.network.n_branches", json!(b)));
            }
            if let Some(s) = shape {
                let flat = s.split(',').count() == 2;
                let dims = parse_triple(s, "--shape")?;
                let rank = if flat { 2 } else { 3 };
                layers.push(at("synth.network.shape", json!({"rank": rank, "dims": dims})));
            }
        }
        Command::DarApply { .. } | Command::Selftest => {}
    }
    Ok(layers)
}

fn settings_for(cli: &Cli) -> Result<Settings, CliError> {
    let mut layers = Vec::new();
    if let Some(path) = &cli.global.config {
        layers.push(load_file(path)?);
    }
    for s in &cli.global.set {
        layers.push(parse_assignment(s)?);
    }
    layers.extend(flag_layers(&cli.command)?);
    if let Some(seed) = cli.global.seed {
        layers.push(at("seed", json!(seed)));
    }
    resolve(layers)
}

fn thread_count(flag: Option<usize>, settings: &Settings) -> Result<Option<usize>, CliError> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        ),
        _ => None,
    };
    let n = flag.or(env).or(settings.threads);
    if n == Some(0) {
        return Err(CliError::Usage("thread count must be >= 1".into()));
    }
    Ok(n)
}

/// What a subcommand hands back for printing.
pub(crate) struct Outcome {
    pub report: tubetopo::volio::Report,
    pub summary: String,
    /// Set by `selftest` when a check failed.
    pub failed: bool,
}

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let settings = settings_for(cli)?;
    let threads = thread_count(cli.global.threads, &settings)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(&cli.command, settings))
}

fn report_error(err: &CliError, json_mode: bool) {
    if json_mode {
        let doc = json!({"error": {"code": err.code(), "message": err.to_string(), "exit_code": err.exit_code()}});
        eprintln!("{doc}");
    } else {
        eprintln!("error[{}]: {err}", err.code());
    }
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let json_mode = argv.iter().any(|a| a == "--json");
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if json_mode {
                report_error(&CliError::Usage(e.kind().to_string()), true);
            } else {
                eprint!("{e}");
            }
            return 2;
        }
    };

    let result = catch_unwind(AssertUnwindSafe(|| execute(&cli))).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(CliError::Internal(msg))
    });

    match result {
        Ok(outcome) => {
            if cli.global.json {
                match tubetopo::volio::to_json_string(&outcome.report) {
                    Ok(text) => print!("{text}"),
                    Err(e) => {
                        let err = CliError::Internal(e.to_string());
                        report_error(&err, true);
                        return err.exit_code();
                    }
                }
            } else {
                println!("{}", outcome.summary);
            }
            if outcome.failed {
                4
            } else {
                0
            }
        }
        Err(err) => {
            report_error(&err, cli.global.json);
            err.exit_code()
        }
    }
}
