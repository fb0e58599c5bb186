use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use semictl::{pipeline, read_config, reproduce, witness, Figure, Outcome, Overrides, PipelineOptions};
use semilinear_control::landscape::Policy;

/// Landscapes, calibrated targets and nonconvexity witnesses for semilinear
/// optimal control. Exit status: 0 certified, 2 refuted, 1 error.
#[derive(Parser)]
#[command(name = "semictl", version)]
struct Cli {
    /// Worker threads for parallel scans and descents.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Grid nodes.
    #[arg(long = "Nx")]
    nx: Option<usize>,
    /// Controls in the landscape scan.
    #[arg(long = "Nc")]
    nc: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// Scan interval.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    range: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            nodes: self.nx,
            controls: self.nc,
            beta: self.beta,
            range: self.range.as_ref().map(|r| (r[0], r[1])),
            policy: self.policy.map(Into::into),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Warm,
    Cold,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Warm => Policy::WarmSequential,
            PolicyArg::Cold => Policy::ColdParallel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FigureArg {
    Fig4,
    #[value(name = "fig5-8")]
    Fig5To8,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a built-in target and check its minima.
    Reproduce {
        #[arg(value_enum)]
        figure: FigureArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build and calibrate a target with two global minimizers, then scan,
    /// descend and check optimality.
    Pipeline {
        config: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
        u_minus: f64,
        #[arg(long, num_args = 2, value_names = ["U1", "U2"], default_values_t = [1.0, 2.0])]
        u_plus: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Build a target for which the cost is not convex near `u`.
    #[command(allow_negative_numbers = true)]
    Witness {
        config: PathBuf,
        u: f64,
        v: f64,
        /// Amplitude, or `auto` for twice the threshold.
        #[arg(default_value = "auto")]
        k: String,
        /// Difference step (default 1e-3 max(1, |u|)).
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_k(k: &str) -> Result<Option<f64>> {
    if k == "auto" {
        return Ok(None);
    }
    let k: f64 = k.parse().with_context(|| format!("amplitude must be a number or `auto` (got {k})"))?;
    if !k.is_finite() {
        bail!("amplitude must be finite");
    }
    Ok(Some(k))
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    }
    match cli.command {
        Command::Reproduce { figure, out, common } => {
            let figure = match figure {
                FigureArg::Fig4 => Figure::Fig4,
                FigureArg::Fig5To8 => Figure::Fig5To8,
            };
            let out = out.unwrap_or_else(|| PathBuf::from("out").join(figure.name()));
            let (outcome, v) = reproduce(figure, &common.overrides(), &out)?;
            for m in &v.minima {
                println!("minimum u = {:.6} I = {:.9e} ({:?})", m.u, m.i, m.kind);
            }
            if outcome == Outcome::Refuted {
                eprintln!("verdict mismatch for {} (expected {}):", v.figure, v.expected);
                for m in &v.mismatches {
                    eprintln!("  {m}");
                }
            }
            Ok(outcome)
        }
        Command::Pipeline { config, out_dir, u_minus, u_plus, common } => {
            let cfg = read_config(&config)?;
            let opts = PipelineOptions { u_minus, u_plus: (u_plus[0], u_plus[1]), ..Default::default() };
            let (outcome, v) = pipeline(&cfg, &common.overrides(), &opts, &out_dir)?;
            println!("calibrated shift {:.6e}, h1 = {:.9e}, h2 = {:.9e}", v.mu1, v.h1, v.h2);
            for m in &v.minima {
                println!("minimum u = {:.6} I = {:.9e} ({:?})", m.u, m.i, m.kind);
            }
            for m in &v.mismatches {
                eprintln!("  {m}");
            }
            Ok(outcome)
        }
        Command::Witness { config, u, v, k, h, out, common } => {
            let cfg = read_config(&config)?;
            let out = out.unwrap_or_else(|| PathBuf::from("out").join("witness"));
            let (outcome, w) = witness(&cfg, &common.overrides(), u, v, parse_k(&k)?, h, &out)?;
            println!(
                "k = {:.6e} (threshold {:.6e}), second difference {:.6e}, midpoint gap {:.6e}, violated = {}",
                w.witness.k, w.witness.k_star, w.witness.d2j, w.midpoint.gap, w.violated
            );
            Ok(outcome)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
