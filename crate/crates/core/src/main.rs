//! Command-line driver for the QCS analysis toolkit.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qcs::driver::{self, MethodChoice, RunOptions, SweepSpec};
use qcs::{QcsError, Scenario};

#[derive(Parser)]
#[command(
    name = "qcs",
    version,
    about = "Quantum circuit switching in star networks: \
window-problem moments, M/G/s waiting times, capacity solvers, and a discrete-event validator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Monte Carlo samples per window-moment estimate.
    #[arg(long)]
    samples: Option<u64>,

    /// Master seed; everything that draws randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,

    /// Simulation replications.
    #[arg(long, default_value_t = 10)]
    replications: u32,

    /// Measured requests per replication.
    #[arg(long, default_value_t = 20_000)]
    measured: u64,

    /// Warmup requests per replication (heuristic when omitted).
    #[arg(long)]
    warmup: Option<u64>,

    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one scenario: load, moments, waiting time, mean sojourn.
    Eval {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// auto | analytic | simulate.
        #[arg(long, default_value = "auto")]
        method: MethodChoice,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Emit the data grid behind one of the bundled figures.
    Figure {
        /// fig3 | fig4a | fig4b | fig5 | fig7 | fig8 | fig9 | fig10 | fig11.
        name: String,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run a Cartesian parameter sweep described by a JSON spec.
    Sweep {
        /// Sweep spec JSON file.
        spec: PathBuf,
        /// auto | analytic | simulate (overrides the spec).
        #[arg(long)]
        method: Option<MethodChoice>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the discrete-event simulator on one scenario.
    Simulate {
        /// Scenario JSON file.
        scenario: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn options(common: &CommonOpts, method: MethodChoice) -> RunOptions {
    RunOptions {
        samples: common.samples,
        seed: common.seed.unwrap_or(1),
        method,
        replications: common.replications,
        measured: common.measured,
        warmup: common.warmup,
    }
}

fn load_scenario(path: &PathBuf) -> Result<Scenario, QcsError> {
    Scenario::from_json(&fs::read_to_string(path)?)
}

/// Writes through a buffer so output is committed atomically per command.
fn with_output<F>(out: &Option<PathBuf>, f: F) -> Result<(), QcsError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), QcsError>,
{
    let mut buf: Vec<u8> = Vec::new();
    f(&mut buf)?;
    match out {
        Some(path) => fs::write(path, buf)?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), QcsError> {
    match cli.command {
        Command::Eval {
            scenario,
            method,
            common,
        } => {
            let sc = load_scenario(&scenario)?;
            let opts = options(&common, method);
            let mut overloaded = None;
            with_output(&common.out, |out| {
                let outcome = driver::eval(&sc, &opts, out)?;
                if !outcome.stable {
                    overloaded = Some(outcome.rho);
                }
                Ok(())
            })?;
            match overloaded {
                Some(rho) => Err(QcsError::Overloaded { rho }),
                None => Ok(()),
            }
        }
        Command::Figure { name, common } => {
            let opts = options(&common, MethodChoice::Auto);
            with_output(&common.out, |out| driver::figure(&name, &opts, out))
        }
        Command::Sweep {
            spec,
            method,
            common,
        } => {
            let spec = SweepSpec::from_json(&fs::read_to_string(&spec)?)?;
            let cli_opts = options(&common, method.unwrap_or(MethodChoice::Auto));
            let opts = spec.merge_options(&cli_opts, common.seed);
            let out = common
                .out
                .clone()
                .or_else(|| spec.out.clone().map(PathBuf::from));
            with_output(&out, |w| driver::sweep(&spec, &opts, w))
        }
        Command::Simulate { scenario, common } => {
            let sc = load_scenario(&scenario)?;
            let opts = options(&common, MethodChoice::Simulate);
            with_output(&common.out, |out| driver::simulate(&sc, &opts, out))
        }
    }
}

fn main() -> ExitCode {
    // QCS_THREADS caps the worker pool; results do not depend on it.
    if let Ok(threads) = std::env::var("QCS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
