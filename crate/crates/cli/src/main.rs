//! `qdroop`: analyses of quadratic-droop microgrids from a network file.
//!
//! Exit codes: 0 success, 1 negative analysis result (unstable, collapse,
//! failed check), 2 input error, 3 numeric failure.

mod commands;
mod json;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qdroop_core::netfile;
use qdroop_core::stability::TOL_HURWITZ;
use qdroop_core::{Error, ErrorClass, LoadKind, SolverOptions};
use sha2::{Digest, Sha256};

use commands::{Outcome, ShareMode, SimOverrides};
use json::Json;

#[derive(Parser)]
#[command(name = "qdroop", version, about = "Quadratic droop microgrid analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Network description file (TOML).
    network: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Zi,
    Zip,
    Cp,
    Ds,
}

impl From<ModelArg> for LoadKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Zi => LoadKind::Zi,
            ModelArg::Zip => LoadKind::Zip,
            ModelArg::Cp => LoadKind::ConstantPower,
            ModelArg::Ds => LoadKind::DynamicShunt,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Limit {
    High,
    Low,
}

#[derive(Subcommand)]
enum Command {
    /// Check the network structure and the reduced network properties.
    Validate(Common),
    /// Kron-reduce the network and report the reduced matrices.
    Reduce(Common),
    /// Solve for the closed-loop equilibrium.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Override the load model given in the file.
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
    },
    /// Certify stability of the equilibrium.
    Stability(Common),
    /// Reactive power sharing among inverters.
    Share {
        #[command(flatten)]
        common: Common,
        /// Scale all controller gains by this factor.
        #[arg(long, conflicts_with = "limit")]
        gain_scale: Option<f64>,
        /// Report a gain limit instead of a finite gain.
        #[arg(long, value_enum)]
        limit: Option<Limit>,
    },
    /// Verify that the equilibrium minimizes the network cost.
    Optimality(Common),
    /// Integrate the closed-loop dynamics.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scale all controller gains by this factor.
        #[arg(long)]
        gain_scale: Option<f64>,
        /// Write the trajectory as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        /// Multiplicative load noise; optional standard deviation.
        #[arg(long, num_args = 0..=1, default_missing_value = "NaN")]
        jitter: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Reduce(_) => "reduce",
            Command::Solve { .. } => "solve",
            Command::Stability(_) => "stability",
            Command::Share { .. } => "share",
            Command::Optimality(_) => "optimality",
            Command::Simulate { .. } => "simulate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Validate(c)
            | Command::Reduce(c)
            | Command::Stability(c)
            | Command::Optimality(c) => c,
            Command::Solve { common, .. }
            | Command::Share { common, .. }
            | Command::Simulate { common, .. } => common,
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Analysis => 1,
        ErrorClass::Input => 2,
        ErrorClass::Numeric => 3,
    }
}

fn solver_options() -> Result<SolverOptions, Error> {
    let mut opts = SolverOptions::default();
    if let Ok(raw) = std::env::var("QDROOP_TOL") {
        match raw.trim().parse::<f64>() {
            Ok(t) if t > 0.0 && t.is_finite() => opts.tol_fixed = t,
            _ => {
                return Err(Error::Validation(vec![format!(
                    "QDROOP_TOL must be a positive number (got '{raw}')"
                )]))
            }
        }
    }
    Ok(opts)
}

fn header(cmd: &str, path: &Path, digest: Option<&str>, opts: &SolverOptions) -> Json {
    Json::obj()
        .with("tool", "qdroop")
        .with("version", env!("CARGO_PKG_VERSION"))
        .with("command", cmd)
        .with("input", path.display().to_string())
        .with("input_sha256", digest.map(str::to_string))
        .with(
            "tolerances",
            Json::obj()
                .with("tol_fixed", opts.tol_fixed)
                .with("newton_tol", opts.newton_tol)
                .with("max_iter", opts.max_iter)
                .with("q_max", opts.q_max)
                .with("collapse_fraction", opts.collapse_fraction)
                .with("tol_hurwitz", TOL_HURWITZ),
        )
}

fn run(cmd: &Command, bytes: &[u8], opts: &SolverOptions) -> Result<Outcome, Error> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Validation(vec!["input is not valid UTF-8".into()]))?;
    let net = netfile::parse_str(text)?;
    match cmd {
        Command::Validate(_) => commands::validate(&net),
        Command::Reduce(_) => commands::reduce(&net),
        Command::Solve { model, .. } => commands::solve(&net, model.map(Into::into), opts),
        Command::Stability(_) => commands::stability(&net, opts),
        Command::Share {
            gain_scale, limit, ..
        } => {
            let mode = match (gain_scale, limit) {
                (_, Some(Limit::High)) => ShareMode::High,
                (_, Some(Limit::Low)) => ShareMode::Low,
                (Some(eps), None) => ShareMode::GainScale(*eps),
                (None, None) => ShareMode::GainScale(1.0),
            };
            commands::share(&net, mode, opts)
        }
        Command::Optimality(_) => commands::optimality(&net, opts),
        Command::Simulate {
            gain_scale,
            dt,
            t_end,
            jitter,
            seed,
            ..
        } => commands::simulate(
            &net,
            &SimOverrides {
                gain_scale: *gain_scale,
                dt: *dt,
                t_end: *t_end,
                jitter: jitter.map(|j| (!j.is_nan()).then_some(j)),
                seed: *seed,
            },
        ),
    }
}

fn emit(report: &Json, output: Option<&Path>) -> std::io::Result<()> {
    let text = report.render();
    match output {
        Some(p) => std::fs::write(p, text),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = &cli.command;
    let common = cmd.common();
    let opts = solver_options();
    let bytes = std::fs::read(&common.network);
    let digest = bytes.as_ref().ok().map(|b| hex::encode(Sha256::digest(b)));
    let base_opts = opts.as_ref().copied().unwrap_or_default();
    let mut report = header(cmd.name(), &common.network, digest.as_deref(), &base_opts);

    let result = match (opts, bytes) {
        (Err(e), _) => Err(e),
        (_, Err(e)) => Err(Error::Io(e)),
        (Ok(o), Ok(b)) => run(cmd, &b, &o),
    };
    let code = match result {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            report.push("warnings", out.warnings.as_slice());
            report.push("negative", out.negative);
            report.push("result", out.body);
            if let (
                Some(csv),
                Command::Simulate {
                    csv: Some(path), ..
                },
            ) = (&out.csv, cmd)
            {
                if let Err(e) = std::fs::write(path, csv) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            u8::from(out.negative)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut err = Json::obj()
                .with("class", format!("{:?}", e.class()).to_lowercase())
                .with("message", e.to_string());
            match &e {
                Error::Syntax { line, column, .. } => {
                    err.push("line", *line);
                    err.push("column", *column);
                }
                Error::Validation(items) => err.push("errors", items.as_slice()),
                _ => {}
            }
            report.push("error", err);
            exit_code(e.class())
        }
    };
    if let Err(e) = emit(&report, common.output.as_deref()) {
        eprintln!("error: cannot write report: {e}");
        return ExitCode::from(2);
    }
    ExitCode::from(code)
}
