//! `harnack-lab`: batch front-end for the harnack_lab experiments.
//!
//! Settings are resolved in the order defaults < `--config` file < flags. The
//! output directory is `--out`, else `HARNACK_LAB_OUT`, else the config's
//! `output_dir`, else `harnack_lab_out`.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 on a config
//! or IO error. A config error never creates the output directory.

mod config;
mod manifest;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use harnack_lab::equation_core::ExponentTriple;
use harnack_lab::harnack_verifier::ChainMode;

use config::{Command, ExperimentConfig, FunctionChoice};

#[derive(Parser, Debug)]
#[command(name = "harnack-lab", version, about = "Radial solver, subsolution certificates and Harnack experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel experiments.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Grid certificates for the comparison subsolutions.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        function: Option<FunctionChoice>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Solve the radial problem and write the trajectory.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        intervals: Option<usize>,
    },
    /// Forward/backward Harnack checks and empirical-mu sweeps on a solved trajectory.
    Harnack {
        #[command(flatten)]
        common: Common,
    },
    /// Execute a Harnack chain on a solved trajectory.
    Chain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["time", "space"])]
        mode: Option<String>,
    },
    /// Extinction run with norm decay, far-radius sequence and optional counterexample.
    Extinction {
        #[command(flatten)]
        common: Common,
    },
    /// Radial Sobolev ratio with a refinement study.
    Sobolev {
        #[command(flatten)]
        common: Common,
    },
    /// Extinction sweep over q at fixed n and p.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `start:stop:step`, inclusive.
        #[arg(long)]
        q_range: Option<String>,
    },
}

struct Resolved {
    config: ExperimentConfig,
    out: PathBuf,
    jobs: Option<usize>,
}

fn resolve(sub: Sub) -> Result<Resolved, String> {
    let (command, common) = match &sub {
        Sub::Certify { common, .. } => (Command::Certify, common),
        Sub::Solve { common, .. } => (Command::Solve, common),
        Sub::Harnack { common } => (Command::Harnack, common),
        Sub::Chain { common, .. } => (Command::Chain, common),
        Sub::Extinction { common } => (Command::Extinction, common),
        Sub::Sobolev { common } => (Command::Sobolev, common),
        Sub::Sweep { common, .. } => (Command::Sweep, common),
    };
    let common = common.clone();
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let cfg: ExperimentConfig =
                serde_json::from_str(&text).map_err(|e| format!("malformed config {}: {e}", path.display()))?;
            if cfg.command != command {
                return Err(format!("config is for '{}', not '{}'", cfg.command.as_str(), command.as_str()));
            }
            cfg
        }
        None => ExperimentConfig::new(command),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if command == Command::Sweep {
        if let Some(n) = common.n {
            cfg.sweep.n = n;
        }
        if let Some(p) = common.p {
            cfg.sweep.p = p;
        }
        if common.q.is_some() {
            return Err("sweep takes --q-range, not --q".into());
        }
    } else if common.n.is_some() || common.p.is_some() || common.q.is_some() {
        let base = cfg.exponents.map(|e| (Some(e.n()), Some(e.p()), Some(e.q()))).unwrap_or((None, None, None));
        let n = common.n.or(base.0);
        let p = common.p.or(base.1);
        let q = common.q.or(base.2);
        match (n, p, q) {
            (Some(n), Some(p), Some(q)) => cfg.exponents = Some(ExponentTriple::new(n, p, q).map_err(|e| e.to_string())?),
            _ => return Err("exponents need all of n, p and q".into()),
        }
    }
    match sub {
        Sub::Certify { function, kappa, rho, .. } => {
            if let Some(f) = function {
                cfg.certify.function = f;
            }
            if let Some(k) = kappa {
                cfg.certify.kappa = k;
            }
            if let Some(r) = rho {
                cfg.certify.rho = r;
            }
        }
        Sub::Solve { t_end, intervals, .. } => {
            if let Some(t) = t_end {
                cfg.solve.t_end = t;
            }
            if let Some(j) = intervals {
                cfg.solve.grid.intervals = j;
            }
        }
        Sub::Chain { mode, .. } => match mode.as_deref() {
            Some("time") => cfg.chain.mode = ChainMode::Time,
            Some("space") => cfg.chain.mode = ChainMode::Space,
            _ => {}
        },
        Sub::Sweep { q_range, .. } => {
            if let Some(r) = q_range {
                cfg.sweep.q_range = r;
            }
        }
        _ => {}
    }
    let out = common
        .out
        .or_else(|| std::env::var_os("HARNACK_LAB_OUT").map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("harnack_lab_out"));
    if common.jobs == Some(0) {
        return Err("--jobs must be at least 1".into());
    }
    Ok(Resolved { config: cfg, out, jobs: common.jobs })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let resolved = match resolve(cli.command) {
        Ok(r) => r,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Some(j) = resolved.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    if let Err(msg) = run::validate(&resolved.config) {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    ExitCode::from(run::run(&resolved.config, &resolved.out))
}
