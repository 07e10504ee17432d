//! Validation and dispatch of one experiment.

use std::path::Path;

use harnack_lab::comparison_functions::{certify_subsolution, ComparisonSpec, GSpec, PhiSpec, PsiSpec};
use harnack_lab::equation_core::{check_range, ExponentTriple};
use harnack_lab::extinction_lab::{counterexample_demo, explore_extinction, regime_sweep, sobolev_check, SobolevReport};
use harnack_lab::harnack_verifier::{chain_constants, empirical_mu_sweep, harnack_check, run_chain, HarnackReport};
use harnack_lab::io;
use harnack_lab::radial_solver::{solve, Trajectory};
use harnack_lab::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Command, ExperimentConfig, FunctionChoice};
use crate::manifest::{now_unix, Manifest, Outputs, SCHEMA_VERSION};

fn exponents(cfg: &ExperimentConfig) -> Result<ExponentTriple, String> {
    cfg.exponents.ok_or_else(|| format!("'{}' needs exponents (n, p, q)", cfg.command.as_str()))
}

fn certify_specs(cfg: &ExperimentConfig, e: &ExponentTriple) -> Result<(Vec<ComparisonSpec>, Vec<String>), String> {
    let c = &cfg.certify;
    let build = |f: FunctionChoice| -> harnack_lab::Result<ComparisonSpec> {
        Ok(match f {
            FunctionChoice::Phi => ComparisonSpec::Phi(PhiSpec::select(c.kappa, c.rho, e)?),
            FunctionChoice::G => ComparisonSpec::G(GSpec::select(c.kappa, c.rho, e)?),
            FunctionChoice::Psi => ComparisonSpec::Psi(PsiSpec::select(c.k, c.nu_hole, e)?),
            FunctionChoice::All => unreachable!(),
        })
    };
    if c.function != FunctionChoice::All {
        return Ok((vec![build(c.function).map_err(|e| e.to_string())?], Vec::new()));
    }
    let mut specs = Vec::new();
    let mut skipped = Vec::new();
    for f in [FunctionChoice::Phi, FunctionChoice::G, FunctionChoice::Psi] {
        match build(f) {
            Ok(s) => specs.push(s),
            Err(err) => skipped.push(format!("{f:?}: {err}")),
        }
    }
    if specs.is_empty() {
        return Err(format!("no comparison function applies: {}", skipped.join("; ")));
    }
    Ok((specs, skipped))
}

/// Checks everything that can be checked without running the experiment.
pub fn validate(cfg: &ExperimentConfig) -> Result<(), String> {
    let s = |e: Error| e.to_string();
    match cfg.command {
        Command::Certify => {
            let e = exponents(cfg)?;
            certify_specs(cfg, &e)?;
        }
        Command::Solve | Command::Harnack | Command::Chain => {
            let e = exponents(cfg)?;
            let sc = &cfg.solve;
            sc.initial.validate()?;
            sc.initial.field(&sc.grid).map_err(s)?;
            if !(sc.t_end > 0.0 && sc.t_end.is_finite()) {
                return Err(format!("t_end = {} must be positive", sc.t_end));
            }
            sc.solver_params(e.q()).cadence.times(sc.t_end).map_err(s)?;
            if cfg.command == Command::Harnack {
                for q in &cfg.harnack.queries {
                    q.validate().map_err(s)?;
                }
                if cfg.harnack.queries.is_empty() && cfg.harnack.sweep.is_none() {
                    return Err("harnack needs queries or a sweep".into());
                }
            }
            if cfg.command == Command::Chain {
                let ch = &cfg.chain;
                if ch.start.is_none() || ch.target.is_none() {
                    return Err("chain needs start and target points".into());
                }
                chain_constants(ch.sigma_t, ch.base, &e).map_err(s)?;
            }
        }
        Command::Extinction => {
            let e = exponents(cfg)?;
            let v = check_range(&e);
            if e.q() >= 2.0 || v.in_range {
                return Err(format!("extinction needs q < 2 below the threshold {} (q = {})", v.threshold, e.q()));
            }
            cfg.extinction.initial.validate()?;
            cfg.extinction.initial.field(&cfg.extinction.grid).map_err(s)?;
            if cfg.extinction.params.outer_radii.is_empty() {
                return Err("extinction needs at least one outer radius".into());
            }
        }
        Command::Sobolev => {
            let e = exponents(cfg)?;
            let sc = &cfg.sobolev;
            if !(e.q() < e.d()) {
                return Err(format!("the Sobolev ratio needs q < d (q = {}, d = {})", e.q(), e.d()));
            }
            sc.profile.validate()?;
            if sc.levels.is_empty() || !(sc.radius > 0.0) {
                return Err("sobolev needs at least one level and a positive radius".into());
            }
            for &j in &sc.levels {
                let g = crate::config::GridConfig { intervals: j, radius: sc.radius };
                sc.profile.field(&g).map_err(s)?;
            }
        }
        Command::Sweep => {
            let sw = &cfg.sweep;
            let qs = crate::config::parse_range(&sw.q_range)?;
            for &q in &qs {
                ExponentTriple::new(sw.n, sw.p, q).map_err(s)?;
            }
            sw.initial.validate()?;
            sw.initial.field(&sw.grid).map_err(s)?;
            if sw.params.outer_radii.is_empty() {
                return Err("sweep needs at least one outer radius".into());
            }
        }
    }
    Ok(())
}

/// Runs a validated config, writes outputs and the manifest, and returns the exit code.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> u8 {
    if let Err(e) = std::fs::create_dir_all(dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return 2;
    }
    let mut out = Outputs::new(dir);
    let result = dispatch(cfg, &mut out);
    let (status, code, failures, error) = match result {
        Ok(f) if f.is_empty() => ("pass", 0, f, None),
        Ok(f) => ("fail", 1, f, None),
        Err(e @ (Error::Io(_) | Error::Csv(_) | Error::Json(_))) => ("error", 2, Vec::new(), Some(e.to_string())),
        Err(e) => ("error", 1, Vec::new(), Some(e.to_string())),
    };
    let files = match out.entries() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot checksum outputs: {e}");
            return 2;
        }
    };
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: cfg.command.as_str(),
        status,
        complete: error.is_none(),
        failures: &failures,
        error: error.clone(),
        config: cfg,
        files,
        created_unix: now_unix(),
    };
    if let Err(e) = io::write_json(&dir.join("manifest.json"), &manifest) {
        eprintln!("error: cannot write manifest: {e}");
        return 2;
    }
    for f in &failures {
        eprintln!("check failed: {f}");
    }
    if let Some(e) = error {
        eprintln!("error: {e}");
    }
    println!("{}: {status} ({} files in {})", cfg.command.as_str(), out.files.len(), dir.display());
    code
}

fn dispatch(cfg: &ExperimentConfig, out: &mut Outputs) -> harnack_lab::Result<Vec<String>> {
    match cfg.command {
        Command::Certify => certify(cfg, out),
        Command::Solve => {
            let traj = trajectory(cfg)?;
            write_solve(cfg, &traj, out)?;
            Ok(Vec::new())
        }
        Command::Harnack => harnack(cfg, out),
        Command::Chain => chain(cfg, out),
        Command::Extinction => extinction(cfg, out),
        Command::Sobolev => sobolev(cfg, out),
        Command::Sweep => sweep(cfg, out),
    }
}

fn certify(cfg: &ExperimentConfig, out: &mut Outputs) -> harnack_lab::Result<Vec<String>> {
    let e = cfg.exponents.expect("validated");
    let (specs, skipped) = certify_specs(cfg, &e).map_err(Error::Selection)?;
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for spec in &specs {
        let rep = certify_subsolution(spec, &e, &cfg.certify.grid)?;
        let name = rep.function.clone();
        if !rep.pass {
            failures.push(format!("{name} certificate: max residual {:e} > {:e}", rep.max_residual, rep.tolerance));
        }
        summary.push((name.clone(), rep.pass, rep.max_residual));
        out.json(&format!("certificate_{name}.json"), &rep)?;
    }
    #[derive(Serialize)]
    struct Summary {
        exponents: ExponentTriple,
        results: Vec<(String, bool, f64)>,
        skipped: Vec<String>,
    }
    out.json("certify_summary.json", &Summary { exponents: e, results: summary, skipped })?;
    Ok(failures)
}

fn trajectory(cfg: &ExperimentConfig) -> harnack_lab::Result<Trajectory> {
    let e = cfg.exponents.expect("validated");
    let sc = &cfg.solve;
    solve(&sc.initial.field(&sc.grid)?, &e, sc.t_end, &sc.solver_params(e.q()))
}

fn write_solve(cfg: &ExperimentConfig, traj: &Trajectory, out: &mut Outputs) -> harnack_lab::Result<()> {
    #[derive(Serialize)]
    struct SolveSummary<'a> {
        exponents: ExponentTriple,
        solver: &'a harnack_lab::radial_solver::SolverRecord,
        times: Vec<f64>,
        max_values: Vec<f64>,
    }
    out.add("trajectory.csv", |p| io::write_trajectory_csv(p, traj))?;
    out.json(
        "solve.json",
        &SolveSummary {
            exponents: cfg.exponents.expect("validated"),
            solver: &traj.solver,
            times: traj.times(),
            max_values: traj.snapshots.iter().map(|s| s.field.max()).collect(),
        },
    )
}

fn harnack(cfg: &ExperimentConfig, out: &mut Outputs) -> harnack_lab::Result<Vec<String>> {
    let traj = trajectory(cfg)?;
    write_solve(cfg, &traj, out)?;
    let mut failures = Vec::new();
    let mut reports: Vec<HarnackReport> = Vec::new();
    #[derive(Serialize)]
    struct Rejected {
        index: usize,
        error: String,
    }
    let mut rejected = Vec::new();
    for (i, q) in cfg.harnack.queries.iter().enumerate() {
        match harnack_check(&traj, q) {
            Ok(rep) => {
                if !rep.pass {
                    failures.push(format!("query {i}: empirical mu {} > {}", rep.empirical_mu, q.mu));
                }
                reports.push(rep);
            }
            Err(e @ (Error::Geometry(_) | Error::DeadPoint { .. })) => {
                failures.push(format!("query {i}: {e}"));
                rejected.push(Rejected { index: i, error: e.to_string() });
            }
            Err(e) => return Err(e),
        }
    }
    if !cfg.harnack.queries.is_empty() {
        out.add("harnack.csv", |p| io::write_harnack_csv(p, &reports))?;
        #[derive(Serialize)]
        struct Checks<'a> {
            reports: &'a [HarnackReport],
            rejected: &'a [Rejected],
        }
        out.json("harnack.json", &Checks { reports: &reports, rejected: &rejected })?;
    }
    if let Some(sw) = &cfg.harnack.sweep {
        let t_end = traj.t_end();
        let radius = traj.grid().radius();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut points = sw.base_points.clone();
        for _ in 0..sw.random_points {
            points.push((rng.gen_range(0.0..0.5 * radius), rng.gen_range(0.1 * t_end..0.9 * t_end)));
        }
        let sweep = empirical_mu_sweep(&traj, &points, &sw.radii, sw.c)?;
        out.add("mu_sweep.csv", |p| io::write_mu_sweep_csv(p, &sweep))?;
        out.json("mu_sweep.json", &sweep)?;
    }
    Ok(failures)
}

fn chain(cfg: &ExperimentConfig, out: &mut Outputs) -> harnack_lab::Result<Vec<String>> {
    let e = cfg.exponents.expect("validated");
    let traj = trajectory(cfg)?;
    let ch = &cfg.chain;
    let params = chain_constants(ch.sigma_t, ch.base, &e)?;
    let trace = run_chain(&traj, ch.start.expect("validated"), ch.target.expect("validated"), &params, ch.mode)?;
    out.json("chain_constants.json", &params)?;
    out.json("chain.json", &trace)?;
    out.add("chain.csv", |p| io::write_chain_csv(p, &trace))?;
    let mut failures = Vec::new();
    if !trace.certified {
        failures.push(format!(
            "chain not certified (harnack_ok = {}, sound = {}, applications = {} of {})",
            trace.harnack_ok, trace.sound, trace.applications, trace.step_bound
        ));
    }
    Ok(failures)
}

fn extinction(cfg: &ExperimentConfig, out: &mut Outputs) -> harnack_lab::Result<Vec<String>> {
    let e = cfg.exponents.expect("validated");
    let ec = &cfg.extinction;
    let u0 = ec.initial.field(&ec.grid)?;
    let rep = explore_extinction(&u0, &e, &ec.params)?;
    out.json("extinction.json", &rep)?;
    out.add("norm_curve.csv", |p| io::write_norm_curve_csv(p, &rep.norm_curve, e.q()))?;
    let mut failures = Vec::new();
    if !rep.extinct {
        let v_end = rep.norm_curve.last().map_or(rep.v0, |c| c.1);
        failures.push(Error::NoExtinction { v_end, floor: rep.floor, t_max: rep.t_max }.to_string());
        return Ok(failures);
    }
    if !rep.converged {
        failures.push("far-radius sequence did not converge".into());
    }
    if !rep.bounds_ok() {
        failures.push(format!("decay checks failed: {:?}", rep.bound_check));
    }
    if let Some(k) = ec.counterexample {
        let mut rec = counterexample_demo(&u0, &e, &rep, k)?;
        let queries = std::mem::take(&mut rec.queries);
        out.json("counterexample.json", &rec)?;
        let rows = queries.iter().map(|q| {
            [
                io::fmt_f64(q.x0),
                io::fmt_f64(q.t0),
                io::fmt_f64(q.r),
                io::fmt_f64(q.center_value),
                io::fmt_f64(q.inf_at_reference),
                io::fmt_f64(q.inversion_error),
                q.violation.to_string(),
            ]
        });
        out.add("counterexample_queries.csv", |p| {
            io::write_rows(p, &["x0", "t0", "r", "center_value", "inf_at_reference", "inversion_error", "violation"], rows)
        })?;
        if rec.witness.is_none() {
            failures.push("no counterexample witness".into());
        }
    }
    Ok(failures)
}

fn sobolev(cfg: &ExperimentConfig, out: &mut Outputs) -> harnack_lab::Result<Vec<String>> {
    let e = cfg.exponents.expect("validated");
    let sc = &cfg.sobolev;
    let mut levels: Vec<(usize, SobolevReport)> = Vec::new();
    for &j in &sc.levels {
        let v = sc.profile.field(&crate::config::GridConfig { intervals: j, radius: sc.radius })?;
        levels.push((j, sobolev_check(&v, &e)?));
    }
    let finest = levels.last().expect("validated").1.ratio;
    let spread = levels.iter().map(|l| (l.1.ratio / finest - 1.0).abs()).fold(0.0, f64::max);
    let finest_field =
        sc.profile.field(&crate::config::GridConfig { intervals: *sc.levels.last().expect("validated"), radius: sc.radius })?;
    let scaled = sobolev_check(&finest_field.scaled(3.0), &e)?.ratio;
    let amplitude_error = if finest == 0.0 { scaled.abs() } else { (scaled / finest - 1.0).abs() };
    #[derive(Serialize)]
    struct Study<'a> {
        levels: &'a [(usize, SobolevReport)],
        spread: f64,
        tolerance: f64,
        amplitude_error: f64,
    }
    out.json("sobolev.json", &Study { levels: &levels, spread, tolerance: sc.tolerance, amplitude_error })?;
    let rows = levels.iter().map(|(j, r)| [j.to_string(), io::fmt_f64(r.lhs), io::fmt_f64(r.rhs), io::fmt_f64(r.ratio)]);
    out.add("sobolev.csv", |p| io::write_rows(p, &["intervals", "lhs", "rhs", "ratio"], rows))?;
    let mut failures = Vec::new();
    if spread > sc.tolerance {
        failures.push(format!("ratio spread {spread:e} across levels exceeds {:e}", sc.tolerance));
    }
    if amplitude_error > 1e-13 {
        failures.push(format!("amplitude invariance off by {amplitude_error:e}"));
    }
    Ok(failures)
}

fn sweep(cfg: &ExperimentConfig, out: &mut Outputs) -> harnack_lab::Result<Vec<String>> {
    let sw = &cfg.sweep;
    let qs = crate::config::parse_range(&sw.q_range).map_err(Error::InvalidParameter)?;
    let u0 = sw.initial.field(&sw.grid)?;
    let rows = regime_sweep(&u0, sw.n, sw.p, &qs, &sw.params)?;
    out.add("sweep.csv", |p| io::write_sweep_csv(p, &rows))?;
    out.json("sweep.json", &rows)?;
    Ok(rows.iter().filter(|r| r.dichotomy_ok == Some(false)).map(|r| format!("q = {}: dichotomy violated", r.q)).collect())
}
