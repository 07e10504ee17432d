//! CSV and JSON writers. Floats are written with 17 significant digits in
//! scientific notation, so a CSV round-trips every value exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::extinction_lab::RegimeRow;
use crate::harnack_verifier::{ChainTrace, HarnackReport, MuSweep};
use crate::radial_solver::Trajectory;

/// `x` with 17 significant digits; `NaN`, `inf` and `-inf` for the non-finite cases.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes a header and string rows.
pub fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format `t,r,u`, one row per snapshot and node.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let nodes = traj.grid().nodes();
    let rows = traj.snapshots.iter().flat_map(|s| {
        let t = fmt_f64(s.t);
        nodes.iter().zip(s.field.values()).map(move |(&r, &u)| [t.clone(), fmt_f64(r), fmt_f64(u)])
    });
    write_rows(path, &["t", "r", "u"], rows)
}

pub fn write_harnack_csv(path: &Path, reports: &[HarnackReport]) -> Result<()> {
    let rows = reports.iter().map(|h| {
        [
            h.query.direction.as_str().to_string(),
            fmt_f64(h.query.x0),
            fmt_f64(h.query.t0),
            fmt_f64(h.query.r),
            fmt_f64(h.query.c),
            fmt_f64(h.theta),
            fmt_f64(h.extremum),
            fmt_f64(h.empirical_mu),
            h.pass.to_string(),
        ]
    });
    write_rows(path, &["direction", "x0", "t0", "r", "c", "theta", "extremum", "empirical_mu", "pass"], rows)
}

/// Per-radius maxima of an empirical-mu sweep.
pub fn write_mu_sweep_csv(path: &Path, sweep: &MuSweep) -> Result<()> {
    let rows = sweep.maxima.iter().map(|m| {
        [m.direction.as_str().to_string(), fmt_f64(m.r), fmt_f64(m.max_mu), m.count.to_string()]
    });
    write_rows(path, &["direction", "r", "max_mu", "count"], rows)
}

pub fn write_chain_csv(path: &Path, trace: &ChainTrace) -> Result<()> {
    let rows = trace.steps.iter().map(|s| {
        [
            s.index.to_string(),
            fmt_f64(s.x),
            fmt_f64(s.t),
            fmt_f64(s.u),
            fmt_f64(s.radius),
            fmt_f64(s.x_star),
            fmt_f64(s.t_star),
            fmt_f64(s.empirical_mu),
            s.harnack_pass.to_string(),
        ]
    });
    write_rows(path, &["index", "x", "t", "u", "radius", "x_star", "t_star", "empirical_mu", "pass"], rows)
}

/// `t,v,v^{2-q}`.
pub fn write_norm_curve_csv(path: &Path, curve: &[(f64, f64)], q: f64) -> Result<()> {
    let rows = curve.iter().map(|&(t, v)| [fmt_f64(t), fmt_f64(v), fmt_f64(v.powf(2.0 - q))]);
    write_rows(path, &["t", "v", "v_pow_2_minus_q"], rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[RegimeRow]) -> Result<()> {
    let out = rows.iter().map(|r| {
        [
            fmt_f64(r.q),
            fmt_f64(r.threshold),
            r.in_range.to_string(),
            r.extinct.to_string(),
            r.converged.to_string(),
            fmt_opt(r.extinction_time),
            fmt_opt(r.c_emp),
            fmt_f64(r.v_end_ratio),
            r.dichotomy_ok.map_or_else(|| "n/a".to_string(), |b| b.to_string()),
        ]
    });
    write_rows(
        path,
        &["q", "threshold", "in_range", "extinct", "converged", "extinction_time", "c_emp", "v_end_ratio", "dichotomy"],
        out,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
    }
}
