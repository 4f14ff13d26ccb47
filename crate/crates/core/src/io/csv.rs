//! Diagnostics time series as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scheme::Trajectory;

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub time: f64,
    pub masses: Vec<f64>,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub h1: f64,
    pub h2: Option<f64>,
    pub h2_local: Option<f64>,
    pub fisher_dissipation: f64,
    pub drift_dissipation: f64,
    pub newton_iters: usize,
    pub residual_norm: f64,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn header(n: usize) -> String {
    let mut cols = vec!["time".to_string()];
    for i in 0..n {
        cols.push(format!("mass_{i}"));
        cols.push(format!("min_{i}"));
        cols.push(format!("max_{i}"));
    }
    cols.extend(
        ["h1", "h2", "h2_local", "fisher_dissipation", "drift_dissipation", "newton_iters", "residual_norm"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

/// Renders the per-step diagnostics of a trajectory.
pub fn diagnostics_csv(traj: &Trajectory) -> String {
    let n = traj
        .diagnostics
        .first()
        .map(|d| d.entropy.masses.len())
        .or_else(|| traj.states.first().map(|s| s.species_count()))
        .unwrap_or(0);
    let mut out = header(n);
    out.push('\n');
    for d in &traj.diagnostics {
        let e = &d.entropy;
        let mut cols = vec![num(d.time)];
        for i in 0..n {
            cols.push(num(e.masses[i]));
            cols.push(num(e.species_min[i]));
            cols.push(num(e.species_max[i]));
        }
        cols.push(num(e.h1));
        cols.push(e.h2.map(num).unwrap_or_default());
        cols.push(e.h2_local.map(num).unwrap_or_default());
        cols.push(num(e.fisher_dissipation));
        cols.push(num(e.drift_dissipation));
        let (iters, res) = d.step.as_ref().map_or((0, 0.0), |s| (s.newton_iters, s.residual_norm));
        cols.push(iters.to_string());
        cols.push(num(res));
        let _ = writeln!(out, "{}", cols.join(","));
    }
    out
}

pub fn write_diagnostics_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    fs::write(path, diagnostics_csv(traj))?;
    Ok(())
}

fn parse_f(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Io(format!("line {line}: bad number {s:?}")))
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_f(s, line).map(Some)
    }
}

/// Reads back a file produced by [`write_diagnostics_csv`].
pub fn parse_diagnostics_csv(text: &str) -> Result<Vec<DiagnosticRow>> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| Error::Io("empty csv".into()))?;
    let ncols = head.split(',').count();
    if ncols < 8 || (ncols - 8) % 3 != 0 {
        return Err(Error::Io(format!("unexpected header {head:?}")));
    }
    let n = (ncols - 8) / 3;
    if head != header(n) {
        return Err(Error::Io(format!("unexpected header {head:?}")));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let ln = k + 2;
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != ncols {
            return Err(Error::Io(format!("line {ln}: expected {ncols} columns, got {}", c.len())));
        }
        let tail = 1 + 3 * n;
        rows.push(DiagnosticRow {
            time: parse_f(c[0], ln)?,
            masses: (0..n).map(|i| parse_f(c[1 + 3 * i], ln)).collect::<Result<_>>()?,
            mins: (0..n).map(|i| parse_f(c[2 + 3 * i], ln)).collect::<Result<_>>()?,
            maxs: (0..n).map(|i| parse_f(c[3 + 3 * i], ln)).collect::<Result<_>>()?,
            h1: parse_f(c[tail], ln)?,
            h2: parse_opt(c[tail + 1], ln)?,
            h2_local: parse_opt(c[tail + 2], ln)?,
            fisher_dissipation: parse_f(c[tail + 3], ln)?,
            drift_dissipation: parse_f(c[tail + 4], ln)?,
            newton_iters: c[tail + 5]
                .trim()
                .parse()
                .map_err(|_| Error::Io(format!("line {ln}: bad integer")))?,
            residual_norm: parse_f(c[tail + 6], ln)?,
        });
    }
    Ok(rows)
}
