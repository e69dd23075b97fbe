//! Result files: reaction sweep tables, design snapshots (plain grid or
//! legacy VTK), and the per-iteration optimization history.
//!
//! All numbers are written with 17 significant digits so reading them back
//! reproduces the original values bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::equilibrium::SweepPoint;

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("line {line}: {what}")]
    Malformed { line: usize, what: String },
    #[error("missing {0}")]
    Missing(&'static str),
}

fn malformed(line: usize, what: impl Into<String>) -> ReadError {
    ReadError::Malformed {
        line: line + 1,
        what: what.into(),
    }
}

/// `u_D,reaction,stiffness` with one row per sampled level. An empty sweep
/// still gets the header.
pub fn format_sweep_csv(points: &[SweepPoint], stiffness: &[f64]) -> String {
    assert_eq!(points.len(), stiffness.len());
    let mut out = String::from("u_D,reaction,stiffness\n");
    for (p, &k) in points.iter().zip(stiffness) {
        writeln!(out, "{:.16e},{:.16e},{:.16e}", p.u_d, p.reaction, k).unwrap();
    }
    out
}

pub fn write_sweep_csv(
    path: &Path,
    points: &[SweepPoint],
    stiffness: &[f64],
) -> std::io::Result<()> {
    std::fs::write(path, format_sweep_csv(points, stiffness))
}

/// The numeric rows of a sweep table.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<[f64; 3]>, ReadError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(ReadError::Missing("header"))?;
    if header.trim() != "u_D,reaction,stiffness" {
        return Err(malformed(0, format!("unexpected header '{header}'")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = [0.0; 3];
        let mut fields = line.split(',');
        for slot in &mut row {
            let field = fields
                .next()
                .ok_or_else(|| malformed(i, "expected three columns"))?;
            *slot = field
                .trim()
                .parse()
                .map_err(|e| malformed(i, format!("'{field}': {e}")))?;
        }
        if fields.next().is_some() {
            return Err(malformed(i, "expected three columns"));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Design and state fields sampled on the corner-node grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Nodal design values, x-fastest from the lower-left corner.
    pub chi: Vec<f64>,
    /// Nodal densities in the same order.
    pub rho: Vec<f64>,
    /// Optional corner-node displacements, one field per control point.
    pub displacements: Vec<Vec<[f64; 2]>>,
}

impl FieldSnapshot {
    fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    fn check(&self) {
        assert_eq!(self.chi.len(), self.n_nodes());
        assert_eq!(self.rho.len(), self.n_nodes());
        for u in &self.displacements {
            assert_eq!(u.len(), self.n_nodes());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotFormat {
    /// Density matrix only: one mesh row of nodes per line, bottom row
    /// first.
    PlainGrid,
    /// Legacy ASCII VTK structured grid with chi and rho point scalars and
    /// one point-vector field per control point.
    Vtk,
}

pub fn format_plain_grid(snap: &FieldSnapshot) -> String {
    snap.check();
    let w = snap.nx + 1;
    let mut out = String::new();
    for j in 0..=snap.ny {
        let row = &snap.rho[j * w..(j + 1) * w];
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn format_vtk(snap: &FieldSnapshot) -> String {
    snap.check();
    let n = snap.n_nodes();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("design snapshot\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET STRUCTURED_GRID\n");
    writeln!(out, "DIMENSIONS {} {} 1", snap.nx + 1, snap.ny + 1).unwrap();
    writeln!(out, "POINTS {n} double").unwrap();
    let hx = snap.lx / snap.nx as f64;
    let hy = snap.ly / snap.ny as f64;
    for j in 0..=snap.ny {
        for i in 0..=snap.nx {
            writeln!(out, "{:.16e} {:.16e} 0.0", i as f64 * hx, j as f64 * hy).unwrap();
        }
    }
    writeln!(out, "POINT_DATA {n}").unwrap();
    for (name, values) in [("chi", &snap.chi), ("rho", &snap.rho)] {
        writeln!(out, "SCALARS {name} double 1").unwrap();
        out.push_str("LOOKUP_TABLE default\n");
        for v in values {
            writeln!(out, "{v:.16e}").unwrap();
        }
    }
    for (k, u) in snap.displacements.iter().enumerate() {
        writeln!(out, "VECTORS u_{} double", k + 1).unwrap();
        for v in u {
            writeln!(out, "{:.16e} {:.16e} 0.0", v[0], v[1]).unwrap();
        }
    }
    out
}

pub fn write_field_snapshot(
    path: &Path,
    snap: &FieldSnapshot,
    format: SnapshotFormat,
) -> std::io::Result<()> {
    let text = match format {
        SnapshotFormat::PlainGrid => format_plain_grid(snap),
        SnapshotFormat::Vtk => format_vtk(snap),
    };
    std::fs::write(path, text)
}

/// Read back the grid dimensions and the chi point scalars of a VTK
/// snapshot. Everything else in the file is ignored.
pub fn parse_vtk_chi(text: &str) -> Result<(usize, usize, Vec<f64>), ReadError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut dims = None;
    for (i, line) in lines.iter().enumerate() {
        let mut words = line.split_whitespace();
        if words.next() != Some("DIMENSIONS") {
            continue;
        }
        let mut parse = |what| {
            words
                .next()
                .and_then(|w| w.parse::<usize>().ok())
                .ok_or_else(|| malformed(i, format!("bad {what} dimension")))
        };
        let nx1 = parse("x")?;
        let ny1 = parse("y")?;
        if nx1 < 2 || ny1 < 2 {
            return Err(malformed(i, "grid needs at least 2 points per direction"));
        }
        dims = Some((nx1 - 1, ny1 - 1));
        break;
    }
    let (nx, ny) = dims.ok_or(ReadError::Missing("DIMENSIONS"))?;
    let n = (nx + 1) * (ny + 1);
    let start = lines
        .iter()
        .position(|l| {
            let mut w = l.split_whitespace();
            w.next() == Some("SCALARS") && w.next() == Some("chi")
        })
        .ok_or(ReadError::Missing("SCALARS chi"))?;
    let mut chi = Vec::with_capacity(n);
    for (i, line) in lines.iter().enumerate().skip(start + 1) {
        if line.split_whitespace().next() == Some("LOOKUP_TABLE") {
            continue;
        }
        for word in line.split_whitespace() {
            chi.push(
                word.parse()
                    .map_err(|e| malformed(i, format!("'{word}': {e}")))?,
            );
        }
        if chi.len() >= n {
            break;
        }
    }
    if chi.len() != n {
        return Err(ReadError::Missing("chi values for every grid point"));
    }
    Ok((nx, ny, chi))
}

/// One accepted design iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// Driver attempt counter (1-based).
    pub i: usize,
    /// Accumulated pseudo-time.
    pub t: f64,
    pub dt: f64,
    pub newton_iterations: usize,
    /// Total objective.
    pub c: f64,
    /// Design part of the objective.
    pub c_chi: f64,
    /// Mismatch per control point.
    pub c_q: Vec<f64>,
    pub rho_bar: f64,
    pub mu_avg: f64,
    pub mu_max: f64,
}

pub fn format_history_csv(records: &[IterationRecord]) -> String {
    let m = records.first().map_or(0, |r| r.c_q.len());
    let mut out = String::from("i,t,dt,newton,c,c_chi");
    for k in 1..=m {
        write!(out, ",c_q_{k}").unwrap();
    }
    out.push_str(",rho_bar,mu_avg,mu_max\n");
    for r in records {
        assert_eq!(r.c_q.len(), m, "control point count varies between records");
        write!(
            out,
            "{},{:.16e},{:.16e},{},{:.16e},{:.16e}",
            r.i, r.t, r.dt, r.newton_iterations, r.c, r.c_chi
        )
        .unwrap();
        for v in &r.c_q {
            write!(out, ",{v:.16e}").unwrap();
        }
        writeln!(out, ",{:.16e},{:.16e},{:.16e}", r.rho_bar, r.mu_avg, r.mu_max).unwrap();
    }
    out
}

pub fn write_history_csv(path: &Path, records: &[IterationRecord]) -> std::io::Result<()> {
    std::fs::write(path, format_history_csv(records))
}
