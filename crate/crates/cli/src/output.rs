//! I-V CSV and legacy VTK writers.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use opvsim_core::physics::carrier_densities;
use opvsim_core::{Device, IVCurve, Mesh, State};

pub const CSV_HEADER: &str = "v_top,v_bot,i_top,i_bot,conservation,converged";

/// One row per point. Floats use the shortest representation that parses
/// back to the same value.
pub fn format_iv_csv(curve: &IVCurve) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for p in &curve.points {
        writeln!(
            s,
            "{:?},{:?},{:?},{:?},{:?},{}",
            p.v_top,
            p.v_bot,
            p.i_top,
            p.i_bot,
            p.conservation,
            p.converged()
        )
        .unwrap();
    }
    s
}

pub fn write_iv_csv(curve: &IVCurve, path: &Path) -> io::Result<()> {
    std::fs::write(path, format_iv_csv(curve))
}

/// A parsed CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvRow {
    pub v_top: f64,
    pub v_bot: f64,
    pub i_top: f64,
    pub i_bot: f64,
    pub conservation: f64,
    pub converged: bool,
}

pub fn parse_iv_csv(text: &str) -> Result<Vec<IvRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(format!("row {}: {} fields", k + 1, f.len()));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| format!("row {}: {e}", k + 1));
            Ok(IvRow {
                v_top: num(0)?,
                v_bot: num(1)?,
                i_top: num(2)?,
                i_bot: num(3)?,
                conservation: num(4)?,
                converged: f[5].parse().map_err(|e| format!("row {}: {e}", k + 1))?,
            })
        })
        .collect()
}

/// Nodal fields of a snapshot, named as in the VTK file.
pub struct Snapshot<'a> {
    pub mesh: &'a Mesh,
    pub fields: Vec<(&'static str, Vec<f64>)>,
}

impl<'a> Snapshot<'a> {
    /// Phase field, potential, densities and excitons of `state`.
    pub fn of_state(dev: &'a Device, state: &State) -> opvsim_core::Result<Self> {
        let lv = dev.levels();
        let (n, p) = carrier_densities(&state.psi, &state.phi_n, &state.phi_p, &lv.lumo, &lv.homo, dev.params())?;
        Ok(Self {
            mesh: dev.mesh(),
            fields: vec![
                ("phi", dev.phase().values().to_vec()),
                ("psi", state.psi.clone()),
                ("n", n),
                ("p", p),
                ("X", state.x.clone()),
            ],
        })
    }
}

/// Legacy ASCII VTK. The simplicial mesh is built on a tensor grid, so the
/// points are written as a STRUCTURED_GRID with x varying fastest.
pub fn format_vtk(snap: &Snapshot, title: &str) -> String {
    let mesh = snap.mesh;
    let c = mesh.counts();
    let (nx, ny, nz) = (c[0], c[1], if c.len() == 3 { c[2] } else { 1 });
    let n = mesh.n_nodes();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    // the title line must not contain a newline
    s.push_str(&title.replace('\n', " "));
    s.push_str("\nASCII\nDATASET STRUCTURED_GRID\n");
    writeln!(s, "DIMENSIONS {nx} {ny} {nz}").unwrap();
    writeln!(s, "POINTS {n} double").unwrap();
    for i in 0..n {
        let v = mesh.vertex(i);
        let z = if v.len() > 2 { v[2] } else { 0.0 };
        writeln!(s, "{:?} {:?} {:?}", v[0], v[1], z).unwrap();
    }
    writeln!(s, "POINT_DATA {n}").unwrap();
    for (name, values) in &snap.fields {
        writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
        for v in values {
            writeln!(s, "{v:?}").unwrap();
        }
    }
    s
}

pub fn write_vtk(snap: &Snapshot, title: &str, path: &Path) -> io::Result<()> {
    std::fs::write(path, format_vtk(snap, title))
}
