use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use opvsim_core::morphology::{generate_synthetic, load_phase_field, write_phase_field};
use opvsim_core::postprocess::extract_metrics;
use opvsim_core::solvers::{voltage_sweep_observed, IterationCounts};
use opvsim_core::{Device, DeviceMetrics, IVCurve, Mesh, PhaseField};
use serde::Serialize;

use crate::config::{MorphologySpec, OutputFormat, RunConfig, VOLTAGE_MATCH};
use crate::output::{write_iv_csv, write_vtk, Snapshot};

/// Overrides the root that relative output directories resolve against.
pub const OUTPUT_ROOT_ENV: &str = "OPVSIM_OUTPUT_ROOT";

#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    pub v_top: f64,
    pub v_bot: f64,
    pub i_top: f64,
    pub i_bot: f64,
    pub conservation: f64,
    pub converged: bool,
    /// Converged, but the conservation metric exceeds the configured threshold.
    pub flagged: bool,
    pub time_steps: usize,
    pub increment: f64,
    pub iterations: IterationCounts,
    pub floor_events: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub method: String,
    pub points: Vec<PointSummary>,
    pub all_converged: bool,
    pub failure: Option<String>,
    pub max_iterations: IterationCounts,
    pub metrics: Option<DeviceMetrics>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<PathBuf>,
}

/// Output directory: absolute paths are used as given; relative ones resolve
/// against `root` when set, else against the config file's directory.
pub fn output_dir(cfg: &RunConfig, root: Option<&Path>) -> PathBuf {
    let d = &cfg.output.directory;
    match root {
        Some(r) if d.is_relative() => r.join(d),
        _ => cfg.resolve(d),
    }
}

pub fn load_morphology(cfg: &RunConfig, mesh: &Mesh) -> Result<PhaseField> {
    if let Some(f) = &cfg.morphology.file {
        let p = cfg.resolve(f);
        return load_phase_field(&p, mesh).with_context(|| format!("loading {}", p.display()));
    }
    let kind = cfg.morphology.synthetic.as_ref().context("no morphology source")?;
    Ok(generate_synthetic(kind, mesh)?)
}

pub fn build_device(cfg: &RunConfig) -> Result<Device> {
    let mesh = cfg.mesh.build()?;
    let phase = load_morphology(cfg, &mesh)?;
    Ok(Device::new(mesh, phase, cfg.effective_params())?)
}

/// Runs the configured sweep and writes the requested outputs. The returned
/// summary lists every written file; the caller decides the exit status from
/// `all_converged`.
pub fn run_simulate(cfg: &RunConfig, output_root: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let dev = build_device(cfg)?;
    let nl = cfg.solver.nonlinear();
    let dir = output_dir(cfg, output_root);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let want = |f| cfg.output.formats.contains(&f);

    let mut outputs = Vec::new();
    let mut write_err = None;
    let curve: IVCurve = voltage_sweep_observed(&dev, &cfg.sweep, &nl, &mut |point, state| {
        if !want(OutputFormat::Vtk) || write_err.is_some() {
            return;
        }
        let hit = cfg
            .output
            .snapshot_voltages
            .iter()
            .any(|&v| (v - point.v_top).abs() <= VOLTAGE_MATCH);
        if !hit {
            return;
        }
        let path = dir.join(format!("snapshot_vtop_{}.vtk", point.v_top));
        let title = format!("opvsim V_top={:?} V_bot={:?}", point.v_top, point.v_bot);
        let res = Snapshot::of_state(&dev, state)
            .map_err(anyhow::Error::from)
            .and_then(|s| write_vtk(&s, &title, &path).with_context(|| format!("writing {}", path.display())));
        match res {
            Ok(()) => outputs.push(path),
            Err(e) => write_err = Some(e),
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }

    if want(OutputFormat::Csv) {
        let path = dir.join("iv.csv");
        write_iv_csv(&curve, &path).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path);
    }

    let mut max_iterations = IterationCounts::default();
    let points: Vec<PointSummary> = curve
        .points
        .iter()
        .map(|p| {
            max_iterations.merge_max(&p.report.iterations);
            PointSummary {
                v_top: p.v_top,
                v_bot: p.v_bot,
                i_top: p.i_top,
                i_bot: p.i_bot,
                conservation: p.conservation,
                converged: p.converged(),
                flagged: p.converged() && p.conservation > cfg.output.conservation_threshold,
                time_steps: p.report.time_steps,
                increment: p.report.increment,
                iterations: p.report.iterations,
                floor_events: p.report.floor_events,
            }
        })
        .collect();
    for p in points.iter().filter(|p| p.flagged) {
        log::warn!("V_top={}: conservation metric {:.3e} above threshold", p.v_top, p.conservation);
    }
    let metrics = if curve.points.is_empty() {
        None
    } else {
        extract_metrics(&curve).ok()
    };
    let mut summary = RunSummary {
        method: nl.method.name().to_string(),
        all_converged: curve.all_converged() && curve.points.len() == cfg.sweep.voltages().len(),
        points,
        failure: curve.failure.clone(),
        max_iterations,
        metrics,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs,
    };
    if want(OutputFormat::Json) {
        let path = dir.join("report.json");
        summary.outputs.push(path.clone());
        let text = serde_json::to_string_pretty(&summary)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(summary)
}

/// Generates the synthetic field and writes it as PHF.
pub fn run_generate_morphology(spec: &MorphologySpec, out: &Path) -> Result<PhaseField> {
    let mesh = spec.mesh.build()?;
    spec.synthetic.validate(&mesh)?;
    let phase = generate_synthetic(&spec.synthetic, &mesh)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_phase_field(out, &mesh, &phase).with_context(|| format!("writing {}", out.display()))?;
    Ok(phase)
}
