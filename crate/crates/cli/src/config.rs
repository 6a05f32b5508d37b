//! Run configuration files (TOML).

use std::fmt;
use std::path::{Path, PathBuf};

use opvsim_core::linsolve::{LinearSolverConfig, PrecondKind};
use opvsim_core::mesh::build_structured_mesh;
use opvsim_core::{Method, Mesh, ModelParams, NonlinearConfig, SweepConfig, SyntheticKind};
use serde::{Deserialize, Serialize};

/// Voltages closer than this are the same sweep point.
pub const VOLTAGE_MATCH: f64 = 1e-9;

/// Every problem found in a configuration, in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl ConfigError {
    fn one(msg: impl Into<String>) -> Self {
        Self {
            problems: vec![msg.into()],
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration")?;
        for p in &self.problems {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub extent: Vec<f64>,
    /// Nodes per axis.
    pub counts: Vec<usize>,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self {
            extent: vec![10.0, 10.0],
            counts: vec![32, 32],
        }
    }
}

impl MeshSection {
    pub fn build(&self) -> opvsim_core::Result<Mesh> {
        build_structured_mesh(&self.extent, &self.counts)
    }
}

/// Either a PHF file or a synthetic generator, not both.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphologySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticKind>,
}

/// Nonlinear solver settings. `tau` and `steady_tol`, when given, override
/// `params.tau` and `params.tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steady_tol: Option<f64>,
    pub newton_rtol: f64,
    pub newton_atol: f64,
    pub newton_stol: f64,
    pub newton_max_iters: usize,
    pub newton_max_update: f64,
    pub max_time_steps: usize,
    pub precond: PrecondKind,
    pub elliptic_precond: PrecondKind,
    pub linear: LinearSolverConfig,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = NonlinearConfig::default();
        Self {
            method: d.method,
            alpha: d.alpha,
            tau: None,
            steady_tol: None,
            newton_rtol: d.newton_rtol,
            newton_atol: d.newton_atol,
            newton_stol: d.newton_stol,
            newton_max_iters: d.newton_max_iters,
            newton_max_update: d.newton_max_update,
            max_time_steps: d.max_time_steps,
            precond: d.precond,
            elliptic_precond: d.elliptic_precond,
            linear: d.linear,
        }
    }
}

impl SolverSection {
    pub fn nonlinear(&self) -> NonlinearConfig {
        NonlinearConfig {
            method: self.method,
            alpha: self.alpha,
            newton_rtol: self.newton_rtol,
            newton_atol: self.newton_atol,
            newton_stol: self.newton_stol,
            newton_max_iters: self.newton_max_iters,
            newton_max_update: self.newton_max_update,
            max_time_steps: self.max_time_steps,
            linear: self.linear.clone(),
            precond: self.precond,
            elliptic_precond: self.elliptic_precond,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Vtk,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// `V_top` values at which field snapshots are written; each must be a sweep point.
    pub snapshot_voltages: Vec<f64>,
    pub formats: Vec<OutputFormat>,
    /// Converged rows above this conservation metric are flagged in the report.
    pub conservation_threshold: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("output"),
            snapshot_voltages: Vec::new(),
            formats: vec![OutputFormat::Csv, OutputFormat::Vtk, OutputFormat::Json],
            conservation_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshSection,
    pub morphology: MorphologySection,
    pub params: ModelParams,
    pub solver: SolverSection,
    pub sweep: SweepConfig,
    pub output: OutputSection,
    /// Directory relative paths are resolved against (the config file's).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Keys that may appear although the serialized defaults omit them.
const OPTIONAL_KEYS: &[&str] = &[
    "morphology.file",
    "morphology.synthetic",
    "solver.alpha",
    "solver.tau",
    "solver.steady_tol",
];

fn unknown_keys(user: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in user {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match known.get(key) {
            Some(toml::Value::Table(k)) => {
                if let toml::Value::Table(u) = value {
                    unknown_keys(u, k, &path, out);
                }
            }
            Some(_) => {}
            // the contents of `morphology.synthetic` are checked by serde
            None if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            None => out.push(format!("unknown key `{path}`")),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    /// Parses TOML text; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map(|s| line_of(text, s.start));
            match line {
                Some(l) => ConfigError::one(format!("syntax error at line {l}: {}", e.message())),
                None => ConfigError::one(format!("syntax error: {}", e.message())),
            }
        })?;
        let known = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        let mut problems = Vec::new();
        unknown_keys(&table, &known, "", &mut problems);
        if !problems.is_empty() {
            return Err(ConfigError { problems });
        }
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            match line {
                Some(l) => ConfigError::one(format!("line {l}: {}", e.message())),
                None => ConfigError::one(e.message().to_string()),
            }
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    /// `tau` and `tol` after applying the solver-section overrides.
    pub fn effective_params(&self) -> ModelParams {
        let mut p = self.params.clone();
        if let Some(t) = self.solver.tau {
            p.tau = t;
        }
        if let Some(t) = self.solver.steady_tol {
            p.tol = t;
        }
        p
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Every schema violation; empty when the configuration is runnable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mesh = match self.mesh.build() {
            Ok(m) => Some(m),
            Err(e) => {
                out.push(format!("mesh: {e}"));
                None
            }
        };
        match (&self.morphology.file, &self.morphology.synthetic) {
            (Some(_), Some(_)) => out.push("morphology: give either `file` or `synthetic`, not both".into()),
            (None, None) => out.push("morphology: one of `file` or `synthetic` is required".into()),
            (Some(f), None) => {
                let p = self.resolve(f);
                if !p.is_file() {
                    out.push(format!("morphology.file: {} does not exist", p.display()));
                }
            }
            (None, Some(kind)) => {
                if let Some(m) = &mesh {
                    if let Err(e) = kind.validate(m) {
                        out.push(format!("morphology.synthetic: {e}"));
                    }
                }
            }
        }
        out.extend(self.effective_params().violations().into_iter().map(|v| format!("params: {v}")));
        out.extend(self.solver.nonlinear().violations("solver"));
        for (name, v) in [("solver.tau", self.solver.tau), ("solver.steady_tol", self.solver.steady_tol)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    out.push(format!("{name} must be > 0, got {v}"));
                }
            }
        }
        let sweep = self.sweep.violations("sweep");
        let sweep_ok = sweep.is_empty();
        out.extend(sweep);
        if sweep_ok {
            let volts = self.sweep.voltages();
            for &s in &self.output.snapshot_voltages {
                if !volts.iter().any(|v| (v - s).abs() <= VOLTAGE_MATCH) {
                    out.push(format!(
                        "output.snapshot_voltages: {s} is not a sweep voltage (sweep visits {volts:?})"
                    ));
                }
            }
        }
        if self.output.conservation_threshold.is_nan() || self.output.conservation_threshold <= 0.0 {
            out.push(format!(
                "output.conservation_threshold must be > 0, got {}",
                self.output.conservation_threshold
            ));
        }
        if self.output.formats.is_empty() {
            out.push("output.formats must name at least one format".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let problems = self.violations();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems })
        }
    }
}

/// Reads, parses and validates a run configuration.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::one(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = RunConfig::from_toml_str(&text, &base)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Input of the `morphology` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphologySpec {
    #[serde(default)]
    pub mesh: MeshSection,
    pub synthetic: SyntheticKind,
    /// Output PHF path; the command line may override it.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

pub fn parse_morphology_spec(path: &Path) -> Result<MorphologySpec, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::one(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| line_of(&text, s.start));
        match line {
            Some(l) => ConfigError::one(format!("line {l}: {}", e.message())),
            None => ConfigError::one(e.message().to_string()),
        }
    })
}
