//! Finite-element solver for the exciton/drift-diffusion/Poisson model of
//! bulk-heterojunction organic solar cells.

// Index loops mirror the element and row formulas; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod device;
pub mod error;
pub mod linsolve;
pub mod mesh;
pub mod morphology;
pub mod physics;
pub mod postprocess;
pub mod solvers;

pub use assembly::{FeSpace, SparseMatrix};
pub use device::{Bias, Device};
pub use error::{Error, Result};
pub use mesh::{build_structured_mesh, BoundaryTag, ElementGeometry, Mesh};
pub use morphology::{EnergyLevels, InterfaceField, PhaseField, SyntheticKind};
pub use physics::{ModelParams, State};
pub use postprocess::{AuxWeight, DeviceMetrics, FieldDistances, IVCurve, IVPoint};
pub use solvers::{Method, NonlinearConfig, SolveReport, SweepConfig};
