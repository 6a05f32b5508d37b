//! Shared fixtures for the benchmarks.

use opvsim_core::morphology::generate_synthetic;
use opvsim_core::{build_structured_mesh, Device, ModelParams, SyntheticKind};

/// Checkerboard device of `n x n` nodes on the 10 x 10 box.
pub fn checkerboard(n: usize, tau: f64) -> Device {
    let mesh = build_structured_mesh(&[10.0, 10.0], &[n, n]).expect("mesh");
    let phase = generate_synthetic(&SyntheticKind::Checkerboard { period: 10.0 / 3.0 }, &mesh).expect("phase");
    let params = ModelParams {
        tau,
        ..ModelParams::default()
    };
    Device::new(mesh, phase, params).expect("device")
}
