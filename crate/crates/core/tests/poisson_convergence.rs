use std::f64::consts::PI;

use opvsim_core::assembly::Coeff;
use opvsim_core::linsolve::{DirichletSolver, LinearSolverConfig, PreconditionerSpec};
use opvsim_core::mesh::boundary_nodes;
use opvsim_core::{build_structured_mesh, BoundaryTag, FeSpace};

/// `-lap u = f` with `u = sin(pi x/10) sin(pi y/10)` and exact boundary
/// values; returns `(h, ||u_h - I_h u||)`.
fn manufactured_error(n: usize) -> (f64, f64) {
    let mesh = build_structured_mesh(&[10.0, 10.0], &[n, n]).unwrap();
    let space = FeSpace::new(&mesh).unwrap();
    let k = (PI / 10.0).powi(2);
    let exact: Vec<f64> = (0..mesh.n_nodes())
        .map(|i| {
            let v = mesh.vertex(i);
            (PI * v[0] / 10.0).sin() * (PI * v[1] / 10.0).sin()
        })
        .collect();
    let f: Vec<f64> = exact.iter().map(|u| 2.0 * k * u).collect();
    let mut nodes: Vec<usize> = [BoundaryTag::TopOrg, BoundaryTag::BotOrg, BoundaryTag::Ins]
        .iter()
        .flat_map(|&t| boundary_nodes(&mesh, t))
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    let values: Vec<f64> = nodes.iter().map(|&i| exact[i]).collect();
    let cfg = LinearSolverConfig {
        rtol: 1e-12,
        atol: 1e-14,
        ..Default::default()
    };
    let solver = DirichletSolver::new(&space.stiffness(Coeff::Constant(1.0)), &nodes, &PreconditionerSpec::default(), &cfg).unwrap();
    let (u, rep) = solver.solve(&space.load(&f), &values, &vec![0.0; exact.len()]);
    assert!(rep.converged);
    (10.0 / (n - 1) as f64, space.l2_distance(&u, &exact))
}

#[test]
fn second_order_in_l2() {
    let errs: Vec<(f64, f64)> = [16, 32, 64].iter().map(|&n| manufactured_error(n)).collect();
    for w in errs.windows(2) {
        let rate = (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln();
        assert!(rate >= 1.9, "rate {rate} from {errs:?}");
    }
}
