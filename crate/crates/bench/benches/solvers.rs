use criterion::{black_box, criterion_group, criterion_main, Criterion};
use opvsim_bench::checkerboard;
use opvsim_core::assembly::{coupled_residual_jacobian, JacobianRequest};
use opvsim_core::linsolve::{gmres_solve, LinearSolverConfig, PrecondKind, PreconditionerSpec};
use opvsim_core::solvers::{initial_state, TimeStepper};
use opvsim_core::{Bias, Method, NonlinearConfig};

fn assembly(c: &mut Criterion) {
    let dev = checkerboard(32, 1.0);
    let bias = Bias::new(0.5, 0.0);
    let cfg = NonlinearConfig::for_method(Method::Newton);
    let s = initial_state(&dev, bias, &cfg).unwrap();
    c.bench_function("coupled_residual_jacobian 32x32", |b| {
        b.iter(|| coupled_residual_jacobian(&dev, black_box(&s), &s, &s.x, bias, JacobianRequest::Coupled).unwrap())
    });
}

fn linear(c: &mut Criterion) {
    let dev = checkerboard(64, 1.0);
    let k = dev.stiffness().clone();
    let mut a = dev.mass().clone();
    a.add_scaled_same_pattern(1.0, &k);
    let rhs = vec![1.0; a.n_rows()];
    let cfg = LinearSolverConfig::default();
    for kind in [PrecondKind::Jacobi, PrecondKind::Ilu0, PrecondKind::Amg] {
        let spec = PreconditionerSpec::of(kind);
        c.bench_function(&format!("gmres M+K 64x64 {kind:?}"), |b| {
            b.iter(|| gmres_solve(&a, black_box(&rhs), &vec![0.0; rhs.len()], &spec, &cfg).unwrap())
        });
    }
}

fn time_steps(c: &mut Criterion) {
    let bias = Bias::new(0.5, 0.0);
    for (method, tau) in [
        (Method::Newton, 1.0),
        (Method::Gummel, 3e-3),
        (Method::SemiNewtonGummel, 0.1),
    ] {
        let dev = checkerboard(32, tau);
        let cfg = NonlinearConfig::for_method(method);
        let ts = TimeStepper::new(&dev, &cfg).unwrap();
        // a few steps in, away from the cold start
        let mut s = initial_state(&dev, bias, &cfg).unwrap();
        for _ in 0..5 {
            s = ts.step(&s, bias).unwrap().0;
        }
        c.bench_function(&format!("time step 32x32 {}", method.name()), |b| {
            b.iter(|| ts.step(black_box(&s), bias).unwrap())
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = assembly, linear, time_steps
}
criterion_main!(benches);
