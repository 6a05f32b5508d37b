use crate::assembly::{Coeff, FeSpace, SparseMatrix};
use crate::device::Device;
use crate::error::{Error, Result};
use crate::physics::ModelParams;
use crate::linsolve::{build_preconditioner, gmres, LinearSolveReport, LinearSolverConfig, Preconditioner, PreconditionerSpec};

/// Backward-Euler exciton update
/// `(M + tau d_X K + tau W(eta_r + eta_d |grad phi|)) X = tau G M 1 + M X_prev`
/// with natural boundary conditions. The operator is fixed, so it and its
/// preconditioner are built once.
pub struct ExcitonSolver {
    matrix: SparseMatrix,
    pc: Box<dyn Preconditioner>,
    source: Vec<f64>,
    mass: SparseMatrix,
    cfg: LinearSolverConfig,
}

impl ExcitonSolver {
    /// `indicator` is the nodal interface field `|grad phi|`.
    pub fn new(
        space: &FeSpace,
        indicator: &[f64],
        params: &ModelParams,
        spec: &PreconditionerSpec,
        cfg: &LinearSolverConfig,
    ) -> Result<Self> {
        if indicator.len() != space.n_nodes() {
            return Err(Error::Dimension(format!(
                "indicator has {} values for {} nodes",
                indicator.len(),
                space.n_nodes()
            )));
        }
        let tau = params.tau;
        let decay: Vec<f64> = indicator
            .iter()
            .map(|ind| tau * (params.eta_r + params.eta_d * ind))
            .collect();
        let mass = space.mass();
        let mut matrix = space.weighted_mass(&decay);
        matrix.add_scaled_same_pattern(1.0, &mass);
        matrix.add_scaled_same_pattern(tau * params.d_x, &space.stiffness(Coeff::Constant(1.0)));
        let pc = build_preconditioner(&matrix, spec)?;
        let source = space.lumped_mass().iter().map(|m| tau * params.g * m).collect();
        Ok(Self {
            matrix,
            pc,
            source,
            mass,
            cfg: cfg.clone(),
        })
    }

    pub fn for_device(dev: &Device, spec: &PreconditionerSpec, cfg: &LinearSolverConfig) -> Result<Self> {
        Self::new(dev.space(), &dev.indicator().values, dev.params(), spec, cfg)
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn step(&self, x_prev: &[f64]) -> Result<(Vec<f64>, LinearSolveReport)> {
        let mut rhs = self.mass.mul_vec(x_prev);
        rhs.iter_mut().zip(&self.source).for_each(|(r, s)| *r += s);
        // correction form, so small per-step changes are still resolved
        let mut r = vec![0.0; rhs.len()];
        self.matrix.residual_into(&rhs, x_prev, &mut r);
        let (d, rep) = gmres(&self.matrix, &r, &vec![0.0; r.len()], self.pc.as_ref(), &self.cfg);
        let x = x_prev.iter().zip(&d).map(|(a, b)| a + b).collect();
        Ok((x, rep.check("exciton")?))
    }
}

/// One exciton step from `x_prev` with default linear-solver settings.
pub fn solve_exciton_step(
    space: &FeSpace,
    indicator: &[f64],
    params: &ModelParams,
    x_prev: &[f64],
) -> Result<Vec<f64>> {
    let s = ExcitonSolver::new(
        space,
        indicator,
        params,
        &PreconditionerSpec::default(),
        &LinearSolverConfig::default(),
    )?;
    Ok(s.step(x_prev)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;

    fn tight() -> LinearSolverConfig {
        LinearSolverConfig {
            rtol: 1e-12,
            atol: 1e-12,
            ..Default::default()
        }
    }

    fn space() -> FeSpace {
        FeSpace::new(&build_structured_mesh(&[10.0, 10.0], &[6, 6]).unwrap()).unwrap()
    }

    #[test]
    fn constant_steady_state_is_a_fixed_point() {
        let p = ModelParams::default();
        let s = space();
        let x0 = vec![p.g / p.eta_r; s.n_nodes()];
        let x1 = solve_exciton_step(&s, &vec![0.0; s.n_nodes()], &p, &x0).unwrap();
        for v in x1 {
            assert!((v / 16990.0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn one_step_matches_the_scalar_recursion() {
        // uniform data: X_{k+1} = (X_k + tau G) / (1 + tau eta_r)
        let p = ModelParams {
            tau: 0.05,
            ..ModelParams::default()
        };
        let s = space();
        let zero = vec![0.0; s.n_nodes()];
        let x1 = ExcitonSolver::new(&s, &zero, &p, &PreconditionerSpec::default(), &tight())
            .unwrap()
            .step(&zero)
            .unwrap()
            .0;
        let want = p.tau * p.g / (1.0 + p.tau * p.eta_r);
        for v in x1 {
            assert!((v / want - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_indicator_balance() {
        // steady X = G / (eta_r + eta_d c)
        let p = ModelParams {
            tau: 0.5,
            ..ModelParams::default()
        };
        let s = space();
        let ind = vec![1.0; s.n_nodes()];
        let solver = ExcitonSolver::new(&s, &ind, &p, &PreconditionerSpec::default(), &tight()).unwrap();
        let mut x = vec![0.0; s.n_nodes()];
        for _ in 0..200 {
            x = solver.step(&x).unwrap().0;
        }
        for v in x {
            assert!((v / (p.g / 2.0) - 1.0).abs() < 1e-6);
        }
    }
}
