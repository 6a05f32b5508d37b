//! Restarted GMRES with right preconditioning.

mod amg;
mod precond;

pub use amg::{Amg, AmgSettings};
pub use precond::{build_preconditioner, Identity, Ilu0, Jacobi, PrecondKind, Preconditioner, PreconditionerSpec};

use serde::{Deserialize, Serialize};

use crate::assembly::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_iters: usize,
    pub restart: usize,
}

impl Default for LinearSolverConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-10,
            max_iters: 1000,
            restart: 200,
        }
    }
}

impl LinearSolverConfig {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.rtol > 0.0) {
            out.push(format!("{prefix}.rtol must be > 0, got {}", self.rtol));
        }
        if !(self.atol > 0.0) {
            out.push(format!("{prefix}.atol must be > 0, got {}", self.atol));
        }
        if self.restart < 1 {
            out.push(format!("{prefix}.restart must be >= 1"));
        }
        if self.max_iters < 1 {
            out.push(format!("{prefix}.max_iters must be >= 1"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSolveReport {
    pub iterations: usize,
    /// Explicitly recomputed `||b - A x||`.
    pub residual: f64,
    pub converged: bool,
}

impl LinearSolveReport {
    /// Converts a non-converged report into an error.
    pub fn check(self, what: &str) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::LinearSolve {
                what: what.to_string(),
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds the preconditioner from `spec` and solves `A x = b`.
pub fn gmres_solve(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    spec: &PreconditionerSpec,
    cfg: &LinearSolverConfig,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    let pc = build_preconditioner(a, spec)?;
    Ok(gmres(a, b, x0, pc.as_ref(), cfg))
}

/// Right-preconditioned restarted GMRES (modified Gram-Schmidt, Givens
/// rotations). Stops once `||b - A x|| <= max(rtol ||b||, atol)`; otherwise
/// returns the last iterate with `converged = false`.
pub fn gmres(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    pc: &dyn Preconditioner,
    cfg: &LinearSolverConfig,
) -> (Vec<f64>, LinearSolveReport) {
    let n = b.len();
    assert_eq!(a.n_rows(), n);
    assert_eq!(a.n_cols(), n);
    assert_eq!(x0.len(), n);
    let target = (cfg.rtol * norm(b)).max(cfg.atol);
    let m = cfg.restart.max(1);

    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut iterations = 0;

    a.residual_into(b, &x, &mut r);
    let mut beta = norm(&r);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut h = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];

    loop {
        if beta <= target || !beta.is_finite() || iterations >= cfg.max_iters {
            break;
        }
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k = 0;
        while k < m && iterations < cfg.max_iters {
            pc.apply(&basis[k], &mut z);
            a.mul_vec_into(&z, &mut w);
            for (j, v) in basis.iter().enumerate() {
                let hj = dotp(&w, v);
                h[j][k] = hj;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= hj * vi);
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / denom;
                sn[k] = h[k + 1][k] / denom;
            }
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k += 1;
            let breakdown = hn <= 1e-14 * denom.max(f64::MIN_POSITIVE);
            if g[k].abs() <= target || breakdown {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }

        // y = H^{-1} g, x += M^{-1} V y
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[i][j] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            update.iter_mut().zip(&basis[j]).for_each(|(u, v)| *u += yj * v);
        }
        pc.apply(&update, &mut z);
        x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi += zi);
        a.residual_into(b, &x, &mut r);
        let new_beta = norm(&r);
        // stagnation: the cycle made no progress on the true residual
        if new_beta >= beta * (1.0 - 1e-12) && new_beta > target {
            beta = new_beta;
            break;
        }
        beta = new_beta;
    }

    let converged = beta <= target && beta.is_finite();
    (
        x,
        LinearSolveReport {
            iterations,
            residual: beta,
            converged,
        },
    )
}

/// Repeated solves of `A u = b` with a fixed matrix and fixed constrained
/// rows. The eliminated matrix and its preconditioner are built once.
pub struct DirichletSolver {
    original: SparseMatrix,
    reduced: SparseMatrix,
    nodes: Vec<usize>,
    pc: Box<dyn Preconditioner>,
    cfg: LinearSolverConfig,
}

impl DirichletSolver {
    pub fn new(
        a: &SparseMatrix,
        nodes: &[usize],
        spec: &PreconditionerSpec,
        cfg: &LinearSolverConfig,
    ) -> Result<Self> {
        let n = a.n_rows();
        let sys = crate::assembly::apply_dirichlet(crate::assembly::AssembledSystem {
            matrix: a.clone(),
            rhs: vec![0.0; n],
            dirichlet_nodes: nodes.to_vec(),
            dirichlet_values: vec![0.0; nodes.len()],
        });
        let pc = build_preconditioner(&sys.matrix, spec)?;
        Ok(Self {
            original: a.clone(),
            reduced: sys.matrix,
            nodes: nodes.to_vec(),
            pc,
            cfg: cfg.clone(),
        })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.reduced
    }

    /// Solves with `u[nodes[k]] = values[k]`, starting from `x0`. GMRES runs on
    /// the correction `A d = rhs - A x0` from a zero guess, so the relative
    /// tolerance applies to the initial residual; a warm start close to the
    /// solution is therefore still refined instead of accepted as is.
    pub fn solve(&self, rhs: &[f64], values: &[f64], x0: &[f64]) -> (Vec<f64>, LinearSolveReport) {
        let n = rhs.len();
        let mut u0 = x0.to_vec();
        for (&i, &v) in self.nodes.iter().zip(values) {
            u0[i] = v;
        }
        let mut r = vec![0.0; n];
        self.original.residual_into(rhs, &u0, &mut r);
        for &i in &self.nodes {
            r[i] = 0.0;
        }
        let (d, rep) = gmres(&self.reduced, &r, &vec![0.0; n], self.pc.as_ref(), &self.cfg);
        let u = u0.iter().zip(&d).map(|(a, b)| a + b).collect();
        (u, rep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{apply_dirichlet, AssembledSystem, Coeff, FeSpace};
    use crate::mesh::{boundary_nodes, build_structured_mesh, BoundaryTag};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(kind: PrecondKind) -> PreconditionerSpec {
        PreconditionerSpec {
            kind,
            ..PreconditionerSpec::default()
        }
    }

    fn dense_solve(a: &SparseMatrix, b: &[f64]) -> Vec<f64> {
        let d = a.to_dense();
        let m = DMatrix::from_fn(a.n_rows(), a.n_cols(), |i, j| d[i][j]);
        m.lu().solve(&DVector::from_column_slice(b)).unwrap().as_slice().to_vec()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm(&d) / norm(b)
    }

    fn poisson(n: usize) -> (SparseMatrix, Vec<f64>) {
        let m = build_structured_mesh(&[1.0, 1.0], &[n, n]).unwrap();
        let s = FeSpace::new(&m).unwrap();
        let mut nodes = boundary_nodes(&m, BoundaryTag::BotOrg);
        nodes.extend(boundary_nodes(&m, BoundaryTag::TopOrg));
        let f: Vec<f64> = (0..m.n_nodes()).map(|i| 1.0 + m.vertex(i)[0]).collect();
        let sys = apply_dirichlet(AssembledSystem {
            matrix: s.stiffness(Coeff::Constant(1.0)),
            rhs: s.load(&f),
            dirichlet_values: vec![0.0; nodes.len()],
            dirichlet_nodes: nodes,
        });
        (sys.matrix, sys.rhs)
    }

    #[test]
    fn identity_in_one_iteration() {
        let a = SparseMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        let (x, rep) = gmres_solve(&a, &b, &[0.0; 5], &spec(PrecondKind::None), &Default::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert!(rel(&x, &b) < 1e-15);
    }

    #[test]
    fn jacobi_on_diagonal_in_one_iteration() {
        let n = 30;
        let a = SparseMatrix::from_diagonal(&(1..=n).map(|i| i as f64).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, rep) = gmres_solve(&a, &b, &vec![0.0; n], &spec(PrecondKind::Jacobi), &Default::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        for i in 0..n {
            assert!((x[i] - b[i] / (i + 1) as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn random_diagonally_dominant_against_dense_lu() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut trip = Vec::new();
        for i in 0..n {
            let mut off = 0.0;
            for j in 0..n {
                if i != j && rng.gen_bool(0.2) {
                    let v = rng.gen_range(-1.0..1.0);
                    off += f64::abs(v);
                    trip.push((i, j, v));
                }
            }
            trip.push((i, i, off + rng.gen_range(0.5..2.0)));
        }
        let a = SparseMatrix::from_triplets(n, n, &trip);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = LinearSolverConfig {
            rtol: 1e-12,
            atol: 1e-14,
            ..Default::default()
        };
        let want = dense_solve(&a, &b);
        for kind in [PrecondKind::None, PrecondKind::Jacobi, PrecondKind::Ilu0, PrecondKind::Amg] {
            let (x, rep) = gmres_solve(&a, &b, &vec![0.0; n], &spec(kind), &cfg).unwrap();
            assert!(rep.converged, "{kind:?}");
            assert!(rel(&x, &want) < 1e-8, "{kind:?}");
        }
    }

    #[test]
    fn reported_residual_is_the_true_residual() {
        let (a, b) = poisson(12);
        for kind in [PrecondKind::None, PrecondKind::Jacobi, PrecondKind::Ilu0, PrecondKind::Amg] {
            let (x, rep) = gmres_solve(&a, &b, &vec![0.0; b.len()], &spec(kind), &Default::default()).unwrap();
            let mut r = vec![0.0; b.len()];
            a.residual_into(&b, &x, &mut r);
            assert!((norm(&r) - rep.residual).abs() <= 1e-12 * rep.residual.max(1e-300));
            assert!(rep.converged && rep.residual <= (1e-6 * norm(&b)).max(1e-10));
        }
    }

    #[test]
    fn spd_poisson_matches_dense_and_preconditioners_agree() {
        let (a, b) = poisson(16);
        let want = dense_solve(&a, &b);
        let cfg = LinearSolverConfig {
            rtol: 1e-10,
            atol: 1e-14,
            ..Default::default()
        };
        let mut sols = Vec::new();
        for kind in [PrecondKind::None, PrecondKind::Jacobi, PrecondKind::Ilu0, PrecondKind::Amg] {
            let (x, rep) = gmres_solve(&a, &b, &vec![0.0; b.len()], &spec(kind), &cfg).unwrap();
            assert!(rep.converged);
            assert!(rel(&x, &want) < 1e-8, "{kind:?}");
            sols.push(x);
        }
        // at the default tolerance the preconditioner does not move the answer
        let dflt = LinearSolverConfig::default();
        let (x_none, _) = gmres_solve(&a, &b, &vec![0.0; b.len()], &spec(PrecondKind::None), &dflt).unwrap();
        let (x_jac, _) = gmres_solve(&a, &b, &vec![0.0; b.len()], &spec(PrecondKind::Jacobi), &dflt).unwrap();
        assert!(rel(&x_jac, &x_none) <= 10.0 * dflt.rtol);
    }

    #[test]
    fn preconditioning_reduces_iterations() {
        let (a, b) = poisson(32);
        let x0 = vec![0.0; b.len()];
        let cfg = LinearSolverConfig::default();
        let count = |k| gmres_solve(&a, &b, &x0, &spec(k), &cfg).unwrap().1.iterations;
        let (none, jac, ilu, amg) = (
            count(PrecondKind::None),
            count(PrecondKind::Jacobi),
            count(PrecondKind::Ilu0),
            count(PrecondKind::Amg),
        );
        assert!(none >= jac, "none {none} jacobi {jac}");
        assert!(ilu < jac && amg < ilu, "ilu {ilu} amg {amg}");
    }

    #[test]
    fn dirichlet_solver_matches_explicit_elimination() {
        let m = build_structured_mesh(&[1.0, 1.0], &[10, 10]).unwrap();
        let s = FeSpace::new(&m).unwrap();
        let a = s.stiffness(Coeff::Constant(1.0));
        let nodes = boundary_nodes(&m, BoundaryTag::TopOrg);
        let vals: Vec<f64> = nodes.iter().map(|&i| 0.3 + m.vertex(i)[0]).collect();
        let f: Vec<f64> = (0..m.n_nodes()).map(|i| m.vertex(i)[1].sin()).collect();
        let rhs = s.load(&f);
        let sys = apply_dirichlet(AssembledSystem {
            matrix: a.clone(),
            rhs: rhs.clone(),
            dirichlet_nodes: nodes.clone(),
            dirichlet_values: vals.clone(),
        });
        let want = dense_solve(&sys.matrix, &sys.rhs);
        let cfg = LinearSolverConfig {
            rtol: 1e-12,
            atol: 1e-15,
            ..Default::default()
        };
        let solver = DirichletSolver::new(&a, &nodes, &spec(PrecondKind::Amg), &cfg).unwrap();
        let (x, rep) = solver.solve(&rhs, &vals, &vec![0.0; rhs.len()]);
        assert!(rep.converged);
        assert!(rel(&x, &want) < 1e-10);
        for (&i, &v) in nodes.iter().zip(&vals) {
            assert_eq!(x[i], v);
        }
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let (a, b) = poisson(16);
        let cfg = LinearSolverConfig {
            max_iters: 3,
            ..Default::default()
        };
        let (_, rep) = gmres_solve(&a, &b, &vec![0.0; b.len()], &spec(PrecondKind::None), &cfg).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
        assert!(rep.check("poisson").is_err());
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let (a, b) = poisson(5);
        let (x, rep) = gmres_solve(&a, &vec![0.0; b.len()], &vec![0.0; b.len()], &spec(PrecondKind::Ilu0), &Default::default()).unwrap();
        assert!(rep.converged && rep.iterations == 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn restarts_still_converge() {
        let (a, b) = poisson(20);
        let cfg = LinearSolverConfig {
            restart: 5,
            max_iters: 5000,
            ..Default::default()
        };
        let (x, rep) = gmres_solve(&a, &b, &vec![0.0; b.len()], &spec(PrecondKind::Jacobi), &cfg).unwrap();
        assert!(rep.converged);
        assert!(rel(&x, &dense_solve(&a, &b)) < 1e-4);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn residual_nonincreasing_within_a_cycle(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 20;
            let mut trip = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        trip.push((i, j, 4.0 + rng.gen_range(0.0..1.0)));
                    } else if rng.gen_bool(0.15) {
                        trip.push((i, j, rng.gen_range(-1.0..1.0)));
                    }
                }
            }
            let a = SparseMatrix::from_triplets(n, n, &trip);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut prev = f64::INFINITY;
            for k in 1..=n {
                let cfg = LinearSolverConfig { rtol: 1e-300, atol: 1e-300, max_iters: k, restart: n };
                let (_, rep) = gmres(&a, &b, &vec![0.0; n], &Identity, &cfg);
                prop_assert!(rep.residual <= prev * (1.0 + 1e-10) + 1e-14);
                prev = rep.residual;
            }
        }
    }
}
