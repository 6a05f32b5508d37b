use super::{damped_update, IterationCounts, NonlinearConfig};
use crate::assembly::SparseMatrix;
use crate::device::{Bias, Device};
use crate::error::Result;
use crate::linsolve::{DirichletSolver, LinearSolveReport, LinearSolverConfig, PreconditionerSpec};
use crate::physics::{carrier_densities, electron_quasi_fermi, hole_quasi_fermi, State};

/// Smallest density a Gummel update may produce.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Linear Poisson solve `eps K psi = M (p - n)` with contact potentials.
pub struct PoissonSolver {
    inner: DirichletSolver,
}

impl PoissonSolver {
    pub fn new(dev: &Device, spec: &PreconditionerSpec, cfg: &LinearSolverConfig) -> Result<Self> {
        let mut k = dev.stiffness().clone();
        k.scale(dev.params().eps);
        Ok(Self {
            inner: DirichletSolver::new(&k, dev.dirichlet_nodes(), spec, cfg)?,
        })
    }

    pub fn solve(&self, dev: &Device, rhs: &[f64], bias: Bias, x0: &[f64]) -> Result<(Vec<f64>, LinearSolveReport)> {
        let values: Vec<f64> = dev
            .dirichlet_nodes()
            .iter()
            .map(|&i| dev.boundary_values(i, bias).expect("contact node").0)
            .collect();
        let (x, rep) = self.inner.solve(rhs, &values, x0);
        Ok((x, rep.check("poisson")?))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GummelStats {
    pub iterations: IterationCounts,
    pub floor_events: usize,
}

/// Solves a linear density system with contact values `g` and floors the
/// damped result.
#[allow(clippy::too_many_arguments)]
fn density_update(
    dev: &Device,
    matrix: &SparseMatrix,
    rhs: &[f64],
    contact: &[f64],
    old: &[f64],
    alpha: f64,
    cfg: &NonlinearConfig,
    what: &str,
    floors: &mut usize,
) -> Result<(Vec<f64>, usize)> {
    let solver = DirichletSolver::new(matrix, dev.dirichlet_nodes(), &cfg.spec(), &cfg.linear)?;
    let (cand, rep) = solver.solve(rhs, contact, old);
    let rep = rep.check(what)?;
    let mut out = damped_update(old, &cand, alpha);
    for (&i, &g) in dev.dirichlet_nodes().iter().zip(contact) {
        out[i] = g;
    }
    for (i, v) in out.iter_mut().enumerate() {
        if !(*v >= DENSITY_FLOOR) {
            log::debug!("{what}: density {v:e} at node {i} clipped to {DENSITY_FLOOR:e}");
            *v = DENSITY_FLOOR;
            *floors += 1;
        }
    }
    Ok((out, rep.iterations))
}

/// One damped Gummel step: linear Poisson with the old densities, then the
/// linear electron and hole systems in density form with drift from the
/// damped potential. Quasi-Fermi levels follow by log inversion.
pub fn gummel_step(
    dev: &Device,
    prev: &State,
    x_new: &[f64],
    bias: Bias,
    alpha: f64,
    poisson: &PoissonSolver,
    cfg: &NonlinearConfig,
) -> Result<(State, GummelStats)> {
    let prm = dev.params();
    let space = dev.space();
    let lv = dev.levels();
    let mass = dev.mass();
    let mut stats = GummelStats::default();

    let mut base = prev.clone();
    dev.impose_boundary(&mut base, bias);
    let (n_k, p_k) = carrier_densities(&prev.psi, &prev.phi_n, &prev.phi_p, &lv.lumo, &lv.homo, prm)?;

    let diff: Vec<f64> = p_k.iter().zip(&n_k).map(|(p, n)| p - n).collect();
    let (psi_cand, rep) = poisson.solve(dev, &mass.mul_vec(&diff), bias, &base.psi)?;
    stats.iterations.gmres_psi = rep.iterations;
    let psi = damped_update(&base.psi, &psi_cand, alpha);

    // contact densities from the boundary potentials
    let (n_bc, p_bc) = carrier_densities(&base.psi, &base.phi_n, &base.phi_p, &lv.lumo, &lv.homo, prm)?;
    let n_contact: Vec<f64> = dev.dirichlet_nodes().iter().map(|&i| n_bc[i]).collect();
    let p_contact: Vec<f64> = dev.dirichlet_nodes().iter().map(|&i| p_bc[i]).collect();

    let inv_tau = 1.0 / prm.tau;
    let kappa = dev.artificial_diffusion();
    let grad_psi = space.gradients(&psi);
    let drift = |levels: &[[f64; 3]]| -> Vec<[f64; 3]> {
        grad_psi
            .iter()
            .zip(levels)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
            .collect()
    };
    let gen = space.weighted_mass(&dev.dissociation()).mul_vec(x_new);
    let ni2 = prm.n_intr * prm.n_intr;
    let source: Vec<f64> = gen
        .iter()
        .zip(dev.lumped_mass())
        .map(|(g, m)| g + prm.gamma * ni2 * m)
        .collect();

    // (M/tau + (mu_n + kappa) K - mu_n A_n + gamma W(p^k)) n = M n^k / tau + sources
    let conv_n = space.convection(&drift(dev.lumo_gradients())).transpose();
    let mut a_n = space.weighted_mass(&p_k);
    a_n.scale(prm.gamma);
    a_n.add_scaled_same_pattern(inv_tau, mass);
    a_n.add_scaled_same_pattern(prm.mu_n + kappa, dev.stiffness());
    a_n = a_n.linear_combination(1.0, &conv_n, -prm.mu_n);
    let mut rhs_n = mass.mul_vec(&n_k);
    rhs_n.iter_mut().zip(&source).for_each(|(r, s)| *r = *r * inv_tau + s);
    let (n, it_n) = density_update(dev, &a_n, &rhs_n, &n_contact, &n_k, alpha, cfg, "electron", &mut stats.floor_events)?;
    stats.iterations.gmres_n = it_n;

    // (M/tau + (mu_p + kappa) K + mu_p A_p + gamma W(n^k)) p = M p^k / tau + sources
    let conv_p = space.convection(&drift(dev.homo_gradients())).transpose();
    let mut a_p = space.weighted_mass(&n_k);
    a_p.scale(prm.gamma);
    a_p.add_scaled_same_pattern(inv_tau, mass);
    a_p.add_scaled_same_pattern(prm.mu_p + kappa, dev.stiffness());
    a_p = a_p.linear_combination(1.0, &conv_p, prm.mu_p);
    let mut rhs_p = mass.mul_vec(&p_k);
    rhs_p.iter_mut().zip(&source).for_each(|(r, s)| *r = *r * inv_tau + s);
    let (p, it_p) = density_update(dev, &a_p, &rhs_p, &p_contact, &p_k, alpha, cfg, "hole", &mut stats.floor_events)?;
    stats.iterations.gmres_p = it_p;

    let mut phi_n = electron_quasi_fermi(&n, &psi, &lv.lumo, prm)?;
    let mut phi_p = hole_quasi_fermi(&p, &psi, &lv.homo, prm)?;
    // contact levels exactly, not through a log round trip
    for &i in dev.dirichlet_nodes() {
        phi_n[i] = base.phi_n[i];
        phi_p[i] = base.phi_p[i];
    }
    Ok((
        State {
            psi,
            phi_n,
            phi_p,
            x: prev.x.clone(),
        },
        stats,
    ))
}
