//! Implicit-Euler pseudo-time stepping to steady state with three nonlinear
//! strategies, plus the voltage-sweep driver.

mod exciton;
mod gummel;
mod newton;
mod semi;
mod sweep;

pub use exciton::{solve_exciton_step, ExcitonSolver};
pub use gummel::{gummel_step, PoissonSolver};
pub use newton::{newton_coupled_step, newton_field_solve, NewtonStats};
pub use gummel::{GummelStats, DENSITY_FLOOR};
pub use semi::semi_newton_gummel_step;
pub use sweep::{voltage_sweep, voltage_sweep_observed, SweepConfig};

use serde::{Deserialize, Serialize};

use crate::device::{Bias, Device};
use crate::error::{Error, Result};
use crate::linsolve::{DirichletSolver, LinearSolverConfig, PrecondKind, PreconditionerSpec};
use crate::physics::{carrier_densities, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Newton,
    Gummel,
    SemiNewtonGummel,
}

impl Method {
    pub fn default_alpha(self) -> f64 {
        match self {
            Method::Newton => 1.0,
            Method::Gummel => 0.5,
            Method::SemiNewtonGummel => 0.7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Newton => "newton",
            Method::Gummel => "gummel",
            Method::SemiNewtonGummel => "semi_newton_gummel",
        }
    }
}

/// Nonlinear and linear solver settings. Time step and steady-state
/// tolerance live in [`ModelParams`](crate::physics::ModelParams).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearConfig {
    pub method: Method,
    /// Damping for Gummel and Semi-Newton-Gummel; `None` picks the method default.
    pub alpha: Option<f64>,
    pub newton_rtol: f64,
    pub newton_atol: f64,
    /// Newton also stops once the max-norm of the update falls below this.
    pub newton_stol: f64,
    pub newton_max_iters: usize,
    /// Each Newton update component is truncated to this size (thermal voltages).
    pub newton_max_update: f64,
    pub max_time_steps: usize,
    pub linear: LinearSolverConfig,
    /// Preconditioner for the Newton and transport systems.
    pub precond: PrecondKind,
    /// Preconditioner for the constant-coefficient Poisson and exciton systems.
    pub elliptic_precond: PrecondKind,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            method: Method::SemiNewtonGummel,
            alpha: None,
            newton_rtol: 1e-6,
            newton_atol: 1e-10,
            newton_stol: 1e-10,
            newton_max_iters: 25,
            newton_max_update: 2.0,
            max_time_steps: 100_000,
            linear: LinearSolverConfig::default(),
            precond: PrecondKind::Ilu0,
            elliptic_precond: PrecondKind::Amg,
        }
    }
}

impl NonlinearConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or_else(|| self.method.default_alpha())
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a < 1.0) {
                out.push(format!("{prefix}.alpha must lie in (0,1), got {a}"));
            }
        }
        for (name, v) in [
            ("newton_rtol", self.newton_rtol),
            ("newton_atol", self.newton_atol),
            ("newton_stol", self.newton_stol),
            ("newton_max_update", self.newton_max_update),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{prefix}.{name} must be > 0, got {v}"));
            }
        }
        if self.newton_max_iters < 1 {
            out.push(format!("{prefix}.newton_max_iters must be >= 1"));
        }
        if self.max_time_steps < 1 {
            out.push(format!("{prefix}.max_time_steps must be >= 1"));
        }
        out.extend(self.linear.violations(&format!("{prefix}.linear")));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations("solver");
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Parameter(v.join("; ")))
        }
    }

    fn spec(&self) -> PreconditionerSpec {
        PreconditionerSpec::of(self.precond)
    }

    fn elliptic_spec(&self) -> PreconditionerSpec {
        PreconditionerSpec::of(self.elliptic_precond)
    }
}

/// Iteration maxima over the time steps of one voltage point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationCounts {
    pub newton_coupled: usize,
    pub newton_psi: usize,
    pub newton_n: usize,
    pub newton_p: usize,
    pub gmres_exciton: usize,
    pub gmres_coupled: usize,
    pub gmres_psi: usize,
    pub gmres_n: usize,
    pub gmres_p: usize,
}

impl IterationCounts {
    pub fn merge_max(&mut self, o: &IterationCounts) {
        self.newton_coupled = self.newton_coupled.max(o.newton_coupled);
        self.newton_psi = self.newton_psi.max(o.newton_psi);
        self.newton_n = self.newton_n.max(o.newton_n);
        self.newton_p = self.newton_p.max(o.newton_p);
        self.gmres_exciton = self.gmres_exciton.max(o.gmres_exciton);
        self.gmres_coupled = self.gmres_coupled.max(o.gmres_coupled);
        self.gmres_psi = self.gmres_psi.max(o.gmres_psi);
        self.gmres_n = self.gmres_n.max(o.gmres_n);
        self.gmres_p = self.gmres_p.max(o.gmres_p);
    }

    pub fn max_newton(&self) -> usize {
        self.newton_coupled
            .max(self.newton_psi)
            .max(self.newton_n)
            .max(self.newton_p)
    }

    pub fn max_gmres(&self) -> usize {
        [
            self.gmres_exciton,
            self.gmres_coupled,
            self.gmres_psi,
            self.gmres_n,
            self.gmres_p,
        ]
        .into_iter()
        .max()
        .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub v_top: f64,
    pub v_bot: f64,
    pub method: Method,
    pub time_steps: usize,
    pub iterations: IterationCounts,
    pub converged: bool,
    /// Last steady-state increment, max over `psi, n, p, X` of `sqrt(d^T M d)`.
    pub increment: f64,
    /// Gummel density clips to the floor.
    pub floor_events: usize,
}

/// Steady state plus the state one step earlier, which the displacement
/// term of the terminal current needs.
#[derive(Debug, Clone)]
pub struct SteadyOutcome {
    pub state: State,
    pub previous: State,
    pub report: SolveReport,
}

/// `alpha u' + (1 - alpha) u`, evaluated as `u + alpha (u' - u)` so entries
/// that agree in both inputs are returned unchanged.
pub fn damped_update(u_prev: &[f64], u_candidate: &[f64], alpha: f64) -> Vec<f64> {
    assert_eq!(u_prev.len(), u_candidate.len());
    if alpha == 1.0 {
        return u_candidate.to_vec();
    }
    u_prev
        .iter()
        .zip(u_candidate)
        .map(|(&a, &b)| a + alpha * (b - a))
        .collect()
}

/// Harmonic lift of the contact potentials, quasi-Fermi levels interpolated
/// linearly in height between the contacts, no excitons.
pub fn initial_state(dev: &Device, bias: Bias, cfg: &NonlinearConfig) -> Result<State> {
    let n = dev.n_nodes();
    let mesh = dev.mesh();
    let h = mesh.height();
    let mut st = State::zeros(n);
    for i in 0..n {
        let t = mesh.height_of(i) / h;
        let v = bias.v_bot + (bias.v_top - bias.v_bot) * t;
        st.phi_n[i] = v;
        st.phi_p[i] = v;
    }
    let nodes = dev.dirichlet_nodes();
    let values: Vec<f64> = nodes
        .iter()
        .map(|&i| dev.boundary_values(i, bias).expect("contact node").0)
        .collect();
    let lin = LinearSolverConfig {
        rtol: 1e-10,
        atol: 1e-14,
        ..cfg.linear.clone()
    };
    let solver = DirichletSolver::new(dev.stiffness(), nodes, &cfg.elliptic_spec(), &lin)?;
    let (psi, rep) = solver.solve(&vec![0.0; n], &values, dev.psi_star());
    rep.check("harmonic lift")?;
    st.psi = psi;
    dev.impose_boundary(&mut st, bias);
    Ok(st)
}

/// Steady-state increment between consecutive states.
pub fn state_increment(dev: &Device, a: &State, b: &State) -> Result<f64> {
    let space = dev.space();
    let lv = dev.levels();
    let prm = dev.params();
    let (na, pa) = carrier_densities(&a.psi, &a.phi_n, &a.phi_p, &lv.lumo, &lv.homo, prm)?;
    let (nb, pb) = carrier_densities(&b.psi, &b.phi_n, &b.phi_p, &lv.lumo, &lv.homo, prm)?;
    Ok([
        space.l2_distance(&a.psi, &b.psi),
        space.l2_distance(&na, &nb),
        space.l2_distance(&pa, &pb),
        space.l2_distance(&a.x, &b.x),
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

/// One step's iteration counts and stabilization events.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub iterations: IterationCounts,
    pub floor_events: usize,
}

/// Time stepper for one device. Constant operators (exciton, Poisson) are
/// factored once and reused over all steps and voltage points.
pub struct TimeStepper<'a> {
    dev: &'a Device,
    cfg: NonlinearConfig,
    exciton: ExcitonSolver,
    poisson: Option<PoissonSolver>,
}

impl<'a> TimeStepper<'a> {
    pub fn new(dev: &'a Device, cfg: &NonlinearConfig) -> Result<Self> {
        cfg.validate()?;
        let exciton = ExcitonSolver::for_device(dev, &cfg.elliptic_spec(), &cfg.linear)?;
        let poisson = match cfg.method {
            Method::Gummel => Some(PoissonSolver::new(dev, &cfg.elliptic_spec(), &cfg.linear)?),
            _ => None,
        };
        Ok(Self {
            dev,
            cfg: cfg.clone(),
            exciton,
            poisson,
        })
    }

    pub fn device(&self) -> &Device {
        self.dev
    }

    pub fn config(&self) -> &NonlinearConfig {
        &self.cfg
    }

    /// One backward-Euler step from `prev`. The exciton is solved first;
    /// the electronic update then uses `X^{k+1}`.
    pub fn step(&self, prev: &State, bias: Bias) -> Result<(State, StepStats)> {
        let mut stats = StepStats::default();
        let (x_cand, rep) = self.exciton.step(&prev.x)?;
        stats.iterations.gmres_exciton = rep.iterations;
        let alpha = match self.cfg.method {
            Method::Newton => 1.0,
            _ => self.cfg.alpha(),
        };
        let x_new = damped_update(&prev.x, &x_cand, alpha);
        let mut next = match self.cfg.method {
            Method::Newton => {
                let (st, s) = newton_coupled_step(self.dev, prev, &x_new, bias, &self.cfg)?;
                stats.iterations.newton_coupled = s.iterations;
                stats.iterations.gmres_coupled = s.max_gmres;
                st
            }
            Method::Gummel => {
                let poisson = self.poisson.as_ref().expect("poisson solver");
                let (st, s) = gummel_step(self.dev, prev, &x_new, bias, alpha, poisson, &self.cfg)?;
                stats.iterations.merge_max(&s.iterations);
                stats.floor_events = s.floor_events;
                st
            }
            Method::SemiNewtonGummel => {
                let (st, it) = semi_newton_gummel_step(self.dev, prev, &x_new, bias, alpha, &self.cfg)?;
                stats.iterations.merge_max(&it);
                st
            }
        };
        next.x = x_new;
        if !next.is_finite() {
            return Err(Error::NonFinite("state after time step".into()));
        }
        Ok((next, stats))
    }

    /// Repeats steps until the increment drops below the steady tolerance or
    /// the step budget runs out (reported as not converged).
    pub fn advance_to_steady(&self, state0: &State, bias: Bias) -> Result<SteadyOutcome> {
        let tol = self.dev.params().tol;
        let mut prev = state0.clone();
        let mut report = SolveReport {
            v_top: bias.v_top,
            v_bot: bias.v_bot,
            method: self.cfg.method,
            time_steps: 0,
            iterations: IterationCounts::default(),
            converged: false,
            increment: f64::INFINITY,
            floor_events: 0,
        };
        for _ in 0..self.cfg.max_time_steps {
            let (next, stats) = self.step(&prev, bias)?;
            report.time_steps += 1;
            report.iterations.merge_max(&stats.iterations);
            report.floor_events += stats.floor_events;
            report.increment = state_increment(self.dev, &prev, &next)?;
            let done = report.increment < tol;
            let previous = std::mem::replace(&mut prev, next);
            if done {
                report.converged = true;
                if report.floor_events > 0 {
                    log::warn!("V_top={}: {} density floor events", bias.v_top, report.floor_events);
                }
                return Ok(SteadyOutcome {
                    state: prev,
                    previous,
                    report,
                });
            }
            if report.time_steps.is_multiple_of(1000) {
                log::debug!(
                    "V_top={} step {} increment {:.3e}",
                    bias.v_top,
                    report.time_steps,
                    report.increment
                );
            }
        }
        log::warn!(
            "no steady state at V_top={} after {} steps (increment {:.3e}, {} density floor events)",
            bias.v_top,
            report.time_steps,
            report.increment,
            report.floor_events
        );
        Ok(SteadyOutcome {
            previous: prev.clone(),
            state: prev,
            report,
        })
    }
}

/// Convenience wrapper building a [`TimeStepper`] for a single call.
pub fn advance_to_steady(dev: &Device, state0: &State, bias: Bias, cfg: &NonlinearConfig) -> Result<SteadyOutcome> {
    TimeStepper::new(dev, cfg)?.advance_to_steady(state0, bias)
}
