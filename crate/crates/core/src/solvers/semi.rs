use super::{damped_update, newton_field_solve, IterationCounts, NonlinearConfig};
use crate::assembly::BlockField;
use crate::device::{Bias, Device};
use crate::error::Result;
use crate::physics::State;

/// One step of the Semi-Newton-Gummel method: Newton on the Poisson
/// equation with frozen quasi-Fermi levels, then Newton on the electron and
/// hole equations at the new potential, each update damped by `alpha`.
pub fn semi_newton_gummel_step(
    dev: &Device,
    prev: &State,
    x_new: &[f64],
    bias: Bias,
    alpha: f64,
    cfg: &NonlinearConfig,
) -> Result<(State, IterationCounts)> {
    let mut it = IterationCounts::default();
    let mut base = prev.clone();
    dev.impose_boundary(&mut base, bias);

    let mut trial = base.clone();
    let s = newton_field_solve(dev, &mut trial, prev, x_new, bias, BlockField::Psi, cfg)?;
    it.newton_psi = s.iterations;
    it.gmres_psi = s.max_gmres;
    let psi = damped_update(&base.psi, &trial.psi, alpha);

    let frozen = State {
        psi,
        ..base.clone()
    };
    let mut trial = frozen.clone();
    let s = newton_field_solve(dev, &mut trial, prev, x_new, bias, BlockField::PhiN, cfg)?;
    it.newton_n = s.iterations;
    it.gmres_n = s.max_gmres;
    let phi_n = damped_update(&base.phi_n, &trial.phi_n, alpha);

    let mut trial = frozen.clone();
    let s = newton_field_solve(dev, &mut trial, prev, x_new, bias, BlockField::PhiP, cfg)?;
    it.newton_p = s.iterations;
    it.gmres_p = s.max_gmres;
    let phi_p = damped_update(&base.phi_p, &trial.phi_p, alpha);

    Ok((
        State {
            psi: frozen.psi,
            phi_n,
            phi_p,
            x: prev.x.clone(),
        },
        it,
    ))
}
