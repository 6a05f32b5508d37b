use super::NonlinearConfig;
use crate::assembly::{coupled_residual_jacobian, interleave, BlockField, JacobianRequest};
use crate::device::{Bias, Device};
use crate::error::{Error, Result};
use crate::linsolve::{build_preconditioner, gmres, norm};
use crate::physics::State;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewtonStats {
    pub iterations: usize,
    pub max_gmres: usize,
    /// `||F||` before each update and after the last one.
    pub residuals: Vec<f64>,
}

fn field_mut(st: &mut State, f: BlockField) -> &mut Vec<f64> {
    match f {
        BlockField::Psi => &mut st.psi,
        BlockField::PhiN => &mut st.phi_n,
        BlockField::PhiP => &mut st.phi_p,
    }
}

/// Newton on the coupled system (`request = Coupled`) or on one equation
/// with the other unknowns frozen (`Block`). `state` is the initial guess
/// and holds the result.
fn newton_solve(
    dev: &Device,
    state: &mut State,
    prev: &State,
    x_new: &[f64],
    bias: Bias,
    request: JacobianRequest,
    cfg: &NonlinearConfig,
) -> Result<NewtonStats> {
    let what = match request {
        JacobianRequest::Block(BlockField::Psi) => "poisson newton",
        JacobianRequest::Block(BlockField::PhiN) => "electron newton",
        JacobianRequest::Block(BlockField::PhiP) => "hole newton",
        _ => "coupled newton",
    };
    let spec = cfg.spec();
    let mut stats = NewtonStats::default();
    let mut target = 0.0;
    loop {
        let (res, jac) = coupled_residual_jacobian(dev, state, prev, x_new, bias, request)?;
        let f = match request {
            JacobianRequest::Block(b) => res.field(b).to_vec(),
            _ => interleave(&res.psi, &res.phi_n, &res.phi_p),
        };
        let r = norm(&f);
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("{what} residual norm {r}")));
        }
        stats.residuals.push(r);
        log::trace!("{what} iteration {} residual {r:.3e}", stats.iterations);
        if stats.iterations == 0 {
            target = (cfg.newton_rtol * r).max(cfg.newton_atol);
        }
        if r <= target {
            return Ok(stats);
        }
        if stats.iterations == cfg.newton_max_iters {
            return Err(Error::Newton {
                what: what.to_string(),
                iterations: stats.iterations,
                residual: r,
            });
        }
        let jac = jac.expect("jacobian requested");
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let pc = build_preconditioner(&jac, &spec)?;
        let (delta, rep) = gmres(&jac, &rhs, &vec![0.0; rhs.len()], pc.as_ref(), &cfg.linear);
        let rep = rep.check(what)?;
        stats.max_gmres = stats.max_gmres.max(rep.iterations);
        stats.iterations += 1;
        let mut delta = delta;
        let step = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if step > cfg.newton_max_update {
            // nodewise limiting keeps the exponentials in range far from the solution
            let lim = cfg.newton_max_update;
            delta.iter_mut().for_each(|d| *d = d.clamp(-lim, lim));
        }
        match request {
            JacobianRequest::Block(b) => {
                field_mut(state, b).iter_mut().zip(&delta).for_each(|(u, d)| *u += d);
            }
            _ => {
                for i in 0..state.len() {
                    state.psi[i] += delta[3 * i];
                    state.phi_n[i] += delta[3 * i + 1];
                    state.phi_p[i] += delta[3 * i + 2];
                }
            }
        }
        if step <= cfg.newton_stol {
            // the update is at rounding level; the residual cannot drop further
            return Ok(stats);
        }
    }
}

/// One implicit step of the fully coupled Newton method. The initial guess
/// is `prev` with the contact values of `bias`.
pub fn newton_coupled_step(
    dev: &Device,
    prev: &State,
    x_new: &[f64],
    bias: Bias,
    cfg: &NonlinearConfig,
) -> Result<(State, NewtonStats)> {
    let mut st = prev.clone();
    dev.impose_boundary(&mut st, bias);
    let stats = newton_solve(dev, &mut st, prev, x_new, bias, JacobianRequest::Coupled, cfg)?;
    Ok((st, stats))
}

/// Newton on the equation of `field` alone; the other potentials in `state`
/// stay frozen.
pub fn newton_field_solve(
    dev: &Device,
    state: &mut State,
    prev: &State,
    x_new: &[f64],
    bias: Bias,
    field: BlockField,
    cfg: &NonlinearConfig,
) -> Result<NewtonStats> {
    newton_solve(dev, state, prev, x_new, bias, JacobianRequest::Block(field), cfg)
}
