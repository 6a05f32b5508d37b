use serde::{Deserialize, Serialize};

use super::{initial_state, NonlinearConfig, TimeStepper};
use crate::device::{Bias, Device};
use crate::error::{Error, Result};
use crate::mesh::BoundaryTag;
use crate::physics::State;
use crate::postprocess::{auxiliary_weight_in, conservation_check, terminal_current, IVCurve, IVPoint};

/// `V_top` from `v_top_start` to `v_top_stop` in steps of `v_top_step` at fixed `V_bot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub v_bot: f64,
    pub v_top_start: f64,
    pub v_top_stop: f64,
    pub v_top_step: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            v_bot: 0.0,
            v_top_start: 0.0,
            v_top_stop: 1.0,
            v_top_step: 0.25,
        }
    }
}

impl SweepConfig {
    pub fn single(v_top: f64, v_bot: f64) -> Self {
        Self {
            v_bot,
            v_top_start: v_top,
            v_top_stop: v_top,
            v_top_step: 1.0,
        }
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("v_bot", self.v_bot),
            ("v_top_start", self.v_top_start),
            ("v_top_stop", self.v_top_stop),
        ] {
            if !v.is_finite() {
                out.push(format!("{prefix}.{name} must be finite"));
            }
        }
        if !(self.v_top_step > 0.0 && self.v_top_step.is_finite()) {
            out.push(format!("{prefix}.v_top_step must be > 0, got {}", self.v_top_step));
        }
        if self.v_top_start > self.v_top_stop {
            out.push(format!(
                "{prefix}.v_top_start ({}) must not exceed v_top_stop ({})",
                self.v_top_start, self.v_top_stop
            ));
        }
        out
    }

    /// Voltages `start + k step` up to `stop`, computed without accumulation.
    pub fn voltages(&self) -> Vec<f64> {
        let span = (self.v_top_stop - self.v_top_start) / self.v_top_step;
        let count = (span + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| self.v_top_start + k as f64 * self.v_top_step)
            .collect()
    }
}

/// Sweeps `V_top`, warm-starting every point from the previous steady state,
/// and calls `observe` with each recorded point and its state. A failed or
/// unconverged point ends the sweep and is marked on the curve.
pub fn voltage_sweep_observed(
    dev: &Device,
    sweep: &SweepConfig,
    cfg: &NonlinearConfig,
    observe: &mut dyn FnMut(&IVPoint, &State),
) -> Result<IVCurve> {
    let v = sweep.violations("sweep");
    if !v.is_empty() {
        return Err(Error::Parameter(v.join("; ")));
    }
    let stepper = TimeStepper::new(dev, cfg)?;
    let w_top = auxiliary_weight_in(dev.space(), dev.mesh(), BoundaryTag::TopOrg)?;
    let w_bot = auxiliary_weight_in(dev.space(), dev.mesh(), BoundaryTag::BotOrg)?;
    let voltages = sweep.voltages();
    let mut curve = IVCurve::default();
    let mut state = initial_state(dev, Bias::new(voltages[0], sweep.v_bot), cfg)?;
    for &v_top in &voltages {
        let bias = Bias::new(v_top, sweep.v_bot);
        let out = match stepper.advance_to_steady(&state, bias) {
            Ok(o) => o,
            Err(e) => {
                log::error!("sweep stopped at V_top={v_top}: {e}");
                curve.failure = Some(format!("V_top={v_top}: {e}"));
                break;
            }
        };
        let i_top = terminal_current(dev, &out.previous, &out.state, &w_top)?.total();
        let i_bot = terminal_current(dev, &out.previous, &out.state, &w_bot)?.total();
        let point = IVPoint {
            v_top,
            v_bot: sweep.v_bot,
            i_top,
            i_bot,
            conservation: conservation_check(i_top, i_bot, 1.0),
            report: out.report,
        };
        log::info!(
            "V_top={v_top} I_top={i_top:.6e} I_bot={i_bot:.6e} steps={} converged={}",
            point.report.time_steps,
            point.report.converged
        );
        observe(&point, &out.state);
        let converged = point.converged();
        curve.points.push(point);
        if !converged {
            curve.failure = Some(format!("V_top={v_top}: no steady state within the step budget"));
            break;
        }
        state = out.state;
    }
    Ok(curve)
}

pub fn voltage_sweep(dev: &Device, sweep: &SweepConfig, cfg: &NonlinearConfig) -> Result<IVCurve> {
    voltage_sweep_observed(dev, sweep, cfg, &mut |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voltages_hit_the_end_points() {
        let s = SweepConfig {
            v_bot: 0.0,
            v_top_start: 0.0,
            v_top_stop: 2.0,
            v_top_step: 0.25,
        };
        let v = s.voltages();
        assert_eq!(v.len(), 9);
        assert_eq!(v[8], 2.0);
        let s = SweepConfig {
            v_top_step: 0.1,
            v_top_stop: 1.0,
            ..s
        };
        assert_eq!(s.voltages().len(), 11);
        assert_eq!(SweepConfig::single(0.3, 0.0).voltages(), vec![0.3]);
    }

    #[test]
    fn invalid_sweeps_are_reported() {
        let s = SweepConfig {
            v_top_step: 0.0,
            v_top_start: 1.0,
            v_top_stop: 0.0,
            ..SweepConfig::default()
        };
        assert_eq!(s.violations("sweep").len(), 2);
    }
}
