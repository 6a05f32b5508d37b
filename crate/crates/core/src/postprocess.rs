//! Terminal currents through the auxiliary weight, conservation metric,
//! I-V curves and device metrics.

use serde::{Deserialize, Serialize};

use crate::assembly::{dot, Coeff, FeSpace};
use crate::device::Device;
use crate::error::{Error, Result};
use crate::linsolve::{DirichletSolver, LinearSolverConfig, PrecondKind, PreconditionerSpec};
use crate::mesh::{boundary_nodes, BoundaryTag, Mesh};
use crate::physics::{carrier_densities, State};
use crate::solvers::SolveReport;

/// Discrete harmonic function equal to 1 on `contact` and 0 on the other contact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxWeight {
    pub contact: BoundaryTag,
    pub values: Vec<f64>,
}

pub fn auxiliary_weight(mesh: &Mesh, contact: BoundaryTag) -> Result<AuxWeight> {
    auxiliary_weight_in(&FeSpace::new(mesh)?, mesh, contact)
}

/// As [`auxiliary_weight`], reusing an assembled space.
pub fn auxiliary_weight_in(space: &FeSpace, mesh: &Mesh, contact: BoundaryTag) -> Result<AuxWeight> {
    let other = match contact {
        BoundaryTag::TopOrg => BoundaryTag::BotOrg,
        BoundaryTag::BotOrg => BoundaryTag::TopOrg,
        BoundaryTag::Ins => {
            return Err(Error::Parameter("auxiliary weight needs a contact, not Ins".into()));
        }
    };
    let on = boundary_nodes(mesh, contact);
    let off = boundary_nodes(mesh, other);
    let nodes: Vec<usize> = on.iter().chain(&off).copied().collect();
    let values: Vec<f64> = on.iter().map(|_| 1.0).chain(off.iter().map(|_| 0.0)).collect();
    let cfg = LinearSolverConfig {
        rtol: 1e-13,
        atol: 1e-14,
        max_iters: 2000,
        restart: 100,
    };
    let k = space.stiffness(Coeff::Constant(1.0));
    let solver = DirichletSolver::new(&k, &nodes, &PreconditionerSpec::of(PrecondKind::Amg), &cfg)?;
    let n = mesh.n_nodes();
    let (w, rep) = solver.solve(&vec![0.0; n], &values, &vec![0.0; n]);
    rep.check("auxiliary weight")?;
    Ok(AuxWeight {
        contact,
        values: w,
    })
}

/// Transport and displacement parts of a terminal current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentParts {
    pub transport: f64,
    pub displacement: f64,
}

impl CurrentParts {
    pub fn total(&self) -> f64 {
        self.transport + self.displacement
    }
}

/// `I = int grad w . (j_n + j_p) + (1/tau) int eps grad w . grad(psi^{k+1} - psi^k)`
/// with `j_n = mu_n (grad n - n d_n)`, `j_p = -mu_p (grad p + p d_p)`,
/// `d_n = grad psi - grad E_L`, `d_p = grad psi - grad E_H`.
pub fn terminal_current(dev: &Device, state_k: &State, state_k1: &State, w: &AuxWeight) -> Result<CurrentParts> {
    let space = dev.space();
    let prm = dev.params();
    let lv = dev.levels();
    let (n, p) = carrier_densities(&state_k1.psi, &state_k1.phi_n, &state_k1.phi_p, &lv.lumo, &lv.homo, prm)?;
    let gw = space.gradients(&w.values);
    let gpsi = space.gradients(&state_k1.psi);
    let gpsi0 = space.gradients(&state_k.psi);
    let gn = space.gradients(&n);
    let gp = space.gradients(&p);
    let nbar = space.element_means(&n);
    let pbar = space.element_means(&p);
    let kappa = dev.artificial_diffusion();
    let (mu_n, mu_p) = (prm.mu_n, prm.mu_p);
    let mut transport = 0.0;
    let mut displacement = 0.0;
    for (e, g) in space.geometry().iter().enumerate() {
        let dl = dev.lumo_gradients()[e];
        let dh = dev.homo_gradients()[e];
        let mut j = [0.0; 3];
        let mut dpsi = [0.0; 3];
        for a in 0..3 {
            let d_n = gpsi[e][a] - dl[a];
            let d_p = gpsi[e][a] - dh[a];
            j[a] = (mu_n + kappa) * gn[e][a] - mu_n * nbar[e] * d_n - (mu_p + kappa) * gp[e][a]
                - mu_p * pbar[e] * d_p;
            dpsi[a] = gpsi[e][a] - gpsi0[e][a];
        }
        transport += dot(&gw[e], &j) * g.volume;
        displacement += dot(&gw[e], &dpsi) * g.volume;
    }
    Ok(CurrentParts {
        transport,
        displacement: prm.eps / prm.tau * displacement,
    })
}

/// `|i_top + i_bot| / max(|i_top|, |i_bot|, abs_floor)`.
pub fn conservation_check(i_top: f64, i_bot: f64, abs_floor: f64) -> f64 {
    (i_top + i_bot).abs() / i_top.abs().max(i_bot.abs()).max(abs_floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IVPoint {
    pub v_top: f64,
    pub v_bot: f64,
    pub i_top: f64,
    pub i_bot: f64,
    pub conservation: f64,
    pub report: SolveReport,
}

impl IVPoint {
    pub fn converged(&self) -> bool {
        self.report.converged
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IVCurve {
    pub points: Vec<IVPoint>,
    /// Set when the sweep stopped early.
    pub failure: Option<String>,
}

impl IVCurve {
    pub fn all_converged(&self) -> bool {
        self.failure.is_none() && self.points.iter().all(IVPoint::converged)
    }

    /// Applied voltage `v_top - v_bot` against the bottom-contact current.
    pub fn characteristic(&self) -> (Vec<f64>, Vec<f64>) {
        self.points
            .iter()
            .map(|p| (p.v_top - p.v_bot, p.i_bot))
            .unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceMetrics {
    pub v_oc: Option<f64>,
    pub j_sc: Option<f64>,
    pub ff: Option<f64>,
}

pub fn extract_metrics(curve: &IVCurve) -> Result<DeviceMetrics> {
    let (v, i) = curve.characteristic();
    metrics_from_samples(&v, &i)
}

/// Metrics of a sampled characteristic with increasing voltages.
pub fn metrics_from_samples(v: &[f64], i: &[f64]) -> Result<DeviceMetrics> {
    if v.is_empty() || v.len() != i.len() {
        return Err(Error::Parameter(format!(
            "need matching nonempty samples, got {} voltages and {} currents",
            v.len(),
            i.len()
        )));
    }
    let interp = |k: usize, x: f64| {
        let t = (x - v[k]) / (v[k + 1] - v[k]);
        i[k] + t * (i[k + 1] - i[k])
    };
    let j_sc = if v.len() == 1 {
        (v[0] == 0.0).then_some(i[0])
    } else {
        (0..v.len() - 1)
            .find(|&k| v[k] <= 0.0 && 0.0 <= v[k + 1])
            .map(|k| interp(k, 0.0))
    };
    let v_oc = i.iter().position(|&c| c == 0.0).map(|k| v[k]).or_else(|| {
        (0..v.len().saturating_sub(1))
            .find(|&k| i[k] * i[k + 1] < 0.0)
            .map(|k| v[k] - i[k] * (v[k + 1] - v[k]) / (i[k + 1] - i[k]))
    });
    let ff = match (v_oc, j_sc) {
        (Some(voc), Some(jsc)) if voc * jsc != 0.0 => {
            let (lo, hi) = if voc > 0.0 { (0.0, voc) } else { (voc, 0.0) };
            let pmax = v
                .iter()
                .zip(i)
                .filter(|&(&x, &c)| x >= lo && x <= hi && x * c <= 0.0)
                .map(|(x, c)| (x * c).abs())
                .fold(0.0, f64::max);
            (pmax > 0.0).then(|| pmax / (voc * jsc).abs())
        }
        _ => None,
    };
    Ok(DeviceMetrics { v_oc, j_sc, ff })
}

/// Relative L² distances `||a - b|| / ||b||` per field, with `b` the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldDistances {
    pub psi: f64,
    pub n: f64,
    pub p: f64,
    pub x: f64,
}

impl FieldDistances {
    pub fn max(&self) -> f64 {
        self.psi.max(self.n).max(self.p).max(self.x)
    }
}

/// Compares two states field by field in the mass-matrix norm. Carriers are
/// compared as densities, not quasi-Fermi levels.
pub fn relative_distances(dev: &Device, a: &State, reference: &State) -> Result<FieldDistances> {
    let sp = dev.space();
    let lv = dev.levels();
    let (na, pa) = carrier_densities(&a.psi, &a.phi_n, &a.phi_p, &lv.lumo, &lv.homo, dev.params())?;
    let (nb, pb) = carrier_densities(&reference.psi, &reference.phi_n, &reference.phi_p, &lv.lumo, &lv.homo, dev.params())?;
    let rel = |u: &[f64], v: &[f64]| {
        let d: Vec<f64> = u.iter().zip(v).map(|(x, y)| x - y).collect();
        sp.l2_norm(&d) / sp.l2_norm(v).max(f64::MIN_POSITIVE)
    };
    Ok(FieldDistances {
        psi: rel(&a.psi, &reference.psi),
        n: rel(&na, &nb),
        p: rel(&pa, &pb),
        x: rel(&a.x, &reference.x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::Bias;
    use crate::mesh::build_structured_mesh;
    use crate::morphology::{generate_synthetic, SyntheticKind};
    use crate::physics::ModelParams;
    use crate::solvers::{advance_to_steady, initial_state, Method, NonlinearConfig};

    fn uniform_device(extent: [f64; 2], counts: [usize; 2], params: ModelParams) -> Device {
        let mesh = build_structured_mesh(&extent, &counts).unwrap();
        let phase = generate_synthetic(&SyntheticKind::Uniform { value: 0.5 }, &mesh).unwrap();
        Device::new(mesh, phase, params).unwrap()
    }

    fn both(dev: &Device) -> (AuxWeight, AuxWeight) {
        (
            auxiliary_weight(dev.mesh(), BoundaryTag::TopOrg).unwrap(),
            auxiliary_weight(dev.mesh(), BoundaryTag::BotOrg).unwrap(),
        )
    }

    #[test]
    fn equilibrium_carries_no_current() {
        let dev = uniform_device([10.0, 10.0], [8, 8], ModelParams::default());
        let mut s = State::zeros(dev.n_nodes());
        s.psi.copy_from_slice(dev.psi_star());
        let (wt, wb) = both(&dev);
        for w in [&wt, &wb] {
            let c = terminal_current(&dev, &s, &s, w).unwrap();
            assert!(c.total().abs() < 1e-8 * 100.0, "{c:?}");
        }
    }

    #[test]
    fn strip_with_a_linear_electron_level_ramp() {
        // n constant, phi_n linear: j_n = -mu_n n grad phi_n; holes suppressed
        let (w, h) = (1.0, 10.0);
        let dev = uniform_device([w, h], [2, 20], ModelParams::default());
        let mesh = dev.mesh();
        let dphi = 0.4;
        let lv = dev.levels();
        let mut s = State::zeros(dev.n_nodes());
        for i in 0..dev.n_nodes() {
            let phin = dphi * mesh.height_of(i) / h;
            s.phi_n[i] = phin;
            s.psi[i] = phin + lv.lumo[i] + 0.2;
            s.phi_p[i] = s.psi[i] - lv.homo[i] - 60.0;
        }
        let (n, _) = carrier_densities(&s.psi, &s.phi_n, &s.phi_p, &lv.lumo, &lv.homo, dev.params()).unwrap();
        let (wt, _) = both(&dev);
        let c = terminal_current(&dev, &s, &s, &wt).unwrap();
        let want = -dev.params().mu_n * n[0] * dphi / h * w;
        assert!((c.total() - want).abs() < 1e-10 * want.abs(), "{} vs {want}", c.total());
    }

    #[test]
    fn transport_is_linear_in_the_mobilities() {
        let dev = uniform_device([10.0, 10.0], [6, 6], ModelParams::default());
        let mut s = State::zeros(dev.n_nodes());
        for i in 0..dev.n_nodes() {
            let y = dev.mesh().height_of(i);
            s.psi[i] = dev.psi_star()[i] + 0.05 * y;
            s.phi_n[i] = 0.03 * y;
            s.phi_p[i] = -0.02 * y + 0.1 * (i as f64).sin();
        }
        let (wt, _) = both(&dev);
        let base = terminal_current(&dev, &s, &s, &wt).unwrap().transport;
        let p = dev.params();
        let doubled = dev
            .with_params(ModelParams {
                mu_n: 2.0 * p.mu_n,
                mu_p: 2.0 * p.mu_p,
                ..p.clone()
            })
            .unwrap();
        let twice = terminal_current(&doubled, &s, &s, &wt).unwrap().transport;
        assert!((twice - 2.0 * base).abs() <= 1e-13 * base.abs());
    }

    #[test]
    fn displacement_vanishes_at_steady_state() {
        let params = ModelParams {
            tau: 1.0,
            tol: 1e-7,
            ..ModelParams::default()
        };
        let mesh = build_structured_mesh(&[10.0, 10.0], &[8, 8]).unwrap();
        let phase = generate_synthetic(&SyntheticKind::Checkerboard { period: 10.0 / 3.0 }, &mesh).unwrap();
        let dev = Device::new(mesh, phase, params).unwrap();
        let cfg = NonlinearConfig::for_method(Method::Newton);
        let bias = Bias::new(0.3, 0.0);
        let out = advance_to_steady(&dev, &initial_state(&dev, bias, &cfg).unwrap(), bias, &cfg).unwrap();
        assert!(out.report.converged);
        let (wt, wb) = both(&dev);
        let top = terminal_current(&dev, &out.previous, &out.state, &wt).unwrap();
        let bot = terminal_current(&dev, &out.previous, &out.state, &wb).unwrap();
        assert!(top.displacement.abs() < 1e-8 * top.transport.abs(), "{top:?}");
        assert!(conservation_check(top.total(), bot.total(), 1.0) < 1e-10);
    }

    #[test]
    fn conservation_examples() {
        let m = conservation_check(1.5847, -1.5846, 1.0);
        assert!((m - 1e-4 / 1.5847).abs() < 1e-12);
        assert!(m > 6.2e-5 && m < 6.4e-5);
        assert_eq!(conservation_check(0.7, -0.7, 1.0), 0.0);
        assert_eq!(conservation_check(1.0, 0.0, 1.0), 1.0);
    }

    #[test]
    fn aux_weight_is_the_height_fraction() {
        let m = build_structured_mesh(&[10.0, 10.0], &[30, 30]).unwrap();
        let top = auxiliary_weight(&m, BoundaryTag::TopOrg).unwrap();
        let bot = auxiliary_weight(&m, BoundaryTag::BotOrg).unwrap();
        for i in 0..m.n_nodes() {
            assert!((top.values[i] - m.height_of(i) / 10.0).abs() < 1e-10);
            assert!((top.values[i] + bot.values[i] - 1.0).abs() < 1e-12);
        }
        assert!(auxiliary_weight(&m, BoundaryTag::Ins).is_err());
    }

    #[test]
    fn linear_crossing_metrics() {
        let v: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let i: Vec<f64> = v.iter().map(|x| x - 1.0).collect();
        let m = metrics_from_samples(&v, &i).unwrap();
        assert!((m.v_oc.unwrap() - 1.0).abs() < 1e-12);
        assert!((m.j_sc.unwrap() + 1.0).abs() < 1e-12);
        let ff = m.ff.unwrap();
        assert!((ff - 0.25).abs() < 1e-12, "{ff}");
    }

    #[test]
    fn no_crossing_leaves_voc_absent() {
        let v = [0.0, 0.5, 1.0];
        let i = [0.1, 0.4, 2.0];
        let m = metrics_from_samples(&v, &i).unwrap();
        assert_eq!(m.v_oc, None);
        assert_eq!(m.ff, None);
        assert_eq!(m.j_sc, Some(0.1));
        assert!(metrics_from_samples(&[], &[]).is_err());
    }

    #[test]
    fn diode_crossing_within_interpolation_error() {
        let v: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let i: Vec<f64> = v.iter().map(|x| x.exp() - 2.0).collect();
        let m = metrics_from_samples(&v, &i).unwrap();
        assert!((m.v_oc.unwrap() - 2f64.ln()).abs() < 0.01);
        let ff = m.ff.unwrap();
        assert!(ff > 0.0 && ff <= 1.0);
    }
}
