//! Model parameters, carrier statistics and recombination, all nondimensional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent accepted before declaring a blow-up.
pub const EXP_GUARD: f64 = 600.0;

/// Most negative exponent accepted. Lower than `-EXP_GUARD` so that a density
/// clipped to the 1e-300 floor (exponent about -691) can be evaluated again.
pub const EXP_UNDERFLOW_GUARD: f64 = -700.0;

/// Nondimensional model constants. Defaults are the reference parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub d_x: f64,
    pub g: f64,
    pub eta_r: f64,
    pub eta_d: f64,
    pub mu_n: f64,
    pub mu_p: f64,
    pub eps: f64,
    pub n_n0: f64,
    pub n_p0: f64,
    pub sigma_n: f64,
    pub sigma_p: f64,
    pub gamma: f64,
    pub n_intr: f64,
    /// LUMO of the donor polymer (`phi = 0`).
    pub e_lumo_donor: f64,
    /// LUMO of the acceptor (`phi = 1`).
    pub e_lumo_acceptor: f64,
    pub e_homo_donor: f64,
    pub e_homo_acceptor: f64,
    pub tau: f64,
    pub tol: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            d_x: 1e-2,
            g: 16990.0,
            eta_r: 1.0,
            eta_d: 1.0,
            mu_n: 3.0,
            mu_p: 1.0,
            eps: 1e-1,
            n_n0: 1.0,
            n_p0: 1.0,
            sigma_n: 0.3868,
            sigma_p: 0.3868,
            gamma: 0.6987,
            n_intr: 0.0,
            e_lumo_donor: -3.28,
            e_lumo_acceptor: -4.10,
            e_homo_donor: -5.13,
            e_homo_acceptor: -5.65,
            tau: 1e-4,
            tol: 1e-4,
        }
    }
}

impl ModelParams {
    /// Every violated constraint, in field order.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let fields = [
            ("d_x", self.d_x, true),
            ("mu_n", self.mu_n, true),
            ("mu_p", self.mu_p, true),
            ("eps", self.eps, true),
            ("tau", self.tau, true),
            ("g", self.g, false),
            ("eta_r", self.eta_r, false),
            ("eta_d", self.eta_d, false),
            ("gamma", self.gamma, false),
            ("n_n0", self.n_n0, false),
            ("n_p0", self.n_p0, false),
            ("n_intr", self.n_intr, false),
            ("tol", self.tol, false),
            ("sigma_n", self.sigma_n, false),
            ("sigma_p", self.sigma_p, false),
        ];
        for (name, v, strict) in fields {
            if !v.is_finite() {
                out.push(format!("params.{name} must be finite, got {v}"));
            } else if strict && v <= 0.0 {
                out.push(format!("params.{name} must be > 0, got {v}"));
            } else if !strict && v < 0.0 {
                out.push(format!("params.{name} must be >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("e_lumo_donor", self.e_lumo_donor),
            ("e_lumo_acceptor", self.e_lumo_acceptor),
            ("e_homo_donor", self.e_homo_donor),
            ("e_homo_acceptor", self.e_homo_acceptor),
        ] {
            if !v.is_finite() {
                out.push(format!("params.{name} must be finite, got {v}"));
            }
        }
        if self.e_lumo_donor <= self.e_homo_donor {
            out.push("params.e_lumo_donor must lie above e_homo_donor".into());
        }
        if self.e_lumo_acceptor <= self.e_homo_acceptor {
            out.push("params.e_lumo_acceptor must lie above e_homo_acceptor".into());
        }
        if self.n_n0 == 0.0 || self.n_p0 == 0.0 {
            out.push("params.n_n0 and params.n_p0 must be > 0".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Parameter(v.join("; ")))
        }
    }

    /// `N_n0 exp(sigma_n^2 / 2)`
    pub fn n_eff(&self) -> f64 {
        self.n_n0 * (0.5 * self.sigma_n * self.sigma_n).exp()
    }

    /// `N_p0 exp(sigma_p^2 / 2)`
    pub fn p_eff(&self) -> f64 {
        self.n_p0 * (0.5 * self.sigma_p * self.sigma_p).exp()
    }
}

/// Nodal unknowns at one time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub psi: Vec<f64>,
    pub phi_n: Vec<f64>,
    pub phi_p: Vec<f64>,
    pub x: Vec<f64>,
}

impl State {
    pub fn zeros(n: usize) -> Self {
        Self {
            psi: vec![0.0; n],
            phi_n: vec![0.0; n],
            phi_p: vec![0.0; n],
            x: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        [&self.psi, &self.phi_n, &self.phi_p, &self.x]
            .iter()
            .all(|f| f.iter().all(|v| v.is_finite()))
    }
}

fn guarded_exp(node: usize, exponent: f64) -> Result<f64> {
    if !(EXP_UNDERFLOW_GUARD..=EXP_GUARD).contains(&exponent) {
        return Err(Error::Divergence { node, exponent });
    }
    Ok(exponent.exp())
}

/// `n_i = N_n0 exp(sigma_n^2/2) exp(psi_i - phi_n,i - E_L,i)` written into `out`.
pub fn electron_density_into(
    out: &mut [f64],
    psi: &[f64],
    phi_n: &[f64],
    lumo: &[f64],
    params: &ModelParams,
) -> Result<()> {
    let c = params.n_eff();
    for (i, o) in out.iter_mut().enumerate() {
        *o = c * guarded_exp(i, psi[i] - phi_n[i] - lumo[i])?;
    }
    Ok(())
}

/// `p_i = N_p0 exp(sigma_p^2/2) exp(phi_p,i - psi_i + E_H,i)` written into `out`.
pub fn hole_density_into(
    out: &mut [f64],
    psi: &[f64],
    phi_p: &[f64],
    homo: &[f64],
    params: &ModelParams,
) -> Result<()> {
    let c = params.p_eff();
    for (i, o) in out.iter_mut().enumerate() {
        *o = c * guarded_exp(i, phi_p[i] - psi[i] + homo[i])?;
    }
    Ok(())
}

pub fn carrier_densities(
    psi: &[f64],
    phi_n: &[f64],
    phi_p: &[f64],
    lumo: &[f64],
    homo: &[f64],
    params: &ModelParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut n = vec![0.0; psi.len()];
    let mut p = vec![0.0; psi.len()];
    electron_density_into(&mut n, psi, phi_n, lumo, params)?;
    hole_density_into(&mut p, psi, phi_p, homo, params)?;
    Ok((n, p))
}

pub fn electron_quasi_fermi(n: &[f64], psi: &[f64], lumo: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let c = params.n_eff().ln();
    n.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > 0.0 && v.is_finite() {
                Ok(psi[i] - lumo[i] - (v.ln() - c))
            } else {
                Err(Error::Domain { node: i, value: v })
            }
        })
        .collect()
}

pub fn hole_quasi_fermi(p: &[f64], psi: &[f64], homo: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let c = params.p_eff().ln();
    p.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > 0.0 && v.is_finite() {
                Ok(psi[i] - homo[i] + (v.ln() - c))
            } else {
                Err(Error::Domain { node: i, value: v })
            }
        })
        .collect()
}

/// Langevin rate `gamma (n p - N_intr^2)`.
pub fn recombination(n: &[f64], p: &[f64], params: &ModelParams) -> Vec<f64> {
    let n2 = params.n_intr * params.n_intr;
    n.iter()
        .zip(p)
        .map(|(a, b)| params.gamma * (a * b - n2))
        .collect()
}

/// `N_intr^2 = N_n0 N_p0 exp(-(E_L - E_H))`.
pub fn intrinsic_concentration(lumo: f64, homo: f64, params: &ModelParams) -> f64 {
    params.n_n0 * params.n_p0 * (-(lumo - homo)).exp()
}

/// Product `n p` of the Boltzmann densities when `phi_n = phi_p`; includes the
/// disorder factors that `intrinsic_concentration` leaves out.
pub fn equilibrium_np(lumo: f64, homo: f64, params: &ModelParams) -> f64 {
    params.n_eff() * params.p_eff() * (homo - lumo).exp()
}

/// Potential at which `n = p` for `phi_n = phi_p = 0`.
pub fn electroneutral_potential(lumo: f64, homo: f64, params: &ModelParams) -> f64 {
    0.5 * (lumo + homo)
        + 0.25 * (params.sigma_p * params.sigma_p - params.sigma_n * params.sigma_n)
        + 0.5 * (params.n_p0 / params.n_n0).ln()
}

/// `exp(eta) exp(z^2 / 2)`.
pub fn boltzmann_approx(eta: f64, z: f64) -> Result<f64> {
    let e = eta + 0.5 * z * z;
    if !e.is_finite() {
        return Err(Error::NonFinite(format!("boltzmann_approx({eta}, {z})")));
    }
    guarded_exp(0, e)
}

/// Nodes and weights of the `m`-point Gauss-Legendre rule on [-1, 1].
fn gauss_legendre(m: usize) -> Vec<(f64, f64)> {
    let mut rule = Vec::with_capacity(m);
    for k in 0..m {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=m {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        rule.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    rule
}

fn gl20() -> &'static [(f64, f64)] {
    static RULE: std::sync::OnceLock<Vec<(f64, f64)>> = std::sync::OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(20))
}

/// Gauss-Fermi integral `(2 pi)^{-1/2} int exp(-xi^2/2) / (exp(z xi - eta) + 1) dxi`
/// truncated to `|xi| <= 12`, by composite 20-point Gauss-Legendre.
pub fn gauss_fermi_integral(eta: f64, z: f64) -> Result<f64> {
    if !eta.is_finite() || !z.is_finite() {
        return Err(Error::NonFinite(format!("gauss_fermi_integral({eta}, {z})")));
    }
    if z < 0.0 {
        return Err(Error::Parameter(format!("disorder width {z} must be >= 0")));
    }
    let f = |xi: f64| -> f64 {
        let t = z * xi - eta;
        // log of the Fermi factor, stable for both signs of t
        let log_fermi = if t > 0.0 {
            -t - (-t).exp().ln_1p()
        } else {
            -t.exp().ln_1p()
        };
        (-0.5 * xi * xi + log_fermi).exp()
    };
    const PANELS: usize = 48;
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / PANELS as f64;
    let mut sum = 0.0;
    for k in 0..PANELS {
        let mid = a + (k as f64 + 0.5) * h;
        let half = 0.5 * h;
        for &(x, w) in gl20() {
            sum += w * half * f(mid + half * x);
        }
    }
    Ok(sum / (2.0 * std::f64::consts::PI).sqrt())
}

/// Characteristic scales; the voltage scale is the thermal voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub x_c: f64,
    pub t_c: f64,
    pub temperature: f64,
}

pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

impl Scales {
    pub fn thermal_energy(&self) -> f64 {
        BOLTZMANN * self.temperature
    }

    pub fn thermal_voltage(&self) -> f64 {
        self.thermal_energy() / ELEMENTARY_CHARGE
    }
}

/// SI-unit inputs. Energies in joules, `lambda` is the interface thickness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionalParams {
    pub d_x: f64,
    pub g: f64,
    pub eta_r: f64,
    pub eta_d: f64,
    pub lambda: f64,
    pub mu_n: f64,
    pub mu_p: f64,
    pub eps: f64,
    pub n_n0: f64,
    pub n_p0: f64,
    pub sigma_n: f64,
    pub sigma_p: f64,
    pub gamma: f64,
    pub n_intr: f64,
    pub e_lumo_donor: f64,
    pub e_lumo_acceptor: f64,
    pub e_homo_donor: f64,
    pub e_homo_acceptor: f64,
    pub tau: f64,
    pub tol: f64,
}

pub fn nondimensionalize(d: &DimensionalParams, s: &Scales) -> Result<ModelParams> {
    if !(s.x_c > 0.0 && s.t_c > 0.0 && s.temperature > 0.0) {
        return Err(Error::Parameter(format!("scales must be positive: {s:?}")));
    }
    let (x, t) = (s.x_c, s.t_c);
    let kt = s.thermal_energy();
    let x3 = x * x * x;
    let mobility = kt * t / (x * x * ELEMENTARY_CHARGE);
    Ok(ModelParams {
        d_x: t / (x * x) * d.d_x,
        g: t * x3 * d.g,
        eta_r: t * d.eta_r,
        eta_d: t / x * d.lambda * d.eta_d,
        mu_n: mobility * d.mu_n,
        mu_p: mobility * d.mu_p,
        eps: kt * x / (ELEMENTARY_CHARGE * ELEMENTARY_CHARGE) * d.eps,
        n_n0: x3 * d.n_n0,
        n_p0: x3 * d.n_p0,
        sigma_n: d.sigma_n / kt,
        sigma_p: d.sigma_p / kt,
        gamma: t / x3 * d.gamma,
        n_intr: x3 * d.n_intr,
        e_lumo_donor: d.e_lumo_donor / kt,
        e_lumo_acceptor: d.e_lumo_acceptor / kt,
        e_homo_donor: d.e_homo_donor / kt,
        e_homo_acceptor: d.e_homo_acceptor / kt,
        tau: d.tau / t,
        tol: d.tol,
    })
}
