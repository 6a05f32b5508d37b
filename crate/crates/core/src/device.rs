//! A meshed device: morphology, derived coefficient fields and contact data.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::assembly::{Coeff, FeSpace, SparseMatrix};
use crate::error::{Error, Result};
use crate::mesh::{boundary_nodes, BoundaryTag, Mesh};
use crate::morphology::{energy_levels, interface_indicator, EnergyLevels, InterfaceField, PhaseField};
use crate::physics::{electroneutral_potential, ModelParams, State};

/// Applied contact voltages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bias {
    pub v_top: f64,
    pub v_bot: f64,
}

impl Bias {
    pub fn new(v_top: f64, v_bot: f64) -> Self {
        Self { v_top, v_bot }
    }
}

#[derive(Debug, Clone)]
pub struct Device {
    mesh: Mesh,
    space: FeSpace,
    phase: PhaseField,
    levels: EnergyLevels,
    indicator: InterfaceField,
    params: ModelParams,
    top: Vec<usize>,
    bottom: Vec<usize>,
    dirichlet: Vec<usize>,
    is_dirichlet: Vec<bool>,
    psi_star: Vec<f64>,
    mass: SparseMatrix,
    stiffness: SparseMatrix,
    lumped: Vec<f64>,
    lumo_grad: Vec<[f64; 3]>,
    homo_grad: Vec<[f64; 3]>,
    artificial_diffusion: f64,
    block_pattern: OnceLock<SparseMatrix>,
}

impl Device {
    pub fn new(mesh: Mesh, phase: PhaseField, params: ModelParams) -> Result<Self> {
        params.validate()?;
        if phase.len() != mesh.n_nodes() {
            return Err(Error::PhaseField(format!(
                "{} values for a mesh with {} nodes",
                phase.len(),
                mesh.n_nodes()
            )));
        }
        let space = FeSpace::new(&mesh)?;
        let indicator = interface_indicator(&mesh, space.geometry(), &phase);
        let levels = energy_levels(&phase, &params);
        let top = boundary_nodes(&mesh, BoundaryTag::TopOrg);
        let bottom = boundary_nodes(&mesh, BoundaryTag::BotOrg);
        let mut dirichlet: Vec<usize> = top.iter().chain(&bottom).copied().collect();
        dirichlet.sort_unstable();
        dirichlet.dedup();
        let mut is_dirichlet = vec![false; mesh.n_nodes()];
        for &i in &dirichlet {
            is_dirichlet[i] = true;
        }
        let psi_star = levels
            .lumo
            .iter()
            .zip(&levels.homo)
            .map(|(&l, &h)| electroneutral_potential(l, h, &params))
            .collect();
        let mass = space.mass();
        let stiffness = space.stiffness(Coeff::Constant(1.0));
        let lumped = space.lumped_mass();
        let lumo_grad = space.gradients(&levels.lumo);
        let homo_grad = space.gradients(&levels.homo);
        Ok(Self {
            mesh,
            space,
            phase,
            levels,
            indicator,
            params,
            top,
            bottom,
            dirichlet,
            is_dirichlet,
            psi_star,
            mass,
            stiffness,
            lumped,
            lumo_grad,
            homo_grad,
            artificial_diffusion: 0.0,
            block_pattern: OnceLock::new(),
        })
    }

    /// Replaces the parameters; energy-dependent fields are recomputed.
    pub fn with_params(&self, params: ModelParams) -> Result<Self> {
        let mut d = Self::new(self.mesh.clone(), self.phase.clone(), params)?;
        d.artificial_diffusion = self.artificial_diffusion;
        Ok(d)
    }

    /// Extra isotropic carrier diffusion, a stabilization safeguard. Off by default.
    pub fn set_artificial_diffusion(&mut self, kappa: f64) -> Result<()> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::Parameter(format!("artificial diffusion {kappa} must be >= 0")));
        }
        self.artificial_diffusion = kappa;
        Ok(())
    }

    pub fn artificial_diffusion(&self) -> f64 {
        self.artificial_diffusion
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn space(&self) -> &FeSpace {
        &self.space
    }

    pub fn phase(&self) -> &PhaseField {
        &self.phase
    }

    pub fn levels(&self) -> &EnergyLevels {
        &self.levels
    }

    pub fn indicator(&self) -> &InterfaceField {
        &self.indicator
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn top_nodes(&self) -> &[usize] {
        &self.top
    }

    pub fn bottom_nodes(&self) -> &[usize] {
        &self.bottom
    }

    /// Sorted union of both contacts.
    pub fn dirichlet_nodes(&self) -> &[usize] {
        &self.dirichlet
    }

    pub fn is_dirichlet(&self, i: usize) -> bool {
        self.is_dirichlet[i]
    }

    pub fn psi_star(&self) -> &[f64] {
        &self.psi_star
    }

    pub fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    /// Unit-coefficient stiffness matrix.
    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    pub fn lumo_gradients(&self) -> &[[f64; 3]] {
        &self.lumo_grad
    }

    pub fn homo_gradients(&self) -> &[[f64; 3]] {
        &self.homo_grad
    }

    /// Applied voltage at a contact node; `None` for interior nodes.
    pub fn contact_voltage(&self, i: usize, bias: Bias) -> Option<f64> {
        if !self.is_dirichlet[i] {
            None
        } else if self.mesh.height_of(i) >= 0.5 * self.mesh.height() {
            Some(bias.v_top)
        } else {
            Some(bias.v_bot)
        }
    }

    /// Contact values `(psi, phi_n, phi_p)` at node `i`.
    pub fn boundary_values(&self, i: usize, bias: Bias) -> Option<(f64, f64, f64)> {
        self.contact_voltage(i, bias)
            .map(|v| (v + self.psi_star[i], v, v))
    }

    /// Overwrites the contact values of `state`.
    pub fn impose_boundary(&self, state: &mut State, bias: Bias) {
        for &i in &self.dirichlet {
            let (psi, fn_, fp) = self.boundary_values(i, bias).expect("contact node");
            state.psi[i] = psi;
            state.phi_n[i] = fn_;
            state.phi_p[i] = fp;
        }
    }

    /// Sparsity pattern of the coupled Jacobian.
    pub fn block_pattern(&self) -> &SparseMatrix {
        self.block_pattern
            .get_or_init(|| crate::assembly::block_pattern(&self.space))
    }

    /// Nodal dissociation weight `eta_d |grad phi|`.
    pub fn dissociation(&self) -> Vec<f64> {
        self.indicator
            .values
            .iter()
            .map(|v| self.params.eta_d * v)
            .collect()
    }
}
