//! P1 finite-element matrices and the discrete residuals of the device model.

mod coupled;
mod sparse;

pub(crate) use coupled::block_pattern;
pub use coupled::{
    coupled_residual_jacobian, interleave, split_interleaved, BlockField, FieldResiduals, JacobianRequest,
};
pub use sparse::SparseMatrix;

use crate::error::Result;
use crate::mesh::{ElementGeometry, Mesh};

/// Coefficient of a stiffness-type form.
#[derive(Debug, Clone, Copy)]
pub enum Coeff<'a> {
    Constant(f64),
    /// Nodal values, averaged per element.
    Nodal(&'a [f64]),
    /// One value per element.
    Elementwise(&'a [f64]),
}

/// Mesh connectivity, element geometry and the shared node-graph sparsity
/// pattern, with a per-element scatter map into that pattern.
#[derive(Debug, Clone)]
pub struct FeSpace {
    dim: usize,
    n_nodes: usize,
    cells: Vec<[usize; 4]>,
    geometry: Vec<ElementGeometry>,
    pattern: SparseMatrix,
    scatter: Vec<usize>,
}

impl FeSpace {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let geometry = mesh.geometries()?;
        let nl = mesh.nv();
        let cells: Vec<[usize; 4]> = mesh
            .cells()
            .map(|c| {
                let mut a = [0; 4];
                a[..nl].copy_from_slice(c);
                a
            })
            .collect();

        let n = mesh.n_nodes();
        let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n];
        for c in &cells {
            for &i in &c[..nl] {
                neighbours[i].extend_from_slice(&c[..nl]);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for row in &mut neighbours {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        let pattern = SparseMatrix::from_csr(n, n, row_ptr, col_idx, vec![0.0; nnz]);

        let mut scatter = Vec::with_capacity(cells.len() * nl * nl);
        for c in &cells {
            for &i in &c[..nl] {
                for &j in &c[..nl] {
                    scatter.push(pattern.find(i, j).expect("element pair in pattern"));
                }
            }
        }
        Ok(Self {
            dim: mesh.dim(),
            n_nodes: n,
            cells,
            geometry,
            pattern,
            scatter,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Vertices per element.
    pub fn n_local(&self) -> usize {
        self.dim + 1
    }

    pub fn cell(&self, e: usize) -> &[usize] {
        &self.cells[e][..self.dim + 1]
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.geometry
    }

    pub fn pattern(&self) -> &SparseMatrix {
        &self.pattern
    }

    /// Value-array positions of the local `(k, l)` pairs of element `e`, row-major.
    pub fn scatter(&self, e: usize) -> &[usize] {
        let nl = self.n_local();
        &self.scatter[e * nl * nl..(e + 1) * nl * nl]
    }

    /// `int zeta_k zeta_l` on an element of unit volume.
    pub fn mass_coeff(&self, k: usize, l: usize) -> f64 {
        let nl = self.n_local() as f64;
        let d = if k == l { 2.0 } else { 1.0 };
        d / (nl * (nl + 1.0))
    }

    /// `int zeta_a zeta_b zeta_c` on an element of unit volume.
    pub fn triple_coeff(&self, a: usize, b: usize, c: usize) -> f64 {
        let distinct = if a == b && b == c {
            1
        } else if a == b || b == c || a == c {
            2
        } else {
            3
        };
        match (self.dim, distinct) {
            (2, 1) => 1.0 / 10.0,
            (2, 2) => 1.0 / 30.0,
            (2, _) => 1.0 / 60.0,
            (_, 1) => 1.0 / 20.0,
            (_, 2) => 1.0 / 60.0,
            _ => 1.0 / 120.0,
        }
    }

    fn assemble(&self, mut local: impl FnMut(usize, &ElementGeometry, usize, usize) -> f64) -> SparseMatrix {
        let nl = self.n_local();
        let mut m = self.pattern.clone();
        let vals = m.values_mut();
        for (e, g) in self.geometry.iter().enumerate() {
            let sc = self.scatter(e);
            for k in 0..nl {
                for l in 0..nl {
                    vals[sc[k * nl + l]] += local(e, g, k, l);
                }
            }
        }
        m
    }

    /// `M_ij = int zeta_i zeta_j`.
    pub fn mass(&self) -> SparseMatrix {
        self.assemble(|_, g, k, l| g.volume * self.mass_coeff(k, l))
    }

    /// Row sums of the mass matrix, `int zeta_i`.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let nl = self.n_local();
        let mut out = vec![0.0; self.n_nodes];
        for (e, g) in self.geometry.iter().enumerate() {
            for &i in self.cell(e) {
                out[i] += g.volume / nl as f64;
            }
        }
        out
    }

    /// `K_ij = int c grad zeta_i . grad zeta_j`.
    pub fn stiffness(&self, coeff: Coeff) -> SparseMatrix {
        let nl = self.n_local();
        self.assemble(|e, g, k, l| {
            let c = match coeff {
                Coeff::Constant(c) => c,
                Coeff::Nodal(v) => self.cell(e).iter().map(|&i| v[i]).sum::<f64>() / nl as f64,
                Coeff::Elementwise(v) => v[e],
            };
            c * g.volume * dot(&g.grads[k], &g.grads[l])
        })
    }

    /// `C_ij = sum_e (d_e . grad zeta_j) int_e zeta_i` for elementwise drift `d_e`.
    pub fn convection(&self, drift: &[[f64; 3]]) -> SparseMatrix {
        let nl = self.n_local() as f64;
        self.assemble(|e, g, _, l| dot(&drift[e], &g.grads[l]) * g.volume / nl)
    }

    /// `R_ij = int w_h zeta_i zeta_j` with `w_h` the P1 interpolant of `weight`.
    pub fn weighted_mass(&self, weight: &[f64]) -> SparseMatrix {
        // int w zeta_k zeta_l = |e| (1 + [k=l]) (sum w + w_k + w_l) / (nl (nl+1) (nl+2)),
        // which reproduces the mass matrix bit for bit when w = 1
        let nl = self.n_local() as f64;
        let den = nl * (nl + 1.0) * (nl + 2.0);
        self.assemble(|e, g, k, l| {
            let cell = self.cell(e);
            let sum: f64 = cell.iter().map(|&i| weight[i]).sum();
            let d = if k == l { 2.0 } else { 1.0 };
            g.volume * (d * (sum + weight[cell[k]] + weight[cell[l]]) / den)
        })
    }

    /// `b_i = int f_h zeta_i`.
    pub fn load(&self, f: &[f64]) -> Vec<f64> {
        let nl = self.n_local();
        let mut b = vec![0.0; self.n_nodes];
        for (e, g) in self.geometry.iter().enumerate() {
            let cell = self.cell(e);
            for k in 0..nl {
                let s: f64 = (0..nl).map(|l| self.mass_coeff(k, l) * f[cell[l]]).sum();
                b[cell[k]] += g.volume * s;
            }
        }
        b
    }

    /// Elementwise constant gradient of a nodal field.
    pub fn gradients(&self, f: &[f64]) -> Vec<[f64; 3]> {
        self.geometry
            .iter()
            .enumerate()
            .map(|(e, g)| {
                let mut out = [0.0; 3];
                for (k, &i) in self.cell(e).iter().enumerate() {
                    for a in 0..3 {
                        out[a] += f[i] * g.grads[k][a];
                    }
                }
                out
            })
            .collect()
    }

    /// Element means of a nodal field.
    pub fn element_means(&self, f: &[f64]) -> Vec<f64> {
        let nl = self.n_local() as f64;
        (0..self.n_cells())
            .map(|e| self.cell(e).iter().map(|&i| f[i]).sum::<f64>() / nl)
            .collect()
    }

    /// `sqrt(d^T M d)` without forming `M`.
    pub fn l2_norm(&self, d: &[f64]) -> f64 {
        let nl = self.n_local();
        let mut s = 0.0;
        for (e, g) in self.geometry.iter().enumerate() {
            let cell = self.cell(e);
            for k in 0..nl {
                for l in 0..nl {
                    s += g.volume * self.mass_coeff(k, l) * d[cell[k]] * d[cell[l]];
                }
            }
        }
        s.max(0.0).sqrt()
    }

    /// `sqrt((a-b)^T M (a-b))`.
    pub fn l2_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.l2_norm(&d)
    }
}

pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Linear system with pending Dirichlet constraints.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub dirichlet_nodes: Vec<usize>,
    pub dirichlet_values: Vec<f64>,
}

/// Symmetric elimination: moves known columns to the right side, then makes
/// constrained rows and columns identity with `rhs = g`.
pub fn apply_dirichlet(system: AssembledSystem) -> AssembledSystem {
    let AssembledSystem {
        mut matrix,
        mut rhs,
        dirichlet_nodes,
        dirichlet_values,
    } = system;
    let n = matrix.n_rows();
    let mut value = vec![None; n];
    for (&i, &g) in dirichlet_nodes.iter().zip(&dirichlet_values) {
        value[i] = Some(g);
    }
    let row_ptr = matrix.row_ptr().to_vec();
    let cols = matrix.col_idx().to_vec();
    let vals = matrix.values_mut();
    for i in 0..n {
        for k in row_ptr[i]..row_ptr[i + 1] {
            let j = cols[k];
            match (value[i], value[j]) {
                (Some(_), _) => vals[k] = if i == j { 1.0 } else { 0.0 },
                (None, Some(g)) => {
                    rhs[i] -= vals[k] * g;
                    vals[k] = 0.0;
                }
                (None, None) => {}
            }
        }
    }
    for (i, v) in value.iter().enumerate() {
        if let Some(g) = v {
            rhs[i] = *g;
        }
    }
    AssembledSystem {
        matrix,
        rhs,
        dirichlet_nodes,
        dirichlet_values,
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::mesh::build_structured_mesh;
    use proptest::prelude::*;

    fn space() -> FeSpace {
        FeSpace::new(&build_structured_mesh(&[2.0, 1.5], &[4, 3]).unwrap()).unwrap()
    }

    fn close(a: &SparseMatrix, b: &SparseMatrix) -> bool {
        a.values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
    }

    proptest! {
        #[test]
        fn assembly_is_linear(
            u in proptest::collection::vec(-5.0f64..5.0, 12),
            v in proptest::collection::vec(-5.0f64..5.0, 12),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let s = space();
            let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let comb = |f: &dyn Fn(&[f64]) -> SparseMatrix| {
                f(&u).linear_combination(a, &f(&v), b)
            };
            prop_assert!(close(&s.weighted_mass(&mix), &comb(&|w| s.weighted_mass(w))));
            prop_assert!(close(&s.stiffness(Coeff::Nodal(&mix)), &comb(&|w| s.stiffness(Coeff::Nodal(w)))));
            let drift = |w: &[f64]| s.gradients(w);
            prop_assert!(close(&s.convection(&drift(&mix)), &comb(&|w| s.convection(&drift(w)))));
            let lm = s.load(&mix);
            let (lu, lv) = (s.load(&u), s.load(&v));
            for i in 0..12 {
                prop_assert!((lm[i] - (a * lu[i] + b * lv[i])).abs() < 1e-12);
            }
        }
    }
}
