//! Residuals of the fully discrete Poisson/electron/hole system in the
//! unknowns `(psi, phi_n, phi_p)` and their analytic Jacobians.
//!
//! Densities are nodal functions of the potentials and enter every form
//! through their P1 interpolants, so `int n_h p_h zeta_i` is an exact cubic
//! moment and the density derivatives are diagonal scalings.

use crate::assembly::{dot, FeSpace, SparseMatrix};
use crate::device::{Bias, Device};
use crate::error::Result;
use crate::physics::{carrier_densities, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockField {
    Psi,
    PhiN,
    PhiP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianRequest {
    None,
    /// Node-interleaved 3x3-block Jacobian, unknown `3 i + f`.
    Coupled,
    /// Diagonal block of one equation with respect to its own unknown.
    Block(BlockField),
}

/// Residual of each equation; contact rows hold `u - g`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldResiduals {
    pub psi: Vec<f64>,
    pub phi_n: Vec<f64>,
    pub phi_p: Vec<f64>,
}

impl FieldResiduals {
    pub fn field(&self, f: BlockField) -> &[f64] {
        match f {
            BlockField::Psi => &self.psi,
            BlockField::PhiN => &self.phi_n,
            BlockField::PhiP => &self.phi_p,
        }
    }
}

pub fn interleave(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * a.len());
    for i in 0..a.len() {
        out.extend_from_slice(&[a[i], b[i], c[i]]);
    }
    out
}

pub fn split_interleaved(v: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = v.len() / 3;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        a.push(v[3 * i]);
        b.push(v[3 * i + 1]);
        c.push(v[3 * i + 2]);
    }
    (a, b, c)
}

/// Node pattern expanded to dense 3x3 blocks, interleaved by node.
pub(crate) fn block_pattern(space: &FeSpace) -> SparseMatrix {
    let p = space.pattern();
    let n = p.n_rows();
    let mut row_ptr = Vec::with_capacity(3 * n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::with_capacity(9 * p.nnz());
    for i in 0..n {
        let cols = p.row(i).0;
        for _ in 0..3 {
            for &j in cols {
                col_idx.extend_from_slice(&[3 * j, 3 * j + 1, 3 * j + 2]);
            }
            row_ptr.push(col_idx.len());
        }
    }
    let nnz = col_idx.len();
    SparseMatrix::from_csr(3 * n, 3 * n, row_ptr, col_idx, vec![0.0; nnz])
}

/// Evaluates the residuals at `state` for the step from `prev` with exciton
/// density `x_new`, and optionally a Jacobian. A `Block` request assembles
/// only that field's residual; the other two are returned as zeros.
pub fn coupled_residual_jacobian(
    dev: &Device,
    state: &State,
    prev: &State,
    x_new: &[f64],
    bias: Bias,
    request: JacobianRequest,
) -> Result<(FieldResiduals, Option<SparseMatrix>)> {
    let space = dev.space();
    let prm = dev.params();
    let levels = dev.levels();
    let nn = space.n_nodes();
    let nl = space.n_local();

    let (n, p) = carrier_densities(&state.psi, &state.phi_n, &state.phi_p, &levels.lumo, &levels.homo, prm)?;
    let only = match request {
        JacobianRequest::Block(f) => Some(f),
        _ => None,
    };
    let want_psi = matches!(only, None | Some(BlockField::Psi));
    let want_n = matches!(only, None | Some(BlockField::PhiN));
    let want_p = matches!(only, None | Some(BlockField::PhiP));
    let transport = want_n || want_p;
    let (n0, p0) = if transport {
        carrier_densities(&prev.psi, &prev.phi_n, &prev.phi_p, &levels.lumo, &levels.homo, prm)?
    } else {
        (Vec::new(), Vec::new())
    };
    let gen = dev.dissociation();
    let psi_grad = space.gradients(&state.psi);

    let inv_tau = 1.0 / prm.tau;
    let (eps, gamma) = (prm.eps, prm.gamma);
    let (mu_n, mu_p) = (prm.mu_n, prm.mu_p);
    let kappa = dev.artificial_diffusion();
    let (dn, dp) = (mu_n + kappa, mu_p + kappa);
    let ni2 = prm.n_intr * prm.n_intr;

    let mut r_psi = vec![0.0; nn];
    let mut r_n = vec![0.0; nn];
    let mut r_p = vec![0.0; nn];

    let mut jac = match request {
        JacobianRequest::None => None,
        JacobianRequest::Coupled => Some(dev.block_pattern().clone()),
        JacobianRequest::Block(_) => Some(space.pattern().clone()),
    };
    let node_ptr = space.pattern().row_ptr();
    let c3 = space.triple_coeff(0, 1, 2);

    for (e, g) in space.geometry().iter().enumerate() {
        let cell = space.cell(e);
        let vol = g.volume;
        let d_n = sub(&psi_grad[e], &dev.lumo_gradients()[e]);
        let d_p = sub(&psi_grad[e], &dev.homo_gradients()[e]);
        let (mut nbar, mut pbar) = (0.0, 0.0);
        let mut ln = [0.0; 4];
        let mut lp = [0.0; 4];
        for k in 0..nl {
            ln[k] = n[cell[k]];
            lp[k] = p[cell[k]];
            nbar += ln[k];
            pbar += lp[k];
        }
        let (sn, sp) = (nbar, pbar);
        nbar /= nl as f64;
        pbar /= nl as f64;
        let mut lg = [0.0; 4];
        for k in 0..nl {
            lg[k] = gen[cell[k]];
        }
        let sg: f64 = lg[..nl].iter().sum();

        let mut kl = [[0.0; 4]; 4];
        let mut ml = [[0.0; 4]; 4];
        let mut wn = [[0.0; 4]; 4];
        let mut wp = [[0.0; 4]; 4];
        let mut wg = [[0.0; 4]; 4];
        let mut an = [0.0; 4];
        let mut ap = [0.0; 4];
        for k in 0..nl {
            an[k] = dot(&d_n, &g.grads[k]) * vol / nl as f64;
            ap[k] = dot(&d_p, &g.grads[k]) * vol / nl as f64;
            for l in 0..nl {
                kl[k][l] = vol * dot(&g.grads[k], &g.grads[l]);
                ml[k][l] = vol * space.mass_coeff(k, l);
                if !transport {
                    continue;
                }
                // int z_k z_l z_m = c3 (1 + [k=l]) (1 + [m=k] + [m=l]) summed over m
                let t = vol * c3 * if k == l { 2.0 } else { 1.0 };
                wn[k][l] = t * (sn + ln[k] + ln[l]);
                wp[k][l] = t * (sp + lp[k] + lp[l]);
                wg[k][l] = t * (sg + lg[k] + lg[l]);
            }
        }

        for k in 0..nl {
            let i = cell[k];
            let (mut fpsi, mut fn_, mut fp) = (0.0, 0.0, 0.0);
            for l in 0..nl {
                let j = cell[l];
                let m = ml[k][l];
                fpsi += eps * kl[k][l] * state.psi[j] + m * (ln[l] - lp[l]);
                if !transport {
                    continue;
                }
                let reaction = gamma * (wp[k][l] * ln[l] - ni2 * m) - wg[k][l] * x_new[j];
                fn_ += m * inv_tau * (ln[l] - n0[j]) + (dn * kl[k][l] - mu_n * an[k]) * ln[l] + reaction;
                fp += m * inv_tau * (lp[l] - p0[j]) + (dp * kl[k][l] + mu_p * ap[k]) * lp[l] + reaction;
            }
            if want_psi {
                r_psi[i] += fpsi;
            }
            if want_n {
                r_n[i] += fn_;
            }
            if want_p {
                r_p[i] += fp;
            }
        }

        let Some(jm) = jac.as_mut() else { continue };
        let sc = space.scatter(e);
        let vals = jm.values_mut();
        for k in 0..nl {
            let i = cell[k];
            let row_len = node_ptr[i + 1] - node_ptr[i];
            for l in 0..nl {
                let s = sc[k * nl + l];
                let m = ml[k][l];
                let jn = m * inv_tau + dn * kl[k][l] - mu_n * an[k] + gamma * wp[k][l];
                let jp = m * inv_tau + dp * kl[k][l] + mu_p * ap[k] + gamma * wn[k][l];
                // rows: psi, phi_n, phi_p; columns likewise
                let block = [
                    [eps * kl[k][l] + m * (ln[l] + lp[l]), -m * ln[l], -m * lp[l]],
                    [
                        jn * ln[l] - gamma * wn[k][l] * lp[l] - mu_n * nbar * kl[k][l],
                        -jn * ln[l],
                        gamma * wn[k][l] * lp[l],
                    ],
                    [
                        -jp * lp[l] + gamma * wp[k][l] * ln[l] + mu_p * pbar * kl[k][l],
                        -gamma * wp[k][l] * ln[l],
                        jp * lp[l],
                    ],
                ];
                match request {
                    JacobianRequest::Coupled => {
                        let base = 9 * node_ptr[i];
                        let offset = 3 * (s - node_ptr[i]);
                        for f in 0..3 {
                            for c in 0..3 {
                                vals[base + f * 3 * row_len + offset + c] += block[f][c];
                            }
                        }
                    }
                    JacobianRequest::Block(field) => {
                        let f = field_index(field);
                        vals[s] += block[f][f];
                    }
                    JacobianRequest::None => unreachable!(),
                }
            }
        }
    }

    for &i in dev.dirichlet_nodes() {
        let (psi, fnv, fpv) = dev.boundary_values(i, bias).expect("contact node");
        if want_psi {
            r_psi[i] = state.psi[i] - psi;
        }
        if want_n {
            r_n[i] = state.phi_n[i] - fnv;
        }
        if want_p {
            r_p[i] = state.phi_p[i] - fpv;
        }
    }
    if let Some(jm) = jac.as_mut() {
        match request {
            JacobianRequest::Coupled => {
                let rows: Vec<usize> = dev
                    .dirichlet_nodes()
                    .iter()
                    .flat_map(|&i| [3 * i, 3 * i + 1, 3 * i + 2])
                    .collect();
                jm.set_identity_rows(&rows);
            }
            _ => jm.set_identity_rows(dev.dirichlet_nodes()),
        }
    }

    Ok((
        FieldResiduals {
            psi: r_psi,
            phi_n: r_n,
            phi_p: r_p,
        },
        jac,
    ))
}

fn field_index(f: BlockField) -> usize {
    match f {
        BlockField::Psi => 0,
        BlockField::PhiN => 1,
        BlockField::PhiP => 2,
    }
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;
    use crate::morphology::{generate_synthetic, SyntheticKind};
    use crate::physics::ModelParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn device(kind: SyntheticKind, params: ModelParams) -> Device {
        let mesh = build_structured_mesh(&[10.0, 10.0], &[4, 4]).unwrap();
        let phase = generate_synthetic(&kind, &mesh).unwrap();
        Device::new(mesh, phase, params).unwrap()
    }

    fn random_state(dev: &Device, rng: &mut ChaCha8Rng, bias: Bias) -> State {
        let n = dev.n_nodes();
        let mut s = State::zeros(n);
        for i in 0..n {
            s.psi[i] = dev.psi_star()[i] + rng.gen_range(-1.0..1.0);
            s.phi_n[i] = rng.gen_range(-3.0..0.0);
            s.phi_p[i] = rng.gen_range(0.0..3.0);
            s.x[i] = rng.gen_range(0.0..100.0);
        }
        dev.impose_boundary(&mut s, bias);
        s
    }

    fn slot(s: &mut State, col: usize) -> &mut f64 {
        match col % 3 {
            0 => &mut s.psi[col / 3],
            1 => &mut s.phi_n[col / 3],
            _ => &mut s.phi_p[col / 3],
        }
    }

    #[test]
    fn equilibrium_has_zero_residual() {
        let mut params = ModelParams {
            g: 0.0,
            ..ModelParams::default()
        };
        let probe = device(SyntheticKind::Uniform { value: 0.5 }, params.clone());
        params.n_intr = crate::physics::equilibrium_np(probe.levels().lumo[0], probe.levels().homo[0], &params).sqrt();
        let dev = probe.with_params(params).unwrap();
        let mut s = State::zeros(dev.n_nodes());
        s.psi.copy_from_slice(dev.psi_star());
        let (r, _) =
            coupled_residual_jacobian(&dev, &s, &s, &s.x, Bias::new(0.0, 0.0), JacobianRequest::None).unwrap();
        for f in [&r.psi, &r.phi_n, &r.phi_p] {
            assert!(f.iter().all(|v| v.abs() < 1e-12), "{f:?}");
        }
    }

    #[test]
    fn coupled_jacobian_matches_central_differences() {
        let params = ModelParams {
            tau: 0.1,
            ..ModelParams::default()
        };
        let dev = device(SyntheticKind::Checkerboard { period: 10.0 / 3.0 }, params);
        let bias = Bias::new(0.3, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let state = random_state(&dev, &mut rng, bias);
        let prev = random_state(&dev, &mut rng, bias);
        let (_, jac) =
            coupled_residual_jacobian(&dev, &state, &prev, &state.x, bias, JacobianRequest::Coupled).unwrap();
        let jac = jac.unwrap().to_dense();
        let nn = dev.n_nodes();
        let h = 1e-6;
        for col in 0..3 * nn {
            let mut plus = state.clone();
            let mut minus = state.clone();
            *slot(&mut plus, col) += h;
            *slot(&mut minus, col) -= h;
            let eval = |s: &State| {
                let (r, _) =
                    coupled_residual_jacobian(&dev, s, &prev, &s.x, bias, JacobianRequest::None).unwrap();
                interleave(&r.psi, &r.phi_n, &r.phi_p)
            };
            let (rp, rm) = (eval(&plus), eval(&minus));
            for row in 0..3 * nn {
                let fd = (rp[row] - rm[row]) / (2.0 * h);
                let scale = jac[row].iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let err = (fd - jac[row][col]).abs() / jac[row][col].abs().max(1e-3 * scale);
                assert!(err < 1e-5, "row {row} col {col}: fd {fd} analytic {}", jac[row][col]);
            }
        }
    }

    #[test]
    fn block_requests_match_the_coupled_blocks() {
        let dev = device(SyntheticKind::Checkerboard { period: 10.0 / 3.0 }, ModelParams::default());
        let bias = Bias::new(0.3, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = random_state(&dev, &mut rng, bias);
        let prev = random_state(&dev, &mut rng, bias);
        let (full, jac) =
            coupled_residual_jacobian(&dev, &state, &prev, &state.x, bias, JacobianRequest::Coupled).unwrap();
        let jac = jac.unwrap().to_dense();
        for field in [BlockField::Psi, BlockField::PhiN, BlockField::PhiP] {
            let (r, b) =
                coupled_residual_jacobian(&dev, &state, &prev, &state.x, bias, JacobianRequest::Block(field)).unwrap();
            assert_eq!(r.field(field), full.field(field));
            let b = b.unwrap().to_dense();
            let f = field_index(field);
            for i in 0..dev.n_nodes() {
                for j in 0..dev.n_nodes() {
                    assert_eq!(b[i][j], jac[3 * i + f][3 * j + f], "{field:?} ({i},{j})");
                }
            }
        }
    }
}
