use serde::{Deserialize, Serialize};

use super::amg::{Amg, AmgSettings};
use crate::assembly::SparseMatrix;
use crate::error::{Error, Result};

/// Approximate inverse `z = M^{-1} r`.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecondKind {
    None,
    Jacobi,
    Ilu0,
    Amg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreconditionerSpec {
    pub kind: PrecondKind,
    pub amg: AmgSettings,
}

impl Default for PreconditionerSpec {
    fn default() -> Self {
        Self {
            kind: PrecondKind::Ilu0,
            amg: AmgSettings::default(),
        }
    }
}

impl PreconditionerSpec {
    pub fn of(kind: PrecondKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }

    fn name(&self) -> &'static str {
        "none"
    }
}

pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        let inv_diag = a
            .diagonal()
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if d == 0.0 || !d.is_finite() {
                    Err(Error::Preconditioner(format!("zero diagonal entry in row {i}")))
                } else {
                    Ok(1.0 / d)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { inv_diag })
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * d;
        }
    }

    fn name(&self) -> &'static str {
        "jacobi"
    }
}

/// Incomplete LU restricted to the sparsity pattern of `A`.
pub struct Ilu0 {
    lu: SparseMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        let n = a.n_rows();
        let mut lu = a.clone();
        let row_ptr = lu.row_ptr().to_vec();
        let cols = lu.col_idx().to_vec();
        let mut diag = vec![0; n];
        for i in 0..n {
            diag[i] = lu
                .find(i, i)
                .ok_or_else(|| Error::Preconditioner(format!("missing diagonal in row {i}")))?;
        }
        let vals = lu.values_mut();
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                pos[cols[k]] = k;
            }
            for k in row_ptr[i]..diag[i] {
                let j = cols[k];
                let pivot = vals[diag[j]];
                let lij = vals[k] / pivot;
                vals[k] = lij;
                for m in diag[j] + 1..row_ptr[j + 1] {
                    let p = pos[cols[m]];
                    if p != usize::MAX {
                        vals[p] -= lij * vals[m];
                    }
                }
            }
            let d = vals[diag[i]];
            if d == 0.0 || !d.is_finite() {
                return Err(Error::Preconditioner(format!("zero pivot in row {i}")));
            }
            for k in row_ptr[i]..row_ptr[i + 1] {
                pos[cols[k]] = usize::MAX;
            }
        }
        Ok(Self { lu, diag })
    }
}

impl Preconditioner for Ilu0 {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        let rp = self.lu.row_ptr();
        let ci = self.lu.col_idx();
        let v = self.lu.values();
        for i in 0..n {
            let mut s = r[i];
            for k in rp[i]..self.diag[i] {
                s -= v[k] * z[ci[k]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.diag[i] + 1..rp[i + 1] {
                s -= v[k] * z[ci[k]];
            }
            z[i] = s / v[self.diag[i]];
        }
    }

    fn name(&self) -> &'static str {
        "ilu0"
    }
}

/// Builds the requested preconditioner. A failed multigrid setup falls back
/// to ILU(0) with a logged notice.
pub fn build_preconditioner(a: &SparseMatrix, spec: &PreconditionerSpec) -> Result<Box<dyn Preconditioner>> {
    if a.n_rows() != a.n_cols() {
        return Err(Error::Preconditioner(format!(
            "matrix is {}x{}, not square",
            a.n_rows(),
            a.n_cols()
        )));
    }
    Ok(match spec.kind {
        PrecondKind::None => Box::new(Identity),
        PrecondKind::Jacobi => Box::new(Jacobi::new(a)?),
        PrecondKind::Ilu0 => Box::new(Ilu0::new(a)?),
        PrecondKind::Amg => match Amg::new(a, &spec.amg) {
            Ok(m) => Box::new(m),
            Err(e) => {
                log::info!("multigrid setup failed ({e}); using ilu0");
                Box::new(Ilu0::new(a)?)
            }
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_example() {
        let a = SparseMatrix::from_diagonal(&[2.0, 4.0]);
        let pc = Jacobi::new(&a).unwrap();
        let mut z = [0.0; 2];
        pc.apply(&[2.0, 4.0], &mut z);
        assert_eq!(z, [1.0, 1.0]);
    }

    #[test]
    fn zero_diagonal_rejected() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0)]);
        assert!(Jacobi::new(&a).is_err());
        assert!(Ilu0::new(&a).is_err());
        let spec = PreconditionerSpec::of(PrecondKind::Jacobi);
        assert!(build_preconditioner(&a, &spec).is_err());
    }

    #[test]
    fn ilu0_is_exact_on_triangular_matrices() {
        let n = 12;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 2.0 + i as f64));
            for j in 0..i {
                if (i + j) % 3 == 0 {
                    trip.push((i, j, 0.5 - j as f64 * 0.1));
                }
            }
        }
        for a in [SparseMatrix::from_triplets(n, n, &trip), SparseMatrix::from_triplets(n, n, &trip).transpose()] {
            let pc = Ilu0::new(&a).unwrap();
            let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
            let mut z = vec![0.0; n];
            pc.apply(&b, &mut z);
            let r: Vec<f64> = a.mul_vec(&z).iter().zip(&b).map(|(x, y)| x - y).collect();
            assert!(super::super::norm(&r) < 1e-14);
        }
    }

    #[test]
    fn ilu0_of_tridiagonal_is_exact_lu() {
        let n = 10;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 4.0));
            if i > 0 {
                trip.push((i, i - 1, -1.0));
                trip.push((i - 1, i, -1.5));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &trip);
        let pc = Ilu0::new(&a).unwrap();
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let mut z = vec![0.0; n];
        pc.apply(&b, &mut z);
        let r: Vec<f64> = a.mul_vec(&z).iter().zip(&b).map(|(x, y)| x - y).collect();
        assert!(super::super::norm(&r) < 1e-13);
    }
}
