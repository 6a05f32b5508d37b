//! Smoothed-aggregation algebraic multigrid, applied as one V-cycle.

use serde::{Deserialize, Serialize};

use super::precond::Preconditioner;
use crate::assembly::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmgSettings {
    /// Strength threshold `|a_ij| >= theta sqrt(|a_ii a_jj|)`.
    pub strength: f64,
    pub max_levels: usize,
    /// Coarsest level solved directly once it has at most this many rows.
    pub coarse_size: usize,
    /// Pre- and post-smoothing sweeps.
    pub sweeps: usize,
}

impl Default for AmgSettings {
    fn default() -> Self {
        Self {
            strength: 0.08,
            max_levels: 12,
            coarse_size: 300,
            sweeps: 1,
        }
    }
}

struct Level {
    a: SparseMatrix,
    p: SparseMatrix,
    r: SparseMatrix,
    diag: Vec<usize>,
}

pub struct Amg {
    levels: Vec<Level>,
    coarse: DenseLu,
    sweeps: usize,
}

impl Amg {
    pub fn new(a: &SparseMatrix, settings: &AmgSettings) -> Result<Self> {
        let mut levels = Vec::new();
        let mut current = a.clone();
        while current.n_rows() > settings.coarse_size && levels.len() + 1 < settings.max_levels {
            let diag = diagonal_positions(&current)?;
            let (agg, n_agg) = aggregate(&current, settings.strength);
            if n_agg == 0 || n_agg as f64 > 0.9 * current.n_rows() as f64 {
                break;
            }
            let p = smoothed_prolongator(&current, &agg, n_agg);
            let r = p.transpose();
            let coarse = r.matmul(&current).matmul(&p);
            levels.push(Level {
                a: current,
                p,
                r,
                diag,
            });
            current = coarse;
        }
        let coarse = DenseLu::new(&current)?;
        Ok(Self {
            levels,
            coarse,
            sweeps: settings.sweeps.max(1),
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len() + 1
    }

    fn cycle(&self, lvl: usize, b: &[f64], x: &mut [f64]) {
        if lvl == self.levels.len() {
            self.coarse.solve(b, x);
            return;
        }
        let l = &self.levels[lvl];
        x.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..self.sweeps {
            gauss_seidel(&l.a, &l.diag, b, x, false);
        }
        let mut res = vec![0.0; b.len()];
        l.a.residual_into(b, x, &mut res);
        let rc = l.r.mul_vec(&res);
        let mut xc = vec![0.0; rc.len()];
        self.cycle(lvl + 1, &rc, &mut xc);
        let corr = l.p.mul_vec(&xc);
        x.iter_mut().zip(&corr).for_each(|(a, c)| *a += c);
        for _ in 0..self.sweeps {
            gauss_seidel(&l.a, &l.diag, b, x, true);
        }
    }
}

impl Preconditioner for Amg {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }

    fn name(&self) -> &'static str {
        "amg"
    }
}

fn diagonal_positions(a: &SparseMatrix) -> Result<Vec<usize>> {
    (0..a.n_rows())
        .map(|i| match a.find(i, i) {
            Some(k) if a.values()[k] != 0.0 => Ok(k),
            _ => Err(Error::Preconditioner(format!("zero diagonal entry in row {i}"))),
        })
        .collect()
}

fn gauss_seidel(a: &SparseMatrix, diag: &[usize], b: &[f64], x: &mut [f64], backward: bool) {
    let n = b.len();
    let rp = a.row_ptr();
    let ci = a.col_idx();
    let v = a.values();
    let mut sweep = |i: usize| {
        let mut s = b[i];
        for k in rp[i]..rp[i + 1] {
            if k != diag[i] {
                s -= v[k] * x[ci[k]];
            }
        }
        x[i] = s / v[diag[i]];
    };
    if backward {
        (0..n).rev().for_each(&mut sweep);
    } else {
        (0..n).for_each(&mut sweep);
    }
}

/// Greedy aggregation on the strength graph. Rows without strong
/// neighbours (e.g. eliminated boundary rows) stay unaggregated.
fn aggregate(a: &SparseMatrix, theta: f64) -> (Vec<Option<usize>>, usize) {
    let n = a.n_rows();
    let d: Vec<f64> = a.diagonal().iter().map(|v| v.abs()).collect();
    let strong: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let (cols, vals) = a.row(i);
            cols.iter()
                .zip(vals)
                .filter(|&(&j, &v)| j != i && v.abs() >= theta * (d[i] * d[j]).sqrt() && v != 0.0)
                .map(|(&j, _)| j)
                .collect()
        })
        .collect();

    let mut agg: Vec<Option<usize>> = vec![None; n];
    let mut count = 0;
    // seeds whose whole neighbourhood is free
    for i in 0..n {
        if agg[i].is_some() || strong[i].is_empty() {
            continue;
        }
        if strong[i].iter().all(|&j| agg[j].is_none()) {
            agg[i] = Some(count);
            for &j in &strong[i] {
                agg[j] = Some(count);
            }
            count += 1;
        }
    }
    // attach leftovers to a neighbouring aggregate
    let snapshot = agg.clone();
    for i in 0..n {
        if agg[i].is_none() {
            if let Some(a) = strong[i].iter().find_map(|&j| snapshot[j]) {
                agg[i] = Some(a);
            }
        }
    }
    // whatever remains forms new aggregates with its free neighbours
    for i in 0..n {
        if agg[i].is_some() || strong[i].is_empty() {
            continue;
        }
        agg[i] = Some(count);
        for &j in &strong[i] {
            if agg[j].is_none() {
                agg[j] = Some(count);
            }
        }
        count += 1;
    }
    (agg, count)
}

fn smoothed_prolongator(a: &SparseMatrix, agg: &[Option<usize>], n_agg: usize) -> SparseMatrix {
    let n = a.n_rows();
    let trip: Vec<(usize, usize, f64)> = agg
        .iter()
        .enumerate()
        .filter_map(|(i, g)| g.map(|g| (i, g, 1.0)))
        .collect();
    let t = SparseMatrix::from_triplets(n, n_agg, &trip);

    // omega = 4/3 / rho(D^{-1} A), rho bounded by the largest scaled row sum
    let diag = a.diagonal();
    let mut rho: f64 = 0.0;
    for i in 0..n {
        let (_, vals) = a.row(i);
        let s: f64 = vals.iter().map(|v| v.abs()).sum();
        rho = rho.max(s / diag[i].abs());
    }
    let omega = 4.0 / 3.0 / rho.max(1e-300);
    let mut scaled = a.clone();
    {
        let rp = scaled.row_ptr().to_vec();
        let vals = scaled.values_mut();
        for i in 0..n {
            for v in &mut vals[rp[i]..rp[i + 1]] {
                *v *= omega / diag[i];
            }
        }
    }
    // P = (I - omega D^{-1} A) T, dropping unaggregated rows entirely
    let smoothed = SparseMatrix::identity(n).linear_combination(1.0, &scaled, -1.0);
    let p = smoothed.matmul(&t);
    let mut keep = Vec::with_capacity(p.nnz());
    for i in 0..n {
        let (cols, vals) = p.row(i);
        if agg[i].is_some() {
            keep.extend(cols.iter().zip(vals).map(|(&c, &v)| (i, c, v)));
        }
    }
    SparseMatrix::from_triplets(n, n_agg, &keep)
}

/// Dense LU with partial pivoting for the coarsest level.
struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    fn new(a: &SparseMatrix) -> Result<Self> {
        let n = a.n_rows();
        let mut lu = vec![0.0; n * n];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                lu[i * n + j] = v;
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let (piv, pmax) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |a, b| if b.1 > a.1 { b } else { a });
            if pmax <= 1e-14 * scale {
                return Err(Error::Preconditioner(format!("singular coarse matrix at column {k}")));
            }
            if piv != k {
                for j in 0..n {
                    lu.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / d;
                lu[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= f * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    fn solve(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[self.perm[i]];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{Coeff, FeSpace};
    use crate::mesh::build_structured_mesh;

    #[test]
    fn builds_a_hierarchy_on_a_laplacian() {
        let m = build_structured_mesh(&[1.0, 1.0], &[60, 60]).unwrap();
        let s = FeSpace::new(&m).unwrap();
        let mut a = s.stiffness(Coeff::Constant(1.0));
        a.add_scaled_same_pattern(1e-3, &s.mass());
        let amg = Amg::new(&a, &AmgSettings::default()).unwrap();
        assert!(amg.n_levels() >= 3);
    }

    #[test]
    fn dense_lu_solves() {
        let a = SparseMatrix::from_triplets(3, 3, &[(0, 1, 2.0), (1, 0, 1.0), (1, 2, 1.0), (2, 2, 3.0), (0, 0, 1e-20)]);
        let lu = DenseLu::new(&a).unwrap();
        let mut x = [0.0; 3];
        lu.solve(&[2.0, 2.0, 3.0], &mut x);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip([2.0, 2.0, 3.0]) {
            assert!((ri - bi).abs() < 1e-14);
        }
    }
}
