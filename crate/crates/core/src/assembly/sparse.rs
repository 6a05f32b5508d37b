use serde::{Deserialize, Serialize};

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from raw CSR arrays. Panics if the structure is inconsistent.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        assert_eq!(row_ptr.len(), n_rows + 1);
        assert_eq!(col_idx.len(), values.len());
        assert_eq!(row_ptr[n_rows], col_idx.len());
        for i in 0..n_rows {
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            assert!(cols.windows(2).all(|w| w[0] < w[1]), "row {i} not sorted/unique");
            assert!(cols.iter().all(|&c| c < n_cols));
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sums duplicate entries.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    /// Same sparsity pattern, all values zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            ..self.clone()
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Position of `(i, j)` in the value array.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let cols = &self.col_idx[lo..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y <- b - A x`
    pub fn residual_into(&self, b: &[f64], x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y);
        for (yi, bi) in y.iter_mut().zip(b) {
            *yi = bi - *yi;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    /// `self += a * other`; both must share the same pattern.
    pub fn add_scaled_same_pattern(&mut self, a: f64, other: &SparseMatrix) {
        assert!(self.row_ptr == other.row_ptr && self.col_idx == other.col_idx);
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += a * o;
        }
    }

    /// `a * self + b * other` for arbitrary patterns of equal shape.
    pub fn linear_combination(&self, a: f64, other: &SparseMatrix, b: f64) -> SparseMatrix {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.n_rows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let next_a = ca.get(p).copied().unwrap_or(usize::MAX);
                let next_b = cb.get(q).copied().unwrap_or(usize::MAX);
                if next_a == next_b {
                    col_idx.push(next_a);
                    values.push(a * va[p] + b * vb[q]);
                    p += 1;
                    q += 1;
                } else if next_a < next_b {
                    col_idx.push(next_a);
                    values.push(a * va[p]);
                    p += 1;
                } else {
                    col_idx.push(next_b);
                    values.push(b * vb[q]);
                    q += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut count = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            count[c + 1] += 1;
        }
        for j in 0..self.n_cols {
            count[j + 1] += count[j];
        }
        let row_ptr = count.clone();
        let mut next = count;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.col_idx[k];
                col_idx[next[c]] = i;
                values[next[c]] = self.values[k];
                next[c] += 1;
            }
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.n_cols, other.n_rows);
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut acc = vec![0.0; other.n_cols];
        let mut mark = vec![usize::MAX; other.n_cols];
        let mut touched = Vec::new();
        for i in 0..self.n_rows {
            touched.clear();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let (a, va) = (self.col_idx[k], self.values[k]);
                for m in other.row_ptr[a]..other.row_ptr[a + 1] {
                    let c = other.col_idx[m];
                    if mark[c] != i {
                        mark[c] = i;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += va * other.values[m];
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_idx.push(c);
                values.push(acc[c]);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            n_rows: self.n_rows,
            n_cols: other.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry-wise asymmetry.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let d = self.linear_combination(1.0, &t, -1.0);
        d.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Replaces each listed row with the identity row.
    pub fn set_identity_rows(&mut self, rows: &[usize]) {
        for &r in rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                self.values[k] = if self.col_idx[k] == r { 1.0 } else { 0.0 };
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row[self.col_idx[k]] = self.values[k];
            }
        }
        d
    }
}
