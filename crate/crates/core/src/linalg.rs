//! Compressed sparse row matrices and a Jacobi-preconditioned conjugate
//! gradient solver. All reductions run in a fixed sequential order so
//! solutions are bitwise reproducible.

use crate::error::{Error, Result};

/// Square sparse matrix in CSR layout with sorted, unique column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from `(row, col, value)` triplets; duplicates are summed in
    /// insertion order.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(r, c, _) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        // stable bucket by row
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let slot = next[r];
            cols[slot] = c;
            vals[slot] = v;
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..n {
            let (start, end) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(start..end);
            order.sort_by_key(|&k| (cols[k], k));
            let mut last: Option<usize> = None;
            for &k in &order {
                if last == Some(cols[k]) {
                    *values.last_mut().unwrap() += vals[k];
                } else {
                    col_idx.push(cols[k]);
                    values.push(vals[k]);
                    last = Some(cols[k]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `r` as `(column, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A·x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ·A·y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, v)| self.get(c, r) == v))
    }

    /// Dense row-major copy; intended for small verification problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for (r, row) in dense.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        dense
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Stopping parameters for [`conjugate_gradient`].
#[derive(Clone, Copy, Debug)]
pub struct CgSettings {
    /// Relative residual `‖b − A·x‖ / ‖b‖` at which to stop.
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solve `A·x = b` for symmetric positive definite `A` with a diagonal
/// (Jacobi) preconditioner.
///
/// Fails with [`Error::Indefinite`] as soon as a search direction with
/// non-positive curvature shows up and with [`Error::NotConverged`] when
/// `max_iter` is exhausted.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    settings: CgSettings,
) -> Result<CgOutcome> {
    let n = a.dim();
    assert_eq!(b.len(), n);
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }

    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let mut r = b.to_vec();
    if x0.is_some() {
        let ax = a.mul_vec(&x);
        for (ri, axi) in r.iter_mut().zip(&ax) {
            *ri -= axi;
        }
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, d)| ri * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut residual = norm2(&r) / b_norm;

    for iteration in 0..settings.max_iter {
        if residual <= settings.tol {
            return Ok(CgOutcome {
                solution: x,
                iterations: iteration,
                residual,
            });
        }
        a.mul_vec_into(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::Indefinite {
                iteration,
                curvature,
            });
        }
        let step = rz / curvature;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        residual = norm2(&r) / b_norm;
    }

    // the recursive residual can drift; confirm with a true residual
    let ax = a.mul_vec(&x);
    let true_res = norm2(&b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect::<Vec<_>>()) / b_norm;
    if true_res <= settings.tol {
        Ok(CgOutcome {
            solution: x,
            iterations: settings.max_iter,
            residual: true_res,
        })
    } else {
        Err(Error::NotConverged {
            iterations: settings.max_iter,
            residual: true_res,
        })
    }
}
