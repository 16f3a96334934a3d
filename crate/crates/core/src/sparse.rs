//! Compressed sparse row matrices and the Krylov solvers used by the FEM
//! modules: preconditioned conjugate gradients for SPD systems and
//! preconditioned MINRES for symmetric indefinite saddle-point systems.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            row.sort_unstable_by_key(|&(j, _)| j);
            for &(j, v) in &row {
                if indices.len() > indptr[i] && *indices.last().unwrap() == j {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(k) => self.data[r.start + k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`
    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[k] * x[self.indices[k]];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let triplets: Vec<_> = (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v)))
            .collect();
        CsrMatrix::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    /// `B D^{-1} B^T` for a diagonal `D` given by its inverse entries.
    pub fn scaled_gram(&self, dinv: &[f64]) -> CsrMatrix {
        let bt = self.transpose();
        let mut triplets = Vec::new();
        for i in 0..self.nrows {
            for (k, bik) in self.row(i) {
                for (j, bjk) in bt.row(k) {
                    triplets.push((i, j, bik * dinv[k] * bjk));
                }
            }
        }
        CsrMatrix::from_triplets(self.nrows, self.nrows, &triplets)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Euclidean `||b - A x|| / ||b||` (or `||A x||` when `b = 0`).
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul(x);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (q - p).powi(2)).sum::<f64>().sqrt();
    let nb = norm(b);
    if nb == 0.0 {
        r
    } else {
        r / nb
    }
}

/// Symmetric positive definite preconditioner `z = M^{-1} r`.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &CsrMatrix) -> Self {
        Self {
            inv_diag: a
                .diagonal()
                .into_iter()
                .map(|d| if d != 0.0 { 1.0 / d.abs() } else { 1.0 })
                .collect(),
        }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

/// Sparse Cholesky factorization `A = L L^T` (fill-reducing ordering chosen
/// by faer).
pub struct Cholesky {
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    n: usize,
}

impl Cholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        // CSR of a symmetric matrix is its CSC; keep the lower triangle.
        let triplets: Vec<_> = (0..n)
            .flat_map(|i| {
                a.row(i)
                    .filter(move |&(j, _)| j <= i)
                    .map(move |(j, v)| Triplet::new(i, j, v))
            })
            .collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let llt = m
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(Self { llt, n })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.llt.solve_in_place(x.as_mut());
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

impl Preconditioner for Cholesky {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(&self.solve(r));
    }
}

/// Block-diagonal preconditioner over consecutive index ranges.
pub struct BlockDiagonal {
    blocks: Vec<(usize, Box<dyn Preconditioner + Send + Sync>)>,
}

impl BlockDiagonal {
    /// `blocks` lists `(size, preconditioner)` in order.
    pub fn new(blocks: Vec<(usize, Box<dyn Preconditioner + Send + Sync>)>) -> Self {
        Self { blocks }
    }
}

impl Preconditioner for BlockDiagonal {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mut start = 0;
        for (size, p) in &self.blocks {
            let end = start + size;
            p.apply(&r[start..end], &mut z[start..end]);
            start = end;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovReport {
    pub iterations: usize,
    /// Final Euclidean relative residual `||b - A x|| / ||b||`.
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients. `x` holds the initial guess and the
/// result. Converged means the true relative residual is at most `tol`.
pub fn cg(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    precond: &dyn Preconditioner,
    tol: f64,
    max_iter: usize,
) -> Result<KrylovReport> {
    let n = b.len();
    let nb = norm(b);
    if nb == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = a.mul(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut target = tol;
    for it in 0..=max_iter {
        let res = norm(&r) / nb;
        if res <= target {
            let true_res = relative_residual(a, x, b);
            if true_res <= tol {
                return Ok(KrylovReport {
                    iterations: it,
                    relative_residual: true_res,
                });
            }
            target = 0.1 * target.min(res);
        }
        if it == max_iter {
            break;
        }
        a.mul_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailed {
        solver: "conjugate gradients",
        iterations: max_iter,
        residual: relative_residual(a, x, b),
    })
}

/// Preconditioned MINRES for symmetric (possibly indefinite) systems with an
/// SPD preconditioner. `x` holds the initial guess and the result.
pub fn minres(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    precond: &dyn Preconditioner,
    tol: f64,
    max_iter: usize,
) -> Result<KrylovReport> {
    let n = b.len();
    let nb = norm(b);
    if nb == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut total = 0;
    // Restarts recover from loss of orthogonality in long runs.
    for _restart in 0..8 {
        let mut v = a.mul(x);
        for (vi, bi) in v.iter_mut().zip(b) {
            *vi = bi - *vi;
        }
        let res0 = norm(&v) / nb;
        if res0 <= tol {
            return Ok(KrylovReport {
                iterations: total,
                relative_residual: res0,
            });
        }
        let mut v_old = vec![0.0; n];
        let mut z = vec![0.0; n];
        precond.apply(&v, &mut z);
        let mut gamma = dot(&z, &v).sqrt();
        let mut gamma_old = 1.0;
        let eta0 = gamma;
        let mut eta = gamma;
        let (mut s_old, mut s) = (0.0, 0.0);
        let (mut c_old, mut c) = (1.0, 1.0);
        let mut w_old = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut az = vec![0.0; n];
        let mut target = tol * res0.min(1.0);
        loop {
            if total >= max_iter {
                return Err(Error::SolverFailed {
                    solver: "MINRES",
                    iterations: total,
                    residual: relative_residual(a, x, b),
                });
            }
            total += 1;
            z.iter_mut().for_each(|zi| *zi /= gamma);
            a.mul_into(&z, &mut az);
            let delta = dot(&az, &z);
            let mut v_new = vec![0.0; n];
            for i in 0..n {
                v_new[i] = az[i] - (delta / gamma) * v[i] - (gamma / gamma_old) * v_old[i];
            }
            let mut z_new = vec![0.0; n];
            precond.apply(&v_new, &mut z_new);
            let gamma_new = dot(&z_new, &v_new).max(0.0).sqrt();
            let alpha0 = c * delta - c_old * s * gamma;
            let alpha1 = (alpha0 * alpha0 + gamma_new * gamma_new).sqrt();
            let alpha2 = s * delta + c_old * c * gamma;
            let alpha3 = s_old * gamma;
            let c_new = alpha0 / alpha1;
            let s_new = gamma_new / alpha1;
            let mut w_new = vec![0.0; n];
            for i in 0..n {
                w_new[i] = (z[i] - alpha3 * w_old[i] - alpha2 * w[i]) / alpha1;
                x[i] += c_new * eta * w_new[i];
            }
            eta *= -s_new;
            v_old = std::mem::replace(&mut v, v_new);
            z = z_new;
            gamma_old = gamma;
            gamma = gamma_new;
            w_old = std::mem::replace(&mut w, w_new);
            c_old = c;
            c = c_new;
            s_old = s;
            s = s_new;
            if eta.abs() / eta0 * res0 <= target || gamma == 0.0 {
                let res = relative_residual(a, x, b);
                if res <= tol {
                    return Ok(KrylovReport {
                        iterations: total,
                        relative_residual: res,
                    });
                }
                if gamma == 0.0 || eta.abs() / eta0 < 1e-15 {
                    // stagnated: restart from the current iterate
                    break;
                }
                target *= 0.1;
            }
        }
    }
    Err(Error::SolverFailed {
        solver: "MINRES",
        iterations: total,
        residual: relative_residual(a, x, b),
    })
}
