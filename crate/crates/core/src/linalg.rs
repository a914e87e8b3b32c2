//! Sparse matrices and the handful of solvers the calculus needs.
//!
//! Everything here is deliberately small: a CSR matrix, an envelope
//! Cholesky factorization under reverse Cuthill-McKee ordering, Jacobi
//! preconditioned conjugate gradients and a block inverse subspace
//! iteration for the bottom of a symmetric generalized spectrum.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{CalcError, Result};

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl Csr {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds {nrows}x{ncols}");
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            let p = next[i];
            cols[p] = j;
            vals[p] = v;
            next[i] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|p| (cols[p], vals[p])));
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut s = 0.0;
                while k < row.len() && row[k].0 == j {
                    s += row[k].1;
                    k += 1;
                }
                indices.push(j);
                data.push(s);
            }
            indptr.push(indices.len());
        }
        Csr { nrows, ncols, indptr, indices, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Csr { nrows: n, ncols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), data: d.to_vec() }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr { nrows, ncols, indptr: vec![0; nrows + 1], indices: vec![], data: vec![] }
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

    /// Iterates over the stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(p) => self.data[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[p] * x[self.indices[p]];
            }
            *yi = s;
        }
    }

    /// Computes `Aᵀx` without forming the transpose.
    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for p in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[p]] += self.data[p] * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> Csr {
        let mut trips = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                trips.push((j, i, v));
            }
        }
        Csr::from_triplets(self.ncols, self.nrows, &trips)
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &Csr) -> Csr {
        assert_eq!(self.ncols, other.nrows, "dimension mismatch in matmul");
        let mut indptr = vec![0usize];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                indices.push(j);
                data.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        Csr { nrows: self.nrows, ncols: other.ncols, indptr, indices, data }
    }

    /// Returns `alpha * self + beta * other`.
    pub fn add(&self, other: &Csr, alpha: f64, beta: f64) -> Csr {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut trips = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            trips.extend(self.row(i).map(|(j, v)| (i, j, alpha * v)));
            trips.extend(other.row(i).map(|(j, v)| (i, j, beta * v)));
        }
        Csr::from_triplets(self.nrows, self.ncols, &trips)
    }

    pub fn scale(&self, s: f64) -> Csr {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Returns `diag(d) * self`.
    pub fn scale_rows(&self, d: &[f64]) -> Csr {
        assert_eq!(d.len(), self.nrows);
        let mut out = self.clone();
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                out.data[p] *= d[i];
            }
        }
        out
    }

    /// Returns `self * diag(d)`.
    pub fn scale_cols(&self, d: &[f64]) -> Csr {
        assert_eq!(d.len(), self.ncols);
        let mut out = self.clone();
        for p in 0..out.data.len() {
            out.data[p] *= d[out.indices[p]];
        }
        out
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Largest absolute entry of `self - selfᵀ`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let d = self.add(&t, 1.0, -1.0);
        d.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Sum of absolute values in each row.
    pub fn row_abs_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v.abs()).sum()).collect()
    }

    /// Sum of absolute values in each column.
    pub fn col_abs_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.ncols];
        for p in 0..self.data.len() {
            s[self.indices[p]] += self.data[p].abs();
        }
        s
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner product weighted by the diagonal `w`.
pub fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scaled(s: f64, a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| s * x).collect()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Reverse Cuthill-McKee ordering of the symmetric sparsity pattern of `a`.
pub fn rcm_ordering(a: &Csr) -> Vec<usize> {
    let n = a.nrows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        let root = pseudo_peripheral(a, start, &degree);
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = a.row(v).map(|(j, _)| j).filter(|&j| !visited[j]).collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(a: &Csr, root: usize) -> Vec<usize> {
    let mut level = vec![usize::MAX; a.nrows()];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        for (j, _) in a.row(v) {
            if level[j] == usize::MAX {
                level[j] = level[v] + 1;
                queue.push_back(j);
            }
        }
    }
    level
}

fn pseudo_peripheral(a: &Csr, start: usize, degree: &[usize]) -> usize {
    let mut root = start;
    let mut ecc = 0;
    for _ in 0..8 {
        let level = bfs_levels(a, root);
        let far = level.iter().filter(|&&l| l != usize::MAX).copied().max().unwrap_or(0);
        if far <= ecc && ecc > 0 {
            break;
        }
        ecc = far;
        let cand = (0..a.nrows())
            .filter(|&i| level[i] == far)
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(root);
        if cand == root {
            break;
        }
        root = cand;
    }
    root
}

/// Envelope (skyline) Cholesky factorization `P A Pᵀ = L Lᵀ` of a sparse SPD matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
}

impl Cholesky {
    pub fn new(a: &Csr) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let perm = rcm_ordering(a);
        let mut inv = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for (j, _) in a.row(i) {
                let (pi, pj) = (inv[i], inv[j]);
                if pj < pi {
                    first[pi] = first[pi].min(pj);
                } else if pi < pj {
                    first[pj] = first[pj].min(pi);
                }
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut vals = vec![0.0; start[n]];
        for i in 0..n {
            for (j, v) in a.row(i) {
                let (pi, pj) = (inv[i], inv[j]);
                if pj <= pi {
                    vals[start[pi] + pj - first[pi]] += v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = vals[start[i] + j - fi];
                let ri = start[i] + k0 - fi;
                let rj = start[j] + k0 - fj;
                for t in 0..(j - k0) {
                    s -= vals[ri + t] * vals[rj + t];
                }
                if j < i {
                    vals[start[i] + j - fi] = s / vals[start[j] + j - fj];
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(CalcError::Solver(format!(
                            "matrix is not positive definite (pivot {s:e} at row {})",
                            perm[i]
                        )));
                    }
                    vals[start[i] + i - fi] = s.sqrt();
                }
            }
        }
        Ok(Cholesky { n, perm, first, start, vals })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.vals[self.start[i]..self.start[i + 1]];
            let mut s = y[i];
            for (t, j) in (fi..i).enumerate() {
                s -= row[t] * y[j];
            }
            y[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.vals[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (t, j) in (fi..i).enumerate() {
                y[j] -= row[t] * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// (semi)definite operator. When `deflate` is given, iterates are kept
/// orthogonal (in the Euclidean sense) to each listed vector, which handles
/// consistent singular systems whose kernel is known.
pub fn pcg<F>(
    apply: F,
    b: &[f64],
    diag: &[f64],
    deflate: &[Vec<f64>],
    rtol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let project = |v: &mut Vec<f64>| {
        for k in deflate {
            let c = dot(v, k) / dot(k, k);
            axpy(-c, k, v);
        }
    };
    let mut r = b.to_vec();
    project(&mut r);
    let bnorm = norm2(&r);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(CgOutcome { x, iterations: 0, relative_residual: 0.0 });
    }
    let pre = |r: &[f64]| -> Vec<f64> {
        r.iter().zip(diag).map(|(ri, d)| if *d > 0.0 { ri / d } else { *ri }).collect()
    };
    let mut z = pre(&r);
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(CalcError::Solver(format!("CG breakdown at iteration {it}")));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        project(&mut r);
        let rel = norm2(&r) / bnorm;
        if rel <= rtol {
            project(&mut x);
            return Ok(CgOutcome { x, iterations: it, relative_residual: rel });
        }
        z = pre(&r);
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    let rel = norm2(&sub(b, &apply(&x))) / bnorm;
    Err(CalcError::Solver(format!("CG did not converge in {max_iter} iterations (residual {rel:e})")))
}

/// CGLS for `min ‖Ax − b‖₂` started from zero, which converges to the
/// minimum-norm solution. Stops when `‖Aᵀr‖ ≤ rtol·‖Aᵀb‖`.
pub fn cgls(a: &Csr, b: &[f64], rtol: f64, max_iter: usize) -> CgOutcome {
    let mut x = vec![0.0; a.ncols()];
    let mut r = b.to_vec();
    let mut s = a.tmul_vec(&r);
    let s0 = norm2(&s);
    if s0 == 0.0 {
        return CgOutcome { x, iterations: 0, relative_residual: 0.0 };
    }
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let q = a.mul_vec(&p);
        let qq = dot(&q, &q);
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        s = a.tmul_vec(&r);
        let g_new = dot(&s, &s);
        if g_new.sqrt() <= rtol * s0 {
            gamma = g_new;
            break;
        }
        let beta = g_new / gamma;
        gamma = g_new;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
    }
    CgOutcome { x, iterations: it, relative_residual: gamma.sqrt() / s0 }
}

/// Bottom of the spectrum of the pencil `K x = λ M x`.
#[derive(Clone, Debug)]
pub struct LowSpectrum {
    pub values: Vec<f64>,
    /// M-orthonormal eigenvectors, one per value.
    pub vectors: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Block inverse subspace iteration with Rayleigh-Ritz for the `p` smallest
/// eigenpairs of a symmetric semidefinite pencil. `shifted_solve` must apply
/// `(K + σM)⁻¹`. The start block is deterministic. The iterated block carries
/// a few guard vectors beyond `p`, so a cluster straddling the `p`-th
/// eigenvalue does not stall convergence.
pub fn low_spectrum<S, K, M>(
    n: usize,
    p: usize,
    shifted_solve: S,
    apply_k: K,
    apply_m: M,
    tol: f64,
    max_iter: usize,
) -> Result<LowSpectrum>
where
    S: Fn(&[f64]) -> Vec<f64>,
    K: Fn(&[f64]) -> Vec<f64>,
    M: Fn(&[f64]) -> Vec<f64>,
{
    let p = p.min(n);
    let width = (2 * p + 2).min(n);
    let mut block: Vec<Vec<f64>> = (0..width)
        .map(|k| {
            (0..n)
                .map(|i| {
                    let t = (i as f64 + 1.0) * (k as f64 + 1.0);
                    (t * 0.618_033_988_75).fract() - 0.5 + if k == 0 { 0.3 } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let mut prev: Vec<f64> = vec![f64::INFINITY; p];
    for it in 1..=max_iter {
        let mb: Vec<Vec<f64>> = block.iter().map(|v| apply_m(v)).collect();
        let next: Vec<Vec<f64>> = mb.iter().map(|v| shifted_solve(v)).collect();
        let (values, vectors) = rayleigh_ritz(&next, &apply_k, &apply_m)?;
        let scale = values[..p].iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        let change = values[..p].iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        block = vectors;
        let done = change <= tol * scale;
        prev = values[..p].to_vec();
        if done && it > 2 {
            block.truncate(p);
            return Ok(LowSpectrum { values: prev, vectors: block, iterations: it });
        }
    }
    Err(CalcError::Solver(format!("subspace iteration did not converge in {max_iter} sweeps")))
}

fn rayleigh_ritz<K, M>(block: &[Vec<f64>], apply_k: &K, apply_m: &M) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
where
    K: Fn(&[f64]) -> Vec<f64>,
    M: Fn(&[f64]) -> Vec<f64>,
{
    let p = block.len();
    let kb: Vec<Vec<f64>> = block.iter().map(|v| apply_k(v)).collect();
    let mb: Vec<Vec<f64>> = block.iter().map(|v| apply_m(v)).collect();
    let kk = DMatrix::from_fn(p, p, |i, j| 0.5 * (dot(&block[i], &kb[j]) + dot(&block[j], &kb[i])));
    let mm = DMatrix::from_fn(p, p, |i, j| 0.5 * (dot(&block[i], &mb[j]) + dot(&block[j], &mb[i])));
    let (vals, coef) = generalized_symmetric_eigen(&kk, &mm)?;
    let n = block[0].len();
    let vectors = (0..p)
        .map(|c| {
            let mut v = vec![0.0; n];
            for (k, b) in block.iter().enumerate() {
                axpy(coef[(k, c)], b, &mut v);
            }
            v
        })
        .collect();
    Ok((vals, vectors))
}

/// Dense generalized symmetric eigenproblem `K x = λ M x` with `M` SPD.
/// Eigenvalues ascend; eigenvectors are M-orthonormal columns.
pub fn generalized_symmetric_eigen(k: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| CalcError::Solver("mass block is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| CalcError::Solver("singular Cholesky factor".into()))?;
    let c = &linv * k * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let y = DMatrix::from_fn(k.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    Ok((vals, linv.transpose() * y))
}

/// Ascending eigenvalues of a dense symmetric matrix.
pub fn symmetric_eigenvalues(a: DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Minimum-norm least-squares solution of a small dense system via SVD,
/// together with the numerical rank.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> (DVector<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, v| m.max(*v));
    let cutoff = rcond * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let x = svd.solve(b, cutoff.max(f64::MIN_POSITIVE)).unwrap_or_else(|_| DVector::zeros(a.ncols()));
    (x, rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, shift: f64) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        Csr::from_triplets(n, n, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = Csr::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, -1.0)]);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(1, 0), -1.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn matmul_matches_dense() {
        let a = Csr::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 2.0), (2, 0, -3.0), (2, 1, 0.5)]);
        let b = Csr::from_triplets(2, 3, &[(0, 2, 4.0), (1, 0, 1.5), (1, 1, -1.0)]);
        let c = a.matmul(&b).to_dense();
        let d = a.to_dense() * b.to_dense();
        assert!((c - d).abs().max() < 1e-15);
        assert!((a.transpose().to_dense() - a.to_dense().transpose()).abs().max() == 0.0);
    }

    #[test]
    fn cgls_finds_min_norm_solution() {
        // Rank-one system: columns 0 and 1 are identical.
        let a = Csr::from_triplets(3, 3, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0), (2, 2, 2.0)]);
        let out = cgls(&a, &[2.0, 2.0, 4.0], 1e-14, 50);
        assert!((out.x[0] - 1.0).abs() < 1e-12 && (out.x[1] - 1.0).abs() < 1e-12 && (out.x[2] - 2.0).abs() < 1e-12);
        let dense = lstsq_min_norm(&a.to_dense(), &DVector::from_vec(vec![1.0, 3.0, 4.0]), 1e-12).0;
        let out = cgls(&a, &[1.0, 3.0, 4.0], 1e-14, 50);
        for i in 0..3 {
            assert!((out.x[i] - dense[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = laplacian_1d(50, 0.1);
        let chol = Cholesky::new(&a).unwrap();
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul_vec(&x_true);
        let x = chol.solve(&b);
        assert!(max_abs(&sub(&x, &x_true)) < 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Csr::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(Cholesky::new(&a).is_err());
    }

    #[test]
    fn pcg_handles_singular_consistent_system() {
        let mut a = laplacian_1d(30, 0.0);
        // Neumann ends make constants the kernel.
        a = a.add(&Csr::from_triplets(30, 30, &[(0, 0, -1.0), (29, 29, -1.0)]), 1.0, 1.0);
        let mut b: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let mean = b.iter().sum::<f64>() / 30.0;
        b.iter_mut().for_each(|v| *v -= mean);
        let ones = vec![1.0; 30];
        let out = pcg(|x| a.mul_vec(x), &b, &a.diag(), &[ones], 1e-12, 500).unwrap();
        assert!(max_abs(&sub(&a.mul_vec(&out.x), &b)) < 1e-9);
    }

    #[test]
    fn subspace_iteration_matches_dense() {
        let n = 40;
        let k = laplacian_1d(n, 0.0);
        let mdiag: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i % 3) as f64)).collect();
        let m = Csr::diagonal(&mdiag);
        let sigma = 0.01;
        let shifted = Cholesky::new(&k.add(&m, 1.0, sigma)).unwrap();
        let low = low_spectrum(n, 4, |b| shifted.solve(b), |x| k.mul_vec(x), |x| m.mul_vec(x), 1e-13, 500).unwrap();
        let (dense, _) = generalized_symmetric_eigen(&k.to_dense(), &m.to_dense()).unwrap();
        for i in 0..4 {
            assert!((low.values[i] - dense[i]).abs() < 1e-9 * dense[n - 1], "{i}: {} vs {}", low.values[i], dense[i]);
        }
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = laplacian_1d(17, 0.0);
        let mut p = rcm_ordering(&a);
        p.sort_unstable();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
    }
}
