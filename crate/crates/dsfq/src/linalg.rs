//! Dense and sparse linear-algebra helpers shared by the physics modules.

use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub(crate) const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Largest |M - M^dag| element.
pub fn hermiticity_defect(m: MatRef<'_, C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Largest element modulus.
pub fn max_abs(m: MatRef<'_, C64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            worst = worst.max(m[(i, j)].norm());
        }
    }
    worst
}

/// Full Hermitian eigendecomposition, eigenvalues ascending.
pub fn eigh(m: MatRef<'_, C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let values = (0..m.nrows()).map(|i| s[i].re).collect();
    Ok((values, evd.U().to_owned()))
}

/// Real symmetric eigendecomposition, eigenvalues ascending.
pub fn eigh_real(m: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let values = (0..m.nrows()).map(|i| s[i]).collect();
    Ok((values, evd.U().to_owned()))
}

/// exp(-i G t) for Hermitian G.
pub fn expm_neg_i_hermitian(g: MatRef<'_, C64>, t: f64) -> Result<Mat<C64>> {
    let (w, v) = eigh(g)?;
    let n = g.nrows();
    let mut scaled = v.clone();
    for j in 0..n {
        let phase = C64::from_polar(1.0, -w[j] * t);
        for i in 0..n {
            scaled[(i, j)] *= phase;
        }
    }
    Ok(&scaled * v.adjoint())
}

/// Unitary polar factor U V^dag of a square matrix.
pub fn polar_unitary(m: MatRef<'_, C64>) -> Result<Mat<C64>> {
    let svd = m.svd().map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    Ok(svd.U() * svd.V().adjoint())
}

/// Largest |U^dag U - 1| element.
pub fn unitarity_defect(u: MatRef<'_, C64>) -> f64 {
    let p = u.adjoint() * u;
    let mut worst = 0.0f64;
    for j in 0..p.ncols() {
        for i in 0..p.nrows() {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((p[(i, j)] - target).norm());
        }
    }
    worst
}

pub(crate) fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn column(m: MatRef<'_, C64>, j: usize) -> Vec<C64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    /// Keeps entries with modulus above `tol`.
    pub fn from_dense(m: MatRef<'_, C64>, tol: f64) -> Self {
        let n = m.nrows();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..n {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v.norm() > tol {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self { n, indptr, indices, values }
    }

    /// Restriction to a subset of rows and columns (same index list).
    pub fn from_dense_restricted(m: MatRef<'_, C64>, keep: &[usize], tol: f64) -> Self {
        let mut pos = vec![usize::MAX; m.nrows()];
        for (k, &i) in keep.iter().enumerate() {
            pos[i] = k;
        }
        let mut indptr = Vec::with_capacity(keep.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &i in keep {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if pos[j] != usize::MAX && v.norm() > tol {
                    indices.push(pos[j]);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self { n: keep.len(), indptr, indices, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row-sum bound on the operator 2-norm.
    pub fn norm_bound(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.values[self.indptr[i]..self.indptr[i + 1]]
                    .iter()
                    .map(|v| v.norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// y = A x
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        for i in 0..self.n {
            let mut acc = ZERO;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[i] = acc;
        }
    }

    /// y += s A x
    pub fn matvec_add(&self, s: C64, x: &[C64], y: &mut [C64]) {
        for i in 0..self.n {
            let mut acc = ZERO;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[i] += s * acc;
        }
    }
}

/// Lowest `k` eigenpairs of a sparse Hermitian matrix by Lanczos with full
/// reorthogonalisation. The Krylov space grows until every retained Ritz
/// pair has residual below `tol * ||A||`.
pub fn lanczos_lowest(a: &CsrMatrix, k: usize, tol: f64) -> Result<(Vec<f64>, Mat<C64>)> {
    let n = a.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k={k} outside 1..={n}")));
    }
    let scale = a.norm_bound().max(1e-300);
    let mut m = n.min((4 * k).max(80));
    loop {
        let mut q: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        let mut start: Vec<C64> = (0..n)
            .map(|i| C64::new(1.0 + (0.37 * i as f64).sin(), 0.5 * (1.3 * i as f64).cos()))
            .collect();
        let s = norm(&start);
        start.iter_mut().for_each(|x| *x /= s);
        q.push(start);
        let mut alpha = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        let mut w = vec![ZERO; n];
        for j in 0..m {
            a.matvec(&q[j], &mut w);
            alpha.push(dot(&q[j], &w).re);
            for _ in 0..2 {
                for qi in &q {
                    let c = dot(qi, &w);
                    w.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b = norm(&w);
            beta.push(b);
            if b < 1e-13 * scale || j + 1 == m {
                break;
            }
            q.push(w.iter().map(|x| x / b).collect());
        }
        let steps = alpha.len();
        let t = Mat::<f64>::from_fn(steps, steps, |i, j| {
            if i == j {
                alpha[i]
            } else if i == j + 1 {
                beta[j]
            } else if j == i + 1 {
                beta[i]
            } else {
                0.0
            }
        });
        let (theta, s) = eigh_real(t.as_ref())?;
        let kk = k.min(steps);
        let last = beta[steps - 1];
        let converged = (0..kk).all(|i| (last * s[(steps - 1, i)]).abs() <= tol * scale);
        if (converged && kk == k) || steps == n || m == n {
            let mut vecs = Mat::<C64>::zeros(n, kk);
            for c in 0..kk {
                for (r, qr) in q.iter().enumerate().take(steps) {
                    let coef = s[(r, c)];
                    for i in 0..n {
                        vecs[(i, c)] += qr[i] * coef;
                    }
                }
            }
            if kk < k {
                return Err(Error::Eigensolver(format!(
                    "Krylov space exhausted after {steps} steps with {kk} of {k} pairs"
                )));
            }
            return Ok((theta[..k].to_vec(), vecs));
        }
        m = n.min(2 * m);
    }
}
