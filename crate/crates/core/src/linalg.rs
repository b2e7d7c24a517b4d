//! Small dense helpers shared by the model and trainer. Matrices here are
//! at most rank-sized on one side, so simple algorithms are adequate.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, sd: f64) -> Array2<f64> {
    let mut out = Array2::zeros((rows, cols));
    for x in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *x = sd * z;
    }
    out
}

/// Orthonormalizes the columns of `a` with two passes of modified
/// Gram-Schmidt. Columns that become numerically dependent are zeroed.
pub fn orthonormalize_columns(a: &Array2<f64>) -> Array2<f64> {
    let mut q = a.clone();
    let cols = q.ncols();
    for j in 0..cols {
        for _pass in 0..2 {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let qi = q.column(i).to_owned();
                q.column_mut(j).scaled_add(-proj, &qi);
            }
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if norm > 1e-12 {
            q.column_mut(j).mapv_inplace(|x| x / norm);
        } else {
            q.column_mut(j).fill(0.0);
        }
    }
    q
}

/// Eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(a: ArrayView2<f64>) -> Array1<f64> {
    symmetric_eigen(a).0
}

/// Eigenvalues and eigenvectors (as columns) of a symmetric matrix by
/// cyclic Jacobi rotations.
pub fn symmetric_eigen(a: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    let mut m = a.to_owned();
    let mut vecs = Array2::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        let scale: f64 = m.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let vkp = vecs[[k, p]];
                    let vkq = vecs[[k, q]];
                    vecs[[k, p]] = c * vkp - s * vkq;
                    vecs[[k, q]] = s * vkp + c * vkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    (m.diag().to_owned(), vecs)
}

/// Nearest matrix with orthonormal columns, `A (AᵀA)^{-1/2}`. Directions
/// with a negligible singular value are dropped.
pub fn polar_factor(a: ArrayView2<f64>) -> Array2<f64> {
    let (vals, vecs) = symmetric_eigen(a.t().dot(&a).view());
    let top = vals.iter().cloned().fold(0.0, f64::max);
    let mut inv_sqrt = Array2::zeros(vecs.dim());
    for (r, &lam) in vals.iter().enumerate() {
        if lam > 1e-24 * top.max(f64::MIN_POSITIVE) && lam > 0.0 {
            let col = vecs.column(r);
            let scale = 1.0 / lam.sqrt();
            for i in 0..col.len() {
                for j in 0..col.len() {
                    inv_sqrt[[i, j]] += scale * col[i] * col[j];
                }
            }
        }
    }
    a.dot(&inv_sqrt)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix; 0 for
/// an empty matrix.
pub fn max_eigenvalue(a: ArrayView2<f64>) -> f64 {
    symmetric_eigenvalues(a).iter().cloned().fold(0.0, f64::max)
}

pub fn frobenius_sq(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// `QᵀQ − I` for a tall matrix.
pub fn gram_minus_identity(q: ArrayView2<f64>) -> Array2<f64> {
    let mut g = q.t().dot(&q);
    for i in 0..g.nrows() {
        g[[i, i]] -= 1.0;
    }
    g
}

/// Scales column `r` of `a` by `s[r]`.
pub fn scale_columns(a: ArrayView2<f64>, s: &Array1<f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    for (mut col, &f) in out.axis_iter_mut(Axis(1)).zip(s.iter()) {
        col.mapv_inplace(|x| x * f);
    }
    out
}

pub fn all_finite<'a, I: IntoIterator<Item = &'a f64>>(values: I) -> bool {
    values.into_iter().all(|x| x.is_finite())
}
