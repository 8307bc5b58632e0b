//! Small dense linear algebra: one-sided Jacobi SVD, numeric rank, inverse.

use crate::error::{dim_err, DbaError, Result};
use crate::tensor::Tensor;

/// Relative orthogonality tolerance for a Jacobi rotation.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Singular values above `RANK_RTOL * sigma_max` count toward numeric rank.
pub const RANK_RTOL: f64 = 1e-10;

/// Thin SVD `A = U diag(s) Vᵀ`, singular values sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    /// m×k
    pub u: Tensor,
    pub s: Vec<f64>,
    /// n×k
    pub v: Tensor,
    pub sweeps: usize,
}

/// One-sided (Hestenes) Jacobi SVD of an m×n matrix.
pub fn svd(a: &Tensor) -> Svd {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
            sweeps: t.sweeps,
        };
    }
    // Columns of A and V stored contiguously.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        al += x * x;
                        be += y * y;
                        ga += x * y;
                    }
                    (al, be, ga)
                };
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (c.iter().map(|v| v * v).sum::<f64>().sqrt(), j))
        .collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0));

    let mut u = Tensor::zeros(m, n);
    let mut v = Tensor::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &(sigma, j)) in order.iter().enumerate() {
        s.push(sigma);
        for i in 0..m {
            u.set(i, k, if sigma > 0.0 { cols[j][i] / sigma } else { 0.0 });
        }
        for i in 0..n {
            v.set(i, k, vcols[j][i]);
        }
    }
    Svd { u, s, v, sweeps }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Count of singular values exceeding `RANK_RTOL * sigma_max`.
pub fn numeric_rank(singular_values: &[f64]) -> usize {
    let max = singular_values.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > RANK_RTOL * max).count()
}

pub fn matrix_rank(a: &Tensor) -> usize {
    numeric_rank(&svd(a).s)
}

/// Rank-`r` truncated factorization `(U_r, S_r, V_rᵀ)` of a square matrix.
pub fn svd_lowrank_factor(m: &Tensor, r: usize) -> Result<(Tensor, Tensor, Tensor)> {
    let n = m.rows();
    if m.shape().len() != 2 || m.cols() != n {
        return Err(dim_err("svd_lowrank_factor", m.shape(), &[n, n]));
    }
    if r == 0 || r > n {
        return Err(dim_err("svd_lowrank_factor", m.shape(), &[r]));
    }
    let full = svd(m);
    let u = full.u.slice_cols(0, r)?;
    let vt = full.v.slice_cols(0, r)?.transpose();
    let mut s = Tensor::zeros(r, r);
    for k in 0..r {
        s.set(k, k, full.s[k]);
    }
    Ok((u, s, vt))
}

/// `‖M − U S Vᵀ‖_F / ‖M‖_F` for a factorization returned by [`svd_lowrank_factor`].
pub fn relative_reconstruction_error(m: &Tensor, factors: &(Tensor, Tensor, Tensor)) -> Result<f64> {
    let (u, s, vt) = factors;
    let approx = u.matmul(s)?.matmul(vt)?;
    let norm = m.frobenius_norm();
    let diff = m.sub(&approx)?.frobenius_norm();
    Ok(if norm == 0.0 { diff } else { diff / norm })
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn inverse(a: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    if a.cols() != n {
        return Err(dim_err("inverse", a.shape(), &[n, n]));
    }
    let mut w = a.clone();
    let mut inv = Tensor::eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| w.get(i, col).abs().total_cmp(&w.get(j, col).abs()))
            .expect("non-empty range");
        if w.get(pivot, col).abs() < 1e-300 {
            return Err(DbaError::Parameter("matrix is singular".into()));
        }
        if pivot != col {
            for j in 0..n {
                let (x, y) = (w.get(col, j), w.get(pivot, j));
                w.set(col, j, y);
                w.set(pivot, j, x);
                let (x, y) = (inv.get(col, j), inv.get(pivot, j));
                inv.set(col, j, y);
                inv.set(pivot, j, x);
            }
        }
        let p = w.get(col, col);
        for j in 0..n {
            w.set(col, j, w.get(col, j) / p);
            inv.set(col, j, inv.get(col, j) / p);
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = w.get(i, col);
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                w.set(i, j, w.get(i, j) - f * w.get(col, j));
                inv.set(i, j, inv.get(i, j) - f * inv.get(col, j));
            }
        }
    }
    Ok(inv)
}
