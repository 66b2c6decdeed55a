//! Small dense factorizations: Cholesky, LU determinant, Jacobi eigenvalues,
//! Gram-Schmidt QR and the spectral radius.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::matrix::{dot, Matrix};

const SYMMETRY_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-10;

fn check_symmetric(m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let asym = m.max_asymmetry();
    if asym > SYMMETRY_TOL * m.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Lower-triangular `L` with `L L^T = m`.
///
/// Semidefinite inputs are accepted: a pivot in `[-1e-10, tiny]` yields a zero
/// column. A pivot below `-1e-10` is reported with its index.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    check_symmetric(m)?;
    let m = m.symmetrize();
    let n = m.rows();
    let scale = m
        .diagonal()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1e-300);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let s = m[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
        if s < -PIVOT_TOL {
            return Err(Error::NotPsd { index: j, value: s });
        }
        if s <= 1e-14 * scale {
            // Rank-deficient direction; the column stays zero.
            continue;
        }
        let d = s.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let v = m[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l[(i, j)] = v / d;
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L` with a nonzero diagonal.
pub fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - dot(&l.row(i)[..i], &y[..i]);
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `L^T x = y` for lower-triangular `L`.
pub fn solve_upper_t(l: &Matrix, y: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Cholesky factor of a symmetric positive definite matrix, failing on any
/// zero pivot.
pub fn cholesky_pd(m: &Matrix) -> Result<Matrix> {
    let l = cholesky(m)?;
    for (i, d) in l.diagonal().iter().enumerate() {
        if *d <= 0.0 {
            return Err(Error::NotPsd {
                index: i,
                value: 0.0,
            });
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    let l = cholesky_pd(m)?;
    let n = m.rows();
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = solve_upper_t(&l, &solve_lower(&l, &e));
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(inv.symmetrize())
}

/// Log-density of `N(x; mean, cov)` for positive definite `cov`.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], cov: &Matrix) -> Result<f64> {
    if x.len() != mean.len() || cov.rows() != x.len() {
        return Err(Error::Dimension("gaussian_log_density".into()));
    }
    let l = cholesky_pd(cov)?;
    let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let y = solve_lower(&l, &diff);
    let logdet: f64 = l.diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let n = x.len() as f64;
    Ok(-0.5 * (n * (2.0 * PI).ln() + logdet + dot(&y, &y)))
}

/// Determinant via LU with partial pivoting.
pub fn determinant(m: &Matrix) -> f64 {
    assert!(m.is_square(), "determinant of a non-square matrix");
    let n = m.rows();
    let mut a = m.clone();
    let mut det = 1.0;
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|i| (i, a[(i, k)].abs()))
            .fold(
                (k, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if pivot == 0.0 {
            return 0.0;
        }
        if p != k {
            for j in 0..n {
                let tmp = a[(k, j)];
                a[(k, j)] = a[(p, j)];
                a[(p, j)] = tmp;
            }
            det = -det;
        }
        let d = a[(k, k)];
        det *= d;
        for i in (k + 1)..n {
            let f = a[(i, k)] / d;
            for j in k..n {
                let v = a[(k, j)];
                a[(i, j)] -= f * v;
            }
        }
    }
    det
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    let n = m.rows();
    let mut a = m.symmetrize();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off <= 1e-30 * a.frobenius().powi(2).max(1e-300) {
            let mut ev = a.diagonal();
            ev.sort_by(|x, y| x.total_cmp(y));
            return Ok(ev);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let residual = a.max_asymmetry().max(
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .fold(0.0f64, |w, (i, j)| w.max(a[(i, j)].abs())),
    );
    Err(Error::NoConvergence(residual))
}

/// Singular values of `m`, descending, from the eigenvalues of `m^T m`.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    let gram = m.transpose().matmul(m).symmetrize();
    let mut sv: Vec<f64> = sym_eigenvalues(&gram)?
        .into_iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    sv.reverse();
    Ok(sv)
}

/// Thin QR of a square matrix by modified Gram-Schmidt with one
/// re-orthogonalization pass. `R` has a nonnegative diagonal.
pub fn qr_gram_schmidt(m: &Matrix) -> (Matrix, Matrix) {
    assert!(m.is_square(), "qr_gram_schmidt expects a square matrix");
    let n = m.rows();
    let mut q_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut r = Matrix::zeros(n, n);
    for j in 0..n {
        let mut v = m.column(j);
        for _pass in 0..2 {
            for (i, qi) in q_cols.iter().enumerate() {
                let proj = dot(qi, &v);
                r[(i, j)] += proj;
                for (vk, qk) in v.iter_mut().zip(qi) {
                    *vk -= proj * qk;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        r[(j, j)] = norm;
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        q_cols.push(v);
    }
    let mut q = Matrix::zeros(n, n);
    for (j, col) in q_cols.iter().enumerate() {
        for i in 0..n {
            q[(i, j)] = col[i];
        }
    }
    (q, r)
}

/// Largest eigenvalue magnitude of a square matrix, via a real Schur form.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension(
            "spectral_radius needs a square matrix".into(),
        ));
    }
    let n = m.rows();
    let dm = nalgebra::DMatrix::from_row_slice(n, n, m.as_slice());
    let schur = nalgebra::linalg::Schur::try_new(dm.clone(), 1e-12, 10_000)
        .ok_or_else(|| Error::NoConvergence(dm.norm()))?;
    let eig = schur.complex_eigenvalues();
    Ok(eig.iter().fold(0.0f64, |r, z| r.max(z.norm())))
}
