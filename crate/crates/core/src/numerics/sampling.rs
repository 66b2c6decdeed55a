use crate::error::{Error, Result};
use crate::numerics::linalg::{cholesky, qr_gram_schmidt};
use crate::numerics::matrix::Matrix;
use crate::numerics::rng::Rng;

/// Draw from `N(mean, cov)` as `mean + L eps`.
pub fn sample_gaussian_vec(mean: &[f64], cov: &Matrix, rng: &mut Rng) -> Result<Vec<f64>> {
    if cov.rows() != mean.len() || cov.cols() != mean.len() {
        return Err(Error::Dimension(format!(
            "mean of length {} with {}x{} covariance",
            mean.len(),
            cov.rows(),
            cov.cols()
        )));
    }
    let l = cholesky(cov)?;
    Ok(gaussian_from_factor(mean, &l, rng))
}

/// Same as [`sample_gaussian_vec`] with a precomputed Cholesky factor.
pub fn gaussian_from_factor(mean: &[f64], chol: &Matrix, rng: &mut Rng) -> Vec<f64> {
    let eps: Vec<f64> = (0..mean.len()).map(|_| rng.normal()).collect();
    let mut out = mean.to_vec();
    for i in 0..mean.len() {
        for j in 0..=i {
            out[i] += chol[(i, j)] * eps[j];
        }
    }
    out
}

pub fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).expect("finite normals")
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// diagonal of `R` fixed positive.
pub fn sample_orthogonal(dim: usize, rng: &mut Rng) -> Result<Matrix> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "orthogonal matrix of dimension 0".into(),
        ));
    }
    let g = standard_normal_matrix(dim, dim, rng);
    let (q, _r) = qr_gram_schmidt(&g);
    Ok(q)
}

/// Symmetric Dirichlet draw on the `dim - 1` simplex via normalized Gamma
/// variates, computed in log space.
pub fn sample_dirichlet(alpha: f64, dim: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("dirichlet alpha {alpha}")));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("dirichlet of dimension 0".into()));
    }
    let logs: Vec<f64> = (0..dim).map(|_| rng.log_gamma_draw(alpha)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    normalize_in_place(&mut p);
    Ok(p)
}

/// Scales a nonnegative vector to sum to one; the largest entry absorbs the
/// rounding residual so the stored sum is as close to 1 as `f64` allows.
pub fn normalize_in_place(p: &mut [f64]) {
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    let residual = 1.0 - p.iter().sum::<f64>();
    if let Some((imax, _)) = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
        p[imax] += residual;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::determinant;

    #[test]
    fn zero_covariance_returns_mean() {
        let mut rng = Rng::new(0);
        let x = sample_gaussian_vec(&[1.5, -2.0], &Matrix::zeros(2, 2), &mut rng).unwrap();
        assert_eq!(x, vec![1.5, -2.0]);
    }

    #[test]
    fn gaussian_sample_mean_is_near_zero() {
        let mut rng = Rng::new(11);
        let n = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let x = sample_gaussian_vec(&[0.0, 0.0], &Matrix::identity(2), &mut rng).unwrap();
            sum[0] += x[0];
            sum[1] += x[1];
        }
        for s in sum {
            assert!((s / n as f64).abs() < 0.02);
        }
    }

    #[test]
    fn gaussian_is_deterministic_for_a_seed() {
        let cov = Matrix::from_rows(&[&[2.0, 0.3], &[0.3, 1.0]]);
        let a = sample_gaussian_vec(&[0.0, 1.0], &cov, &mut Rng::new(42)).unwrap();
        let b = sample_gaussian_vec(&[0.0, 1.0], &cov, &mut Rng::new(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_rejects_dimension_mismatch() {
        let mut rng = Rng::new(0);
        assert!(sample_gaussian_vec(&[0.0], &Matrix::identity(2), &mut rng).is_err());
    }

    #[test]
    fn orthogonal_examples() {
        let mut rng = Rng::new(5);
        let q1 = sample_orthogonal(1, &mut rng).unwrap();
        assert!((q1[(0, 0)].abs() - 1.0).abs() < 1e-15);
        for _ in 0..20 {
            let q = sample_orthogonal(4, &mut rng).unwrap();
            let err = q.transpose().matmul(&q).max_abs_diff(&Matrix::identity(4));
            assert!(err < 1e-9);
            assert!((determinant(&q).abs() - 1.0).abs() < 1e-8);
        }
        assert!(sample_orthogonal(0, &mut rng).is_err());
    }

    #[test]
    fn orthogonal_entries_are_centered() {
        let mut rng = Rng::new(9);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| sample_orthogonal(3, &mut rng).unwrap()[(0, 0)])
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn dirichlet_examples() {
        let mut rng = Rng::new(2);
        let p = sample_dirichlet(1e6, 4, &mut rng).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 0.01));
        assert_eq!(sample_dirichlet(0.3, 1, &mut rng).unwrap(), vec![1.0]);
        assert!(sample_dirichlet(0.0, 3, &mut rng).is_err());
        assert!(sample_dirichlet(-1.0, 3, &mut rng).is_err());
    }

    #[test]
    fn sparse_dirichlet_concentrates() {
        let mut rng = Rng::new(4);
        let hits = (0..100)
            .filter(|_| {
                let p = sample_dirichlet(0.1, 50, &mut rng).unwrap();
                p.iter().cloned().fold(0.0, f64::max) > 0.2
            })
            .count();
        // P(max > 0.2) ~ 0.88 per draw by simulation; a uniform row has max 0.02.
        assert!(hits >= 80, "hits {hits}");
    }

    #[test]
    fn tiny_alpha_stays_on_simplex() {
        let mut rng = Rng::new(8);
        for _ in 0..200 {
            let p = sample_dirichlet(0.01, 100, &mut rng).unwrap();
            assert!(p.iter().all(|v| *v >= 0.0 && v.is_finite()));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
