//! Independent reference computations shared by the integration tests:
//! central finite differences, brute-force joint-Gaussian conditioning and
//! HMM path enumeration. None of them reuse the library's recursions.
#![allow(dead_code)]

use ssmlab::lgssm::LgssmParams;
use ssmlab::models::Parameters;
use ssmlab::numerics::linalg::spd_inverse;
use ssmlab::numerics::matrix::Matrix;
use ssmlab::tasks::HmmParams;

/// Largest entrywise relative error between `analytic` and a central
/// finite-difference gradient of `loss` at `model`.
///
/// Entry error is `|a - f| / max(|a|, |f|, floor)`; the floor keeps entries
/// that are zero up to rounding from dominating.
pub fn max_fd_relative_error<M: Parameters>(
    model: &M,
    analytic: &M,
    eps: f64,
    floor: f64,
    loss: impl Fn(&M) -> f64,
) -> f64 {
    let base = model.flatten();
    let grad = analytic.flatten();
    assert_eq!(base.len(), grad.len(), "gradient shape");
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] = base[i] + eps;
        probe.set_flat(&v).unwrap();
        let up = loss(&probe);
        v[i] = base[i] - eps;
        probe.set_flat(&v).unwrap();
        let down = loss(&probe);
        let fd = (up - down) / (2.0 * eps);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

/// Filtered means and covariances of `z_1..z_T` by conditioning the joint
/// Gaussian of `(z_1..z_T, x_1..x_T)` directly (no recursion).
pub fn brute_force_filter(
    params: &LgssmParams,
    p0: &Matrix,
    xs: &[Vec<f64>],
) -> Vec<(Vec<f64>, Matrix)> {
    let d = params.state_dim();
    let m = params.obs_dim();
    let t_len = xs.len();
    // Cov(z_s, z_t) for s, t in 1..=T, with z_0 ~ N(0, P0).
    let mut a_pows = vec![Matrix::identity(d)];
    for _ in 0..t_len {
        let next = params.a.matmul(a_pows.last().unwrap());
        a_pows.push(next);
    }
    // Marginal covariances Σ_t = Cov(z_t, z_t).
    let mut sigma = Vec::with_capacity(t_len + 1);
    sigma.push(p0.clone());
    for t in 1..=t_len {
        let s = params.a.sandwich(&sigma[t - 1]).add(&params.q);
        sigma.push(s);
    }
    let cov_zz = |s: usize, t: usize| -> Matrix {
        // s, t >= 1; Cov(z_s, z_t) = A^{s-t} Σ_t for s >= t.
        if s >= t {
            a_pows[s - t].matmul(&sigma[t])
        } else {
            sigma[s].matmul_t(&a_pows[t - s])
        }
    };
    let mut out = Vec::with_capacity(t_len);
    for t in 1..=t_len {
        // Condition z_t on x_1..x_t.
        let n_obs = t * m;
        let mut sxx = Matrix::zeros(n_obs, n_obs);
        let mut szx = Matrix::zeros(d, n_obs);
        for i in 1..=t {
            for j in 1..=t {
                let block = params.c.matmul(&cov_zz(i, j)).matmul_t(&params.c);
                for a in 0..m {
                    for b in 0..m {
                        let mut v = block[(a, b)];
                        if i == j {
                            v += params.r[(a, b)];
                        }
                        sxx[((i - 1) * m + a, (j - 1) * m + b)] = v;
                    }
                }
            }
            let block = cov_zz(t, i).matmul_t(&params.c);
            for a in 0..d {
                for b in 0..m {
                    szx[(a, (i - 1) * m + b)] = block[(a, b)];
                }
            }
        }
        let inv = spd_inverse(&sxx).unwrap();
        let x: Vec<f64> = xs[..t].iter().flatten().cloned().collect();
        let gain = szx.matmul(&inv);
        let mean = gain.matvec(&x);
        let cov = sigma[t].sub(&gain.matmul_t(&szx));
        out.push((mean, cov));
    }
    out
}

/// Filtered posterior over the last hidden state and the log-likelihood of
/// `chars`, by summing over every hidden path.
pub fn hmm_enumerate(params: &HmmParams, chars: &[usize]) -> (Vec<f64>, f64) {
    let n = params.n_states();
    let t_len = chars.len();
    let mut joint = vec![0.0; n];
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    loop {
        let mut p = params.init[path[0]] * params.emit[(path[0], chars[0])];
        for t in 1..t_len {
            p *= params.trans[(path[t - 1], path[t])] * params.emit[(path[t], chars[t])];
        }
        joint[path[t_len - 1]] += p;
        total += p;
        // Odometer increment.
        let mut i = 0;
        loop {
            if i == t_len {
                let post = joint.iter().map(|j| j / total).collect();
                return (post, total.ln());
            }
            path[i] += 1;
            if path[i] < n {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}
