//! Self-checks of the exact references and gradients.
//!
//! The reference computations here deliberately avoid the library's
//! recursions: Gaussian filtering is checked against direct conditioning of
//! the joint distribution, the HMM forward pass against summation over every
//! hidden path, and backward passes against central finite differences.

use std::time::Instant;

use super::ols;
use crate::error::{Error, Result};
use crate::lgssm::{gain_schedule, scalar_steady_state, KalmanFilter, LgssmParams};
use crate::models::{
    cross_entropy_loss, cross_entropy_loss_grad, mse_loss, mse_loss_grad, ContinuousModel,
    DiscreteAttention, DiscreteSsm, LinearAttention, NonSelectiveSsm, Parameters, SelectiveSsm,
};
use crate::numerics::linalg::spd_inverse;
use crate::numerics::matrix::Matrix;
use crate::numerics::rng::{domain, Rng};
use crate::numerics::sampling::sample_dirichlet;
use crate::oracle::hmm_filter;
use crate::tasks::{sample_lgssm_task, HmmParams, LgssmPriorConfig, TransitionPrior};

/// Outcome of one self-check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Measured quantity compared with the threshold.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} {}: {} (value {:e}, threshold {:e}, {:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.value,
            self.threshold,
            self.seconds
        )
    }
}

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
    loss: impl Fn(&M) -> Result<f64>,
) -> Result<f64> {
    let base = model.flatten();
    let grad = analytic.flatten();
    if base.len() != grad.len() {
        return Err(Error::Dimension("gradient and model sizes differ".into()));
    }
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut v = base.clone();
    for i in 0..base.len() {
        v[i] = base[i] + eps;
        probe.set_flat(&v)?;
        let up = loss(&probe)?;
        v[i] = base[i] - eps;
        probe.set_flat(&v)?;
        let down = loss(&probe)?;
        v[i] = base[i];
        let fd = (up - down) / (2.0 * eps);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(floor);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Filtered means and covariances of `z_1..z_T` obtained by conditioning the
/// joint Gaussian of `(z_1..z_T, x_1..x_T)` directly, with `z_0 ~ N(0, p0)`.
pub fn brute_force_filter(
    params: &LgssmParams,
    p0: &Matrix,
    xs: &[Vec<f64>],
) -> Result<Vec<(Vec<f64>, Matrix)>> {
    let d = params.state_dim();
    let m = params.obs_dim();
    let t_len = xs.len();
    let mut a_pows = vec![Matrix::identity(d)];
    for _ in 0..t_len {
        let next = params.a.matmul(a_pows.last().expect("nonempty"));
        a_pows.push(next);
    }
    // Marginal covariances Σ_t = Cov(z_t).
    let mut sigma = Vec::with_capacity(t_len + 1);
    sigma.push(p0.clone());
    for t in 1..=t_len {
        let s = params.a.sandwich(&sigma[t - 1]).add(&params.q);
        sigma.push(s);
    }
    // Cov(z_s, z_t) = A^{s-t} Σ_t for s >= t.
    let cov_zz = |s: usize, t: usize| -> Matrix {
        if s >= t {
            a_pows[s - t].matmul(&sigma[t])
        } else {
            sigma[s].matmul_t(&a_pows[t - s])
        }
    };
    let mut out = Vec::with_capacity(t_len);
    for t in 1..=t_len {
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
        let inv = spd_inverse(&sxx)?;
        let x: Vec<f64> = xs[..t].iter().flatten().copied().collect();
        let gain = szx.matmul(&inv);
        let mean = gain.matvec(&x);
        let cov = sigma[t].sub(&gain.matmul_t(&szx));
        out.push((mean, cov));
    }
    Ok(out)
}

/// Filtered posterior over the last hidden state and the log-likelihood of
/// `chars`, by summing over every hidden path.
pub fn hmm_enumerate(params: &HmmParams, chars: &[usize]) -> Result<(Vec<f64>, f64)> {
    let n = params.n_states();
    let t_len = chars.len();
    if t_len == 0 {
        return Err(Error::InvalidArgument("empty character sequence".into()));
    }
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
        // Odometer increment over paths.
        let mut i = 0;
        loop {
            if i == t_len {
                let post = joint.iter().map(|j| j / total).collect();
                return Ok((post, total.ln()));
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

fn outcome(
    name: &'static str,
    value: f64,
    threshold: f64,
    passed: bool,
    detail: String,
    start: Instant,
) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        value,
        threshold,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Kalman filter against joint-Gaussian conditioning on `systems` random
/// systems (state dim 1–3, obs dim 1–2, up to 6 steps).
pub fn check_kalman_brute_force(seed: u64, systems: usize) -> Result<CheckOutcome> {
    let start = Instant::now();
    let base = Rng::new(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut attempt = 0u64;
    while done < systems {
        let mut rng = base.substream(domain::PROBE, attempt);
        attempt += 1;
        let state_dim = 1 + (rng.next_u64() % 3) as usize;
        let obs_dim = 1 + (rng.next_u64() % 2) as usize;
        let prior = LgssmPriorConfig {
            state_dim,
            obs_dim,
            transition: if attempt.is_multiple_of(2) {
                TransitionPrior::ScaledOrthogonal
            } else {
                TransitionPrior::SymmetricSpectrum
            },
            ..Default::default()
        };
        let params = match sample_lgssm_task(&prior, &mut rng) {
            Ok(p) => p,
            // Unobservable draws are rejected by the sampler; try another.
            Err(Error::NotObservable { .. }) => continue,
            Err(e) => return Err(e),
        };
        let t_len = 1 + (rng.next_u64() % 6) as usize;
        let p0 = params.stationary_cov()?;
        let xs: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..obs_dim).map(|_| 2.0 * rng.normal()).collect())
            .collect();
        let reference = brute_force_filter(&params, &p0, &xs)?;
        let mut filter = KalmanFilter::new(&params, p0);
        for (x, (mean, cov)) in xs.iter().zip(&reference) {
            filter.update(x)?;
            let st = filter.state();
            for (a, b) in st.mean.iter().zip(mean) {
                worst = worst.max((a - b).abs());
            }
            worst = worst.max(st.cov.max_abs_diff(cov));
        }
        done += 1;
    }
    Ok(outcome(
        "kalman_vs_joint_gaussian",
        worst,
        1e-7,
        worst < 1e-7,
        format!("{systems} systems, max abs error {worst:.3e}"),
        start,
    ))
}

/// Scalar steady-state gain for `a = 0.9, c = q = r = 1` against the
/// closed-form root, and exponential convergence of the gain schedule.
pub fn check_scalar_riccati() -> Result<CheckOutcome> {
    let start = Instant::now();
    let (a, c, q, r): (f64, f64, f64, f64) = (0.9, 1.0, 1.0, 1.0);
    // Filtered-covariance fixed point: P = P⁻ r / (P⁻ + r), P⁻ = a² P + q.
    // Written in P⁻: P⁻² + (r − a² r − q) P⁻ − q r = 0.
    let b = r - a * a * r - q;
    let p_prior = (-b + (b * b + 4.0 * q * r).sqrt()) / 2.0;
    let k_closed = p_prior / (p_prior + r);
    let (_, k_lib) = scalar_steady_state(a, c, q, r);
    let params = LgssmParams::scalar(a, c, q, r);
    let schedule = gain_schedule(&params, &params.stationary_cov()?, 200, 1e-15)?;
    let gain_err = (schedule.steady[(0, 0)] - k_closed)
        .abs()
        .max((k_lib - k_closed).abs());
    let residuals: Vec<(f64, f64)> = schedule
        .gains
        .iter()
        .enumerate()
        .map(|(t, g)| ((t + 1) as f64, (g[(0, 0)] - k_closed).abs()))
        .filter(|(_, res)| *res > 1e-13)
        .map(|(t, res)| (t, res.ln()))
        .collect();
    let (slope, _, r2) = if residuals.len() >= 3 {
        ols(&residuals)?
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    let passed = gain_err < 1e-9 && (k_closed - 0.5974).abs() < 5e-5 && r2 > 0.9 && slope < 0.0;
    Ok(outcome(
        "scalar_riccati",
        gain_err,
        1e-9,
        passed,
        format!(
            "K_inf = {k_closed:.6}, |error| {gain_err:.2e}; log-residual slope {slope:.3} per step, R^2 {r2:.4} over {} steps",
            residuals.len()
        ),
        start,
    ))
}

/// Hand-built selective SSM tracking the steady-state scalar Kalman filter.
pub fn check_kalman_witness(seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let (a, c, q, r) = (0.9, 1.0, 1.0, 1.0);
    let (_, gain) = scalar_steady_state(a, c, q, r);
    let witness = SelectiveSsm::kalman_witness(a, c, gain)?;
    let params = LgssmParams::scalar(a, c, q, r);
    let p0 = params.stationary_cov()?;
    let traj = crate::lgssm::simulate(&params, 300, &p0, &mut Rng::new(seed))?;
    let preds = witness.predict(&traj.observed)?;
    let mut filter = KalmanFilter::new(&params, p0);
    let mut worst: f64 = 0.0;
    for (t, x) in traj.observed.iter().enumerate() {
        filter.update(x)?;
        if t + 1 > 50 {
            worst = worst.max((preds[t][0] - filter.predict_next_obs()[0]).abs());
        }
    }
    Ok(outcome(
        "selective_ssm_kalman_witness",
        worst,
        1e-4,
        worst < 1e-4,
        format!("max |SSM - Kalman| prediction gap over steps 51..300: {worst:.3e}"),
        start,
    ))
}

fn seq(t: usize, m: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| (0..m).map(|_| rng.normal()).collect())
        .collect()
}

fn chars(t: usize, vocab: usize, rng: &mut Rng) -> Vec<usize> {
    (0..t)
        .map(|_| (rng.next_u64() % vocab as u64) as usize)
        .collect()
}

/// Backward passes of all five models against central differences on
/// `instances` random small instances each.
pub fn check_gradients(seed: u64, instances: usize) -> Result<CheckOutcome> {
    const EPS: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut worst = [0.0f64; 5];
    for i in 0..instances {
        let mut rng = Rng::new(seed).substream(domain::PROBE, i as u64);
        let mlp = i % 2 == 1;

        let p = SelectiveSsm::init(2, 4, mlp, &mut rng)?;
        let xs = seq(9, 2, &mut rng);
        let (_, g) = mse_loss_grad(&p, &xs)?;
        worst[0] = worst[0].max(max_fd_relative_error(&p, &g, EPS, FLOOR, |m| {
            mse_loss(m, &xs)
        })?);

        let p = NonSelectiveSsm::init(2, 4, &mut rng)?;
        let (_, g) = mse_loss_grad(&p, &xs)?;
        worst[1] = worst[1].max(max_fd_relative_error(&p, &g, EPS, FLOOR, |m| {
            mse_loss(m, &xs)
        })?);

        let p = LinearAttention::init(2, 4, &mut rng)?;
        let (_, g) = mse_loss_grad(&p, &xs)?;
        worst[2] = worst[2].max(max_fd_relative_error(&p, &g, EPS, FLOOR, |m| {
            mse_loss(m, &xs)
        })?);

        let cs = chars(7, 5, &mut rng);
        let p = DiscreteSsm::init(5, 4, 3, !mlp, &mut rng)?;
        let (_, g) = cross_entropy_loss_grad(&p, &cs)?;
        worst[3] = worst[3].max(max_fd_relative_error(&p, &g, EPS, FLOOR, |m| {
            cross_entropy_loss(m, &cs)
        })?);

        let p = DiscreteAttention::init(5, 8, 4, 16, 7, &mut rng)?;
        let (_, g) = cross_entropy_loss_grad(&p, &cs)?;
        worst[4] = worst[4].max(max_fd_relative_error(&p, &g, EPS, FLOOR, |m| {
            cross_entropy_loss(m, &cs)
        })?);
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    Ok(outcome(
        "gradients_vs_finite_differences",
        max,
        TOL,
        max < TOL,
        format!(
            "{instances} instances per model; worst relative error selective {:.1e}, non-selective {:.1e}, linear-attention {:.1e}, discrete-ssm {:.1e}, discrete-attention {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
        start,
    ))
}

/// Forward algorithm against path enumeration on small random HMMs.
pub fn check_hmm_enumeration(seed: u64, cases: usize) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let mut rng = Rng::new(seed).substream(domain::PROBE, 1_000_000 + i as u64);
        let n = 2 + (rng.next_u64() % 2) as usize;
        let vocab = 2 + (rng.next_u64() % 3) as usize;
        let t_len = 1 + (rng.next_u64() % 6) as usize;
        let mut trans = Matrix::zeros(n, n);
        let mut emit = Matrix::zeros(n, vocab);
        for s in 0..n {
            trans
                .row_mut(s)
                .copy_from_slice(&sample_dirichlet(1.0, n, &mut rng)?);
            emit.row_mut(s)
                .copy_from_slice(&sample_dirichlet(1.0, vocab, &mut rng)?);
        }
        let init = sample_dirichlet(1.0, n, &mut rng)?;
        let params = HmmParams::new(trans, emit, init)?;
        let cs = chars(t_len, vocab, &mut rng);
        let (post, loglik) = hmm_enumerate(&params, &cs)?;
        let msg = hmm_filter(&params, &cs)?;
        for (a, b) in msg.probs.iter().zip(&post) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((msg.log_norm - loglik).abs());
    }
    Ok(outcome(
        "hmm_forward_vs_enumeration",
        worst,
        1e-10,
        worst < 1e-10,
        format!("{cases} HMMs, max abs error {worst:.3e}"),
        start,
    ))
}

/// All self-checks in a fixed order.
pub fn run_self_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        check_kalman_brute_force(seed, 50)?,
        check_scalar_riccati()?,
        check_kalman_witness(seed)?,
        check_gradients(seed, 5)?,
        check_hmm_enumeration(seed, 50)?,
    ])
}
