//! Linear Gaussian state-space models: simulation, exact Kalman filtering,
//! Riccati gain schedules, likelihoods and AR(1)-noise state augmentation.
//!
//! Conventions: `z_0 ~ N(0, P0)` is the state before the first observation,
//! and observation `x_t` sees `z_t = A z_{t-1} + w_t`. A [`FilterState`] holds
//! `(E[z_t | x_1..t], Cov[z_t | x_1..t])`; the initial state is `(0, P0)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::linalg::{cholesky, singular_values, spd_inverse, sym_eigenvalues};
use crate::numerics::matrix::{dot, sub_vec, Matrix};
use crate::numerics::rng::Rng;
use crate::numerics::sampling::gaussian_from_factor;

const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Observation-noise jitter added by [`augment_ar1`]; the augmented system
/// observes its state exactly.
pub const AUGMENTED_OBS_JITTER: f64 = 1e-10;

/// Task parameters `(A, C, Q, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LgssmParams {
    pub a: Matrix,
    pub c: Matrix,
    pub q: Matrix,
    pub r: Matrix,
}

impl LgssmParams {
    pub fn new(a: Matrix, c: Matrix, q: Matrix, r: Matrix) -> Result<Self> {
        let d = a.rows();
        let m = c.rows();
        if !a.is_square() || c.cols() != d || q.shape() != (d, d) || r.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "A {:?}, C {:?}, Q {:?}, R {:?}",
                a.shape(),
                c.shape(),
                q.shape(),
                r.shape()
            )));
        }
        for (name, cov) in [("Q", &q), ("R", &r)] {
            let asym = cov.max_asymmetry();
            if asym > 1e-10 * cov.max_abs().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} is not symmetric ({asym:e})"
                )));
            }
        }
        if ![&a, &c, &q, &r].iter().all(|m| m.is_finite()) {
            return Err(Error::InvalidArgument("non-finite task parameter".into()));
        }
        Ok(LgssmParams {
            a,
            c,
            q: q.symmetrize(),
            r: r.symmetrize(),
        })
    }

    /// One-dimensional state and observation.
    pub fn scalar(a: f64, c: f64, q: f64, r: f64) -> Self {
        LgssmParams {
            a: Matrix::scalar(a),
            c: Matrix::scalar(c),
            q: Matrix::scalar(q),
            r: Matrix::scalar(r),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.rows()
    }

    /// Stacked `[C; CA; ...; CA^{d-1}]`.
    pub fn observability_matrix(&self) -> Matrix {
        let d = self.state_dim();
        let m = self.obs_dim();
        let mut out = Matrix::zeros(m * d, d);
        let mut block = self.c.clone();
        for k in 0..d {
            for i in 0..m {
                out.row_mut(k * m + i).copy_from_slice(block.row(i));
            }
            block = block.matmul(&self.a);
        }
        out
    }

    /// Numerical rank of the observability matrix, counting singular values
    /// above `1e-8 * sigma_max`.
    pub fn observability_rank(&self) -> Result<usize> {
        let sv = singular_values(&self.observability_matrix())?;
        let top = sv.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return Ok(0);
        }
        Ok(sv.iter().filter(|s| **s > 1e-8 * top).count())
    }

    pub fn check_observable(&self) -> Result<()> {
        let rank = self.observability_rank()?;
        if rank < self.state_dim() {
            return Err(Error::NotObservable {
                rank,
                dim: self.state_dim(),
            });
        }
        Ok(())
    }

    /// Stationary state covariance solving `P = A P A^T + Q`.
    pub fn stationary_cov(&self) -> Result<Matrix> {
        stationary_cov(&self.a, &self.q)
    }
}

/// Solves `P = A P A^T + Q` by the doubling iteration
/// `P <- P + A_k P A_k^T`, `A_k <- A_k^2`, which sums `2^k` terms of the
/// series per step. Fails when `A` is not stable.
pub fn stationary_cov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    let mut p = q.symmetrize();
    let mut ak = a.clone();
    for _ in 0..64 {
        let next = p.add(&ak.sandwich(&p)).symmetrize();
        let change = next.max_abs_diff(&p);
        p = next;
        ak = ak.matmul(&ak);
        if change <= 1e-12 * p.max_abs().max(1.0) && ak.max_abs() < 1e-6 {
            return Ok(p);
        }
        if !p.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence(ak.max_abs()))
}

/// Posterior mean and covariance of the latent state after `step`
/// observations.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub step: usize,
}

impl FilterState {
    /// Zero-mean prior with covariance `p0`.
    pub fn prior(p0: Matrix) -> Self {
        FilterState {
            mean: vec![0.0; p0.rows()],
            cov: p0,
            step: 0,
        }
    }
}

/// Result of one filter update.
#[derive(Clone, Debug)]
pub struct KalmanStep {
    pub state: FilterState,
    /// `C zhat^-`, the one-step prediction made before seeing `x`.
    pub predicted_obs: Vec<f64>,
    pub innovation_cov: Matrix,
    pub gain: Matrix,
    /// `log N(x; C zhat^-, S)`.
    pub log_density: f64,
}

fn check_condition(s: &Matrix) -> Result<()> {
    if s.rows() == 1 {
        if !(s[(0, 0)] > 0.0) || !s[(0, 0)].is_finite() {
            return Err(Error::SingularInnovation(f64::INFINITY));
        }
        return Ok(());
    }
    let ev = sym_eigenvalues(s)?;
    let lo = ev[0];
    let hi = *ev.last().unwrap();
    if lo <= 0.0 || hi / lo > MAX_INNOVATION_CONDITION {
        let cond = if lo <= 0.0 { f64::INFINITY } else { hi / lo };
        return Err(Error::SingularInnovation(cond));
    }
    Ok(())
}

/// Predict then update with observation `x`.
pub fn kalman_step(params: &LgssmParams, state: &FilterState, x: &[f64]) -> Result<KalmanStep> {
    let d = params.state_dim();
    let m = params.obs_dim();
    if state.mean.len() != d || state.cov.shape() != (d, d) || x.len() != m {
        return Err(Error::Dimension(format!(
            "filter state of dim {} / obs of dim {} for a ({d},{m}) system",
            state.mean.len(),
            x.len()
        )));
    }
    let mean_prior = params.a.matvec(&state.mean);
    let cov_prior = params.a.sandwich(&state.cov).add(&params.q).symmetrize();
    let pct = cov_prior.matmul_t(&params.c);
    let s = params.c.matmul(&pct).add(&params.r).symmetrize();
    check_condition(&s)?;
    let s_inv = spd_inverse(&s)?;
    let gain = pct.matmul(&s_inv);

    let predicted_obs = params.c.matvec(&mean_prior);
    let innovation = sub_vec(x, &predicted_obs);
    let mut mean = mean_prior;
    for (i, mi) in mean.iter_mut().enumerate() {
        *mi += dot(gain.row(i), &innovation);
    }
    // (I - K C) P^-  ==  P^- - K (C P^-)
    let cov = cov_prior.sub(&gain.matmul_t(&pct)).symmetrize();

    let l = cholesky(&s)?;
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let maha = dot(&innovation, &s_inv.matvec(&innovation));
    let log_density = -0.5 * (m as f64 * (2.0 * PI).ln() + logdet + maha);

    Ok(KalmanStep {
        state: FilterState {
            mean,
            cov,
            step: state.step + 1,
        },
        predicted_obs,
        innovation_cov: s,
        gain,
        log_density,
    })
}

/// `C A zhat_{t|t}`: conditional mean of the next observation.
pub fn predict_next_obs(params: &LgssmParams, state: &FilterState) -> Vec<f64> {
    params.c.matvec(&params.a.matvec(&state.mean))
}

/// Covariance of the next observation given the filter state:
/// `C (A P A^T + Q) C^T + R`.
pub fn predictive_obs_cov(params: &LgssmParams, state: &FilterState) -> Matrix {
    let p = params.a.sandwich(&state.cov).add(&params.q);
    params.c.sandwich(&p).add(&params.r).symmetrize()
}

/// Stateful wrapper that runs the filter over a stream and accumulates the
/// log-likelihood.
#[derive(Clone, Debug)]
pub struct KalmanFilter<'a> {
    params: &'a LgssmParams,
    state: FilterState,
    log_likelihood: f64,
}

impl<'a> KalmanFilter<'a> {
    pub fn new(params: &'a LgssmParams, p0: Matrix) -> Self {
        KalmanFilter {
            params,
            state: FilterState::prior(p0),
            log_likelihood: 0.0,
        }
    }

    /// Filter started from the stationary covariance.
    pub fn stationary(params: &'a LgssmParams) -> Result<Self> {
        Ok(KalmanFilter::new(params, params.stationary_cov()?))
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        let step = kalman_step(self.params, &self.state, x)?;
        self.log_likelihood += step.log_density;
        self.state = step.state;
        Ok(())
    }

    pub fn run(&mut self, xs: &[Vec<f64>]) -> Result<()> {
        xs.iter().try_for_each(|x| self.update(x))
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn predict_next_obs(&self) -> Vec<f64> {
        predict_next_obs(self.params, &self.state)
    }

    pub fn predictive_cov(&self) -> Matrix {
        predictive_obs_cov(self.params, &self.state)
    }
}

/// Latent and observed sequences of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub latent: Vec<Vec<f64>>,
    pub observed: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }
}

/// Samples `z_0 ~ N(0, z0_cov)` and `len` steps of the model.
pub fn simulate(
    params: &LgssmParams,
    len: usize,
    z0_cov: &Matrix,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let d = params.state_dim();
    let m = params.obs_dim();
    if len == 0 {
        return Err(Error::InvalidArgument("trajectory length 0".into()));
    }
    if z0_cov.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "z0 covariance {:?} for state dim {d}",
            z0_cov.shape()
        )));
    }
    let l0 = cholesky(z0_cov)?;
    let lq = cholesky(&params.q)?;
    let lr = cholesky(&params.r)?;
    let zeros_d = vec![0.0; d];
    let zeros_m = vec![0.0; m];
    let mut z = gaussian_from_factor(&zeros_d, &l0, rng);
    let mut latent = Vec::with_capacity(len);
    let mut observed = Vec::with_capacity(len);
    for _ in 0..len {
        let w = gaussian_from_factor(&zeros_d, &lq, rng);
        z = params.a.matvec(&z);
        z.iter_mut().zip(&w).for_each(|(zi, wi)| *zi += wi);
        let mut x = params.c.matvec(&z);
        let v = gaussian_from_factor(&zeros_m, &lr, rng);
        x.iter_mut().zip(&v).for_each(|(xi, vi)| *xi += vi);
        latent.push(z.clone());
        observed.push(x);
    }
    Ok(Trajectory { latent, observed })
}

/// Sum of innovation log-densities (prediction-error decomposition).
pub fn log_likelihood(params: &LgssmParams, xs: &[Vec<f64>], p0: &Matrix) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("empty observation sequence".into()));
    }
    let mut filter = KalmanFilter::new(params, p0.clone());
    filter.run(xs)?;
    Ok(filter.log_likelihood())
}

/// Kalman gains `K_1..K_T` from the Riccati recursion.
#[derive(Clone, Debug)]
pub struct GainSchedule {
    pub gains: Vec<Matrix>,
    pub steady: Matrix,
    /// Whether successive gains came within `tol` before the horizon.
    pub converged: bool,
}

impl GainSchedule {
    /// Filtered-form transition `(I - K_t C) A`, so that
    /// `zhat_{t|t} = (I - K_t C) A zhat_{t-1|t-1} + K_t x_t`. `t` is 1-based.
    pub fn filtered_transition(&self, params: &LgssmParams, t: usize) -> Matrix {
        let k = &self.gains[t - 1];
        let d = params.state_dim();
        Matrix::identity(d)
            .sub(&k.matmul(&params.c))
            .matmul(&params.a)
    }

    /// Predictor-form gain `A K_t`.
    pub fn predictor_gain(&self, params: &LgssmParams, t: usize) -> Matrix {
        params.a.matmul(&self.gains[t - 1])
    }

    /// Predictor-form transition `A - (A K_t) C`, so that
    /// `zhat_{t+1|t} = (A - A K_t C) zhat_{t|t-1} + A K_t x_t`.
    pub fn predictor_transition(&self, params: &LgssmParams, t: usize) -> Matrix {
        params
            .a
            .sub(&self.predictor_gain(params, t).matmul(&params.c))
    }
}

pub fn gain_schedule(
    params: &LgssmParams,
    p0: &Matrix,
    len: usize,
    tol: f64,
) -> Result<GainSchedule> {
    params.check_observable()?;
    if len == 0 {
        return Err(Error::InvalidArgument("gain schedule of length 0".into()));
    }
    let mut p = p0.symmetrize();
    let mut gains = Vec::with_capacity(len);
    let mut steady: Option<Matrix> = None;
    for _ in 0..len {
        let prior = params.a.sandwich(&p).add(&params.q).symmetrize();
        let pct = prior.matmul_t(&params.c);
        let s = params.c.matmul(&pct).add(&params.r).symmetrize();
        check_condition(&s)?;
        let k = pct.matmul(&spd_inverse(&s)?);
        p = prior.sub(&k.matmul_t(&pct)).symmetrize();
        if steady.is_none() {
            if let Some(last) = gains.last() {
                if k.max_abs_diff(last) < tol {
                    steady = Some(k.clone());
                }
            }
        }
        gains.push(k);
    }
    let converged = steady.is_some();
    if !converged {
        log::warn!("gain schedule did not converge within {len} steps (tol {tol:e})");
    }
    let steady = steady.unwrap_or_else(|| gains.last().unwrap().clone());
    Ok(GainSchedule {
        gains,
        steady,
        converged,
    })
}

/// Two-state system `xi_t = [z_t; v_t]` for a scalar AR(1) state observed
/// through AR(1) noise: `A = diag(a, rho)`, `Q = diag(q, 1 - rho^2)`,
/// `C = [1, 1]`, `R` = [`AUGMENTED_OBS_JITTER`].
pub fn augment_ar1(a: f64, q: f64, rho: f64) -> Result<LgssmParams> {
    if !(a.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "|a| = {} must be < 1",
            a.abs()
        )));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "|rho| = {} must be < 1",
            rho.abs()
        )));
    }
    if !(q > 0.0) {
        return Err(Error::InvalidArgument(format!("q = {q} must be > 0")));
    }
    LgssmParams::new(
        Matrix::diag(&[a, rho]),
        Matrix::row_vector(&[1.0, 1.0]),
        Matrix::diag(&[q, 1.0 - rho * rho]),
        Matrix::scalar(AUGMENTED_OBS_JITTER),
    )
}

/// Positive root of the scalar prior-covariance Riccati equation
/// `P = a^2 P r / (P + r) + q` written in terms of `P^-`, and the matching
/// filtered gain `P^- c / (c^2 P^- + r)`.
pub fn scalar_steady_state(a: f64, c: f64, q: f64, r: f64) -> (f64, f64) {
    // c^2 P^2 + (r - a^2 r - q c^2) P - q r = 0
    let qa = c * c;
    let qb = r - a * a * r - q * c * c;
    let qc = -q * r;
    let p = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
    (p, p * c / (c * c * p + r))
}
