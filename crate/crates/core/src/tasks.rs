//! Meta-learning task distributions: the generic LG-SSM prior, the scalar
//! correlated-noise family, and random HMM "text" tasks.

use crate::error::{Error, Result};
use crate::lgssm::{augment_ar1, LgssmParams, Trajectory};
use crate::numerics::matrix::Matrix;
use crate::numerics::rng::Rng;
use crate::numerics::sampling::{sample_dirichlet, sample_orthogonal, standard_normal_matrix};

/// How the transition matrix is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TransitionPrior {
    /// `A = U diag(lambda) U^T` with Haar `U` and `lambda_i ~ U[eig_lo, eig_hi]`.
    /// This always yields a symmetric `A`.
    #[default]
    SymmetricSpectrum,
    /// `A = s U` with Haar `U` and a single scale `s ~ U[eig_lo, eig_hi]`;
    /// every eigenvalue has modulus `s`.
    ScaledOrthogonal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LgssmPriorConfig {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub eig_lo: f64,
    pub eig_hi: f64,
    pub q_log_lo: f64,
    pub q_log_hi: f64,
    pub r_log_lo: f64,
    pub r_log_hi: f64,
    pub transition: TransitionPrior,
}

impl Default for LgssmPriorConfig {
    fn default() -> Self {
        LgssmPriorConfig {
            state_dim: 4,
            obs_dim: 2,
            eig_lo: 0.7,
            eig_hi: 0.95,
            q_log_lo: 0.1f64.ln(),
            q_log_hi: 1.0f64.ln(),
            r_log_lo: 0.05f64.ln(),
            r_log_hi: 0.5f64.ln(),
            transition: TransitionPrior::SymmetricSpectrum,
        }
    }
}

impl LgssmPriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.obs_dim == 0 {
            return Err(Error::Config(
                "state and observation dims must be positive".into(),
            ));
        }
        if !(0.0 < self.eig_lo && self.eig_lo <= self.eig_hi && self.eig_hi < 1.0) {
            return Err(Error::Config(format!(
                "eigenvalue range [{}, {}] must satisfy 0 < lo <= hi < 1",
                self.eig_lo, self.eig_hi
            )));
        }
        if self.q_log_lo > self.q_log_hi || self.r_log_lo > self.r_log_hi {
            return Err(Error::Config("log-variance bounds out of order".into()));
        }
        Ok(())
    }
}

fn random_covariance(dim: usize, log_lo: f64, log_hi: f64, rng: &mut Rng) -> Result<Matrix> {
    let v = sample_orthogonal(dim, rng)?;
    let diag: Vec<f64> = (0..dim)
        .map(|_| rng.uniform_range(log_lo, log_hi).exp())
        .collect();
    Ok(v.matmul(&Matrix::diag(&diag)).matmul_t(&v).symmetrize())
}

/// Draws `(A, C, Q, R)` from the LG-SSM prior. An unobservable draw is
/// reported as an error rather than silently redrawn.
pub fn sample_lgssm_task(cfg: &LgssmPriorConfig, rng: &mut Rng) -> Result<LgssmParams> {
    cfg.validate()?;
    let d = cfg.state_dim;
    let u = sample_orthogonal(d, rng)?;
    let a = match cfg.transition {
        TransitionPrior::SymmetricSpectrum => {
            let lambda: Vec<f64> = (0..d)
                .map(|_| rng.uniform_range(cfg.eig_lo, cfg.eig_hi))
                .collect();
            u.matmul(&Matrix::diag(&lambda)).matmul_t(&u)
        }
        TransitionPrior::ScaledOrthogonal => u.scale(rng.uniform_range(cfg.eig_lo, cfg.eig_hi)),
    };
    let c = standard_normal_matrix(cfg.obs_dim, d, rng);
    let q = random_covariance(d, cfg.q_log_lo, cfg.q_log_hi, rng)?;
    let r = random_covariance(cfg.obs_dim, cfg.r_log_lo, cfg.r_log_hi, rng)?;
    let params = LgssmParams::new(a, c, q, r)?;
    params.check_observable()?;
    Ok(params)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrNoiseConfig {
    pub a: f64,
    pub q: f64,
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub eval_rho: f64,
}

impl Default for CorrNoiseConfig {
    fn default() -> Self {
        CorrNoiseConfig {
            a: 0.9,
            q: 1.0,
            rho_lo: 0.9,
            rho_hi: 0.99,
            eval_rho: 0.95,
        }
    }
}

impl CorrNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.rho_lo && self.rho_lo <= self.rho_hi && self.rho_hi < 1.0) {
            return Err(Error::Config(format!(
                "rho range [{}, {}] must lie inside (0, 1)",
                self.rho_lo, self.rho_hi
            )));
        }
        if !(self.a.abs() < 1.0) || !(self.q > 0.0) {
            return Err(Error::Config("need |a| < 1 and q > 0".into()));
        }
        Ok(())
    }
}

/// Draws `rho ~ U[rho_lo, rho_hi]` (or takes the override) and returns the
/// augmented two-state system with it.
pub fn sample_corr_noise_task(
    cfg: &CorrNoiseConfig,
    rng: &mut Rng,
    rho_override: Option<f64>,
) -> Result<(LgssmParams, f64)> {
    cfg.validate()?;
    let rho = match rho_override {
        Some(r) if !(0.0..1.0).contains(&r) => {
            return Err(Error::InvalidArgument(format!(
                "rho override {r} outside [0, 1)"
            )))
        }
        Some(r) => r,
        None => rng.uniform_range(cfg.rho_lo, cfg.rho_hi),
    };
    Ok((augment_ar1(cfg.a, cfg.q, rho)?, rho))
}

/// Simulates `z_t = a z_{t-1} + w_t`, `v_t = rho v_{t-1} + sqrt(1-rho^2) e_t`,
/// `x_t = z_t + v_t`, with `(z_0, v_0)` drawn from the stationary law.
/// `latent` holds `[z_t, v_t]`.
pub fn simulate_corr_noise(
    a: f64,
    q: f64,
    rho: f64,
    len: usize,
    rng: &mut Rng,
) -> Result<Trajectory> {
    if len == 0 {
        return Err(Error::InvalidArgument("trajectory length 0".into()));
    }
    if !(a.abs() < 1.0) || !(rho.abs() < 1.0) || !(q > 0.0) {
        return Err(Error::InvalidArgument(
            "need |a| < 1, |rho| < 1, q > 0".into(),
        ));
    }
    let mut z = rng.normal() * (q / (1.0 - a * a)).sqrt();
    let mut v = rng.normal();
    let innov_v = (1.0 - rho * rho).sqrt();
    let sq = q.sqrt();
    let mut latent = Vec::with_capacity(len);
    let mut observed = Vec::with_capacity(len);
    for _ in 0..len {
        z = a * z + sq * rng.normal();
        v = rho * v + innov_v * rng.normal();
        latent.push(vec![z, v]);
        observed.push(vec![z + v]);
    }
    Ok(Trajectory { latent, observed })
}

/// Discrete HMM with row-stochastic transition and emission matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmParams {
    pub trans: Matrix,
    pub emit: Matrix,
    pub init: Vec<f64>,
}

impl HmmParams {
    pub fn new(trans: Matrix, emit: Matrix, init: Vec<f64>) -> Result<Self> {
        let n = trans.rows();
        if !trans.is_square() || emit.rows() != n || init.len() != n || n == 0 {
            return Err(Error::Dimension("HMM matrices".into()));
        }
        let rows_ok = |m: &Matrix| {
            (0..m.rows()).all(|i| {
                let row = m.row(i);
                row.iter().all(|v| *v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() < 1e-12
            })
        };
        if !rows_ok(&trans) || !rows_ok(&emit) {
            return Err(Error::InvalidArgument(
                "HMM rows must be probability vectors".into(),
            ));
        }
        if init.iter().any(|v| *v < 0.0) || (init.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("HMM initial distribution".into()));
        }
        Ok(HmmParams { trans, emit, init })
    }

    pub fn n_states(&self) -> usize {
        self.trans.rows()
    }

    pub fn vocab(&self) -> usize {
        self.emit.cols()
    }

    /// Stationary distribution of the hidden chain by power iteration.
    pub fn stationary(&self, iters: usize) -> Vec<f64> {
        let mut p = self.init.clone();
        for _ in 0..iters {
            p = self.trans.t_matvec(&p);
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HmmPriorConfig {
    pub n_states: usize,
    pub vocab: usize,
    pub alpha_trans: f64,
    pub alpha_emit: f64,
}

impl Default for HmmPriorConfig {
    fn default() -> Self {
        HmmPriorConfig {
            n_states: 50,
            vocab: 100,
            alpha_trans: 0.1,
            alpha_emit: 0.05,
        }
    }
}

/// Each transition row ~ Dirichlet(alpha_trans), each emission row ~
/// Dirichlet(alpha_emit), uniform initial distribution.
pub fn sample_hmm_task(cfg: &HmmPriorConfig, rng: &mut Rng) -> Result<HmmParams> {
    if cfg.n_states == 0 || cfg.vocab == 0 {
        return Err(Error::InvalidArgument("HMM dims must be positive".into()));
    }
    let mut trans = Matrix::zeros(cfg.n_states, cfg.n_states);
    for i in 0..cfg.n_states {
        let row = sample_dirichlet(cfg.alpha_trans, cfg.n_states, rng)?;
        trans.row_mut(i).copy_from_slice(&row);
    }
    let mut emit = Matrix::zeros(cfg.n_states, cfg.vocab);
    for i in 0..cfg.n_states {
        let row = sample_dirichlet(cfg.alpha_emit, cfg.vocab, rng)?;
        emit.row_mut(i).copy_from_slice(&row);
    }
    let init = vec![1.0 / cfg.n_states as f64; cfg.n_states];
    Ok(HmmParams { trans, emit, init })
}

/// Ancestral sampling of `(states, chars)`.
pub fn simulate_hmm(
    params: &HmmParams,
    len: usize,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if len == 0 {
        return Err(Error::InvalidArgument("sequence length 0".into()));
    }
    let mut states = Vec::with_capacity(len);
    let mut chars = Vec::with_capacity(len);
    let mut s = rng.categorical(&params.init);
    for t in 0..len {
        if t > 0 {
            s = rng.categorical(params.trans.row(s));
        }
        states.push(s);
        chars.push(rng.categorical(params.emit.row(s)));
    }
    Ok((states, chars))
}
