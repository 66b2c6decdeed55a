//! Bayes-optimal reference predictors.
//!
//! * [`bayes_oracle_lgssm`]: posterior-predictive mean over the LG-SSM prior by
//!   self-normalized importance sampling with prior proposals.
//! * [`bayes_oracle_corr`] / [`CorrPath`]: the augmented two-state Kalman
//!   filter for AR(1) observation noise, with known or marginalized `rho`.
//! * [`hmm_forward_step`] / [`hmm_predict_next`]: the HMM forward algorithm.

use crate::error::{Error, Result};
use crate::lgssm::{augment_ar1, KalmanFilter, LgssmParams};
use crate::numerics::matrix::Matrix;
use crate::numerics::rng::{domain, Rng};
use crate::par::{self, Execution};
use crate::tasks::{sample_lgssm_task, HmmParams, LgssmPriorConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    pub samples: usize,
    /// Minimum effective sample size as a fraction of `samples`.
    pub resample_threshold: f64,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            samples: 1000,
            resample_threshold: 0.5,
            seed: 0,
            exec: Execution::available(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OraclePrediction {
    pub mean: Vec<f64>,
    /// `(sum w)^2 / sum w^2`.
    pub ess: f64,
    pub samples: usize,
    /// ESS stayed below the threshold after the enlarged rerun.
    pub degenerate: bool,
}

/// Self-normalized combination of per-sample `(log weight, prediction)`
/// pairs, stabilized by subtracting the largest log weight.
pub fn self_normalized_mean(weighted: &[(f64, Vec<f64>)]) -> Result<(Vec<f64>, f64)> {
    let max = weighted
        .iter()
        .map(|(l, _)| *l)
        .filter(|l| !l.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights(format!(
            "no finite log weight among {} samples",
            weighted.len()
        )));
    }
    let dim = weighted[0].1.len();
    let mut num = vec![0.0; dim];
    let (mut sw, mut sw2) = (0.0, 0.0);
    for (l, pred) in weighted {
        if l.is_nan() {
            continue;
        }
        let w = (l - max).exp();
        sw += w;
        sw2 += w * w;
        for (n, p) in num.iter_mut().zip(pred) {
            *n += w * p;
        }
    }
    num.iter_mut().for_each(|n| *n /= sw);
    Ok((num, sw * sw / sw2))
}

/// Likelihood-weighted average of known-parameter Kalman predictions over
/// parameters produced by `draw(index)`. Each draw is filtered from its
/// stationary covariance.
pub fn importance_predict<F>(
    context: &[Vec<f64>],
    samples: usize,
    exec: Execution,
    draw: F,
) -> Result<(Vec<f64>, f64)>
where
    F: Fn(usize) -> Result<LgssmParams> + Sync + Send,
{
    if context.is_empty() {
        return Err(Error::InvalidArgument("empty context".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("zero importance samples".into()));
    }
    let weighted = par::try_map_indexed(exec, samples, |s| {
        let theta = draw(s)?;
        let mut filter = KalmanFilter::stationary(&theta)?;
        filter.run(context)?;
        Ok::<_, Error>((filter.log_likelihood(), filter.predict_next_obs()))
    })?;
    self_normalized_mean(&weighted)
}

/// Posterior-predictive mean `E[x_{k+1} | x_1..k]` under the LG-SSM prior.
///
/// When the effective sample size falls below
/// `resample_threshold * samples`, the estimate is recomputed once with four
/// times as many draws; if that is still degenerate the result is flagged.
pub fn bayes_oracle_lgssm(
    context: &[Vec<f64>],
    prior: &LgssmPriorConfig,
    cfg: &OracleConfig,
) -> Result<OraclePrediction> {
    if cfg.samples == 0 {
        return Err(Error::InvalidArgument(
            "oracle needs at least one sample".into(),
        ));
    }
    let base = Rng::new(cfg.seed);
    let draw = |s: usize| sample_lgssm_task(prior, &mut base.substream(domain::ORACLE, s as u64));
    let threshold = cfg.resample_threshold * cfg.samples as f64;
    let (mean, ess) = importance_predict(context, cfg.samples, cfg.exec, draw)?;
    if ess >= threshold {
        return Ok(OraclePrediction {
            mean,
            ess,
            samples: cfg.samples,
            degenerate: false,
        });
    }
    let enlarged = 4 * cfg.samples;
    log::debug!("importance ESS {ess:.1} below {threshold:.0}; retrying with {enlarged} samples");
    let (mean, ess) = importance_predict(context, enlarged, cfg.exec, draw)?;
    let degenerate = ess < cfg.resample_threshold * enlarged as f64;
    if degenerate {
        log::debug!("importance weights remain degenerate (ESS {ess:.1} of {enlarged})");
    }
    Ok(OraclePrediction {
        mean,
        ess,
        samples: enlarged,
        degenerate,
    })
}

/// Augmented Kalman filter for `x_t = z_t + v_t` with AR(1) state and AR(1)
/// noise, specialized to two states and one observation.
#[derive(Clone, Debug)]
pub struct Ar1AugmentedFilter {
    a: f64,
    rho: f64,
    q: f64,
    qv: f64,
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    log_likelihood: f64,
}

impl Ar1AugmentedFilter {
    /// Starts from the stationary law `diag(q / (1 - a^2), 1)`.
    pub fn new(a: f64, q: f64, rho: f64) -> Result<Self> {
        // Reuse the constructor's argument checks.
        augment_ar1(a, q, rho)?;
        Ok(Ar1AugmentedFilter {
            a,
            rho,
            q,
            qv: 1.0 - rho * rho,
            mean: [0.0; 2],
            cov: [[q / (1.0 - a * a), 0.0], [0.0, 1.0]],
            log_likelihood: 0.0,
        })
    }

    fn prior(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let (a, r) = (self.a, self.rho);
        let m = [a * self.mean[0], r * self.mean[1]];
        let p = [
            [a * a * self.cov[0][0] + self.q, a * r * self.cov[0][1]],
            [a * r * self.cov[1][0], r * r * self.cov[1][1] + self.qv],
        ];
        (m, p)
    }

    pub fn update(&mut self, x: f64) {
        let (m, p) = self.prior();
        // C = [1, 1]
        let pc = [p[0][0] + p[0][1], p[1][0] + p[1][1]];
        let s = pc[0] + pc[1] + crate::lgssm::AUGMENTED_OBS_JITTER;
        let k = [pc[0] / s, pc[1] / s];
        let e = x - (m[0] + m[1]);
        self.mean = [m[0] + k[0] * e, m[1] + k[1] * e];
        let off = 0.5 * ((p[0][1] - k[0] * pc[1]) + (p[1][0] - k[1] * pc[0]));
        self.cov = [[p[0][0] - k[0] * pc[0], off], [off, p[1][1] - k[1] * pc[1]]];
        self.log_likelihood += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + e * e / s);
    }

    /// `C A xi_hat`.
    pub fn predict_next(&self) -> f64 {
        self.a * self.mean[0] + self.rho * self.mean[1]
    }

    /// Variance of the next observation given the data so far.
    pub fn predictive_var(&self) -> f64 {
        let (_, p) = self.prior();
        p[0][0] + p[0][1] + p[1][0] + p[1][1] + crate::lgssm::AUGMENTED_OBS_JITTER
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }
}

/// Known-`rho` oracle: the augmented filter's prediction of `x_{k+1}`.
pub fn bayes_oracle_corr(context: &[f64], rho: f64, a: f64, q: f64) -> Result<f64> {
    let params = augment_ar1(a, q, rho)?;
    let mut filter = KalmanFilter::stationary(&params)?;
    for x in context {
        filter.update(&[*x])?;
    }
    Ok(filter.predict_next_obs()[0])
}

/// Quadrature grid over `rho ~ U[lo, hi]` with trapezoid weights.
#[derive(Clone, Debug, PartialEq)]
pub struct RhoGrid {
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl RhoGrid {
    pub fn uniform(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points == 0 || !(lo <= hi) {
            return Err(Error::InvalidArgument("rho grid".into()));
        }
        if points == 1 || lo == hi {
            return Ok(RhoGrid {
                nodes: vec![0.5 * (lo + hi)],
                log_weights: vec![0.0],
            });
        }
        let step = (hi - lo) / (points - 1) as f64;
        let nodes = (0..points).map(|i| lo + step * i as f64).collect();
        let log_weights = (0..points)
            .map(|i| {
                if i == 0 || i == points - 1 {
                    0.5f64.ln()
                } else {
                    0.0
                }
            })
            .collect();
        Ok(RhoGrid { nodes, log_weights })
    }
}

/// Predictions along one observation stream, for every prefix length.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrPath {
    /// `known[k-1]`: known-`rho` prediction of `x_{k+1}` from `x_1..k`.
    pub known: Vec<f64>,
    /// Predictive variance of `x_{k+1}` under the known-`rho` filter.
    pub known_var: Vec<f64>,
    /// Prediction that integrates `rho` over the grid, if requested.
    pub marginal: Option<Vec<f64>>,
}

/// Runs the known-`rho` filter (and optionally the grid-marginalized one) over
/// `xs`, recording the prediction after every observation.
pub fn corr_path(xs: &[f64], a: f64, q: f64, rho: f64, grid: Option<&RhoGrid>) -> Result<CorrPath> {
    let mut known_f = Ar1AugmentedFilter::new(a, q, rho)?;
    let mut known = Vec::with_capacity(xs.len());
    let mut known_var = Vec::with_capacity(xs.len());
    for x in xs {
        known_f.update(*x);
        known.push(known_f.predict_next());
        known_var.push(known_f.predictive_var());
    }
    let marginal = match grid {
        None => None,
        Some(g) => {
            let mut filters = g
                .nodes
                .iter()
                .map(|r| Ar1AugmentedFilter::new(a, q, *r))
                .collect::<Result<Vec<_>>>()?;
            let mut out = Vec::with_capacity(xs.len());
            let mut weighted = vec![(0.0, vec![0.0]); filters.len()];
            for x in xs {
                for (i, f) in filters.iter_mut().enumerate() {
                    f.update(*x);
                    weighted[i] = (
                        g.log_weights[i] + f.log_likelihood(),
                        vec![f.predict_next()],
                    );
                }
                out.push(self_normalized_mean(&weighted)?.0[0]);
            }
            Some(out)
        }
    };
    Ok(CorrPath {
        known,
        known_var,
        marginal,
    })
}

/// Oracle for an unknown `rho ~ U[lo, hi]`: likelihood-weighted average of
/// augmented-filter predictions over a quadrature grid.
pub fn bayes_oracle_corr_marginal(context: &[f64], a: f64, q: f64, grid: &RhoGrid) -> Result<f64> {
    if context.is_empty() {
        return Err(Error::InvalidArgument("empty context".into()));
    }
    let path = corr_path(context, a, q, grid.nodes[0], Some(grid))?;
    Ok(*path.marginal.unwrap().last().unwrap())
}

/// Filtered distribution over hidden states plus the accumulated log
/// normalizer (the sequence log-likelihood).
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardMessage {
    pub probs: Vec<f64>,
    pub log_norm: f64,
    /// Number of characters absorbed; zero means `probs` is the initial law.
    pub steps: usize,
}

impl ForwardMessage {
    pub fn new(params: &HmmParams) -> Self {
        ForwardMessage {
            probs: params.init.clone(),
            log_norm: 0.0,
            steps: 0,
        }
    }
}

fn state_prior(params: &HmmParams, msg: &ForwardMessage) -> Vec<f64> {
    if msg.steps == 0 {
        msg.probs.clone()
    } else {
        params.trans.t_matvec(&msg.probs)
    }
}

/// `probs' ∝ emit[:, ch] ⊙ (trans^T probs)`.
pub fn hmm_forward_step(
    params: &HmmParams,
    msg: &ForwardMessage,
    ch: usize,
) -> Result<ForwardMessage> {
    if ch >= params.vocab() {
        return Err(Error::InvalidArgument(format!(
            "character {ch} outside vocabulary of {}",
            params.vocab()
        )));
    }
    let mut probs = state_prior(params, msg);
    for (i, p) in probs.iter_mut().enumerate() {
        *p *= params.emit[(i, ch)];
    }
    let norm: f64 = probs.iter().sum();
    if !(norm > 0.0) {
        return Err(Error::ImpossibleObservation {
            step: msg.steps + 1,
            symbol: ch,
        });
    }
    probs.iter_mut().for_each(|p| *p /= norm);
    Ok(ForwardMessage {
        probs,
        log_norm: msg.log_norm + norm.ln(),
        steps: msg.steps + 1,
    })
}

/// Next-character distribution `emit^T (trans^T probs)` and its argmax
/// (lowest index on ties).
pub fn hmm_predict_next(params: &HmmParams, msg: &ForwardMessage) -> (Vec<f64>, usize) {
    let dist = params.emit.t_matvec(&state_prior(params, msg));
    let best = argmax(&dist);
    (dist, best)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Forward pass over a whole sequence.
pub fn hmm_filter(params: &HmmParams, chars: &[usize]) -> Result<ForwardMessage> {
    chars
        .iter()
        .try_fold(ForwardMessage::new(params), |msg, c| {
            hmm_forward_step(params, &msg, *c)
        })
}

/// Helper for tests and point-mass priors: the Kalman prediction under one
/// known parameter set, filtered from its stationary covariance.
pub fn known_parameter_prediction(
    params: &LgssmParams,
    context: &[Vec<f64>],
) -> Result<(Vec<f64>, Matrix)> {
    let mut filter = KalmanFilter::stationary(params)?;
    filter.run(context)?;
    Ok((filter.predict_next_obs(), filter.predictive_cov()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lgssm::simulate;
    use crate::tasks::simulate_corr_noise;

    fn context_from(params: &LgssmParams, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let p0 = params.stationary_cov().unwrap();
        simulate(params, len, &p0, &mut Rng::new(seed))
            .unwrap()
            .observed
    }

    #[test]
    fn point_mass_prior_is_the_kalman_prediction() {
        let theta = LgssmParams::scalar(0.8, 1.0, 0.5, 0.3);
        let ctx = context_from(&theta, 20, 1);
        let (mean, ess) =
            importance_predict(&ctx, 50, Execution::available(), |_| Ok(theta.clone())).unwrap();
        let (want, _) = known_parameter_prediction(&theta, &ctx).unwrap();
        assert!((mean[0] - want[0]).abs() < 1e-12);
        assert!((ess - 50.0).abs() < 1e-9);
    }

    #[test]
    fn two_atom_prior_is_the_likelihood_mixture() {
        let t1 = LgssmParams::scalar(0.8, 1.0, 0.5, 0.3);
        let t2 = LgssmParams::scalar(-0.5, 2.0, 1.0, 0.1);
        let ctx = context_from(&t1, 10, 2);
        let atoms = [t1.clone(), t2.clone()];
        let (mean, _) =
            importance_predict(&ctx, 2, Execution::Sequential, |s| Ok(atoms[s].clone())).unwrap();

        // Direct two-term enumeration.
        let mut fs = [
            KalmanFilter::stationary(&t1).unwrap(),
            KalmanFilter::stationary(&t2).unwrap(),
        ];
        fs.iter_mut().for_each(|f| f.run(&ctx).unwrap());
        let l1 = fs[0].log_likelihood();
        let l2 = fs[1].log_likelihood();
        let w1 = 1.0 / (1.0 + (l2 - l1).exp());
        let want = w1 * fs[0].predict_next_obs()[0] + (1.0 - w1) * fs[1].predict_next_obs()[0];
        assert!((mean[0] - want).abs() < 1e-10);
    }

    #[test]
    fn default_sample_count() {
        assert_eq!(OracleConfig::default().samples, 1000);
    }

    #[test]
    fn degenerate_weights_fail() {
        let r = self_normalized_mean(&[(f64::NEG_INFINITY, vec![1.0]), (f64::NAN, vec![2.0])]);
        assert!(matches!(r, Err(Error::DegenerateWeights(_))));
    }

    #[test]
    fn importance_oracle_runs_and_reports_ess() {
        let prior = LgssmPriorConfig {
            state_dim: 2,
            ..Default::default()
        };
        let theta = sample_lgssm_task(&prior, &mut Rng::new(3)).unwrap();
        let ctx = context_from(&theta, 8, 4);
        let cfg = OracleConfig {
            samples: 200,
            seed: 5,
            ..Default::default()
        };
        let out = bayes_oracle_lgssm(&ctx, &prior, &cfg).unwrap();
        assert_eq!(out.mean.len(), 2);
        assert!(out.ess >= 1.0 && out.ess <= out.samples as f64);
        let again = bayes_oracle_lgssm(&ctx, &prior, &cfg).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn specialized_filter_matches_generic() {
        for rho in [0.0, 0.5, 0.95, 0.99] {
            let tr = simulate_corr_noise(0.9, 1.0, rho, 60, &mut Rng::new(6)).unwrap();
            let params = augment_ar1(0.9, 1.0, rho).unwrap();
            let mut generic = KalmanFilter::stationary(&params).unwrap();
            let mut fast = Ar1AugmentedFilter::new(0.9, 1.0, rho).unwrap();
            for x in &tr.observed {
                generic.update(x).unwrap();
                fast.update(x[0]);
                assert!((generic.predict_next_obs()[0] - fast.predict_next()).abs() < 1e-9);
                assert!((generic.predictive_cov()[(0, 0)] - fast.predictive_var()).abs() < 1e-9);
            }
            assert!((generic.log_likelihood() - fast.log_likelihood()).abs() < 1e-8);
        }
    }

    #[test]
    fn corr_oracle_examples() {
        let xs: Vec<f64> = vec![0.0; 30];
        assert_eq!(bayes_oracle_corr(&xs, 0.95, 0.9, 1.0).unwrap(), 0.0);
        let tr = simulate_corr_noise(0.9, 1.0, 0.0, 40, &mut Rng::new(7)).unwrap();
        let ctx: Vec<f64> = tr.observed.iter().map(|x| x[0]).collect();
        let white = LgssmParams::scalar(0.9, 1.0, 1.0, 1.0);
        let (want, _) = known_parameter_prediction(&white, &tr.observed).unwrap();
        assert!((bayes_oracle_corr(&ctx, 0.0, 0.9, 1.0).unwrap() - want[0]).abs() < 1e-6);
    }

    #[test]
    fn marginal_oracle_with_point_grid_is_known_oracle() {
        let tr = simulate_corr_noise(0.9, 1.0, 0.95, 50, &mut Rng::new(8)).unwrap();
        let ctx: Vec<f64> = tr.observed.iter().map(|x| x[0]).collect();
        let grid = RhoGrid::uniform(0.95, 0.95, 1).unwrap();
        let m = bayes_oracle_corr_marginal(&ctx, 0.9, 1.0, &grid).unwrap();
        let k = bayes_oracle_corr(&ctx, 0.95, 0.9, 1.0).unwrap();
        assert!((m - k).abs() < 1e-8);
        assert_eq!(RhoGrid::uniform(0.9, 0.99, 33).unwrap().nodes.len(), 33);
    }

    fn uniform_hmm(n: usize, v: usize) -> HmmParams {
        let trans = Matrix::from_vec(n, n, vec![1.0 / n as f64; n * n]).unwrap();
        let emit = Matrix::from_vec(n, v, vec![1.0 / v as f64; n * v]).unwrap();
        HmmParams::new(trans, emit, vec![1.0 / n as f64; n]).unwrap()
    }

    #[test]
    fn uninformative_model_keeps_uniform_posterior() {
        let p = uniform_hmm(3, 4);
        let msg = hmm_filter(&p, &[0, 3, 1, 1, 2]).unwrap();
        assert!(msg.probs.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!((msg.log_norm - 5.0 * 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_emission_pins_the_state() {
        let trans = Matrix::from_rows(&[&[0.5, 0.5], &[0.3, 0.7]]);
        let p = HmmParams::new(trans, Matrix::identity(2), vec![0.5, 0.5]).unwrap();
        let msg = hmm_filter(&p, &[1, 0, 1]).unwrap();
        assert_eq!(msg.probs, vec![0.0, 1.0]);
        assert!(matches!(
            hmm_forward_step(&p, &msg, 5),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn impossible_observation_is_reported() {
        let trans = Matrix::identity(2);
        let p = HmmParams::new(trans, Matrix::identity(2), vec![1.0, 0.0]).unwrap();
        let msg = hmm_forward_step(&p, &ForwardMessage::new(&p), 0).unwrap();
        assert!(matches!(
            hmm_forward_step(&p, &msg, 1),
            Err(Error::ImpossibleObservation { step: 2, symbol: 1 })
        ));
    }

    #[test]
    fn deterministic_model_forces_next_character() {
        let trans = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let p = HmmParams::new(trans, Matrix::identity(2), vec![0.5, 0.5]).unwrap();
        let msg = hmm_filter(&p, &[0]).unwrap();
        let (dist, best) = hmm_predict_next(&p, &msg);
        assert_eq!(best, 1);
        assert!((dist[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        let (_, best) =
            hmm_predict_next(&uniform_hmm(2, 3), &ForwardMessage::new(&uniform_hmm(2, 3)));
        assert_eq!(best, 0);
    }
}
