//! Oracles and harness invariants against independent references, on
//! property-generated instances.

mod common;

use common::{brute_force_filter, hmm_enumerate};
use proptest::prelude::*;
use ssmlab::harness::config::Config;
use ssmlab::harness::{fit_loglog, RiskCurve, RiskRow};
use ssmlab::lgssm::{simulate, KalmanFilter};
use ssmlab::numerics::linalg::cholesky;
use ssmlab::numerics::rng::Rng;
use ssmlab::oracle::{hmm_filter, hmm_predict_next};
use ssmlab::tasks::{
    sample_hmm_task, sample_lgssm_task, simulate_hmm, HmmPriorConfig, LgssmPriorConfig,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kalman_matches_joint_gaussian_conditioning(seed in any::<u64>(), d in 1usize..=3, m in 1usize..=2, t in 1usize..=6) {
        let prior = LgssmPriorConfig { state_dim: d, obs_dim: m, ..Default::default() };
        let mut rng = Rng::new(seed);
        let params = sample_lgssm_task(&prior, &mut rng);
        prop_assume!(params.is_ok());
        let params = params.unwrap();
        let p0 = params.stationary_cov().unwrap();
        let traj = simulate(&params, t, &p0, &mut rng).unwrap();
        let reference = brute_force_filter(&params, &p0, &traj.observed);
        let mut f = KalmanFilter::new(&params, p0);
        for (x, (mean, cov)) in traj.observed.iter().zip(&reference) {
            f.update(x).unwrap();
            let s = f.state();
            for (a, b) in s.mean.iter().zip(mean) {
                prop_assert!((a - b).abs() < 1e-7, "mean {a} vs {b}");
            }
            prop_assert!(s.cov.max_abs_diff(cov) < 1e-7);
        }
    }

    #[test]
    fn filter_covariance_stays_symmetric_positive_definite(seed in any::<u64>(), t in 1usize..=40) {
        let prior = LgssmPriorConfig { state_dim: 2, obs_dim: 2, ..Default::default() };
        let mut rng = Rng::new(seed);
        let params = sample_lgssm_task(&prior, &mut rng);
        prop_assume!(params.is_ok());
        let params = params.unwrap();
        let p0 = params.stationary_cov().unwrap();
        let traj = simulate(&params, t, &p0, &mut rng).unwrap();
        let mut f = KalmanFilter::new(&params, p0.clone());
        f.run(&traj.observed).unwrap();
        let cov = &f.state().cov;
        prop_assert!(cov.max_abs_diff(&cov.transpose()) < 1e-12);
        prop_assert!(cholesky(cov).is_ok());
        // Conditioning never increases uncertainty beyond the stationary prior.
        prop_assert!(cov.trace() <= p0.trace() + 1e-9);
    }

    #[test]
    fn hmm_forward_matches_path_enumeration(seed in any::<u64>(), n in 2usize..=3, v in 2usize..=4, t in 1usize..=6) {
        let mut rng = Rng::new(seed);
        let cfg = HmmPriorConfig { n_states: n, vocab: v, alpha_trans: 1.0, alpha_emit: 1.0 };
        let params = sample_hmm_task(&cfg, &mut rng).unwrap();
        let (_, chars) = simulate_hmm(&params, t, &mut rng).unwrap();
        let msg = hmm_filter(&params, &chars).unwrap();
        let (post, loglik) = hmm_enumerate(&params, &chars);
        for (a, b) in msg.probs.iter().zip(&post) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        prop_assert!((msg.log_norm - loglik).abs() < 1e-10);
        let (next, argmax) = hmm_predict_next(&params, &msg);
        prop_assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(next.iter().all(|p| *p <= next[argmax]));
    }

    #[test]
    fn risk_curve_csv_roundtrips_bit_exactly(values in prop::collection::vec((1e-300f64..1e300, 0.0f64..1e10), 1..20)) {
        let mut curve = RiskCurve::default();
        for (i, (metric, se)) in values.iter().enumerate() {
            curve.push(RiskRow { predictor: "p".into(), rho: 0.95, k: i + 1, metric: *metric, std_err: *se, n_eval: 7 }).unwrap();
        }
        let text = curve.to_csv();
        prop_assert_eq!(RiskCurve::from_csv(&text).unwrap().to_csv(), text);
    }

    #[test]
    fn power_law_slope_is_recovered(c in 0.1f64..10.0, beta in -2.0f64..-0.2) {
        let rows: Vec<RiskRow> = [8usize, 16, 32, 64, 128, 256, 512]
            .iter()
            .map(|k| RiskRow { predictor: "p".into(), rho: f64::NAN, k: *k, metric: c * (*k as f64).powf(beta), std_err: 0.0, n_eval: 1 })
            .collect();
        let refs: Vec<&RiskRow> = rows.iter().collect();
        let fit = fit_loglog(&refs, 32).unwrap();
        prop_assert!((fit.slope - beta).abs() < 1e-9);
        prop_assert!(fit.r_squared > 1.0 - 1e-9);
    }

    #[test]
    fn config_values_parse_back(k in "[a-z]{1,8}\\.[a-z_]{1,8}", v in -1e6f64..1e6) {
        let cfg = Config::parse(&format!("# comment\n  {k} = {v}  # trailing\n")).unwrap();
        prop_assert_eq!(cfg.get::<f64>(&k).unwrap(), Some(v));
    }
}
