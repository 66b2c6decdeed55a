//! Reverse-mode gradients of every model against central finite differences.

mod common;

use common::max_fd_relative_error;
use ssmlab::models::{
    cross_entropy_loss, cross_entropy_loss_grad, mse_loss, mse_loss_grad, DiscreteAttention,
    DiscreteSsm, LinearAttention, NonSelectiveSsm, SelectiveSsm,
};
use ssmlab::numerics::rng::Rng;

const EPS: f64 = 1e-5;
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-4;

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

#[test]
fn selective_ssm_gradients() {
    for (seed, mlp) in (0..5).map(|s| (s, s % 2 == 1)) {
        let mut rng = Rng::new(100 + seed);
        let p = SelectiveSsm::init(2, 4, mlp, &mut rng).unwrap();
        let xs = seq(9, 2, &mut rng);
        let (_, g) = mse_loss_grad(&p, &xs).unwrap();
        let err = max_fd_relative_error(&p, &g, EPS, FLOOR, |m| mse_loss(m, &xs).unwrap());
        assert!(err < TOL, "seed {seed} mlp {mlp}: {err:e}");
    }
}

#[test]
fn non_selective_ssm_gradients() {
    for seed in 0..5 {
        let mut rng = Rng::new(200 + seed);
        let p = NonSelectiveSsm::init(2, 4, &mut rng).unwrap();
        let xs = seq(9, 2, &mut rng);
        let (_, g) = mse_loss_grad(&p, &xs).unwrap();
        let err = max_fd_relative_error(&p, &g, EPS, FLOOR, |m| mse_loss(m, &xs).unwrap());
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn linear_attention_gradients() {
    for seed in 0..5 {
        let mut rng = Rng::new(300 + seed);
        let p = LinearAttention::init(2, 4, &mut rng).unwrap();
        let xs = seq(9, 2, &mut rng);
        let (_, g) = mse_loss_grad(&p, &xs).unwrap();
        let err = max_fd_relative_error(&p, &g, EPS, FLOOR, |m| mse_loss(m, &xs).unwrap());
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn discrete_ssm_gradients() {
    for (seed, mlp) in (0..5).map(|s| (s, s % 2 == 0)) {
        let mut rng = Rng::new(400 + seed);
        let p = DiscreteSsm::init(5, 4, 3, mlp, &mut rng).unwrap();
        let cs = chars(7, 5, &mut rng);
        let (_, g) = cross_entropy_loss_grad(&p, &cs).unwrap();
        let err =
            max_fd_relative_error(&p, &g, EPS, FLOOR, |m| cross_entropy_loss(m, &cs).unwrap());
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn discrete_attention_gradients() {
    for seed in 0..5 {
        let mut rng = Rng::new(500 + seed);
        let p = DiscreteAttention::init(5, 8, 4, 16, 7, &mut rng).unwrap();
        let cs = chars(7, 5, &mut rng);
        let (_, g) = cross_entropy_loss_grad(&p, &cs).unwrap();
        let err =
            max_fd_relative_error(&p, &g, EPS, FLOOR, |m| cross_entropy_loss(m, &cs).unwrap());
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}
