//! Single-layer causal linear attention for real-valued sequences.
//!
//! `o_t = (1/dₑ) Σ_{i≤t} (q_tᵀ k_i) v_i = S_t q_t / dₑ` with the running sum
//! `S_t = Σ_{i≤t} v_i k_iᵀ`, and prediction `x̂_{t+1} = W_out o_t`. There is no
//! positional encoding and no output normalization.

use super::{
    check_grads, check_inputs, fan_in_matrix, impl_parameters, ContinuousModel, Parameters,
};
use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;
use crate::numerics::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearAttention {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_out: Matrix,
}

impl_parameters!(LinearAttention {
    w_q,
    w_k,
    w_v,
    w_out
});

#[derive(Clone, Debug)]
pub struct AttentionCache {
    xs: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    o: Vec<Vec<f64>>,
}

impl LinearAttention {
    pub fn init(obs_dim: usize, embed_dim: usize, rng: &mut Rng) -> Result<Self> {
        if obs_dim == 0 || embed_dim == 0 {
            return Err(Error::InvalidArgument(
                "attention needs positive dims".into(),
            ));
        }
        Ok(LinearAttention {
            w_q: fan_in_matrix(embed_dim, obs_dim, obs_dim, rng),
            w_k: fan_in_matrix(embed_dim, obs_dim, obs_dim, rng),
            w_v: fan_in_matrix(embed_dim, obs_dim, obs_dim, rng),
            w_out: fan_in_matrix(obs_dim, embed_dim, embed_dim, rng),
        })
    }

    pub fn zeros(obs_dim: usize, embed_dim: usize) -> Self {
        LinearAttention {
            w_q: Matrix::zeros(embed_dim, obs_dim),
            w_k: Matrix::zeros(embed_dim, obs_dim),
            w_v: Matrix::zeros(embed_dim, obs_dim),
            w_out: Matrix::zeros(obs_dim, embed_dim),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.w_q.rows()
    }
}

impl ContinuousModel for LinearAttention {
    type Cache = AttentionCache;

    fn obs_dim(&self) -> usize {
        self.w_out.rows()
    }

    fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, AttentionCache)> {
        check_inputs(xs, self.obs_dim())?;
        let de = self.embed_dim();
        let scale = 1.0 / de as f64;
        let mut state = Matrix::zeros(de, de);
        let mut cache = AttentionCache {
            xs: xs.to_vec(),
            q: Vec::with_capacity(xs.len()),
            k: Vec::with_capacity(xs.len()),
            v: Vec::with_capacity(xs.len()),
            o: Vec::with_capacity(xs.len()),
        };
        let mut preds = Vec::with_capacity(xs.len());
        for x in xs {
            let q = self.w_q.matvec(x);
            let k = self.w_k.matvec(x);
            let v = self.w_v.matvec(x);
            state.add_outer(1.0, &v, &k);
            let o: Vec<f64> = state.matvec(&q).into_iter().map(|s| s * scale).collect();
            preds.push(self.w_out.matvec(&o));
            cache.q.push(q);
            cache.k.push(k);
            cache.v.push(v);
            cache.o.push(o);
        }
        Ok((preds, cache))
    }

    fn backward(&self, cache: &AttentionCache, dpred: &[Vec<f64>]) -> Result<Self> {
        let t_len = cache.xs.len();
        check_grads(dpred, t_len, self.obs_dim())?;
        let de = self.embed_dim();
        let scale = 1.0 / de as f64;
        let mut g = self.zeros_like();
        let mut go = Vec::with_capacity(t_len);
        let mut dq = Vec::with_capacity(t_len);
        // Forward sweep: dq_t = S_tᵀ go_t / dₑ.
        let mut state = Matrix::zeros(de, de);
        for t in 0..t_len {
            state.add_outer(1.0, &cache.v[t], &cache.k[t]);
            g.w_out.add_outer(1.0, &dpred[t], &cache.o[t]);
            let go_t = self.w_out.t_matvec(&dpred[t]);
            dq.push(
                state
                    .t_matvec(&go_t)
                    .into_iter()
                    .map(|v| v * scale)
                    .collect::<Vec<_>>(),
            );
            go.push(go_t);
        }
        // Reverse sweep with G_i = Σ_{t≥i} go_t q_tᵀ / dₑ:
        // dv_i = G_i k_i, dk_i = G_iᵀ v_i.
        let mut acc = Matrix::zeros(de, de);
        for t in (0..t_len).rev() {
            acc.add_outer(scale, &go[t], &cache.q[t]);
            let dv = acc.matvec(&cache.k[t]);
            let dk = acc.t_matvec(&cache.v[t]);
            let x = &cache.xs[t];
            g.w_q.add_outer(1.0, &dq[t], x);
            g.w_k.add_outer(1.0, &dk, x);
            g.w_v.add_outer(1.0, &dv, x);
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix::dot;

    fn random_seq(t: usize, m: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..m).map(|_| rng.normal()).collect())
            .collect()
    }

    #[test]
    fn single_token_closed_form() {
        let mut rng = Rng::new(1);
        let p = LinearAttention::init(2, 4, &mut rng).unwrap();
        let x = vec![0.7, -1.2];
        let (q, k, v) = (p.w_q.matvec(&x), p.w_k.matvec(&x), p.w_v.matvec(&x));
        let o: Vec<f64> = v.iter().map(|vi| vi * dot(&q, &k) / 4.0).collect();
        let want = p.w_out.matvec(&o);
        let got = p.predict(&[x]).unwrap();
        for (a, b) in got[0].iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_queries_give_zero_outputs() {
        let mut rng = Rng::new(2);
        let mut p = LinearAttention::init(2, 4, &mut rng).unwrap();
        p.w_q = Matrix::zeros(4, 2);
        let preds = p.predict(&random_seq(5, 2, &mut rng)).unwrap();
        assert!(preds.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn prefix_permutation_invariance() {
        let mut rng = Rng::new(3);
        let p = LinearAttention::init(2, 4, &mut rng).unwrap();
        let xs = random_seq(5, 2, &mut rng);
        let mut perm = vec![
            xs[3].clone(),
            xs[0].clone(),
            xs[2].clone(),
            xs[1].clone(),
            xs[4].clone(),
        ];
        let a = p.predict(&xs).unwrap();
        let b = p.predict(&perm).unwrap();
        for j in 0..2 {
            assert!((a[4][j] - b[4][j]).abs() < 1e-12);
        }
        perm.swap(3, 4);
        let c = p.predict(&perm).unwrap();
        assert!((a[4][0] - c[4][0]).abs() > 1e-9);
    }

    #[test]
    fn zero_gradients_and_bilinearity() {
        let mut rng = Rng::new(4);
        let p = LinearAttention::init(2, 4, &mut rng).unwrap();
        let xs = random_seq(6, 2, &mut rng);
        let dp = random_seq(6, 2, &mut rng);
        let (_, cache) = p.forward(&xs).unwrap();
        assert_eq!(
            p.backward(&cache, &vec![vec![0.0; 2]; 6])
                .unwrap()
                .global_norm(),
            0.0
        );
        let g1 = p.backward(&cache, &dp).unwrap();
        let mut p2 = p.clone();
        p2.w_v = p.w_v.scale(2.0);
        let (_, cache2) = p2.forward(&xs).unwrap();
        let g2 = p2.backward(&cache2, &dp).unwrap();
        assert!(g2.w_out.max_abs_diff(&g1.w_out.scale(2.0)) < 1e-12);
    }
}
