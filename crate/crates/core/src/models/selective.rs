//! Selective state-space recurrence and its non-selective ablation.
//!
//! Per step, with input `x_t` of width `m`:
//!
//! ```text
//! s_t   = SiLU(U x_t + b)                      (optionally r_t = SiLU(W_h s_t + b_h))
//! Ā_t   = diag(sigmoid(W_A r_t + b_A))
//! B̄_t   = reshape(W_B r_t + b_B, n × m)        (row-major)
//! h_t   = Ā_t h_{t-1} + B̄_t x_t,   h_0 = 0
//! ```

use super::{
    check_grads, check_inputs, fan_in_matrix, impl_parameters, logit, sigmoid, silu, silu_grad,
    ContinuousModel, Parameters,
};
use crate::error::{Error, Result};
use crate::numerics::matrix::{dot, Matrix};
use crate::numerics::rng::Rng;

/// Initial gate bias: `sigmoid(2) ≈ 0.88`, i.e. long memory at start.
pub const GATE_BIAS_INIT: f64 = 2.0;

/// Optional hidden layer between `s_t` and the gate/input heads.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorMlp {
    pub w: Matrix,
    pub b: Matrix,
}

/// Input-dependent recurrence shared by the continuous and discrete models.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveCore {
    pub u: Matrix,
    pub b: Matrix,
    pub mlp: Option<SelectorMlp>,
    pub w_a: Matrix,
    pub b_a: Matrix,
    pub w_b: Matrix,
    pub b_b: Matrix,
}

impl Parameters for SelectiveCore {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.u, &self.b];
        if let Some(m) = &self.mlp {
            v.push(&m.w);
            v.push(&m.b);
        }
        v.extend([&self.w_a, &self.b_a, &self.w_b, &self.b_b]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.u, &mut self.b];
        if let Some(m) = &mut self.mlp {
            v.push(&mut m.w);
            v.push(&mut m.b);
        }
        v.extend([&mut self.w_a, &mut self.b_a, &mut self.w_b, &mut self.b_b]);
        v
    }
}

/// Intermediates of one [`SelectiveCore::forward`] pass.
#[derive(Clone, Debug)]
pub struct CoreCache {
    pub xs: Vec<Vec<f64>>,
    pre_s: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    pre_r: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    /// Gate values `diag(Ā_t)`.
    pub gates: Vec<Vec<f64>>,
    bvec: Vec<Vec<f64>>,
    /// `h_0 .. h_T` (length `T + 1`).
    pub h: Vec<Vec<f64>>,
}

impl SelectiveCore {
    /// Weights `N(0, 1/fan_in)`, biases zero, gate bias [`GATE_BIAS_INIT`].
    pub fn init(input_dim: usize, state_dim: usize, mlp: bool, rng: &mut Rng) -> Result<Self> {
        if input_dim == 0 || state_dim == 0 {
            return Err(Error::InvalidArgument(
                "selective core needs positive dims".into(),
            ));
        }
        let n = state_dim;
        Ok(SelectiveCore {
            u: fan_in_matrix(n, input_dim, input_dim, rng),
            b: Matrix::zeros(n, 1),
            mlp: mlp.then(|| SelectorMlp {
                w: fan_in_matrix(n, n, n, rng),
                b: Matrix::zeros(n, 1),
            }),
            w_a: fan_in_matrix(n, n, n, rng),
            b_a: Matrix::from_vec(n, 1, vec![GATE_BIAS_INIT; n]).expect("finite"),
            w_b: fan_in_matrix(n * input_dim, n, n, rng),
            b_b: Matrix::zeros(n * input_dim, 1),
        })
    }

    /// All-zero core of the given shape (used when loading checkpoints).
    pub fn zeros(input_dim: usize, state_dim: usize, mlp: bool) -> Self {
        let n = state_dim;
        SelectiveCore {
            u: Matrix::zeros(n, input_dim),
            b: Matrix::zeros(n, 1),
            mlp: mlp.then(|| SelectorMlp {
                w: Matrix::zeros(n, n),
                b: Matrix::zeros(n, 1),
            }),
            w_a: Matrix::zeros(n, n),
            b_a: Matrix::zeros(n, 1),
            w_b: Matrix::zeros(n * input_dim, n),
            b_b: Matrix::zeros(n * input_dim, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.u.cols()
    }

    pub fn state_dim(&self) -> usize {
        self.u.rows()
    }

    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<CoreCache> {
        let (n, m) = (self.state_dim(), self.input_dim());
        check_inputs(xs, m)?;
        let t_len = xs.len();
        let mut cache = CoreCache {
            xs: xs.to_vec(),
            pre_s: Vec::with_capacity(t_len),
            s: Vec::with_capacity(t_len),
            pre_r: Vec::with_capacity(t_len),
            r: Vec::with_capacity(t_len),
            gates: Vec::with_capacity(t_len),
            bvec: Vec::with_capacity(t_len),
            h: Vec::with_capacity(t_len + 1),
        };
        cache.h.push(vec![0.0; n]);
        for x in xs {
            let pre_s: Vec<f64> = self
                .u
                .matvec(x)
                .iter()
                .zip(self.b.as_slice())
                .map(|(a, b)| a + b)
                .collect();
            let s: Vec<f64> = pre_s.iter().map(|z| silu(*z)).collect();
            let (pre_r, r) = match &self.mlp {
                Some(mlp) => {
                    let pre: Vec<f64> = mlp
                        .w
                        .matvec(&s)
                        .iter()
                        .zip(mlp.b.as_slice())
                        .map(|(a, b)| a + b)
                        .collect();
                    let r = pre.iter().map(|z| silu(*z)).collect();
                    (pre, r)
                }
                None => (Vec::new(), s.clone()),
            };
            let gate: Vec<f64> = self
                .w_a
                .matvec(&r)
                .iter()
                .zip(self.b_a.as_slice())
                .map(|(a, b)| sigmoid(a + b))
                .collect();
            let bvec: Vec<f64> = self
                .w_b
                .matvec(&r)
                .iter()
                .zip(self.b_b.as_slice())
                .map(|(a, b)| a + b)
                .collect();
            let prev = cache.h.last().expect("h_0 pushed");
            let h: Vec<f64> = (0..n)
                .map(|i| gate[i] * prev[i] + dot(&bvec[i * m..(i + 1) * m], x))
                .collect();
            cache.pre_s.push(pre_s);
            cache.s.push(s);
            cache.pre_r.push(pre_r);
            cache.r.push(r);
            cache.gates.push(gate);
            cache.bvec.push(bvec);
            cache.h.push(h);
        }
        Ok(cache)
    }

    /// Backpropagates external state gradients `dh[t] = ∂L/∂h_{t+1}` through
    /// the recurrence. Returns weight gradients and input gradients.
    pub fn backward(
        &self,
        cache: &CoreCache,
        dh_ext: &[Vec<f64>],
    ) -> Result<(Self, Vec<Vec<f64>>)> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let t_len = cache.xs.len();
        check_grads(dh_ext, t_len, n)?;
        if cache.h.first().is_none_or(|h| h.len() != n)
            || self.mlp.is_some() != !cache.pre_r[0].is_empty()
        {
            return Err(Error::Dimension("cache does not match the core".into()));
        }
        let mut g = self.zeros_like();
        let mut dxs = vec![Vec::new(); t_len];
        let mut carry = vec![0.0; n];
        for t in (0..t_len).rev() {
            let x = &cache.xs[t];
            let gate = &cache.gates[t];
            let h_prev = &cache.h[t];
            let dh: Vec<f64> = dh_ext[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
            let mut dpre_a = vec![0.0; n];
            let mut dbvec = vec![0.0; n * m];
            let mut dx = vec![0.0; m];
            let bvec = &cache.bvec[t];
            for i in 0..n {
                dpre_a[i] = dh[i] * h_prev[i] * gate[i] * (1.0 - gate[i]);
                carry[i] = dh[i] * gate[i];
                for j in 0..m {
                    dbvec[i * m + j] = dh[i] * x[j];
                    dx[j] += bvec[i * m + j] * dh[i];
                }
            }
            let r = &cache.r[t];
            g.w_a.add_outer(1.0, &dpre_a, r);
            g.b_a.add_scaled(1.0, &Matrix::column_vector(&dpre_a));
            g.w_b.add_outer(1.0, &dbvec, r);
            g.b_b.add_scaled(1.0, &Matrix::column_vector(&dbvec));
            let mut dr = self.w_a.t_matvec(&dpre_a);
            self.w_b
                .t_matvec(&dbvec)
                .iter()
                .zip(dr.iter_mut())
                .for_each(|(a, d)| *d += a);
            let ds = match (&self.mlp, &mut g.mlp) {
                (Some(mlp), Some(gm)) => {
                    let dpre_r: Vec<f64> = dr
                        .iter()
                        .zip(&cache.pre_r[t])
                        .map(|(d, z)| d * silu_grad(*z))
                        .collect();
                    gm.w.add_outer(1.0, &dpre_r, &cache.s[t]);
                    gm.b.add_scaled(1.0, &Matrix::column_vector(&dpre_r));
                    mlp.w.t_matvec(&dpre_r)
                }
                _ => dr,
            };
            let dpre_s: Vec<f64> = ds
                .iter()
                .zip(&cache.pre_s[t])
                .map(|(d, z)| d * silu_grad(*z))
                .collect();
            g.u.add_outer(1.0, &dpre_s, x);
            g.b.add_scaled(1.0, &Matrix::column_vector(&dpre_s));
            self.u
                .t_matvec(&dpre_s)
                .iter()
                .zip(dx.iter_mut())
                .for_each(|(a, d)| *d += a);
            dxs[t] = dx;
        }
        Ok((g, dxs))
    }
}

/// Selective SSM for real-valued observations: core plus linear readout
/// `x̂_{t+1} = W_out h_t + b_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveSsm {
    pub core: SelectiveCore,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

impl Parameters for SelectiveSsm {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut v = self.core.tensors();
        v.extend([&self.w_out, &self.b_out]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.core.tensors_mut();
        v.extend([&mut self.w_out, &mut self.b_out]);
        v
    }
}

impl SelectiveSsm {
    pub fn init(obs_dim: usize, state_dim: usize, mlp: bool, rng: &mut Rng) -> Result<Self> {
        let core = SelectiveCore::init(obs_dim, state_dim, mlp, rng)?;
        Ok(SelectiveSsm {
            core,
            w_out: fan_in_matrix(obs_dim, state_dim, state_dim, rng),
            b_out: Matrix::zeros(obs_dim, 1),
        })
    }

    pub fn zeros(obs_dim: usize, state_dim: usize, mlp: bool) -> Self {
        SelectiveSsm {
            core: SelectiveCore::zeros(obs_dim, state_dim, mlp),
            w_out: Matrix::zeros(obs_dim, state_dim),
            b_out: Matrix::zeros(obs_dim, 1),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.core.state_dim()
    }

    /// Hand-set scalar parameters whose state follows the steady-state
    /// Kalman recursion `h_t = (1 - K c) a h_{t-1} + K x_t` for the model
    /// `z_t = a z_{t-1} + w_t`, `x_t = c z_t + v_t`, and whose readout is the
    /// next-observation prediction `c a h_t`. The selective projections are
    /// zeroed, so the gate and input map are constant.
    pub fn kalman_witness(a: f64, c: f64, gain: f64) -> Result<Self> {
        let gate = (1.0 - gain * c) * a;
        if !(gate > 0.0 && gate < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "steady-state transition {gate} is not representable by a sigmoid gate"
            )));
        }
        let mut p = SelectiveSsm::zeros(1, 1, false);
        p.core.b_a[(0, 0)] = logit(gate);
        p.core.b_b[(0, 0)] = gain;
        p.w_out[(0, 0)] = c * a;
        Ok(p)
    }

    fn readout(&self, h: &[f64]) -> Vec<f64> {
        self.w_out
            .matvec(h)
            .iter()
            .zip(self.b_out.as_slice())
            .map(|(a, b)| a + b)
            .collect()
    }
}

impl ContinuousModel for SelectiveSsm {
    type Cache = CoreCache;

    fn obs_dim(&self) -> usize {
        self.w_out.rows()
    }

    fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, CoreCache)> {
        let cache = self.core.forward(xs)?;
        let preds = cache.h[1..].iter().map(|h| self.readout(h)).collect();
        Ok((preds, cache))
    }

    fn backward(&self, cache: &CoreCache, dpred: &[Vec<f64>]) -> Result<Self> {
        check_grads(dpred, cache.xs.len(), self.obs_dim())?;
        let mut w_out = Matrix::zeros(self.w_out.rows(), self.w_out.cols());
        let mut b_out = Matrix::zeros(self.b_out.rows(), 1);
        let mut dh = Vec::with_capacity(dpred.len());
        for (g, h) in dpred.iter().zip(&cache.h[1..]) {
            w_out.add_outer(1.0, g, h);
            b_out.add_scaled(1.0, &Matrix::column_vector(g));
            dh.push(self.w_out.t_matvec(g));
        }
        let (core, _) = self.core.backward(cache, &dh)?;
        Ok(SelectiveSsm { core, w_out, b_out })
    }
}

/// Ablation with input-independent `Ā` (full `n × n`) and `B̄`:
/// `h_t = Ā h_{t-1} + B̄ x_t`, `x̂_{t+1} = W_out h_t + b_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct NonSelectiveSsm {
    pub a_fixed: Matrix,
    pub b_fixed: Matrix,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

impl_parameters!(NonSelectiveSsm {
    a_fixed,
    b_fixed,
    w_out,
    b_out
});

#[derive(Clone, Debug)]
pub struct LinearRecurrenceCache {
    xs: Vec<Vec<f64>>,
    /// `h_0 .. h_T`.
    pub h: Vec<Vec<f64>>,
}

impl NonSelectiveSsm {
    /// `Ā = sigmoid(2) I` to match the selective model's initial memory;
    /// other weights `N(0, 1/fan_in)`, biases zero.
    pub fn init(obs_dim: usize, state_dim: usize, rng: &mut Rng) -> Result<Self> {
        if obs_dim == 0 || state_dim == 0 {
            return Err(Error::InvalidArgument(
                "ablation needs positive dims".into(),
            ));
        }
        Ok(NonSelectiveSsm {
            a_fixed: Matrix::identity(state_dim).scale(sigmoid(GATE_BIAS_INIT)),
            b_fixed: fan_in_matrix(state_dim, obs_dim, obs_dim, rng),
            w_out: fan_in_matrix(obs_dim, state_dim, state_dim, rng),
            b_out: Matrix::zeros(obs_dim, 1),
        })
    }

    pub fn zeros(obs_dim: usize, state_dim: usize) -> Self {
        NonSelectiveSsm {
            a_fixed: Matrix::zeros(state_dim, state_dim),
            b_fixed: Matrix::zeros(state_dim, obs_dim),
            w_out: Matrix::zeros(obs_dim, state_dim),
            b_out: Matrix::zeros(obs_dim, 1),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a_fixed.rows()
    }
}

impl ContinuousModel for NonSelectiveSsm {
    type Cache = LinearRecurrenceCache;

    fn obs_dim(&self) -> usize {
        self.w_out.rows()
    }

    fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, LinearRecurrenceCache)> {
        check_inputs(xs, self.obs_dim())?;
        let mut h = vec![vec![0.0; self.state_dim()]];
        let mut preds = Vec::with_capacity(xs.len());
        for x in xs {
            let next: Vec<f64> = self
                .a_fixed
                .matvec(h.last().expect("h_0"))
                .iter()
                .zip(self.b_fixed.matvec(x))
                .map(|(a, b)| a + b)
                .collect();
            preds.push(
                self.w_out
                    .matvec(&next)
                    .iter()
                    .zip(self.b_out.as_slice())
                    .map(|(a, b)| a + b)
                    .collect(),
            );
            h.push(next);
        }
        Ok((preds, LinearRecurrenceCache { xs: xs.to_vec(), h }))
    }

    fn backward(&self, cache: &LinearRecurrenceCache, dpred: &[Vec<f64>]) -> Result<Self> {
        check_grads(dpred, cache.xs.len(), self.obs_dim())?;
        let mut g = self.zeros_like();
        let mut carry = vec![0.0; self.state_dim()];
        for t in (0..cache.xs.len()).rev() {
            let h = &cache.h[t + 1];
            g.w_out.add_outer(1.0, &dpred[t], h);
            g.b_out.add_scaled(1.0, &Matrix::column_vector(&dpred[t]));
            let dh: Vec<f64> = self
                .w_out
                .t_matvec(&dpred[t])
                .iter()
                .zip(&carry)
                .map(|(a, b)| a + b)
                .collect();
            g.a_fixed.add_outer(1.0, &dh, &cache.h[t]);
            g.b_fixed.add_outer(1.0, &dh, &cache.xs[t]);
            carry = self.a_fixed.t_matvec(&dh);
        }
        Ok(g)
    }
}
