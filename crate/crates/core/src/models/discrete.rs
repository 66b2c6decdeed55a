//! Next-character models for the HMM benchmark.
//!
//! * [`DiscreteSsm`]: embedding → selective recurrence → vocabulary logits.
//! * [`DiscreteAttention`]: embedding + learned positions → one causal
//!   multi-head softmax attention layer (residual) → ReLU feed-forward layer
//!   (residual) → vocabulary logits. No layer normalization.

use super::selective::{CoreCache, SelectiveCore};
use super::{
    check_grads, check_symbol, fan_in_matrix, impl_parameters, softmax, DiscreteModel, Parameters,
};
use crate::error::{Error, Result};
use crate::numerics::matrix::{dot, Matrix};
use crate::numerics::rng::Rng;

fn affine(w: &Matrix, b: &Matrix, x: &[f64]) -> Vec<f64> {
    w.matvec(x)
        .iter()
        .zip(b.as_slice())
        .map(|(a, c)| a + c)
        .collect()
}

/// Lookup tables are initialized `N(0, 1)` (one-hot inputs have no useful
/// fan-in); all other weights follow the `N(0, 1/fan_in)` rule.
fn lookup_table(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    fan_in_matrix(rows, cols, 1, rng)
}

fn check_chars(chars: &[usize], vocab: usize) -> Result<()> {
    if chars.is_empty() {
        return Err(Error::InvalidArgument("empty character sequence".into()));
    }
    chars.iter().try_for_each(|c| check_symbol(*c, vocab))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm {
    pub embed: Matrix,
    pub core: SelectiveCore,
    pub unembed: Matrix,
    pub bias: Matrix,
}

impl Parameters for DiscreteSsm {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.embed];
        v.extend(self.core.tensors());
        v.extend([&self.unembed, &self.bias]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.embed];
        v.extend(self.core.tensors_mut());
        v.extend([&mut self.unembed, &mut self.bias]);
        v
    }
}

#[derive(Clone, Debug)]
pub struct DiscreteSsmCache {
    chars: Vec<usize>,
    core: CoreCache,
}

impl DiscreteSsm {
    pub fn init(
        vocab: usize,
        embed_dim: usize,
        state_dim: usize,
        mlp: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if vocab == 0 {
            return Err(Error::InvalidArgument("empty vocabulary".into()));
        }
        let embed = lookup_table(vocab, embed_dim, rng);
        let core = SelectiveCore::init(embed_dim, state_dim, mlp, rng)?;
        Ok(DiscreteSsm {
            embed,
            core,
            unembed: fan_in_matrix(vocab, state_dim, state_dim, rng),
            bias: Matrix::zeros(vocab, 1),
        })
    }

    pub fn zeros(vocab: usize, embed_dim: usize, state_dim: usize, mlp: bool) -> Self {
        DiscreteSsm {
            embed: Matrix::zeros(vocab, embed_dim),
            core: SelectiveCore::zeros(embed_dim, state_dim, mlp),
            unembed: Matrix::zeros(vocab, state_dim),
            bias: Matrix::zeros(vocab, 1),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.cols()
    }
}

impl DiscreteModel for DiscreteSsm {
    type Cache = DiscreteSsmCache;

    fn vocab(&self) -> usize {
        self.embed.rows()
    }

    fn forward(&self, chars: &[usize]) -> Result<(Vec<Vec<f64>>, DiscreteSsmCache)> {
        check_chars(chars, self.vocab())?;
        let xs: Vec<Vec<f64>> = chars.iter().map(|c| self.embed.row(*c).to_vec()).collect();
        let core = self.core.forward(&xs)?;
        let logits = core.h[1..]
            .iter()
            .map(|h| affine(&self.unembed, &self.bias, h))
            .collect();
        Ok((
            logits,
            DiscreteSsmCache {
                chars: chars.to_vec(),
                core,
            },
        ))
    }

    fn backward(&self, cache: &DiscreteSsmCache, dlogits: &[Vec<f64>]) -> Result<Self> {
        check_grads(dlogits, cache.chars.len(), self.vocab())?;
        let mut unembed = Matrix::zeros(self.unembed.rows(), self.unembed.cols());
        let mut bias = Matrix::zeros(self.vocab(), 1);
        let mut dh = Vec::with_capacity(dlogits.len());
        for (dl, h) in dlogits.iter().zip(&cache.core.h[1..]) {
            unembed.add_outer(1.0, dl, h);
            bias.add_scaled(1.0, &Matrix::column_vector(dl));
            dh.push(self.unembed.t_matvec(dl));
        }
        let (core, dxs) = self.core.backward(&cache.core, &dh)?;
        let mut embed = Matrix::zeros(self.embed.rows(), self.embed.cols());
        for (c, dx) in cache.chars.iter().zip(&dxs) {
            embed
                .row_mut(*c)
                .iter_mut()
                .zip(dx)
                .for_each(|(e, d)| *e += d);
        }
        Ok(DiscreteSsm {
            embed,
            core,
            unembed,
            bias,
        })
    }
}

/// One-layer causal softmax transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteAttention {
    pub heads: usize,
    pub embed: Matrix,
    pub pos: Matrix,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub unembed: Matrix,
    pub bias: Matrix,
}

impl_parameters!(DiscreteAttention {
    embed,
    pos,
    w_q,
    w_k,
    w_v,
    w_o,
    w1,
    b1,
    w2,
    b2,
    unembed,
    bias
});

#[derive(Clone, Debug)]
pub struct DiscreteAttentionCache {
    chars: Vec<usize>,
    x: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// `attn[h][t]`: softmax weights of head `h` at position `t` over `0..=t`.
    pub attn: Vec<Vec<Vec<f64>>>,
    u: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    f_pre: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
}

impl DiscreteAttention {
    pub fn init(
        vocab: usize,
        embed_dim: usize,
        heads: usize,
        ff_dim: usize,
        max_len: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut p = DiscreteAttention::zeros(vocab, embed_dim, heads, ff_dim, max_len)?;
        let de = embed_dim;
        p.embed = lookup_table(vocab, de, rng);
        p.pos = lookup_table(max_len, de, rng);
        p.w_q = fan_in_matrix(de, de, de, rng);
        p.w_k = fan_in_matrix(de, de, de, rng);
        p.w_v = fan_in_matrix(de, de, de, rng);
        p.w_o = fan_in_matrix(de, de, de, rng);
        p.w1 = fan_in_matrix(ff_dim, de, de, rng);
        p.w2 = fan_in_matrix(de, ff_dim, ff_dim, rng);
        p.unembed = fan_in_matrix(vocab, de, de, rng);
        Ok(p)
    }

    pub fn zeros(
        vocab: usize,
        embed_dim: usize,
        heads: usize,
        ff_dim: usize,
        max_len: usize,
    ) -> Result<Self> {
        if vocab == 0 || embed_dim == 0 || heads == 0 || ff_dim == 0 || max_len == 0 {
            return Err(Error::InvalidArgument(
                "attention model needs positive dims".into(),
            ));
        }
        if !embed_dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "embedding width {embed_dim} not divisible by {heads} heads"
            )));
        }
        let de = embed_dim;
        Ok(DiscreteAttention {
            heads,
            embed: Matrix::zeros(vocab, de),
            pos: Matrix::zeros(max_len, de),
            w_q: Matrix::zeros(de, de),
            w_k: Matrix::zeros(de, de),
            w_v: Matrix::zeros(de, de),
            w_o: Matrix::zeros(de, de),
            w1: Matrix::zeros(ff_dim, de),
            b1: Matrix::zeros(ff_dim, 1),
            w2: Matrix::zeros(de, ff_dim),
            b2: Matrix::zeros(de, 1),
            unembed: Matrix::zeros(vocab, de),
            bias: Matrix::zeros(vocab, 1),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.cols()
    }

    pub fn ff_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn max_len(&self) -> usize {
        self.pos.rows()
    }

    fn head_dim(&self) -> usize {
        self.embed_dim() / self.heads
    }
}

impl DiscreteModel for DiscreteAttention {
    type Cache = DiscreteAttentionCache;

    fn vocab(&self) -> usize {
        self.embed.rows()
    }

    fn forward(&self, chars: &[usize]) -> Result<(Vec<Vec<f64>>, DiscreteAttentionCache)> {
        check_chars(chars, self.vocab())?;
        if chars.len() > self.max_len() {
            return Err(Error::InvalidArgument(format!(
                "sequence of {} exceeds {} learned positions",
                chars.len(),
                self.max_len()
            )));
        }
        let t_len = chars.len();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let x: Vec<Vec<f64>> = chars
            .iter()
            .enumerate()
            .map(|(t, c)| {
                self.embed
                    .row(*c)
                    .iter()
                    .zip(self.pos.row(t))
                    .map(|(a, b)| a + b)
                    .collect()
            })
            .collect();
        let q: Vec<Vec<f64>> = x.iter().map(|xt| self.w_q.matvec(xt)).collect();
        let k: Vec<Vec<f64>> = x.iter().map(|xt| self.w_k.matvec(xt)).collect();
        let v: Vec<Vec<f64>> = x.iter().map(|xt| self.w_v.matvec(xt)).collect();
        let mut attn = vec![Vec::with_capacity(t_len); self.heads];
        let mut u = vec![vec![0.0; self.embed_dim()]; t_len];
        for (h, attn_h) in attn.iter_mut().enumerate() {
            let r = h * dh..(h + 1) * dh;
            for t in 0..t_len {
                let scores: Vec<f64> = (0..=t)
                    .map(|i| scale * dot(&q[t][r.clone()], &k[i][r.clone()]))
                    .collect();
                let a = softmax(&scores);
                for (i, ai) in a.iter().enumerate() {
                    for (uo, vi) in u[t][r.clone()].iter_mut().zip(&v[i][r.clone()]) {
                        *uo += ai * vi;
                    }
                }
                attn_h.push(a);
            }
        }
        let mut y = Vec::with_capacity(t_len);
        let mut f_pre = Vec::with_capacity(t_len);
        let mut z = Vec::with_capacity(t_len);
        let mut logits = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let yt: Vec<f64> = x[t]
                .iter()
                .zip(self.w_o.matvec(&u[t]))
                .map(|(a, b)| a + b)
                .collect();
            let fp = affine(&self.w1, &self.b1, &yt);
            let f: Vec<f64> = fp.iter().map(|v| v.max(0.0)).collect();
            let zt: Vec<f64> = yt
                .iter()
                .zip(affine(&self.w2, &self.b2, &f))
                .map(|(a, b)| a + b)
                .collect();
            logits.push(affine(&self.unembed, &self.bias, &zt));
            y.push(yt);
            f_pre.push(fp);
            z.push(zt);
        }
        Ok((
            logits,
            DiscreteAttentionCache {
                chars: chars.to_vec(),
                x,
                q,
                k,
                v,
                attn,
                u,
                y,
                f_pre,
                z,
            },
        ))
    }

    fn backward(&self, c: &DiscreteAttentionCache, dlogits: &[Vec<f64>]) -> Result<Self> {
        let t_len = c.chars.len();
        check_grads(dlogits, t_len, self.vocab())?;
        let de = self.embed_dim();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut g = self.zeros_like();
        let mut dx = vec![vec![0.0; de]; t_len];
        let mut du = vec![vec![0.0; de]; t_len];
        for t in 0..t_len {
            let dl = &dlogits[t];
            g.unembed.add_outer(1.0, dl, &c.z[t]);
            g.bias.add_scaled(1.0, &Matrix::column_vector(dl));
            let dz = self.unembed.t_matvec(dl);
            let f: Vec<f64> = c.f_pre[t].iter().map(|v| v.max(0.0)).collect();
            g.w2.add_outer(1.0, &dz, &f);
            g.b2.add_scaled(1.0, &Matrix::column_vector(&dz));
            let dfp: Vec<f64> = self
                .w2
                .t_matvec(&dz)
                .iter()
                .zip(&c.f_pre[t])
                .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
                .collect();
            g.w1.add_outer(1.0, &dfp, &c.y[t]);
            g.b1.add_scaled(1.0, &Matrix::column_vector(&dfp));
            let dy: Vec<f64> = dz
                .iter()
                .zip(self.w1.t_matvec(&dfp))
                .map(|(a, b)| a + b)
                .collect();
            g.w_o.add_outer(1.0, &dy, &c.u[t]);
            du[t] = self.w_o.t_matvec(&dy);
            dx[t] = dy;
        }
        let mut dq = vec![vec![0.0; de]; t_len];
        let mut dk = vec![vec![0.0; de]; t_len];
        let mut dv = vec![vec![0.0; de]; t_len];
        for h in 0..self.heads {
            let r = h * dh..(h + 1) * dh;
            for t in 0..t_len {
                let a = &c.attn[h][t];
                let du_t = &du[t][r.clone()];
                let da: Vec<f64> = (0..=t).map(|i| dot(du_t, &c.v[i][r.clone()])).collect();
                let mean: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                for i in 0..=t {
                    for (d, g_) in dv[i][r.clone()].iter_mut().zip(du_t) {
                        *d += a[i] * g_;
                    }
                    let ds = scale * a[i] * (da[i] - mean);
                    if ds == 0.0 {
                        continue;
                    }
                    for j in r.clone() {
                        dq[t][j] += ds * c.k[i][j];
                        dk[i][j] += ds * c.q[t][j];
                    }
                }
            }
        }
        for t in 0..t_len {
            let xt = &c.x[t];
            g.w_q.add_outer(1.0, &dq[t], xt);
            g.w_k.add_outer(1.0, &dk[t], xt);
            g.w_v.add_outer(1.0, &dv[t], xt);
            let mut d = dx[t].clone();
            for (w, dd) in [
                (&self.w_q, &dq[t]),
                (&self.w_k, &dk[t]),
                (&self.w_v, &dv[t]),
            ] {
                d.iter_mut().zip(w.t_matvec(dd)).for_each(|(a, b)| *a += b);
            }
            g.embed
                .row_mut(c.chars[t])
                .iter_mut()
                .zip(&d)
                .for_each(|(a, b)| *a += b);
            g.pos
                .row_mut(t)
                .iter_mut()
                .zip(&d)
                .for_each(|(a, b)| *a += b);
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::cross_entropy_loss;

    #[test]
    fn zero_weights_give_uniform_cross_entropy() {
        let ssm = DiscreteSsm::zeros(7, 4, 3, false);
        let chars = [0, 3, 6, 1, 2];
        assert!((cross_entropy_loss(&ssm, &chars).unwrap() - 7f64.ln()).abs() < 1e-12);
        let att = DiscreteAttention::zeros(7, 4, 2, 8, 10).unwrap();
        assert!((cross_entropy_loss(&att, &chars).unwrap() - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = Rng::new(1);
        let p = DiscreteAttention::init(5, 8, 4, 16, 12, &mut rng).unwrap();
        let (_, cache) = p.forward(&[1, 4, 0, 2, 2, 3]).unwrap();
        for head in &cache.attn {
            for (t, row) in head.iter().enumerate() {
                assert_eq!(row.len(), t + 1);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = Rng::new(2);
        let p = DiscreteAttention::init(5, 8, 4, 16, 4, &mut rng).unwrap();
        assert!(p.forward(&[5]).is_err());
        assert!(p.forward(&[0, 1, 2, 3, 4]).is_err());
        assert!(DiscreteAttention::zeros(5, 6, 4, 8, 4).is_err());
        let s = DiscreteSsm::init(5, 4, 3, false, &mut rng).unwrap();
        assert!(s.forward(&[]).is_err());
        assert!(s.forward(&[9]).is_err());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = DiscreteSsm::init(6, 4, 3, true, &mut Rng::new(9)).unwrap();
        let b = DiscreteSsm::init(6, 4, 3, true, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }
}
