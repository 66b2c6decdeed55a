//! Trainable sequence predictors with exact reverse-mode gradients.
//!
//! Every model stores its weights as a fixed, ordered list of [`Matrix`]
//! tensors (biases are column vectors). That ordering drives gradient
//! accumulation, the optimizer, finite-difference checks and checkpoints, so
//! a gradient is simply another value of the model type.

pub mod attention;
pub mod checkpoint;
pub mod discrete;
pub mod selective;

pub use attention::LinearAttention;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind};
pub use discrete::{DiscreteAttention, DiscreteSsm};
pub use selective::{NonSelectiveSsm, SelectiveCore, SelectiveSsm};

use crate::error::{Error, Result};
use crate::numerics::matrix::{norm_sq, Matrix};
use crate::numerics::rng::Rng;

/// An ordered collection of weight tensors.
pub trait Parameters: Clone + Send + Sync {
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    /// Same shapes, all entries zero (a fresh gradient accumulator).
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.as_mut_slice().fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.as_slice().len()).sum()
    }

    /// All entries, tensor by tensor, row-major.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.as_slice());
        }
        out
    }

    fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.as_slice().len();
            t.as_mut_slice()
                .copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += scale * other`; shapes must agree.
    fn add_scaled(&mut self, scale: f64, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(scale, b);
        }
    }

    fn scale_in_place(&mut self, scale: f64) {
        for t in self.tensors_mut() {
            t.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        }
    }

    fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| norm_sq(t.as_slice()))
            .sum::<f64>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Tensor shapes in order; two values are congruent iff these agree.
    fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.shape()).collect()
    }
}

/// Implements [`Parameters`] for a struct whose listed fields are all
/// matrices (in declaration order).
macro_rules! impl_parameters {
    ($ty:ty { $($field:ident),+ $(,)? }) => {
        impl $crate::models::Parameters for $ty {
            fn tensors(&self) -> Vec<&$crate::numerics::matrix::Matrix> {
                vec![$(&self.$field),+]
            }
            fn tensors_mut(&mut self) -> Vec<&mut $crate::numerics::matrix::Matrix> {
                vec![$(&mut self.$field),+]
            }
        }
    };
}
pub(crate) use impl_parameters;

/// Real-valued next-observation predictor: output `t` predicts `x_{t+1}`
/// from `x_1..=x_t`.
pub trait ContinuousModel: Parameters {
    type Cache: Send;

    fn obs_dim(&self) -> usize;

    fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Self::Cache)>;

    /// Gradient of `sum_t dpred_t · pred_t` with respect to every weight.
    fn backward(&self, cache: &Self::Cache, dpred: &[Vec<f64>]) -> Result<Self>;

    fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward(xs)?.0)
    }

    /// Prediction of `x_{k+1}` from the whole context.
    fn predict_last(&self, context: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut preds = self.predict(context)?;
        preds
            .pop()
            .ok_or_else(|| Error::InvalidArgument("empty context".into()))
    }
}

/// Next-character model: logits at position `t` score `c_{t+1}`.
pub trait DiscreteModel: Parameters {
    type Cache: Send;

    fn vocab(&self) -> usize;

    fn forward(&self, chars: &[usize]) -> Result<(Vec<Vec<f64>>, Self::Cache)>;

    fn backward(&self, cache: &Self::Cache, dlogits: &[Vec<f64>]) -> Result<Self>;

    fn logits(&self, chars: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward(chars)?.0)
    }
}

/// Mean over next-token positions of `||pred_t - x_{t+1}||^2`, with its
/// gradient. The model reads `xs[..T-1]`.
pub fn mse_loss_grad<M: ContinuousModel>(model: &M, xs: &[Vec<f64>]) -> Result<(f64, M)> {
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two observations".into(),
        ));
    }
    let n = xs.len() - 1;
    let (preds, cache) = model.forward(&xs[..n])?;
    let mut loss = 0.0;
    let dpred: Vec<Vec<f64>> = preds
        .iter()
        .zip(&xs[1..])
        .map(|(p, x)| {
            p.iter()
                .zip(x)
                .map(|(pi, xi)| {
                    let e = pi - xi;
                    loss += e * e;
                    2.0 * e / n as f64
                })
                .collect()
        })
        .collect();
    Ok((loss / n as f64, model.backward(&cache, &dpred)?))
}

pub fn mse_loss<M: ContinuousModel>(model: &M, xs: &[Vec<f64>]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two observations".into(),
        ));
    }
    let n = xs.len() - 1;
    let preds = model.predict(&xs[..n])?;
    let total: f64 = preds
        .iter()
        .zip(&xs[1..])
        .map(|(p, x)| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok(total / n as f64)
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Mean next-character cross-entropy and its gradient. The model reads
/// `chars[..T-1]`.
pub fn cross_entropy_loss_grad<M: DiscreteModel>(model: &M, chars: &[usize]) -> Result<(f64, M)> {
    if chars.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two characters".into(),
        ));
    }
    let n = chars.len() - 1;
    let (logits, cache) = model.forward(&chars[..n])?;
    let mut loss = 0.0;
    let mut dlogits = Vec::with_capacity(n);
    for (l, &target) in logits.iter().zip(&chars[1..]) {
        check_symbol(target, model.vocab())?;
        let lp = log_softmax(l);
        loss -= lp[target];
        let mut d: Vec<f64> = lp.iter().map(|v| v.exp() / n as f64).collect();
        d[target] -= 1.0 / n as f64;
        dlogits.push(d);
    }
    Ok((loss / n as f64, model.backward(&cache, &dlogits)?))
}

pub fn cross_entropy_loss<M: DiscreteModel>(model: &M, chars: &[usize]) -> Result<f64> {
    if chars.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two characters".into(),
        ));
    }
    let n = chars.len() - 1;
    let logits = model.logits(&chars[..n])?;
    let mut loss = 0.0;
    for (l, &target) in logits.iter().zip(&chars[1..]) {
        check_symbol(target, model.vocab())?;
        loss -= log_softmax(l)[target];
    }
    Ok(loss / n as f64)
}

pub(crate) fn check_symbol(c: usize, vocab: usize) -> Result<()> {
    if c >= vocab {
        return Err(Error::InvalidArgument(format!(
            "character {c} outside vocabulary of {vocab}"
        )));
    }
    Ok(())
}

pub(crate) fn check_inputs(xs: &[Vec<f64>], dim: usize) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("empty input sequence".into()));
    }
    if let Some(x) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::Dimension(format!(
            "input of length {} for a model of dimension {dim}",
            x.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_grads(grads: &[Vec<f64>], len: usize, dim: usize) -> Result<()> {
    if grads.len() != len || grads.iter().any(|g| g.len() != dim) {
        return Err(Error::Dimension(format!(
            "output gradients do not match {len} cached steps of width {dim}"
        )));
    }
    Ok(())
}

/// Ridge-pooled prediction `argmin_y sum_i ||y - x_i||^2 + lambda ||y||^2`,
/// i.e. `(sum_i x_i) / (k + lambda)`.
pub fn erm_closed_form(context: &[Vec<f64>], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge lambda {lambda}")));
    }
    if context.is_empty() && lambda == 0.0 {
        return Err(Error::InvalidArgument(
            "pooled mean of an empty context is undefined without ridge".into(),
        ));
    }
    let dim = context.first().map_or(0, |x| x.len());
    let mut sum = vec![0.0; dim];
    for x in context {
        if x.len() != dim {
            return Err(Error::Dimension("ragged context".into()));
        }
        sum.iter_mut().zip(x).for_each(|(s, v)| *s += v);
    }
    let denom = context.len() as f64 + lambda;
    Ok(sum.into_iter().map(|s| s / denom).collect())
}

/// `N(0, 1/fan_in)` entries.
pub(crate) fn fan_in_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Matrix {
    let sd = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| sd * rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).expect("finite draws")
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

pub(crate) fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Inverse of the logistic function on `(0, 1)`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erm_examples() {
        let ctx = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert_eq!(erm_closed_form(&ctx, 0.0).unwrap(), vec![2.0]);
        assert_eq!(erm_closed_form(&ctx, 1.0).unwrap(), vec![1.5]);
        assert!(erm_closed_form(&[], 0.0).is_err());
        assert_eq!(erm_closed_form(&[], 2.0).unwrap(), Vec::<f64>::new());
        assert!(erm_closed_form(&ctx, -1.0).is_err());
    }

    #[test]
    fn erm_matches_gradient_descent() {
        let mut rng = Rng::new(3);
        for _ in 0..10 {
            let k = 1 + (rng.next_u64() % 20) as usize;
            let lambda = 3.0 * rng.uniform();
            let ctx: Vec<Vec<f64>> = (0..k).map(|_| vec![rng.normal(), rng.normal()]).collect();
            let closed = erm_closed_form(&ctx, lambda).unwrap();
            let mut y = [0.0, 0.0];
            let step = 0.5 / (k as f64 + lambda);
            for _ in 0..2000 {
                let grad: Vec<f64> = (0..2)
                    .map(|j| {
                        2.0 * ctx.iter().map(|x| y[j] - x[j]).sum::<f64>() + 2.0 * lambda * y[j]
                    })
                    .collect();
                y.iter_mut().zip(&grad).for_each(|(v, g)| *v -= step * g);
            }
            for j in 0..2 {
                assert!((y[j] - closed[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn erm_is_permutation_invariant() {
        let ctx = vec![vec![0.3, 1.0], vec![-2.0, 0.5], vec![4.0, -1.0]];
        let rev: Vec<_> = ctx.iter().rev().cloned().collect();
        let a = erm_closed_form(&ctx, 0.5).unwrap();
        let b = erm_closed_form(&rev, 0.5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn activation_identities() {
        assert!((sigmoid(2.0) - 0.8807970779778823).abs() < 1e-15);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        assert!((logit(sigmoid(0.37)) - 0.37).abs() < 1e-12);
        let h = 1e-6;
        for z in [-3.0, -0.2, 0.0, 1.5] {
            let fd = (silu(z + h) - silu(z - h)) / (2.0 * h);
            assert!((fd - silu_grad(z)).abs() < 1e-8);
        }
        let p = softmax(&[1000.0, 1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-15);
    }
}
