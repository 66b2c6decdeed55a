//! Meta-training: AdamW with a cosine schedule, global-norm clipping, and a
//! deterministic data-parallel batch loop over freshly sampled tasks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::models::{save_checkpoint, Checkpoint, Parameters};
use crate::numerics::rng::{domain, Rng};
use crate::par::{self, Execution};

/// `base_lr * 0.5 * (1 + cos(pi * step / total_steps))`, zero past the end.
/// A zero-length schedule is constant.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    if step >= total_steps {
        return 0.0;
    }
    let frac = step as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// AdamW moments and hyperparameters.
#[derive(Clone, Debug)]
pub struct OptimState<M> {
    pub first_moment: M,
    pub second_moment: M,
    /// Updates applied so far.
    pub step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub total_steps: usize,
}

impl<M: Parameters> OptimState<M> {
    pub fn new(params: &M, base_lr: f64, weight_decay: f64, total_steps: usize) -> Self {
        OptimState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            base_lr,
            total_steps,
        }
    }

    /// Learning rate the next update will use.
    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.step, self.total_steps, self.base_lr)
    }
}

/// One AdamW update: decoupled decay `p ← p − lr·wd·p`, then the
/// bias-corrected Adam step. Returns the learning rate used.
pub fn adamw_step<M: Parameters>(
    params: &mut M,
    grads: &M,
    opt: &mut OptimState<M>,
) -> Result<f64> {
    let shapes = params.shapes();
    if grads.shapes() != shapes || opt.first_moment.shapes() != shapes {
        return Err(Error::Dimension(
            "gradient shapes do not match parameters".into(),
        ));
    }
    let lr = opt.current_lr();
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    let (b1, b2, eps, wd) = (opt.beta1, opt.beta2, opt.eps, opt.weight_decay);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(opt.first_moment.tensors_mut())
        .zip(opt.second_moment.tensors_mut());
    for (((p, g), m), v) in tensors {
        let p = p.as_mut_slice();
        let g = g.as_slice();
        let m = m.as_mut_slice();
        let v = v.as_mut_slice();
        for i in 0..p.len() {
            p[i] -= lr * wd * p[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(lr)
}

/// Rescales `grads` to global norm `max_norm` if it is larger; returns the
/// norm before clipping.
pub fn clip_global_norm<M: Parameters>(grads: &mut M, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale_in_place(max_norm / norm);
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_tasks: usize,
    pub seq_len: usize,
    /// Context length used by evaluation callbacks.
    pub context_k: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub seed: u64,
    /// Log (and evaluate) every this many steps; the last step is always
    /// logged.
    pub eval_every: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub checkpoint_path: Option<PathBuf>,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_tasks: 128,
            seq_len: 128,
            context_k: 32,
            lr: 3e-4,
            weight_decay: 0.01,
            steps: 20_000,
            seed: 0,
            eval_every: 500,
            clip_norm: Some(1.0),
            checkpoint_path: None,
            exec: Execution::available(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_tasks == 0 || self.seq_len < 2 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_tasks, eval_every must be positive and seq_len at least 2".into(),
            ));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "lr and weight_decay must be nonnegative".into(),
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm {c} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRow {
    pub step: usize,
    pub train_loss: f64,
    /// NaN when no evaluation callback was supplied.
    pub eval_excess_risk: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainRow>,
}

pub const TRAIN_LOG_HEADER: &str = "step,train_loss,eval_excess_risk,lr,wall_time_s";

impl TrainLog {
    /// CSV text; `with_wall_time = false` blanks the timing column so two
    /// runs can be compared byte for byte.
    pub fn to_csv(&self, with_wall_time: bool) -> String {
        let mut out = String::from(TRAIN_LOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            let wall = if with_wall_time {
                format!("{:.3}", r.wall_time_s)
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{}",
                r.step, r.train_loss, r.eval_excess_risk, r.lr, wall
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_csv(true))?;
        Ok(())
    }

    /// Equal up to wall-clock time.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.step == b.step
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.eval_excess_risk.to_bits() == b.eval_excess_risk.to_bits()
                    && a.lr.to_bits() == b.lr.to_bits()
            })
    }
}

/// Random stream for batch element `index` of training step `step`.
pub fn batch_rng(seed: u64, step: usize, batch: usize, index: usize) -> Rng {
    Rng::stream(
        seed,
        domain::TRAIN | ((step * batch + index) as u64 & ((1 << 56) - 1)),
    )
}

/// Mean loss and gradient over one batch, reduced in index order so the
/// result does not depend on the worker count.
pub fn batch_loss_grad<M, S, Samp, LG>(
    model: &M,
    step: usize,
    cfg: &TrainConfig,
    sampler: &Samp,
    loss_grad: &LG,
) -> Result<(f64, M)>
where
    M: Parameters,
    Samp: Fn(&mut Rng) -> Result<S> + Sync,
    LG: Fn(&M, &S) -> Result<(f64, M)> + Sync,
{
    let parts = par::try_map_indexed(cfg.exec, cfg.batch_tasks, |i| {
        let mut rng = batch_rng(cfg.seed, step, cfg.batch_tasks, i);
        let sample = sampler(&mut rng)?;
        loss_grad(model, &sample)
    })?;
    let mut grad = model.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grad.add_scaled(1.0, g);
    }
    let inv = 1.0 / cfg.batch_tasks as f64;
    grad.scale_in_place(inv);
    Ok((loss * inv, grad))
}

/// Meta-trains `init` on tasks drawn by `sampler` (one per batch element,
/// fresh every step).
///
/// At logged steps the batch loss and, if given, `eval(&params)` are
/// recorded (both at the pre-update parameters). A non-finite loss or
/// gradient aborts with [`Error::Diverged`], saving the last good
/// parameters when a checkpoint path is configured; otherwise the final
/// parameters are saved there.
pub fn meta_train<M, S, Samp, LG, Ev>(
    init: M,
    sampler: Samp,
    loss_grad: LG,
    mut eval: Option<Ev>,
    cfg: &TrainConfig,
) -> Result<(M, TrainLog)>
where
    M: Checkpoint,
    Samp: Fn(&mut Rng) -> Result<S> + Sync,
    LG: Fn(&M, &S) -> Result<(f64, M)> + Sync,
    Ev: FnMut(&M) -> Result<f64>,
{
    cfg.validate()?;
    let start = Instant::now();
    let mut params = init;
    let mut opt = OptimState::new(&params, cfg.lr, cfg.weight_decay, cfg.steps);
    let mut log = TrainLog::default();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, mut grad) = batch_loss_grad(&params, step, cfg, &sampler, &loss_grad)?;
        if !loss.is_finite() || !grad.all_finite() {
            let checkpoint = match &cfg.checkpoint_path {
                Some(path) => {
                    save_checkpoint(path, &params, cfg.seed)?;
                    Some(path.display().to_string())
                }
                None => None,
            };
            return Err(Error::Diverged {
                step,
                loss,
                checkpoint,
            });
        }
        losses.push(loss);
        if step % cfg.eval_every == 0 || step + 1 == cfg.steps {
            let eval_excess_risk = match eval.as_mut() {
                Some(f) => f(&params)?,
                None => f64::NAN,
            };
            log.rows.push(TrainRow {
                step,
                train_loss: loss,
                eval_excess_risk,
                lr: opt.current_lr(),
                wall_time_s: start.elapsed().as_secs_f64(),
            });
            log::debug!("step {step}: loss {loss:.5}, eval {eval_excess_risk:.5}");
        }
        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut grad, c);
        }
        adamw_step(&mut params, &grad, &mut opt)?;
    }
    warn_if_loss_rose(&losses, 50);
    if let Some(path) = &cfg.checkpoint_path {
        save_checkpoint(path, &params, cfg.seed)?;
    }
    Ok((params, log))
}

/// Soft check: the smoothed loss at the end should not exceed the smoothed
/// loss at the start.
fn warn_if_loss_rose(losses: &[f64], window: usize) {
    if losses.len() < 2 * window {
        return;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&losses[..window]);
    let last = mean(&losses[losses.len() - window..]);
    if last > first {
        log::warn!("smoothed training loss rose from {first:.5} to {last:.5}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{mse_loss, mse_loss_grad, SelectiveSsm};
    use crate::numerics::matrix::Matrix;
    use crate::tasks::simulate_corr_noise;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 100, 3e-4), 3e-4);
        assert!(cosine_lr(100, 100, 3e-4).abs() < 1e-20);
        assert!((cosine_lr(50, 100, 3e-4) - 1.5e-4).abs() < 1e-18);
        assert_eq!(cosine_lr(150, 100, 3e-4), 0.0);
    }

    fn scalar(v: f64) -> SelectiveSsm {
        let mut p = SelectiveSsm::zeros(1, 1, false);
        p.set_flat(&vec![v; p.num_params()]).unwrap();
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut p = scalar(0.7);
        let before = p.clone();
        let mut opt = OptimState::new(&p, 1e-2, 0.0, 10);
        let zero = p.zeros_like();
        adamw_step(&mut p, &zero, &mut opt).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut opt = OptimState::new(&p, 1e-3, 0.0, 0);
        adamw_step(&mut p, &scalar(1.0), &mut opt).unwrap();
        for v in p.flatten() {
            assert!((v + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        }
    }

    #[test]
    fn decay_only_path_shrinks_parameters() {
        let mut p = scalar(2.0);
        let mut opt = OptimState::new(&p, 3e-4, 0.01, 0);
        let zero = p.zeros_like();
        adamw_step(&mut p, &zero, &mut opt).unwrap();
        for v in p.flatten() {
            assert!((v - 2.0 * (1.0 - 3e-6)).abs() < 1e-15);
        }
    }

    #[test]
    fn slow_second_moment_matches_momentum_direction() {
        let mut p = scalar(0.0);
        let mut opt = OptimState::new(&p, 1e-2, 0.0, 0);
        opt.beta2 = 1.0 - 1e-12;
        let g = scalar(-0.37);
        adamw_step(&mut p, &g, &mut opt).unwrap();
        // Bias-corrected momentum is g itself; Adam normalizes it to unit size.
        for v in p.flatten() {
            assert!((v - 1e-2).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = SelectiveSsm::zeros(1, 2, false);
        let mut opt = OptimState::new(&p, 1e-3, 0.0, 1);
        assert!(adamw_step(&mut p, &SelectiveSsm::zeros(1, 3, false), &mut opt).is_err());
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = scalar(3.0);
        let before = clip_global_norm(&mut g, 1.0);
        assert!(before > 1.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        let mut small = scalar(1e-3);
        let copy = small.clone();
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, copy);
    }

    fn corr_sampler(len: usize) -> impl Fn(&mut Rng) -> Result<Vec<Vec<f64>>> + Sync {
        move |rng: &mut Rng| Ok(simulate_corr_noise(0.9, 1.0, 0.95, len, rng)?.observed)
    }

    fn small_cfg(steps: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            batch_tasks: 4,
            seq_len: 16,
            lr,
            steps,
            eval_every: 10,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let init = SelectiveSsm::init(1, 4, false, &mut Rng::new(1)).unwrap();
        let cfg = small_cfg(100, 0.0);
        let (trained, _) = meta_train(
            init.clone(),
            corr_sampler(cfg.seq_len),
            |m: &SelectiveSsm, xs: &Vec<Vec<f64>>| mse_loss_grad(m, xs),
            None::<fn(&SelectiveSsm) -> Result<f64>>,
            &cfg,
        )
        .unwrap();
        assert_eq!(trained, init);
    }

    #[test]
    fn first_logged_loss_matches_recomputation() {
        let init = SelectiveSsm::init(1, 4, false, &mut Rng::new(2)).unwrap();
        let cfg = small_cfg(3, 1e-3);
        let sampler = corr_sampler(cfg.seq_len);
        let (_, log) = meta_train(
            init.clone(),
            &sampler,
            |m: &SelectiveSsm, xs: &Vec<Vec<f64>>| mse_loss_grad(m, xs),
            None::<fn(&SelectiveSsm) -> Result<f64>>,
            &cfg,
        )
        .unwrap();
        let recomputed: f64 = (0..cfg.batch_tasks)
            .map(|i| {
                mse_loss(
                    &init,
                    &sampler(&mut batch_rng(cfg.seed, 0, cfg.batch_tasks, i)).unwrap(),
                )
                .unwrap()
            })
            .sum::<f64>()
            / cfg.batch_tasks as f64;
        assert!((log.rows[0].train_loss - recomputed).abs() < 1e-12);
        assert_eq!(
            log.rows.iter().map(|r| r.step).collect::<Vec<_>>(),
            vec![0, 2]
        );
    }

    #[test]
    fn training_is_deterministic_across_execution_modes() {
        let init = SelectiveSsm::init(1, 4, false, &mut Rng::new(3)).unwrap();
        let run = |exec| {
            let cfg = TrainConfig {
                exec,
                ..small_cfg(20, 1e-2)
            };
            meta_train(
                init.clone(),
                corr_sampler(cfg.seq_len),
                |m: &SelectiveSsm, xs: &Vec<Vec<f64>>| mse_loss_grad(m, xs),
                Some(|m: &SelectiveSsm| mse_loss(m, &[vec![1.0], vec![0.5], vec![0.2]])),
                &cfg,
            )
            .unwrap()
        };
        let (p1, l1) = run(Execution::Sequential);
        let (p2, l2) = run(Execution::available());
        assert_eq!(p1, p2);
        assert!(l1.same_trajectory(&l2));
        assert_eq!(l1.to_csv(false), l2.to_csv(false));
        assert!(l1.to_csv(true).starts_with(TRAIN_LOG_HEADER));
    }

    #[test]
    fn divergence_saves_a_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("last.ckpt");
        let mut init = SelectiveSsm::init(1, 2, false, &mut Rng::new(4)).unwrap();
        init.b_out = Matrix::column_vector(&[f64::MAX]);
        let cfg = TrainConfig {
            checkpoint_path: Some(path.clone()),
            ..small_cfg(5, 1e-3)
        };
        let err = meta_train(
            init,
            corr_sampler(cfg.seq_len),
            |m: &SelectiveSsm, xs: &Vec<Vec<f64>>| mse_loss_grad(m, xs),
            None::<fn(&SelectiveSsm) -> Result<f64>>,
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::Diverged {
                step: 0,
                checkpoint: Some(_),
                ..
            }
        ));
        assert!(path.exists());
    }
}
