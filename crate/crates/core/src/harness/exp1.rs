//! Experiment I: excess risk over the Bayes predictor versus the number of
//! meta-training tasks, for the selective SSM and linear attention on the
//! LG-SSM prior.
//!
//! Each budget is an independent training run (its own cosine schedule) of
//! `steps × batch_tasks` tasks. Final evaluation uses the importance-sampled
//! Bayes predictor; training-time evaluation uses the known-parameter Kalman
//! prediction on a separate probe set.
//!
//! Excess risk is estimated per held-out task as
//! `‖f − f_θ‖² − ‖f_oracle − f_θ‖²`, where `f_θ` is the exact conditional
//! mean given the task. This has the same expectation as the difference of
//! squared errors against the realized `x_{k+1}` but without its noise term.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use super::config::Config;
use super::svg::{emit_svg, PlotStyle, Series};
use super::{
    ensure_dir, fmt_f64, histogram, mean_se, Comparisons, RiskCurve, RiskRow, RunContext,
    StreamChecksum,
};
use crate::error::{Error, Result};
use crate::lgssm::{simulate, LgssmParams};
use crate::models::{mse_loss_grad, Checkpoint, ContinuousModel, LinearAttention, SelectiveSsm};
use crate::numerics::matrix::norm_sq;
use crate::numerics::rng::{domain, Rng};
use crate::oracle::{bayes_oracle_lgssm, known_parameter_prediction, OracleConfig};
use crate::par::{self, Execution};
use crate::tasks::{sample_lgssm_task, LgssmPriorConfig, TransitionPrior};
use crate::training::{meta_train, TrainConfig, TrainLog};

pub const SSM: &str = "ssm";
pub const LINEAR_ATTENTION: &str = "linear_attention";
pub const ORACLE: &str = "oracle";
pub const KNOWN_THETA: &str = "kalman_known_theta";

#[derive(Clone, Debug, PartialEq)]
pub struct Exp1Config {
    pub prior: LgssmPriorConfig,
    pub context_k: usize,
    pub n_eval: usize,
    /// Training steps per budget, strictly increasing.
    pub budgets: Vec<usize>,
    pub batch_tasks: usize,
    pub seq_len: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Global-norm clip; 0 disables.
    pub clip_norm: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub selector_mlp: bool,
    pub oracle_samples: usize,
    pub train_eval_tasks: usize,
    pub eval_every: usize,
    pub histogram_bins: usize,
}

impl Exp1Config {
    pub fn desk() -> Self {
        Exp1Config {
            prior: LgssmPriorConfig {
                state_dim: 2,
                obs_dim: 2,
                ..Default::default()
            },
            context_k: 32,
            n_eval: 1000,
            budgets: vec![500, 2000, 8000],
            batch_tasks: 32,
            seq_len: 64,
            lr: 3e-3,
            weight_decay: 0.01,
            clip_norm: 1.0,
            hidden_dim: 16,
            embed_dim: 16,
            selector_mlp: false,
            oracle_samples: 1000,
            train_eval_tasks: 64,
            eval_every: 500,
            histogram_bins: 40,
        }
    }

    pub fn paper() -> Self {
        Exp1Config {
            prior: LgssmPriorConfig::default(),
            n_eval: 1000,
            budgets: vec![3125, 12_500, 50_000],
            batch_tasks: 128,
            seq_len: 128,
            lr: 3e-4,
            selector_mlp: true,
            ..Self::desk()
        }
    }

    pub fn from_config(cfg: &Config, paper_scale: bool) -> Result<Self> {
        let mut c = if paper_scale {
            Self::paper()
        } else {
            Self::desk()
        };
        cfg.read_into("exp1.state_dim", &mut c.prior.state_dim)?;
        cfg.read_into("exp1.obs_dim", &mut c.prior.obs_dim)?;
        cfg.read_into("exp1.eig_lo", &mut c.prior.eig_lo)?;
        cfg.read_into("exp1.eig_hi", &mut c.prior.eig_hi)?;
        if let Some(t) = cfg.get::<String>("exp1.transition")? {
            c.prior.transition = match t.as_str() {
                "symmetric" => TransitionPrior::SymmetricSpectrum,
                "orthogonal" => TransitionPrior::ScaledOrthogonal,
                other => {
                    return Err(Error::Config(format!(
                        "exp1.transition={other}: expected symmetric or orthogonal"
                    )))
                }
            };
        }
        cfg.read_into("exp1.context_k", &mut c.context_k)?;
        cfg.read_into("exp1.n_eval", &mut c.n_eval)?;
        cfg.read_list_into("exp1.budgets", &mut c.budgets)?;
        cfg.read_into("exp1.batch_tasks", &mut c.batch_tasks)?;
        cfg.read_into("exp1.seq_len", &mut c.seq_len)?;
        cfg.read_into("exp1.lr", &mut c.lr)?;
        cfg.read_into("exp1.weight_decay", &mut c.weight_decay)?;
        cfg.read_into("exp1.clip_norm", &mut c.clip_norm)?;
        cfg.read_into("exp1.hidden_dim", &mut c.hidden_dim)?;
        cfg.read_into("exp1.embed_dim", &mut c.embed_dim)?;
        cfg.read_into("exp1.selector_mlp", &mut c.selector_mlp)?;
        cfg.read_into("exp1.oracle_samples", &mut c.oracle_samples)?;
        cfg.read_into("exp1.train_eval_tasks", &mut c.train_eval_tasks)?;
        cfg.read_into("exp1.eval_every", &mut c.eval_every)?;
        cfg.read_into("exp1.histogram_bins", &mut c.histogram_bins)?;
        cfg.reject_unused("exp1.")?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.context_k == 0 || self.n_eval == 0 || self.oracle_samples == 0 {
            return Err(Error::Config(
                "exp1: context_k, n_eval and oracle_samples must be positive".into(),
            ));
        }
        if self.budgets.is_empty() || self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "exp1.budgets must be strictly increasing".into(),
            ));
        }
        if self.budgets[0] == 0 {
            return Err(Error::Config("exp1.budgets must be positive".into()));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.histogram_bins == 0 {
            return Err(Error::Config(
                "exp1: model dims and histogram bins must be positive".into(),
            ));
        }
        self.train_config(1, 0, Execution::Sequential).validate()
    }

    fn train_config(&self, steps: usize, seed: u64, exec: Execution) -> TrainConfig {
        TrainConfig {
            batch_tasks: self.batch_tasks,
            seq_len: self.seq_len,
            context_k: self.context_k,
            lr: self.lr,
            weight_decay: self.weight_decay,
            steps,
            seed,
            eval_every: self.eval_every.max(1),
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            checkpoint_path: None,
            exec,
        }
    }

    /// Number of meta-training tasks seen at each budget.
    pub fn task_counts(&self) -> Vec<usize> {
        self.budgets.iter().map(|s| s * self.batch_tasks).collect()
    }
}

/// Draws a task, skipping the (measure-zero in exact arithmetic)
/// unobservable draws the sampler rejects.
pub fn draw_observable_task(prior: &LgssmPriorConfig, rng: &mut Rng) -> Result<LgssmParams> {
    for _ in 0..100 {
        match sample_lgssm_task(prior, rng) {
            Err(Error::NotObservable { .. }) => continue,
            other => return other,
        }
    }
    Err(Error::InvalidArgument(
        "prior yields only unobservable systems".into(),
    ))
}

/// One held-out task: context, realized next observation and the two
/// reference predictions.
#[derive(Clone, Debug)]
pub struct EvalTask {
    pub context: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub known: Vec<f64>,
    pub oracle: Vec<f64>,
    pub oracle_ess: f64,
    pub oracle_degenerate: bool,
}

fn build_eval_set(
    cfg: &Exp1Config,
    ctx: &RunContext,
    domain_id: u64,
    n: usize,
    with_oracle: bool,
) -> Result<Vec<EvalTask>> {
    let base = Rng::new(ctx.seed);
    par::try_map_indexed(ctx.exec, n, |i| {
        let mut rng = base.substream(domain_id, i as u64);
        let theta = draw_observable_task(&cfg.prior, &mut rng)?;
        let p0 = theta.stationary_cov()?;
        let traj = simulate(&theta, cfg.context_k + 1, &p0, &mut rng)?;
        let mut obs = traj.observed;
        let target = obs.pop().expect("k + 1 observations");
        let (known, _) = known_parameter_prediction(&theta, &obs)?;
        let (oracle, oracle_ess, oracle_degenerate) = if with_oracle {
            let ocfg = OracleConfig {
                samples: cfg.oracle_samples,
                seed: ctx.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)),
                exec: Execution::Sequential,
                ..Default::default()
            };
            let o = bayes_oracle_lgssm(&obs, &cfg.prior, &ocfg)?;
            (o.mean, o.ess, o.degenerate)
        } else {
            (known.clone(), f64::NAN, false)
        };
        Ok(EvalTask {
            context: obs,
            target,
            known,
            oracle,
            oracle_ess,
            oracle_degenerate,
        })
    })
}

/// Per-task excess over the oracle and squared error of a predictor.
fn score(tasks: &[EvalTask], preds: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    tasks
        .iter()
        .zip(preds)
        .map(|(t, f)| {
            let gap = |g: &[f64]| {
                norm_sq(
                    &g.iter()
                        .zip(&t.known)
                        .map(|(a, b)| a - b)
                        .collect::<Vec<_>>(),
                )
            };
            let err = norm_sq(
                &f.iter()
                    .zip(&t.target)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            (gap(f) - gap(&t.oracle), err)
        })
        .unzip()
}

fn predict_all<M: ContinuousModel>(
    model: &M,
    tasks: &[EvalTask],
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    par::try_map_indexed(exec, tasks.len(), |i| model.predict_last(&tasks[i].context))
}

/// One budget's evaluation of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetResult {
    pub model: String,
    pub steps: usize,
    pub train_tasks: usize,
    pub excess: f64,
    pub excess_se: f64,
    pub mse: f64,
    pub mse_se: f64,
    /// Per held-out task excess, in evaluation order.
    pub per_task: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Exp1Result {
    pub config: Exp1Config,
    pub curve: RiskCurve,
    pub budgets: Vec<BudgetResult>,
    pub comparisons: Comparisons,
    pub oracle_degenerate: usize,
    pub eval_checksum: StreamChecksum,
    pub train_logs: Vec<(String, TrainLog)>,
}

impl Exp1Result {
    pub fn budget(&self, model: &str, steps: usize) -> Option<&BudgetResult> {
        self.budgets
            .iter()
            .find(|b| b.model == model && b.steps == steps)
    }
}

pub fn tag(model: &str, train_tasks: usize) -> String {
    format!("{model}_tasks{train_tasks}")
}

const BUDGET_HEADER: &str = "predictor,train_tasks,steps,excess,std_err,mse,mse_std_err,n_eval";

fn budget_csv(rows: &[BudgetResult], n_eval: usize) -> String {
    let mut out = String::from(BUDGET_HEADER);
    out.push('\n');
    for b in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{n_eval}",
            b.model,
            b.train_tasks,
            b.steps,
            fmt_f64(b.excess),
            fmt_f64(b.excess_se),
            fmt_f64(b.mse),
            fmt_f64(b.mse_se)
        );
    }
    out
}

fn train<M: Checkpoint + ContinuousModel>(
    name: &str,
    init: M,
    steps: usize,
    cfg: &Exp1Config,
    ctx: &RunContext,
    probe: &[EvalTask],
) -> Result<(M, TrainLog)> {
    let prior = cfg.prior.clone();
    let seq_len = cfg.seq_len;
    let sampler = move |rng: &mut Rng| -> Result<Vec<Vec<f64>>> {
        let theta = draw_observable_task(&prior, rng)?;
        let p0 = theta.stationary_cov()?;
        Ok(simulate(&theta, seq_len, &p0, rng)?.observed)
    };
    let exec = ctx.exec;
    let eval = |m: &M| -> Result<f64> {
        let preds = predict_all(m, probe, exec)?;
        let (excess, _) = score(probe, &preds);
        Ok(mean_se(&excess).0)
    };
    let mut tcfg = cfg.train_config(steps, ctx.seed, ctx.exec);
    tcfg.checkpoint_path = Some(ctx.path(&format!("checkpoints/{name}_steps{steps}.ckpt")));
    let start = Instant::now();
    let (model, log) = meta_train(
        init,
        sampler,
        |m: &M, xs: &Vec<Vec<f64>>| mse_loss_grad(m, xs),
        Some(eval),
        &tcfg,
    )?;
    log::info!(
        "exp1: trained {name} for {steps} steps in {:.1}s",
        start.elapsed().as_secs_f64()
    );
    log.write_csv(&ctx.path(&format!("train_log_{name}_steps{steps}.csv")))?;
    Ok((model, log))
}

struct Partial {
    budgets: Vec<BudgetResult>,
}

impl Partial {
    fn curve(
        &self,
        cfg: &Exp1Config,
        oracle: Option<&[f64]>,
        known: Option<&[f64]>,
    ) -> Result<RiskCurve> {
        let mut curve = RiskCurve::default();
        let n = cfg.n_eval;
        let mut push = |name: String, values: &[f64]| {
            let (m, se) = mean_se(values);
            curve.push(RiskRow {
                predictor: name,
                rho: f64::NAN,
                k: cfg.context_k,
                metric: m,
                std_err: se,
                n_eval: n,
            })
        };
        if let Some(o) = oracle {
            push(ORACLE.to_string(), o)?;
        }
        if let Some(k) = known {
            push(KNOWN_THETA.to_string(), k)?;
        }
        for b in &self.budgets {
            push(tag(&b.model, b.train_tasks), &b.per_task)?;
        }
        Ok(curve)
    }
}

pub fn run_exp1(cfg: &Exp1Config, ctx: &RunContext) -> Result<Exp1Result> {
    cfg.validate()?;
    ensure_dir(&ctx.out_dir)?;
    let start = Instant::now();
    let tasks = build_eval_set(cfg, ctx, domain::EVAL, cfg.n_eval, true)?;
    let probe = build_eval_set(cfg, ctx, domain::PROBE, cfg.train_eval_tasks.max(1), false)?;
    log::info!(
        "exp1: built {} held-out tasks with oracle in {:.1}s",
        tasks.len(),
        start.elapsed().as_secs_f64()
    );
    let eval_checksum = StreamChecksum::of_sequences(tasks.iter().flat_map(|t| {
        t.context
            .iter()
            .chain(std::iter::once(&t.target))
            .map(Vec::as_slice)
    }));
    let oracle_degenerate = tasks.iter().filter(|t| t.oracle_degenerate).count();
    let oracle_preds: Vec<Vec<f64>> = tasks.iter().map(|t| t.oracle.clone()).collect();
    let (oracle_excess, oracle_err) = score(&tasks, &oracle_preds);
    let known_preds: Vec<Vec<f64>> = tasks.iter().map(|t| t.known.clone()).collect();
    let (known_excess, _) = score(&tasks, &known_preds);

    let mut partial = Partial {
        budgets: Vec::new(),
    };
    let mut train_logs = Vec::new();
    let mut last_preds: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    let (m, n, de) = (cfg.prior.obs_dim, cfg.hidden_dim, cfg.embed_dim);
    let init_rng = Rng::new(ctx.seed);
    for (&steps, train_tasks) in cfg.budgets.iter().zip(cfg.task_counts()) {
        for name in [SSM, LINEAR_ATTENTION] {
            let trained = match name {
                SSM => {
                    let init = SelectiveSsm::init(
                        m,
                        n,
                        cfg.selector_mlp,
                        &mut init_rng.substream(domain::INIT, 0),
                    )?;
                    train(name, init, steps, cfg, ctx, &probe)
                        .and_then(|(model, log)| Ok((predict_all(&model, &tasks, ctx.exec)?, log)))
                }
                _ => {
                    let init =
                        LinearAttention::init(m, de, &mut init_rng.substream(domain::INIT, 1))?;
                    train(name, init, steps, cfg, ctx, &probe)
                        .and_then(|(model, log)| Ok((predict_all(&model, &tasks, ctx.exec)?, log)))
                }
            };
            let (preds, log) = match trained {
                Ok(v) => v,
                Err(e) => {
                    // Flush what has been measured before propagating.
                    let curve = partial.curve(cfg, Some(&oracle_excess), Some(&known_excess))?;
                    ctx.write("risk_curve.csv", &curve.to_csv())?;
                    ctx.write(
                        "budget_curve.csv",
                        &budget_csv(&partial.budgets, cfg.n_eval),
                    )?;
                    return Err(e);
                }
            };
            let (excess, err) = score(&tasks, &preds);
            let (mean, se) = mean_se(&excess);
            let (mse, mse_se) = mean_se(&err);
            log::info!("exp1: {name} @ {train_tasks} tasks: excess {mean:.5} ± {se:.5}");
            partial.budgets.push(BudgetResult {
                model: name.to_string(),
                steps,
                train_tasks,
                excess: mean,
                excess_se: se,
                mse,
                mse_se,
                per_task: excess,
            });
            train_logs.push((format!("{name}_steps{steps}"), log));
            last_preds.insert(name, preds);
        }
    }

    let curve = partial.curve(cfg, Some(&oracle_excess), Some(&known_excess))?;
    let mut comparisons = Comparisons::default();
    for name in [SSM, LINEAR_ATTENTION] {
        let rows: Vec<&BudgetResult> = partial.budgets.iter().filter(|b| b.model == name).collect();
        for w in rows.windows(2) {
            comparisons.add(
                &format!(
                    "{name}: tasks{} - tasks{}",
                    w[0].train_tasks, w[1].train_tasks
                ),
                &w[0].per_task,
                &w[1].per_task,
            )?;
        }
        if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
            if rows.len() > 2 {
                comparisons.add(
                    &format!(
                        "{name}: tasks{} - tasks{}",
                        first.train_tasks, last.train_tasks
                    ),
                    &first.per_task,
                    &last.per_task,
                )?;
            }
        }
    }
    let last_steps = *cfg.budgets.last().expect("nonempty budgets");
    let final_of = |name: &str| {
        partial
            .budgets
            .iter()
            .find(|b| b.model == name && b.steps == last_steps)
    };
    if let (Some(la), Some(ssm)) = (final_of(LINEAR_ATTENTION), final_of(SSM)) {
        comparisons.add(
            &format!("linear_attention - ssm at tasks{}", ssm.train_tasks),
            &la.per_task,
            &ssm.per_task,
        )?;
    }

    write_outputs(
        cfg,
        ctx,
        &tasks,
        &curve,
        &partial.budgets,
        &comparisons,
        &last_preds,
        &oracle_err,
        eval_checksum,
        oracle_degenerate,
    )?;
    log::info!("exp1: finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(Exp1Result {
        config: cfg.clone(),
        curve,
        budgets: partial.budgets,
        comparisons,
        oracle_degenerate,
        eval_checksum,
        train_logs,
    })
}

#[allow(clippy::too_many_arguments)]
fn write_outputs(
    cfg: &Exp1Config,
    ctx: &RunContext,
    tasks: &[EvalTask],
    curve: &RiskCurve,
    budgets: &[BudgetResult],
    comparisons: &Comparisons,
    last_preds: &BTreeMap<&str, Vec<Vec<f64>>>,
    oracle_err: &[f64],
    checksum: StreamChecksum,
    degenerate: usize,
) -> Result<()> {
    ctx.write("risk_curve.csv", &curve.to_csv())?;
    ctx.write("budget_curve.csv", &budget_csv(budgets, cfg.n_eval))?;
    ctx.write("comparisons.csv", &comparisons.to_csv())?;
    let mut sums = String::from("predictor,checksum\n");
    for name in [ORACLE, KNOWN_THETA, SSM, LINEAR_ATTENTION] {
        let _ = writeln!(sums, "{name},{}", checksum.hex());
    }
    ctx.write("eval_checksums.csv", &sums)?;

    // Coordinate-wise prediction errors x_{k+1} − f at the final budget.
    let errors = |preds: &[Vec<f64>]| -> Vec<f64> {
        tasks
            .iter()
            .zip(preds)
            .flat_map(|(t, f)| {
                t.target
                    .iter()
                    .zip(f)
                    .map(|(x, p)| x - p)
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let oracle_preds: Vec<Vec<f64>> = tasks.iter().map(|t| t.oracle.clone()).collect();
    let mut groups: Vec<(&str, Vec<f64>)> = vec![(ORACLE, errors(&oracle_preds))];
    for name in [SSM, LINEAR_ATTENTION] {
        if let Some(p) = last_preds.get(name) {
            groups.push((name, errors(p)));
        }
    }
    let rms = (groups[0].1.iter().map(|e| e * e).sum::<f64>() / groups[0].1.len() as f64).sqrt();
    let half = if rms > 0.0 { 4.0 * rms } else { 1.0 };
    let bins = cfg.histogram_bins;
    let width = 2.0 * half / bins as f64;
    let mut hist = String::from("predictor,bin_lo,bin_hi,count\n");
    let mut hist_series = Vec::new();
    for (name, errs) in &groups {
        let counts = histogram(errs, -half, half, bins);
        let mut pts = Vec::new();
        for (b, c) in counts.iter().enumerate() {
            let lo = -half + width * b as f64;
            let _ = writeln!(hist, "{name},{},{},{c}", fmt_f64(lo), fmt_f64(lo + width));
            pts.push((lo + width / 2.0, *c as f64, 0.0));
        }
        hist_series.push(Series {
            label: name.to_string(),
            points: pts,
        });
    }
    ctx.write("error_histogram.csv", &hist)?;

    let counts = cfg.task_counts();
    let mut series = Vec::new();
    for name in [SSM, LINEAR_ATTENTION] {
        let pts: Vec<(f64, f64, f64)> = budgets
            .iter()
            .filter(|b| b.model == name)
            .map(|b| (b.train_tasks as f64, b.excess, b.excess_se))
            .collect();
        if !pts.is_empty() {
            series.push(Series {
                label: name.to_string(),
                points: pts,
            });
        }
    }
    if !series.is_empty() {
        emit_svg(
            &ctx.path("exp1_excess_vs_tasks.svg"),
            &series,
            &PlotStyle {
                title: format!(
                    "Excess risk over the Bayes predictor (k = {})",
                    cfg.context_k
                ),
                x_label: "meta-training tasks".into(),
                y_label: "excess risk".into(),
                x_ticks: Some(counts.iter().map(|c| *c as f64).collect()),
                ..Default::default()
            },
        )?;
    }
    emit_svg(
        &ctx.path("exp1_error_histogram.svg"),
        &hist_series,
        &PlotStyle {
            title: "Prediction errors at the final budget".into(),
            x_label: "x_{k+1} - prediction".into(),
            y_label: "count".into(),
            log_x: false,
            log_y: false,
            ..Default::default()
        },
    )?;

    let (oracle_mse, oracle_mse_se) = mean_se(oracle_err);
    let mut summary = String::new();
    let _ = writeln!(summary, "held-out tasks: {}", tasks.len());
    let _ = writeln!(summary, "oracle MSE: {oracle_mse:.6} ± {oracle_mse_se:.6}");
    let _ = writeln!(
        summary,
        "oracle importance weights degenerate after rerun: {degenerate} of {}",
        tasks.len()
    );
    let _ = writeln!(summary, "evaluation stream checksum: {}", checksum.hex());
    for b in budgets {
        let _ = writeln!(
            summary,
            "{} @ {} tasks ({} steps): excess {:.6} ± {:.6}, MSE {:.6}",
            b.model, b.train_tasks, b.steps, b.excess, b.excess_se, b.mse
        );
    }
    for (name, m, se, _) in &comparisons.rows {
        let _ = writeln!(summary, "paired {name}: {m:.6} ± {se:.6}");
    }
    ctx.write("summary.txt", &summary)?;
    Ok(())
}
