//! Experiment II: risk versus context length under AR(1) observation noise.
//!
//! Observations are `x_t = z_t + v_t` with `z_t = a z_{t-1} + w_t` and
//! `v_t = rho v_{t-1} + sqrt(1 - rho²) e_t`. For every `rho` in the grid the
//! same held-out sequences (length `max k + 1`) are fed to every predictor,
//! and the prediction of `x_{k+1}` from the prefix `x_1..x_k` is scored for
//! each `k` in the grid.
//!
//! Excess risk is MSE minus the irreducible error `S∞(rho)`, the steady-state
//! innovation variance of the known-`rho` augmented filter. Because that
//! filter's prediction `f*` is the exact conditional mean, the estimate
//!
//! ```text
//! excess_k(f) = mean_i (f_i − f*_i)² + (S_k − S∞)
//! ```
//!
//! is unbiased for `MSE_k(f) − S∞` and paired across predictors. `S_k` is the
//! filter's exact predictive variance after `k` observations, so the oracle's
//! own excess is deterministic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use super::config::Config;
use super::svg::{emit_svg, series_from_curve, PlotStyle};
use super::{
    ensure_dir, fit_all, fits_to_csv, fmt_f64, mean_se, Comparisons, FitResult, RiskCurve, RiskRow,
    RunContext, StreamChecksum,
};
use crate::error::{Error, Result};
use crate::models::{mse_loss_grad, Checkpoint, ContinuousModel, NonSelectiveSsm, SelectiveSsm};
use crate::numerics::rng::{domain, Rng};
use crate::oracle::{corr_path, Ar1AugmentedFilter, RhoGrid};
use crate::par::{self, Execution};
use crate::tasks::simulate_corr_noise;
use crate::training::{meta_train, TrainConfig, TrainLog};

pub const ORACLE: &str = "oracle";
pub const ORACLE_MARGINAL: &str = "oracle_marginal";
pub const ERM: &str = "erm";
pub const ERM_BEST: &str = "erm_best";
pub const SSM: &str = "ssm";
pub const NON_SELECTIVE: &str = "ssm_nonselective";

#[derive(Clone, Debug, PartialEq)]
pub struct Exp2Config {
    pub a: f64,
    pub q: f64,
    pub rho_grid: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub n_eval: usize,
    pub k_min: usize,
    /// Ridge for the reported `erm` predictor.
    pub erm_lambda: f64,
    /// Ridge values swept for `erm_best`.
    pub erm_lambdas: Vec<f64>,
    /// Training prior `rho ~ U[rho_lo, rho_hi]`, also the prior of the
    /// rho-marginalized oracle.
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub marginal_grid_points: usize,
    pub train_models: bool,
    pub hidden_dim: usize,
    pub selector_mlp: bool,
    pub steps: usize,
    pub batch_tasks: usize,
    pub seq_len: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub eval_every: usize,
    pub train_eval_tasks: usize,
}

impl Exp2Config {
    pub fn desk() -> Self {
        Exp2Config {
            a: 0.9,
            q: 1.0,
            rho_grid: vec![0.9, 0.95, 0.99],
            k_grid: vec![8, 16, 32, 64, 128, 256, 512],
            n_eval: 500,
            k_min: 32,
            erm_lambda: 0.0,
            erm_lambdas: vec![0.0, 1.0, 10.0],
            rho_lo: 0.9,
            rho_hi: 0.99,
            marginal_grid_points: 33,
            train_models: true,
            hidden_dim: 16,
            selector_mlp: false,
            steps: 2000,
            batch_tasks: 32,
            seq_len: 128,
            lr: 1e-3,
            weight_decay: 0.01,
            clip_norm: 1.0,
            eval_every: 100,
            train_eval_tasks: 32,
        }
    }

    /// 100 sequences per k and 10,000 training tasks (79 steps of 128).
    pub fn paper() -> Self {
        Exp2Config {
            n_eval: 100,
            selector_mlp: true,
            steps: 79,
            batch_tasks: 128,
            lr: 3e-4,
            eval_every: 10,
            ..Self::desk()
        }
    }

    pub fn from_config(cfg: &Config, paper_scale: bool) -> Result<Self> {
        let mut c = if paper_scale {
            Self::paper()
        } else {
            Self::desk()
        };
        cfg.read_into("exp2.a", &mut c.a)?;
        cfg.read_into("exp2.q", &mut c.q)?;
        cfg.read_list_into("exp2.rho_grid", &mut c.rho_grid)?;
        cfg.read_list_into("exp2.k_grid", &mut c.k_grid)?;
        cfg.read_into("exp2.n_eval", &mut c.n_eval)?;
        cfg.read_into("exp2.k_min", &mut c.k_min)?;
        cfg.read_into("exp2.erm_lambda", &mut c.erm_lambda)?;
        cfg.read_list_into("exp2.erm_lambdas", &mut c.erm_lambdas)?;
        cfg.read_into("exp2.rho_lo", &mut c.rho_lo)?;
        cfg.read_into("exp2.rho_hi", &mut c.rho_hi)?;
        cfg.read_into("exp2.marginal_grid_points", &mut c.marginal_grid_points)?;
        cfg.read_into("exp2.train_models", &mut c.train_models)?;
        cfg.read_into("exp2.hidden_dim", &mut c.hidden_dim)?;
        cfg.read_into("exp2.selector_mlp", &mut c.selector_mlp)?;
        cfg.read_into("exp2.steps", &mut c.steps)?;
        cfg.read_into("exp2.batch_tasks", &mut c.batch_tasks)?;
        cfg.read_into("exp2.seq_len", &mut c.seq_len)?;
        cfg.read_into("exp2.lr", &mut c.lr)?;
        cfg.read_into("exp2.weight_decay", &mut c.weight_decay)?;
        cfg.read_into("exp2.clip_norm", &mut c.clip_norm)?;
        cfg.read_into("exp2.eval_every", &mut c.eval_every)?;
        cfg.read_into("exp2.train_eval_tasks", &mut c.train_eval_tasks)?;
        cfg.reject_unused("exp2.")?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.abs() < 1.0) || !(self.q > 0.0) {
            return Err(Error::Config("exp2: need |a| < 1 and q > 0".into()));
        }
        if self.rho_grid.is_empty() || self.rho_grid.iter().any(|r| !(r.abs() < 1.0)) {
            return Err(Error::Config(
                "exp2.rho_grid entries must lie in (-1, 1)".into(),
            ));
        }
        if self.k_grid.is_empty()
            || self.k_grid[0] == 0
            || self.k_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(
                "exp2.k_grid must be positive and strictly increasing".into(),
            ));
        }
        if self.n_eval == 0 {
            return Err(Error::Config("exp2.n_eval must be positive".into()));
        }
        if self.erm_lambdas.is_empty()
            || self
                .erm_lambdas
                .iter()
                .chain([&self.erm_lambda])
                .any(|l| !(*l >= 0.0) || !l.is_finite())
        {
            return Err(Error::Config(
                "exp2: ridge values must be finite and nonnegative".into(),
            ));
        }
        if !(0.0 < self.rho_lo && self.rho_lo <= self.rho_hi && self.rho_hi < 1.0) {
            return Err(Error::Config("exp2: need 0 < rho_lo <= rho_hi < 1".into()));
        }
        if self.marginal_grid_points == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(
                "exp2: grid points and hidden_dim must be positive".into(),
            ));
        }
        self.train_config(0, Execution::Sequential).validate()
    }

    fn max_k(&self) -> usize {
        *self.k_grid.last().expect("validated nonempty")
    }

    fn train_config(&self, seed: u64, exec: Execution) -> TrainConfig {
        TrainConfig {
            batch_tasks: self.batch_tasks,
            seq_len: self.seq_len,
            context_k: 32,
            lr: self.lr,
            weight_decay: self.weight_decay,
            steps: self.steps,
            seed,
            eval_every: self.eval_every.max(1),
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            checkpoint_path: None,
            exec,
        }
    }
}

/// Limit of the augmented filter's one-step predictive variance.
pub fn steady_state_innovation_var(a: f64, q: f64, rho: f64) -> Result<f64> {
    let mut f = Ar1AugmentedFilter::new(a, q, rho)?;
    let mut prev = f.predictive_var();
    // The covariance recursion does not depend on the data.
    for _ in 0..1_000_000 {
        f.update(0.0);
        let v = f.predictive_var();
        if (v - prev).abs() <= 1e-15 * v {
            return Ok(v);
        }
        prev = v;
    }
    Err(Error::NoConvergence((f.predictive_var() - prev).abs()))
}

/// Reference quantities along one held-out sequence.
struct EvalSeq {
    xs: Vec<f64>,
    known: Vec<f64>,
    known_var: Vec<f64>,
    marginal: Vec<f64>,
}

/// Predictions of `x_{k+1}` at every k in the grid, one row per sequence.
type GridPreds = Vec<Vec<f64>>;

#[derive(Clone, Debug)]
pub struct Exp2Result {
    pub config: Exp2Config,
    /// Excess risk rows.
    pub curve: RiskCurve,
    /// Raw MSE against the realized next observation.
    pub mse_curve: RiskCurve,
    pub fits: Vec<FitResult>,
    /// `(rho, k, erm_best excess, oracle excess, ratio)`.
    pub ratios: Vec<(f64, usize, f64, f64, f64)>,
    /// Paired `erm_best − oracle` differences per `(rho, k)`.
    pub comparisons: Comparisons,
    /// `(rho, k, lambda)` chosen for `erm_best`.
    pub best_lambda: Vec<(f64, usize, f64)>,
    pub checksums: BTreeMap<String, StreamChecksum>,
    pub steady_state: Vec<(f64, f64)>,
    pub train_logs: Vec<(String, TrainLog)>,
}

impl Exp2Result {
    pub fn comparison(&self, rho: f64, k: usize) -> Option<(f64, f64)> {
        let name = comparison_name(rho, k);
        self.comparisons
            .rows
            .iter()
            .find(|r| r.0 == name)
            .map(|r| (r.1, r.2))
    }

    pub fn ratio(&self, rho: f64, k: usize) -> Option<f64> {
        self.ratios
            .iter()
            .find(|r| r.0 == rho && r.1 == k)
            .map(|r| r.4)
    }
}

fn comparison_name(rho: f64, k: usize) -> String {
    format!("erm_best - oracle at rho={rho} k={k}")
}

/// Checksum over the sequences a predictor consumed (context and targets).
fn consumed(seqs: &[EvalSeq]) -> StreamChecksum {
    StreamChecksum::of_sequences(seqs.iter().map(|s| s.xs.as_slice()))
}

fn train_models(
    cfg: &Exp2Config,
    ctx: &RunContext,
) -> Result<(SelectiveSsm, NonSelectiveSsm, Vec<(String, TrainLog)>)> {
    let (a, q, lo, hi, len) = (cfg.a, cfg.q, cfg.rho_lo, cfg.rho_hi, cfg.seq_len);
    let sampler = move |rng: &mut Rng| -> Result<Vec<Vec<f64>>> {
        let rho = rng.uniform_range(lo, hi);
        let t = simulate_corr_noise(a, q, rho, len, rng)?;
        Ok(t.observed)
    };
    // Training-time evaluation: excess over the known-rho filter at k = 32
    // on probe sequences at the middle of the training prior.
    let probe_rho = 0.5 * (lo + hi);
    let probe_k = 32usize.min(cfg.seq_len);
    let base = Rng::new(ctx.seed);
    let probe: Vec<(Vec<Vec<f64>>, f64)> = (0..cfg.train_eval_tasks.max(1))
        .map(|i| {
            let mut rng = base.substream(domain::PROBE, i as u64);
            let obs = simulate_corr_noise(a, q, probe_rho, probe_k, &mut rng)?.observed;
            let xs: Vec<f64> = obs.iter().map(|v| v[0]).collect();
            let path = corr_path(&xs, a, q, probe_rho, None)?;
            Ok((obs, *path.known.last().expect("nonempty")))
        })
        .collect::<Result<_>>()?;
    fn probe_eval<M: ContinuousModel>(m: &M, probe: &[(Vec<Vec<f64>>, f64)]) -> Result<f64> {
        let mut total = 0.0;
        for (obs, known) in probe {
            total += (m.predict_last(obs)?[0] - known).powi(2);
        }
        Ok(total / probe.len() as f64)
    }
    fn fit<M: Checkpoint + ContinuousModel>(
        name: &str,
        init: M,
        sampler: &(dyn Fn(&mut Rng) -> Result<Vec<Vec<f64>>> + Sync),
        probe: &[(Vec<Vec<f64>>, f64)],
        cfg: &Exp2Config,
        ctx: &RunContext,
    ) -> Result<(M, TrainLog)> {
        let mut tcfg = cfg.train_config(ctx.seed, ctx.exec);
        tcfg.checkpoint_path = Some(ctx.path(&format!("checkpoints/{name}.ckpt")));
        let start = Instant::now();
        let (m, log) = meta_train(
            init,
            sampler,
            |m: &M, xs: &Vec<Vec<f64>>| mse_loss_grad(m, xs),
            Some(|m: &M| probe_eval(m, probe)),
            &tcfg,
        )?;
        log::info!(
            "exp2: trained {name} in {:.1}s",
            start.elapsed().as_secs_f64()
        );
        log.write_csv(&ctx.path(&format!("train_log_{name}.csv")))?;
        Ok((m, log))
    }
    let init = Rng::new(ctx.seed);
    let ssm = SelectiveSsm::init(
        1,
        cfg.hidden_dim,
        cfg.selector_mlp,
        &mut init.substream(domain::INIT, 10),
    )?;
    let (ssm, log_s) = fit(SSM, ssm, &sampler, &probe, cfg, ctx)?;
    let ns = NonSelectiveSsm::init(1, cfg.hidden_dim, &mut init.substream(domain::INIT, 11))?;
    let (ns, log_n) = fit(NON_SELECTIVE, ns, &sampler, &probe, cfg, ctx)?;
    Ok((
        ssm,
        ns,
        vec![(SSM.into(), log_s), (NON_SELECTIVE.into(), log_n)],
    ))
}

fn model_preds<M: ContinuousModel>(
    m: &M,
    seqs: &[EvalSeq],
    ks: &[usize],
    exec: Execution,
) -> Result<GridPreds> {
    let max_k = *ks.last().expect("nonempty");
    let per_seq = par::try_map_indexed(exec, seqs.len(), |i| {
        let inputs: Vec<Vec<f64>> = seqs[i].xs[..max_k].iter().map(|x| vec![*x]).collect();
        let preds = m.predict(&inputs)?;
        Ok::<_, Error>(ks.iter().map(|k| preds[k - 1][0]).collect::<Vec<f64>>())
    })?;
    Ok(per_seq)
}

pub fn run_exp2(cfg: &Exp2Config, ctx: &RunContext) -> Result<Exp2Result> {
    cfg.validate()?;
    ensure_dir(&ctx.out_dir)?;
    let start = Instant::now();
    let (models, train_logs) = if cfg.train_models {
        let (s, n, logs) = train_models(cfg, ctx)?;
        (Some((s, n)), logs)
    } else {
        (None, Vec::new())
    };
    let ks = cfg.k_grid.clone();
    let max_k = cfg.max_k();
    let grid = RhoGrid::uniform(cfg.rho_lo, cfg.rho_hi, cfg.marginal_grid_points)?;
    let base = Rng::new(ctx.seed);

    let mut curve = RiskCurve::default();
    let mut mse_curve = RiskCurve::default();
    let mut ratios = Vec::new();
    let mut comparisons = Comparisons::default();
    let mut best_lambda = Vec::new();
    let mut checksums: BTreeMap<String, StreamChecksum> = BTreeMap::new();
    let mut steady_state = Vec::new();

    for (j, &rho) in cfg.rho_grid.iter().enumerate() {
        let s_inf = steady_state_innovation_var(cfg.a, cfg.q, rho)?;
        steady_state.push((rho, s_inf));
        let seqs: Vec<EvalSeq> = par::try_map_indexed(ctx.exec, cfg.n_eval, |i| {
            let mut rng = base.substream(domain::EVAL, ((j as u64) << 32) | i as u64);
            let obs = simulate_corr_noise(cfg.a, cfg.q, rho, max_k + 1, &mut rng)?.observed;
            let xs: Vec<f64> = obs.iter().map(|v| v[0]).collect();
            let path = corr_path(&xs[..max_k], cfg.a, cfg.q, rho, Some(&grid))?;
            Ok::<_, Error>(EvalSeq {
                marginal: path.marginal.expect("grid requested"),
                known: path.known,
                known_var: path.known_var,
                xs,
            })
        })?;
        let stream = consumed(&seqs);

        // Predictions of x_{k+1} for every (sequence, k).
        let mut preds: Vec<(String, GridPreds)> = Vec::new();
        let at = |v: &[f64]| ks.iter().map(|k| v[k - 1]).collect::<Vec<f64>>();
        preds.push((ORACLE.into(), seqs.iter().map(|s| at(&s.known)).collect()));
        checksums.insert(format!("{ORACLE}@rho={rho}"), consumed(&seqs));
        preds.push((
            ORACLE_MARGINAL.into(),
            seqs.iter().map(|s| at(&s.marginal)).collect(),
        ));
        checksums.insert(format!("{ORACLE_MARGINAL}@rho={rho}"), consumed(&seqs));
        let erm_for = |lambda: f64| -> GridPreds {
            seqs.iter()
                .map(|s| {
                    let mut prefix = vec![0.0; max_k + 1];
                    for (t, x) in s.xs[..max_k].iter().enumerate() {
                        prefix[t + 1] = prefix[t] + x;
                    }
                    ks.iter()
                        .map(|&k| prefix[k] / (k as f64 + lambda))
                        .collect()
                })
                .collect()
        };
        let mut lambdas = cfg.erm_lambdas.clone();
        if !lambdas.contains(&cfg.erm_lambda) {
            lambdas.push(cfg.erm_lambda);
        }
        let erm_sweep: Vec<(f64, GridPreds)> = lambdas.iter().map(|l| (*l, erm_for(*l))).collect();
        checksums.insert(format!("{ERM}@rho={rho}"), consumed(&seqs));
        let erm_default = erm_sweep
            .iter()
            .find(|(l, _)| *l == cfg.erm_lambda)
            .expect("default lambda included")
            .1
            .clone();
        preds.push((ERM.into(), erm_default));
        if let Some((ssm, ns)) = &models {
            let p = model_preds(ssm, &seqs, &ks, ctx.exec)?;
            checksums.insert(format!("{SSM}@rho={rho}"), consumed(&seqs));
            preds.push((SSM.into(), p));
            let p = model_preds(ns, &seqs, &ks, ctx.exec)?;
            checksums.insert(format!("{NON_SELECTIVE}@rho={rho}"), consumed(&seqs));
            preds.push((NON_SELECTIVE.into(), p));
        }
        if checksums
            .iter()
            .filter(|(name, _)| name.ends_with(&format!("@rho={rho}")))
            .any(|(_, c)| *c != stream)
        {
            return Err(Error::InvalidArgument(format!(
                "evaluation streams diverged between predictors at rho={rho}"
            )));
        }

        // Per-sequence Rao-Blackwellized excess term (f − f*)² at grid index g.
        let term = |p: &GridPreds, g: usize| -> Vec<f64> {
            seqs.iter()
                .zip(p)
                .map(|(s, row)| (row[g] - s.known[ks[g] - 1]).powi(2))
                .collect()
        };
        let sq_err = |p: &GridPreds, g: usize| -> Vec<f64> {
            seqs.iter()
                .zip(p)
                .map(|(s, row)| (row[g] - s.xs[ks[g]]).powi(2))
                .collect()
        };
        // S_k is identical for every sequence (the covariance recursion is
        // data independent).
        let riccati_excess: Vec<f64> = ks
            .iter()
            .map(|k| seqs[0].known_var[k - 1] - s_inf)
            .collect();

        // Best ridge per k.
        let mut best: GridPreds = vec![vec![0.0; ks.len()]; seqs.len()];
        for (g, &k) in ks.iter().enumerate() {
            let (lambda, p) = erm_sweep
                .iter()
                .map(|(l, p)| (*l, p, mean_se(&term(p, g)).0))
                .min_by(|a, b| a.2.total_cmp(&b.2))
                .map(|(l, p, _)| (l, p))
                .expect("nonempty sweep");
            best_lambda.push((rho, k, lambda));
            for (row, src) in best.iter_mut().zip(p) {
                row[g] = src[g];
            }
        }
        checksums.insert(format!("{ERM_BEST}@rho={rho}"), consumed(&seqs));
        preds.insert(3, (ERM_BEST.into(), best));

        for (name, p) in &preds {
            for (g, &k) in ks.iter().enumerate() {
                let t = term(p, g);
                let (m, se) = mean_se(&t);
                let se = if t.iter().all(|v| *v == 0.0) { 0.0 } else { se };
                curve.push(RiskRow {
                    predictor: name.clone(),
                    rho,
                    k,
                    metric: m + riccati_excess[g],
                    std_err: se,
                    n_eval: seqs.len(),
                })?;
                let (mm, mse) = mean_se(&sq_err(p, g));
                mse_curve.push(RiskRow {
                    predictor: name.clone(),
                    rho,
                    k,
                    metric: mm,
                    std_err: mse,
                    n_eval: seqs.len(),
                })?;
            }
        }
        let best_p = &preds
            .iter()
            .find(|(n, _)| n == ERM_BEST)
            .expect("present")
            .1;
        for (g, &k) in ks.iter().enumerate() {
            let oracle = riccati_excess[g];
            let erm_terms = term(best_p, g);
            let zeros = vec![0.0; erm_terms.len()];
            let (m, _) = comparisons.add(&comparison_name(rho, k), &erm_terms, &zeros)?;
            let erm = m + oracle;
            ratios.push((rho, k, erm, oracle, erm / oracle));
        }
        log::info!(
            "exp2: rho={rho} evaluated ({:.1}s elapsed)",
            start.elapsed().as_secs_f64()
        );
    }

    let fits = fit_all(&curve, cfg.k_min);
    let result = Exp2Result {
        config: cfg.clone(),
        curve,
        mse_curve,
        fits,
        ratios,
        comparisons,
        best_lambda,
        checksums,
        steady_state,
        train_logs,
    };
    write_outputs(&result, ctx)?;
    log::info!("exp2: finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(result)
}

fn write_outputs(r: &Exp2Result, ctx: &RunContext) -> Result<()> {
    ctx.write("risk_curve.csv", &r.curve.to_csv())?;
    ctx.write("mse_curve.csv", &r.mse_curve.to_csv())?;
    ctx.write("fits.csv", &fits_to_csv(&r.fits))?;
    ctx.write("comparisons.csv", &r.comparisons.to_csv())?;
    ctx.write("eval_checksums.csv", &super::checksums_to_csv(&r.checksums))?;
    let mut ratios = String::from("rho,k,erm_best_excess,oracle_excess,ratio\n");
    for (rho, k, e, o, q) in &r.ratios {
        let _ = writeln!(
            ratios,
            "{rho},{k},{},{},{}",
            fmt_f64(*e),
            fmt_f64(*o),
            fmt_f64(*q)
        );
    }
    ctx.write("ratios.csv", &ratios)?;
    let mut lambdas = String::from("rho,k,lambda\n");
    for (rho, k, l) in &r.best_lambda {
        let _ = writeln!(lambdas, "{rho},{k},{l}");
    }
    ctx.write("erm_best_lambda.csv", &lambdas)?;

    for &rho in &r.config.rho_grid {
        let mut sub = RiskCurve::default();
        for row in r.curve.rows.iter().filter(|row| row.rho == rho) {
            sub.push(row.clone())?;
        }
        let series = series_from_curve(&sub);
        emit_svg(
            &ctx.path(&format!("exp2_excess_rho{rho}.svg")),
            &series,
            &PlotStyle {
                title: format!("Excess risk vs context length (rho = {rho})"),
                y_label: "excess risk".into(),
                x_ticks: Some(r.config.k_grid.iter().map(|k| *k as f64).collect()),
                ..Default::default()
            },
        )?;
    }

    let mut summary = String::new();
    for (rho, s) in &r.steady_state {
        let _ = writeln!(summary, "rho={rho}: irreducible error S_inf = {s:.12}");
    }
    for f in &r.fits {
        let _ = writeln!(
            summary,
            "fit {} rho={}: slope {} intercept {} R^2 {}",
            f.predictor,
            f.rho,
            fmt_f64(f.slope),
            fmt_f64(f.intercept),
            fmt_f64(f.r_squared)
        );
    }
    for (rho, k, e, o, q) in &r.ratios {
        let _ = writeln!(
            summary,
            "rho={rho} k={k}: erm_best {e:.6e} / oracle {o:.6e} = {q:.6e}"
        );
    }
    ctx.write("summary.txt", &summary)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(train: bool) -> Exp2Config {
        Exp2Config {
            k_grid: vec![4, 8, 16, 32],
            n_eval: 20,
            k_min: 4,
            train_models: train,
            hidden_dim: 3,
            steps: 3,
            batch_tasks: 2,
            seq_len: 10,
            eval_every: 1,
            train_eval_tasks: 2,
            marginal_grid_points: 5,
            ..Exp2Config::desk()
        }
    }

    #[test]
    fn steady_state_matches_long_filter_run() {
        let s = steady_state_innovation_var(0.9, 1.0, 0.95).unwrap();
        let mut f = Ar1AugmentedFilter::new(0.9, 1.0, 0.95).unwrap();
        for _ in 0..5000 {
            f.update(1.0);
        }
        assert!((f.predictive_var() - s).abs() < 1e-12);
        // a = rho: z + v is itself AR(1), so S_k is constant from the start.
        let s9 = steady_state_innovation_var(0.9, 1.0, 0.9).unwrap();
        let f9 = Ar1AugmentedFilter::new(0.9, 1.0, 0.9).unwrap();
        let mut g = f9.clone();
        g.update(0.3);
        assert!((g.predictive_var() - s9).abs() < 1e-9);
    }

    #[test]
    fn tiny_run_is_paired_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::new(9, dir.path());
        let a = run_exp2(&tiny(true), &ctx).unwrap();
        for f in [
            "risk_curve.csv",
            "mse_curve.csv",
            "fits.csv",
            "ratios.csv",
            "eval_checksums.csv",
            "erm_best_lambda.csv",
            "exp2_excess_rho0.95.svg",
            "train_log_ssm.csv",
            "train_log_ssm_nonselective.csv",
            "summary.txt",
        ] {
            assert!(dir.path().join(f).exists(), "missing {f}");
        }
        let sums: Vec<_> = a
            .checksums
            .iter()
            .filter(|(k, _)| k.ends_with("@rho=0.95"))
            .map(|(_, v)| *v)
            .collect();
        assert_eq!(sums.len(), 6);
        assert!(sums.windows(2).all(|w| w[0] == w[1]));
        let b = run_exp2(&tiny(true), &ctx).unwrap();
        assert_eq!(a.curve.to_csv(), b.curve.to_csv());
        // Best ERM never loses to any single ridge member.
        for rho in [0.9, 0.95, 0.99] {
            for k in [4, 8, 16, 32] {
                let best = a.curve.get(ERM_BEST, rho, k).unwrap().metric;
                let plain = a.curve.get(ERM, rho, k).unwrap().metric;
                assert!(best <= plain + 1e-15);
                let oracle = a.curve.get(ORACLE, rho, k).unwrap().metric;
                assert!(oracle <= best);
            }
        }
    }

    #[test]
    fn uncorrelated_noise_oracle_beats_pooled_mean() {
        let cfg = Exp2Config {
            rho_grid: vec![0.0],
            ..tiny(false)
        };
        let dir = tempfile::tempdir().unwrap();
        let r = run_exp2(&cfg, &RunContext::new(1, dir.path())).unwrap();
        for k in [4, 8, 16, 32] {
            let o = r.mse_curve.get(ORACLE, 0.0, k).unwrap().metric;
            let e = r.mse_curve.get(ERM, 0.0, k).unwrap().metric;
            assert!(o <= e, "k={k}: oracle {o} erm {e}");
        }
    }
}
