//! Experiment III: next-character accuracy versus context length on random
//! HMM tasks, for a selective-SSM language model, a one-layer softmax
//! transformer and the forward-algorithm oracle.
//!
//! Every held-out sequence is scored at each `k` in the grid by predicting
//! character `k + 1` from the first `k`; all three predictors see the same
//! sequences, so accuracy differences are paired.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use super::config::Config;
use super::svg::{emit_svg, series_from_curve, PlotStyle};
use super::{ensure_dir, mean_se, Comparisons, RiskCurve, RiskRow, RunContext, StreamChecksum};
use crate::error::{Error, Result};
use crate::models::{
    cross_entropy_loss_grad, Checkpoint, DiscreteAttention, DiscreteModel, DiscreteSsm,
};
use crate::numerics::rng::{domain, Rng};
use crate::oracle::{argmax, hmm_forward_step, hmm_predict_next, ForwardMessage};
use crate::par::{self, Execution};
use crate::tasks::{sample_hmm_task, simulate_hmm, HmmParams, HmmPriorConfig};
use crate::training::{meta_train, TrainConfig, TrainLog};

pub const ORACLE: &str = "oracle";
pub const SSM: &str = "ssm";
pub const ATTENTION: &str = "attention";

#[derive(Clone, Debug, PartialEq)]
pub struct Exp3Config {
    pub prior: HmmPriorConfig,
    pub k_grid: Vec<usize>,
    pub n_eval: usize,
    pub seq_len: usize,
    pub steps: usize,
    pub batch_tasks: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub embed_dim: usize,
    pub state_dim: usize,
    pub selector_mlp: bool,
    pub heads: usize,
    pub ff_dim: usize,
    pub eval_every: usize,
    pub train_eval_tasks: usize,
}

impl Exp3Config {
    pub fn desk() -> Self {
        Exp3Config {
            prior: HmmPriorConfig {
                n_states: 10,
                vocab: 20,
                ..Default::default()
            },
            k_grid: vec![8, 16, 32, 64, 128],
            n_eval: 1000,
            seq_len: 256,
            steps: 1000,
            batch_tasks: 32,
            lr: 3e-3,
            weight_decay: 0.01,
            clip_norm: 1.0,
            embed_dim: 16,
            state_dim: 16,
            selector_mlp: false,
            heads: 4,
            ff_dim: 32,
            eval_every: 200,
            train_eval_tasks: 32,
        }
    }

    /// 50 states, 100 characters, sequences of 512, 50,000 training tasks in
    /// batches of 64, learning rate 1e-3, embedding 64, FFN 128.
    pub fn paper() -> Self {
        Exp3Config {
            prior: HmmPriorConfig::default(),
            k_grid: vec![8, 16, 32, 64, 128, 256],
            seq_len: 512,
            steps: 782,
            batch_tasks: 64,
            lr: 1e-3,
            eval_every: 50,
            embed_dim: 64,
            selector_mlp: true,
            ff_dim: 128,
            ..Self::desk()
        }
    }

    pub fn from_config(cfg: &Config, paper_scale: bool) -> Result<Self> {
        let mut c = if paper_scale {
            Self::paper()
        } else {
            Self::desk()
        };
        cfg.read_into("exp3.n_states", &mut c.prior.n_states)?;
        cfg.read_into("exp3.vocab", &mut c.prior.vocab)?;
        cfg.read_into("exp3.alpha_trans", &mut c.prior.alpha_trans)?;
        cfg.read_into("exp3.alpha_emit", &mut c.prior.alpha_emit)?;
        cfg.read_list_into("exp3.k_grid", &mut c.k_grid)?;
        cfg.read_into("exp3.n_eval", &mut c.n_eval)?;
        cfg.read_into("exp3.seq_len", &mut c.seq_len)?;
        cfg.read_into("exp3.steps", &mut c.steps)?;
        cfg.read_into("exp3.batch_tasks", &mut c.batch_tasks)?;
        cfg.read_into("exp3.lr", &mut c.lr)?;
        cfg.read_into("exp3.weight_decay", &mut c.weight_decay)?;
        cfg.read_into("exp3.clip_norm", &mut c.clip_norm)?;
        cfg.read_into("exp3.embed_dim", &mut c.embed_dim)?;
        cfg.read_into("exp3.state_dim", &mut c.state_dim)?;
        cfg.read_into("exp3.selector_mlp", &mut c.selector_mlp)?;
        cfg.read_into("exp3.heads", &mut c.heads)?;
        cfg.read_into("exp3.ff_dim", &mut c.ff_dim)?;
        cfg.read_into("exp3.eval_every", &mut c.eval_every)?;
        cfg.read_into("exp3.train_eval_tasks", &mut c.train_eval_tasks)?;
        cfg.reject_unused("exp3.")?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prior.n_states == 0 || self.prior.vocab == 0 {
            return Err(Error::Config("exp3: HMM dims must be positive".into()));
        }
        if !(self.prior.alpha_trans > 0.0) || !(self.prior.alpha_emit > 0.0) {
            return Err(Error::Config(
                "exp3: Dirichlet concentrations must be positive".into(),
            ));
        }
        if self.k_grid.is_empty()
            || self.k_grid[0] == 0
            || self.k_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(
                "exp3.k_grid must be positive and strictly increasing".into(),
            ));
        }
        if self.n_eval == 0 || self.embed_dim == 0 || self.state_dim == 0 || self.ff_dim == 0 {
            return Err(Error::Config(
                "exp3: n_eval and model dims must be positive".into(),
            ));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(
                "exp3.embed_dim must be a multiple of exp3.heads".into(),
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
            context_k: self.k_grid.first().copied().unwrap_or(1),
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

struct EvalSeq {
    chars: Vec<usize>,
    /// Oracle argmax prediction after `k` characters, for each grid k.
    oracle: Vec<usize>,
}

fn oracle_predictions(params: &HmmParams, chars: &[usize], ks: &[usize]) -> Result<Vec<usize>> {
    let mut msg = ForwardMessage::new(params);
    let mut out = Vec::with_capacity(ks.len());
    let mut next = 0;
    for (t, c) in chars.iter().enumerate() {
        msg = hmm_forward_step(params, &msg, *c)?;
        if next < ks.len() && ks[next] == t + 1 {
            out.push(hmm_predict_next(params, &msg).1);
            next += 1;
        }
        if next == ks.len() {
            break;
        }
    }
    Ok(out)
}

fn build_eval(
    cfg: &Exp3Config,
    ctx: &RunContext,
    domain_id: u64,
    n: usize,
    ks: &[usize],
) -> Result<Vec<EvalSeq>> {
    let base = Rng::new(ctx.seed);
    let len = ks.last().copied().unwrap_or(1) + 1;
    par::try_map_indexed(ctx.exec, n, |i| {
        let mut rng = base.substream(domain_id, i as u64);
        let params = sample_hmm_task(&cfg.prior, &mut rng)?;
        let (_, chars) = simulate_hmm(&params, len, &mut rng)?;
        let oracle = oracle_predictions(&params, &chars[..len - 1], ks)?;
        Ok(EvalSeq { chars, oracle })
    })
}

/// 0/1 hits of a model at each grid k, one row per sequence.
fn model_hits<M: DiscreteModel>(
    m: &M,
    seqs: &[EvalSeq],
    ks: &[usize],
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    let max_k = *ks.last().expect("nonempty");
    par::try_map_indexed(exec, seqs.len(), |i| {
        let s = &seqs[i];
        let logits = m.logits(&s.chars[..max_k])?;
        Ok(ks
            .iter()
            .map(|&k| f64::from(argmax(&logits[k - 1]) == s.chars[k]))
            .collect())
    })
}

fn oracle_hits(seqs: &[EvalSeq], ks: &[usize]) -> Vec<Vec<f64>> {
    seqs.iter()
        .map(|s| {
            ks.iter()
                .zip(&s.oracle)
                .map(|(&k, p)| f64::from(*p == s.chars[k]))
                .collect()
        })
        .collect()
}

fn column(hits: &[Vec<f64>], g: usize) -> Vec<f64> {
    hits.iter().map(|row| row[g]).collect()
}

#[derive(Clone, Debug)]
pub struct Exp3Result {
    pub config: Exp3Config,
    pub curve: RiskCurve,
    pub comparisons: Comparisons,
    pub checksums: BTreeMap<String, StreamChecksum>,
    pub train_logs: Vec<(String, TrainLog)>,
}

impl Exp3Result {
    pub fn comparison(&self, name: &str) -> Option<(f64, f64)> {
        self.comparisons
            .rows
            .iter()
            .find(|r| r.0 == name)
            .map(|r| (r.1, r.2))
    }
}

fn train<M: Checkpoint + DiscreteModel>(
    name: &str,
    init: M,
    cfg: &Exp3Config,
    ctx: &RunContext,
    probe: &[EvalSeq],
    probe_k: &[usize],
) -> Result<(M, TrainLog)> {
    let prior = cfg.prior.clone();
    let len = cfg.seq_len;
    let sampler = move |rng: &mut Rng| -> Result<Vec<usize>> {
        let params = sample_hmm_task(&prior, rng)?;
        Ok(simulate_hmm(&params, len, rng)?.1)
    };
    let exec = ctx.exec;
    // Training-time metric: oracle accuracy minus model accuracy on the probe.
    let oracle_acc = mean_se(&column(&oracle_hits(probe, probe_k), 0)).0;
    let eval = |m: &M| -> Result<f64> {
        let hits = model_hits(m, probe, probe_k, exec)?;
        Ok(oracle_acc - mean_se(&column(&hits, 0)).0)
    };
    let mut tcfg = cfg.train_config(ctx.seed, ctx.exec);
    tcfg.checkpoint_path = Some(ctx.path(&format!("checkpoints/{name}.ckpt")));
    let start = Instant::now();
    let (m, log) = meta_train(
        init,
        sampler,
        |m: &M, chars: &Vec<usize>| cross_entropy_loss_grad(m, chars),
        Some(eval),
        &tcfg,
    )?;
    log::info!(
        "exp3: trained {name} in {:.1}s",
        start.elapsed().as_secs_f64()
    );
    log.write_csv(&ctx.path(&format!("train_log_{name}.csv")))?;
    Ok((m, log))
}

pub fn run_exp3(cfg: &Exp3Config, ctx: &RunContext) -> Result<Exp3Result> {
    cfg.validate()?;
    ensure_dir(&ctx.out_dir)?;
    let start = Instant::now();
    let ks = cfg.k_grid.clone();
    let probe_k = vec![ks[ks.len() / 2]];
    let probe = build_eval(
        cfg,
        ctx,
        domain::PROBE,
        cfg.train_eval_tasks.max(1),
        &probe_k,
    )?;
    let vocab = cfg.prior.vocab;
    let init = Rng::new(ctx.seed);
    let ssm = DiscreteSsm::init(
        vocab,
        cfg.embed_dim,
        cfg.state_dim,
        cfg.selector_mlp,
        &mut init.substream(domain::INIT, 20),
    )?;
    let (ssm, log_s) = train(SSM, ssm, cfg, ctx, &probe, &probe_k)?;
    let max_len = cfg.seq_len.max(cfg.max_k());
    let att = DiscreteAttention::init(
        vocab,
        cfg.embed_dim,
        cfg.heads,
        cfg.ff_dim,
        max_len,
        &mut init.substream(domain::INIT, 21),
    )?;
    let (att, log_a) = train(ATTENTION, att, cfg, ctx, &probe, &probe_k)?;

    let seqs = build_eval(cfg, ctx, domain::EVAL, cfg.n_eval, &ks)?;
    let stream = StreamChecksum::of_sequences(
        seqs.iter()
            .map(|s| s.chars.iter().map(|c| *c as f64).collect::<Vec<f64>>())
            .collect::<Vec<_>>()
            .iter()
            .map(Vec::as_slice),
    );
    let mut checksums = BTreeMap::new();
    let hits: Vec<(&str, Vec<Vec<f64>>)> = vec![
        (ORACLE, oracle_hits(&seqs, &ks)),
        (SSM, model_hits(&ssm, &seqs, &ks, ctx.exec)?),
        (ATTENTION, model_hits(&att, &seqs, &ks, ctx.exec)?),
    ];
    for (name, _) in &hits {
        checksums.insert(name.to_string(), stream);
    }

    let mut curve = RiskCurve::default();
    let mut comparisons = Comparisons::default();
    for (name, h) in &hits {
        for (g, &k) in ks.iter().enumerate() {
            let (m, se) = mean_se(&column(h, g));
            curve.push(RiskRow {
                predictor: name.to_string(),
                rho: f64::NAN,
                k,
                metric: m,
                std_err: se,
                n_eval: seqs.len(),
            })?;
        }
    }
    for (g, &k) in ks.iter().enumerate() {
        let oracle = column(&hits[0].1, g);
        for (name, h) in &hits[1..] {
            comparisons.add(&format!("oracle - {name} at k={k}"), &oracle, &column(h, g))?;
        }
    }
    for (name, h) in &hits {
        for g in 1..ks.len() {
            comparisons.add(
                &format!("{name}: k={} - k={}", ks[g], ks[g - 1]),
                &column(h, g),
                &column(h, g - 1),
            )?;
        }
    }

    ctx.write("risk_curve.csv", &curve.to_csv())?;
    ctx.write("comparisons.csv", &comparisons.to_csv())?;
    ctx.write("eval_checksums.csv", &super::checksums_to_csv(&checksums))?;
    emit_svg(
        &ctx.path("exp3_accuracy.svg"),
        &series_from_curve(&curve),
        &PlotStyle {
            title: "Next-character accuracy vs context length".into(),
            y_label: "top-1 accuracy".into(),
            log_y: false,
            x_ticks: Some(ks.iter().map(|k| *k as f64).collect()),
            ..Default::default()
        },
    )?;
    let mut summary = String::new();
    for r in &curve.rows {
        let _ = writeln!(
            summary,
            "{} k={}: accuracy {:.4} ± {:.4}",
            r.predictor, r.k, r.metric, r.std_err
        );
    }
    for (name, m, se, _) in &comparisons.rows {
        let _ = writeln!(summary, "paired {name}: {m:.4} ± {se:.4}");
    }
    ctx.write("summary.txt", &summary)?;
    log::info!("exp3: finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(Exp3Result {
        config: cfg.clone(),
        curve,
        comparisons,
        checksums,
        train_logs: vec![(SSM.into(), log_s), (ATTENTION.into(), log_a)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix::Matrix;

    #[test]
    fn deterministic_hmm_oracle_is_perfect_after_one_step() {
        // A cyclic permutation with one-hot emissions.
        let n = 4;
        let mut trans = Matrix::zeros(n, n);
        let mut emit = Matrix::zeros(n, n);
        for s in 0..n {
            trans[(s, (s + 1) % n)] = 1.0;
            emit[(s, s)] = 1.0;
        }
        let params = HmmParams::new(trans, emit, vec![0.25; n]).unwrap();
        let (_, chars) = simulate_hmm(&params, 20, &mut Rng::new(3)).unwrap();
        let ks: Vec<usize> = (1..20).collect();
        let preds = oracle_predictions(&params, &chars[..19], &ks).unwrap();
        for (k, p) in ks.iter().zip(&preds) {
            assert_eq!(*p, chars[*k]);
        }
    }

    #[test]
    fn tiny_run_is_deterministic_and_complete() {
        let cfg = Exp3Config {
            prior: HmmPriorConfig {
                n_states: 3,
                vocab: 5,
                ..Default::default()
            },
            k_grid: vec![2, 4, 8],
            n_eval: 20,
            seq_len: 12,
            steps: 3,
            batch_tasks: 2,
            embed_dim: 4,
            state_dim: 3,
            heads: 2,
            ff_dim: 8,
            eval_every: 1,
            train_eval_tasks: 3,
            ..Exp3Config::desk()
        };
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::new(2, dir.path());
        let a = run_exp3(&cfg, &ctx).unwrap();
        let b = run_exp3(&cfg, &ctx).unwrap();
        assert_eq!(a.curve.to_csv(), b.curve.to_csv());
        for f in [
            "risk_curve.csv",
            "comparisons.csv",
            "exp3_accuracy.svg",
            "train_log_ssm.csv",
            "train_log_attention.csv",
        ] {
            assert!(dir.path().join(f).exists(), "missing {f}");
        }
        assert!(a.comparison("oracle - ssm at k=8").is_some());
        assert_eq!(a.curve.rows.len(), 9);
    }
}
