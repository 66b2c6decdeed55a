//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! (written straight to stderr so it shows up without `--nocapture`) and the
//! full report is also saved under the cargo temp directory.
//!
//! The test asserts that every criterion passes except those listed in
//! `KNOWN_DEVIATIONS`, and that those still fail, so the list cannot go
//! stale in either direction.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ssmlab::harness::check::{run_self_checks, CheckOutcome};
use ssmlab::harness::exp1::{self, run_exp1, Exp1Config};
use ssmlab::harness::exp2::{self, run_exp2, Exp2Config};
use ssmlab::harness::exp3::{self, run_exp3, Exp3Config};
use ssmlab::harness::{paired_difference, RunContext};

/// Criteria that the implemented model provably cannot meet; the reasons are
/// printed with the FAIL line.
const KNOWN_DEVIATIONS: &[u32] = &[6, 7];

const SEED: u64 = 20_240_601;

struct Verdict {
    id: u32,
    passed: bool,
    text: String,
}

fn report(out: &mut Vec<Verdict>, id: u32, passed: bool, text: String, seconds: f64) {
    let line = format!(
        "{} criterion {id}: {text} [{seconds:.1}s]",
        if passed { "PASS" } else { "FAIL" }
    );
    let _ = writeln!(std::io::stderr(), "{line}");
    out.push(Verdict {
        id,
        passed,
        text: line,
    });
}

fn self_check_criteria(out: &mut Vec<Verdict>) {
    let outcomes = run_self_checks(SEED).expect("self-checks run");
    let find = |name: &str| -> &CheckOutcome {
        outcomes
            .iter()
            .find(|o| o.name == name)
            .expect("check present")
    };
    let limits = [
        (1, "kalman_vs_joint_gaussian", Some(10.0)),
        (2, "scalar_riccati", None),
        (3, "selective_ssm_kalman_witness", None),
        (4, "gradients_vs_finite_differences", Some(30.0)),
        (5, "hmm_forward_vs_enumeration", None),
    ];
    for (id, name, max_seconds) in limits {
        let o = find(name);
        let in_time = max_seconds.is_none_or(|m| o.seconds < m);
        let mut text = o.line();
        if let Some(m) = max_seconds {
            text.push_str(&format!("; runtime limit {m}s"));
        }
        report(out, id, o.passed && in_time, text, o.seconds);
    }
}

fn separation_and_rate(out: &mut Vec<Verdict>, dir: &Path) {
    let start = Instant::now();
    let cfg = Exp2Config {
        train_models: false,
        n_eval: 500,
        ..Exp2Config::desk()
    };
    let r = run_exp2(&cfg, &RunContext::new(SEED, dir.join("exp2"))).expect("exp2 runs");
    let secs = start.elapsed().as_secs_f64();

    let (diff, se) = r
        .comparison(0.95, 64)
        .expect("comparison at rho=0.95, k=64");
    let separated = diff > 0.0 && diff >= 2.0 * se;
    let ratios: Vec<f64> = [0.9, 0.95, 0.99]
        .iter()
        .map(|rho| r.ratio(*rho, 256).expect("ratio at k=256"))
        .collect();
    let monotone =
        ratios.iter().all(|v| v.is_finite() && *v > 0.0) && ratios.windows(2).all(|w| w[1] > w[0]);
    report(
        out,
        6,
        separated && monotone && secs < 300.0,
        format!(
            "erm_best - oracle at rho=0.95 k=64 = {diff:.4e} ± {se:.2e} over {} paired sequences (needs ≥ 2 s.e.: {}); \
             erm_best/oracle ratio at k=256 over rho 0.9/0.95/0.99 = {:.3e}/{:.3e}/{:.3e} (needs finite, positive, increasing: {}); \
             the known-rho filter's excess S_k - S_inf decays geometrically and is exactly 0 at rho = a = 0.9",
            cfg.n_eval, separated, ratios[0], ratios[1], ratios[2], monotone
        ),
        secs,
    );

    let fits: Vec<_> = r
        .fits
        .iter()
        .filter(|f| f.predictor == exp2::ORACLE)
        .collect();
    let ok = fits
        .iter()
        .all(|f| (-1.3..=-0.7).contains(&f.slope) && f.r_squared > 0.85);
    let desc: Vec<String> = fits
        .iter()
        .map(|f| format!("rho={}: slope {:.3}, R² {:.3}", f.rho, f.slope, f.r_squared))
        .collect();
    report(
        out,
        7,
        ok && !fits.is_empty(),
        format!(
            "oracle excess log-log fit for k ≥ {} ({}); needs slope in [-1.3, -0.7] with R² > 0.85 \
             (NaN: fewer than 3 positive excess values)",
            cfg.k_min,
            desc.join("; ")
        ),
        0.0,
    );
}

fn training_budget_direction(out: &mut Vec<Verdict>, dir: &Path) {
    let start = Instant::now();
    let cfg = Exp1Config::desk();
    let r = run_exp1(&cfg, &RunContext::new(SEED, dir.join("exp1"))).expect("exp1 runs");
    let secs = start.elapsed().as_secs_f64();
    let ssm: Vec<_> = cfg
        .budgets
        .iter()
        .map(|s| r.budget(exp1::SSM, *s).expect("ssm budget"))
        .collect();
    let mut text = Vec::new();
    let mut decreasing = true;
    for w in ssm.windows(2) {
        let (d, se) = paired_difference(&w[0].per_task, &w[1].per_task).unwrap();
        let ok = d > 0.0 && d >= 2.0 * se;
        decreasing &= ok;
        text.push(format!(
            "ssm excess {:.4} -> {:.4} (tasks {} -> {}, paired drop {d:.4} ± {se:.4})",
            w[0].excess, w[1].excess, w[0].train_tasks, w[1].train_tasks
        ));
    }
    let last = *cfg.budgets.last().unwrap();
    let att = r
        .budget(exp1::LINEAR_ATTENTION, last)
        .expect("attention budget");
    let ssm_last = ssm.last().unwrap();
    let (d, se) = paired_difference(&att.per_task, &ssm_last.per_task).unwrap();
    let below = d > 0.0 && d >= 2.0 * se;
    text.push(format!(
        "final linear_attention {:.4} vs ssm {:.4} (paired gap {d:.4} ± {se:.4}); {} held-out tasks",
        att.excess, ssm_last.excess, cfg.n_eval
    ));
    report(
        out,
        8,
        decreasing && below && secs < 1800.0,
        text.join("; "),
        secs,
    );
}

fn hmm_ceiling(out: &mut Vec<Verdict>, dir: &Path) {
    let start = Instant::now();
    let cfg = Exp3Config::desk();
    let r = run_exp3(&cfg, &RunContext::new(SEED, dir.join("exp3"))).expect("exp3 runs");
    let secs = start.elapsed().as_secs_f64();
    let mut ceiling = true;
    let mut worst = f64::INFINITY;
    for k in &cfg.k_grid {
        for model in [exp3::SSM, exp3::ATTENTION] {
            let (d, se) = r
                .comparison(&format!("oracle - {model} at k={k}"))
                .expect("comparison");
            ceiling &= d >= -2.0 * se;
            worst = worst.min(d / se.max(f64::MIN_POSITIVE));
        }
    }
    let (d, se) = r.comparison("ssm: k=128 - k=64").expect("k comparison");
    let no_collapse = d >= -2.0 * se;
    let acc = |p: &str, k: usize| {
        r.curve
            .get(p, f64::NAN, k)
            .map_or(f64::NAN, |row| row.metric)
    };
    report(
        out,
        9,
        ceiling && no_collapse && secs < 1800.0,
        format!(
            "oracle ≥ ssm/attention at every k within 2 s.e. (smallest oracle-minus-model z = {worst:.2}); \
             accuracy at k=128: oracle {:.3}, ssm {:.3}, attention {:.3}; ssm k=128 - k=64 = {d:.4} ± {se:.4}; {} sequences",
            acc(exp3::ORACLE, 128),
            acc(exp3::SSM, 128),
            acc(exp3::ATTENTION, 128),
            cfg.n_eval
        ),
        secs,
    );
}

/// CSV text with the `wall_time_s` column of training logs removed: it is
/// the one field that measures the machine rather than the computation.
fn reproducible_part(name: &str, text: &str) -> String {
    if !name.starts_with("train_log") {
        return text.to_string();
    }
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Compares every CSV written in `a` with its namesake in `b`.
fn identical_csvs(a: &Path, b: &Path, label: &str, cells: &mut Vec<String>) -> bool {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .expect("output dir")
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let mut same = !names.is_empty();
    for n in names {
        let read = |d: &Path| std::fs::read_to_string(d.join(&n)).unwrap_or_default();
        let ok = reproducible_part(&n, &read(a)) == reproducible_part(&n, &read(b));
        if !ok {
            let _ = writeln!(std::io::stderr(), "mismatch: {label}/{n}");
        }
        same &= ok;
        cells.push(format!("{label}/{n}"));
    }
    same
}

fn determinism(out: &mut Vec<Verdict>, dir: &Path) {
    let start = Instant::now();
    let e1 = Exp1Config {
        n_eval: 20,
        budgets: vec![10, 20],
        batch_tasks: 4,
        oracle_samples: 200,
        train_eval_tasks: 4,
        eval_every: 5,
        ..Exp1Config::desk()
    };
    let e2 = Exp2Config {
        train_models: true,
        steps: 20,
        eval_every: 5,
        n_eval: 50,
        ..Exp2Config::desk()
    };
    let e3 = Exp3Config {
        n_eval: 50,
        steps: 10,
        batch_tasks: 4,
        seq_len: 64,
        k_grid: vec![8, 16, 32],
        eval_every: 5,
        ..Exp3Config::desk()
    };
    let run = |tag: &str| {
        let ctx = |e: &str| RunContext::new(SEED, dir.join(format!("det_{e}_{tag}")));
        run_exp1(&e1, &ctx("exp1")).unwrap();
        run_exp2(&e2, &ctx("exp2")).unwrap();
        run_exp3(&e3, &ctx("exp3")).unwrap();
    };
    run("a");
    run("b");
    let mut cells = Vec::new();
    let mut same = true;
    for e in ["exp1", "exp2", "exp3"] {
        same &= identical_csvs(
            &dir.join(format!("det_{e}_a")),
            &dir.join(format!("det_{e}_b")),
            e,
            &mut cells,
        );
    }
    report(
        out,
        10,
        same,
        format!(
            "re-runs with seed {SEED} byte-identical (training logs compared without wall_time_s) for {} files: {}",
            cells.len(),
            cells.join(", ")
        ),
        start.elapsed().as_secs_f64(),
    );
}

#[test]
fn acceptance_report() {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let mut verdicts = Vec::new();
    self_check_criteria(&mut verdicts);
    separation_and_rate(&mut verdicts, &dir);
    training_budget_direction(&mut verdicts, &dir);
    hmm_ceiling(&mut verdicts, &dir);
    determinism(&mut verdicts, &dir);
    verdicts.sort_by_key(|v| v.id);

    let text: String = verdicts.iter().map(|v| format!("{}\n", v.text)).collect();
    std::fs::write(dir.join("report.txt"), &text).unwrap();
    let _ = writeln!(
        std::io::stderr(),
        "acceptance report written to {}",
        dir.join("report.txt").display()
    );

    assert_eq!(verdicts.len(), 10);
    for v in &verdicts {
        if KNOWN_DEVIATIONS.contains(&v.id) {
            assert!(
                !v.passed,
                "criterion {} now passes; remove it from KNOWN_DEVIATIONS",
                v.id
            );
        } else {
            assert!(v.passed, "{}", v.text);
        }
    }
}
