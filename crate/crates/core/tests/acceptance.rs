//! Acceptance gate. Runs every headline criterion at its stated tolerance and
//! prints one PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! The scaled-training criteria share one set of runs. Their per-seed table
//! and the ablation report are written under the cargo target tmpdir.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regretforge::adversary::{adversary_loss, Adversary, AdversaryConfig, LossCoefficients};
use regretforge::bench::{complexity_metrics, evaluate, select_tasks, spearman, TaskFilter};
use regretforge::catalog::catalog;
use regretforge::checks::gradcheck_suite;
use regretforge::env::{oracle_rollout, reset, EnvConfig, TerminalKind};
use regretforge::navigator::OracleActor;
use regretforge::site::{render, DesignSpec, Provenance};
use regretforge::tensor::Graph;
use regretforge::trainer::{dr_sample, flexible_regret, paired_regret, skip_frequency, train, AgentTag, Algorithm, TrainConfig, Trainer, SCALED_SUBSET};

/// Iterations per scaled run; the criterion allows up to 2·10^4.
const SCALED_ITERATIONS: usize = 4000;
const SCALED_SEEDS: [u64; 3] = [1, 2, 3];
const SCALED_EVAL_EPISODES: usize = 100;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// True when `r` is the f64 nearest to `x`.
fn correctly_rounded(r: f64, x: &BigRational) -> bool {
    let d = (exact(r) - x).abs();
    [r.next_up(), r.next_down()].iter().all(|n| d <= (exact(*n) - x).abs())
}

fn wide_f64(rng: &mut impl Rng) -> f64 {
    match rng.gen_range(0..3) {
        0 => rng.gen_range(-10.0..10.0),
        1 => rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-300..300)),
        _ => (rng.gen_range(-4i32..=4)) as f64 * 0.25,
    }
}

fn eq2_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let two = BigRational::from_integer(BigInt::from(2));
    for i in 0..10_000 {
        let (a, b) = (wide_f64(&mut rng), wide_f64(&mut rng));
        let (r, tag) = flexible_regret(a, b);
        let (ea, eb) = (exact(a), exact(b));
        let max = if ea >= eb { ea.clone() } else { eb.clone() };
        let max_minus_mean = max - (ea + eb) / &two;
        if !correctly_rounded(r, &max_minus_mean) {
            return outcome(false, format!("pair {i}: ({a:e}, {b:e}) gives {r:e}, not max − mean"));
        }
        if r.to_bits() != (0.5 * (a - b).abs()).to_bits() {
            return outcome(false, format!("pair {i}: ({a:e}, {b:e}) differs from 0.5·|a−b|"));
        }
        if tag != if a >= b { AgentTag::A } else { AgentTag::P } {
            return outcome(false, format!("pair {i}: wrong antagonist"));
        }
    }
    outcome(true, "10000 pairs, max−mean exact and bitwise equal to 0.5·|a−b|")
}

fn eq1_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_ulps = 0u64;
    for i in 0..10_000 {
        let (ma, mp) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let a: Vec<f64> = (0..ma).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let p: Vec<f64> = (0..mp).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut max = a[0];
        for &x in &a[1..] {
            if x > max {
                max = x;
            }
        }
        let mut sum = 0.0;
        for &x in &p {
            sum += x;
        }
        let brute = max - sum / mp as f64;
        let got = paired_regret(&a, &p).expect("non-empty");
        if got.to_bits() != brute.to_bits() {
            return outcome(false, format!("list {i}: {got} vs brute force {brute}"));
        }
        let ex = exact(max) - p.iter().map(|x| exact(*x)).fold(BigRational::zero(), |s, x| s + x) / BigRational::from_integer(BigInt::from(mp));
        let ex_f = num_traits::ToPrimitive::to_f64(&ex).expect("finite");
        worst_ulps = worst_ulps.max(got.to_bits().abs_diff(ex_f.to_bits()).min(1 << 20));
    }
    outcome(true, format!("10000 lists with M ≤ 8 match brute force bitwise; worst distance from exact value {worst_ulps} ulp"))
}

fn skip_bias_derivative(adv: &Adversary, spec: &DesignSpec, noise: &[f64], c: &LossCoefficients) -> f64 {
    let (id, j) = adv.skip_bias();
    let eps = 1e-5;
    let eval = |delta: f64| {
        let mut store = adv.store.clone();
        store.value_mut(id).data_mut()[j] += delta;
        let mut g = Graph::new();
        let r = adv.design_log_prob_with(&store, &mut g, spec, noise).expect("replay");
        let l = adversary_loss(&mut g, &r, c).expect("loss");
        g.scalar_value(l)
    };
    (eval(eps) - eval(-eps)) / (2.0 * eps)
}

fn budget_sign() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut checked = 0;
    for draw in 0..20u64 {
        let cfg = AdversaryConfig { max_pages: 2, steps: 8, obs_dim: 16, hidden: 64, primitive_subset: None };
        let adv = Adversary::new(cfg, &mut ChaCha8Rng::seed_from_u64(1000 + draw));
        let s = adv.sample_design(&mut rng).expect("sample");
        for sign in [1.0, -1.0] {
            let r_best = sign * rng.gen_range(0.05..2.0);
            let regret = rng.gen_range(0.0..1.0);
            let c = LossCoefficients { regret, baseline: regret, r_best, lambda_budget: 1.0, entropy_coef: 0.0 };
            let d = skip_bias_derivative(&adv, &s.spec, &s.noise, &c);
            if d.signum() != r_best.signum() || d == 0.0 {
                return outcome(false, format!("draw {draw}: ∂loss/∂skip_logit = {d:e} with R_best = {r_best}"));
            }
            checked += 1;
        }
    }
    outcome(true, format!("{checked} draws, sign(∂loss/∂skip_logit) = sign(R_best) for both signs"))
}

fn gradient_suite() -> Outcome {
    let checks = gradcheck_suite(1e-4, 0);
    let failed: Vec<String> = checks.iter().filter(|c| !c.report.passed).map(|c| format!("{} ({:.2e})", c.model, c.report.max_rel_err)).collect();
    let worst = checks.iter().map(|c| c.report.max_rel_err).fold(0.0, f64::max);
    if failed.is_empty() {
        outcome(true, format!("{} checks, worst rel err {worst:.2e} < 1e-4", checks.len()))
    } else {
        outcome(false, format!("failed: {}", failed.join(", ")))
    }
}

fn oracle_solvability() -> Outcome {
    let start = Instant::now();
    let env = EnvConfig::default();
    let tasks = select_tasks(&[TaskFilter::ALL]);
    let report = evaluate(&OracleActor, &tasks, 10, 0, &env, 1).expect("oracle evaluates");
    if let Some(row) = report.rows.iter().find(|r| r.success_rate != 1.0) {
        return outcome(false, format!("{}:{} success {}", row.task, row.difficulty, row.success_rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..1000 {
        let spec = dr_sample(3, 8, None, &mut rng);
        let site = render(&spec).expect("renders");
        let (_, state) = oracle_rollout(&site, i, &env);
        if state.terminal_kind != TerminalKind::Success {
            return outcome(false, format!("DR site {i} not solved: {}", spec.to_text().trim()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(secs < 60.0, format!("{} tasks and 1000 DR sites solved in {secs:.2} s", tasks.len()))
}

fn shaping_telescoping() -> Outcome {
    let cfg = EnvConfig { gamma: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let site = render(&dr_sample(3, 8, None, &mut rng)).expect("renders");
        let (mut state, _) = reset(&site, i, &cfg);
        let phi0 = state.potential();
        let mut sum = 0.0;
        while !state.done {
            let valid = state.valid_actions();
            let a = valid[rng.gen_range(0..valid.len())];
            sum += state.step(a).expect("valid").info.shaping;
        }
        worst = worst.max((sum - (state.potential() - phi0)).abs());
    }
    let login = DesignSpec::from_names(1, &[Some(("username", 0)), Some(("password", 0)), Some(("submit", 0))], Provenance::Benchmark);
    let site = render(&login).expect("renders");
    let (mut state, _) = reset(&site, 0, &cfg);
    let first = state.step(state.oracle_policy()).expect("valid").info.shaping;
    outcome(
        worst < 1e-12 && site.n_fields() == 2 && first == 0.5,
        format!("1000 episodes, max |Σ shaping − ΔΦ| = {worst:.1e}; first correct fill of 2 fields shapes {first}"),
    )
}

fn tmp(name: &str) -> PathBuf {
    let p = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&p);
    p
}

fn determinism() -> Outcome {
    let run = |name: &str| {
        let mut cfg = TrainConfig::scaled(Algorithm::FlexibleB, 11);
        cfg.iterations = 50;
        cfg.eval_every = 25;
        cfg.eval_episodes = 10;
        let dir = tmp(name);
        train(cfg, Some(&dir), |_| {}).expect("trains");
        (std::fs::read(dir.join("metrics.jsonl")).expect("metrics"), std::fs::read(dir.join("eval.jsonl")).expect("evals"))
    };
    let (a, b) = (run("det_a"), run("det_b"));
    let lines = a.0.iter().filter(|c| **c == b'\n').count();
    outcome(a == b && lines == 50, format!("two 50-iteration runs, {} metric bytes, identical: {}", a.0.len(), a == b))
}

fn baseline_contracts() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for algo in [Algorithm::Dr, Algorithm::Cl] {
        let mut cfg = TrainConfig::scaled(algo, 3);
        cfg.iterations = 50;
        cfg.eval_every = 0;
        let mut t = Trainer::new(cfg).expect("valid");
        let before = t.adversary.store.checksum();
        let mut last_p = None;
        let mut p_at_end = None;
        let end = t.cfg.cl_schedule().iterations_to_one;
        for _ in 0..50 {
            let r = t.step().expect("steps");
            last_p = r.cl_p;
            if r.iteration == end {
                p_at_end = r.cl_p;
            }
        }
        let same = t.adversary.store.checksum() == before;
        ok &= same;
        notes.push(format!("{} adversary unchanged: {same}", algo.as_str()));
        if algo == Algorithm::Cl {
            let hit = p_at_end == Some(1.0) && last_p == Some(1.0);
            ok &= hit;
            notes.push(format!("CL p at schedule end (iteration {end}) = {p_at_end:?}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let specs: Vec<DesignSpec> = (0..12_500).map(|_| dr_sample(3, 8, None, &mut rng)).collect();
    let draws: usize = specs.iter().map(|s| s.actions.len()).sum();
    let f = skip_frequency(&specs);
    let close = (f - 1.0 / 41.0).abs() <= 0.005;
    ok &= close && draws == 100_000;
    notes.push(format!("DR SKIP frequency {f:.5} over {draws} draws (1/41 = {:.5})", 1.0 / 41.0));
    outcome(ok, notes.join("; "))
}

struct ScaledRun {
    algo: Algorithm,
    seed: u64,
    success: f64,
    success_a: f64,
    success_p: f64,
    active: Vec<f64>,
    secs: f64,
}

fn scaled_runs() -> Vec<ScaledRun> {
    let mut runs = Vec::new();
    for algo in [Algorithm::FlexibleB, Algorithm::Flexible, Algorithm::Paired, Algorithm::Dr] {
        for seed in SCALED_SEEDS {
            let start = Instant::now();
            let mut cfg = TrainConfig::scaled(algo, seed);
            cfg.iterations = SCALED_ITERATIONS;
            cfg.eval_every = SCALED_ITERATIONS;
            cfg.eval_episodes = SCALED_EVAL_EPISODES;
            let dir = tmp(&format!("scaled_{}_s{seed}", algo.as_str()));
            let summary = train(cfg, Some(&dir), |_| {}).expect("trains");
            let rate = |agent| {
                let e = summary.evals.iter().rev().find(|e| e.agent == agent).expect("final eval");
                e.report.success("login", 1).expect("login:1 evaluated")
            };
            let (sa, sp) = (rate(AgentTag::A), rate(AgentTag::P));
            let placed: Vec<Vec<usize>> = summary.records.iter().map(|r| r.placed.clone()).collect();
            let active = complexity_metrics(&placed).expect("catalog ids").active_fraction;
            let secs = start.elapsed().as_secs_f64();
            eprintln!("  scaled {:<10} seed {seed}: login:1 success a {sa:.2} p {sp:.2} ({secs:.0} s)", algo.as_str());
            runs.push(ScaledRun { algo, seed, success: sa.max(sp), success_a: sa, success_p: sp, active, secs });
        }
    }
    runs
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn algo_mean(runs: &[ScaledRun], algo: Algorithm) -> f64 {
    mean(runs.iter().filter(|r| r.algo == algo).map(|r| r.success))
}

fn scaled_training(runs: &[ScaledRun]) -> Outcome {
    let fb = algo_mean(runs, Algorithm::FlexibleB);
    let dr = algo_mean(runs, Algorithm::Dr);
    outcome(fb >= 0.6 && fb - dr >= 0.15, format!("{SCALED_ITERATIONS} iterations × 3 seeds: flexible_b {fb:.3}, dr {dr:.3}, margin {:+.3} (need ≥ 0.6 and ≥ +0.15)", fb - dr))
}

fn complexity_trend(runs: &[ScaledRun]) -> Outcome {
    let fb: Vec<&ScaledRun> = runs.iter().filter(|r| r.algo == Algorithm::FlexibleB).collect();
    let n = SCALED_ITERATIONS;
    let series: Vec<f64> = (0..n).map(|i| mean(fb.iter().map(|r| r.active[i]))).collect();
    let iters: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let s = spearman(&iters, &series).expect("long series");
    let early = mean(series[..n / 3].iter().copied());
    let subset_active = SCALED_SUBSET.iter().filter(|name| catalog().lookup(name).expect("known").is_active()).count();
    let random_band = subset_active as f64 / SCALED_SUBSET.len() as f64;
    let per_seed: Vec<String> = fb
        .iter()
        .map(|r| {
            let s = spearman(&iters, &r.active).expect("long series");
            format!("seed {} rho {:+.3}", r.seed, s.rho)
        })
        .collect();
    outcome(
        s.rho > 0.0 && s.p_value < 0.05 && (0.55..=0.75).contains(&early),
        format!(
            "seed-mean series: Spearman rho {:+.3} (p {:.2e}); early-third active fraction {early:.3} (uniform over subset {random_band:.3}); {}",
            s.rho,
            s.p_value,
            per_seed.join(", ")
        ),
    )
}

fn ablation(runs: &[ScaledRun]) -> Outcome {
    let flex = mean(runs.iter().filter(|r| matches!(r.algo, Algorithm::Flexible | Algorithm::FlexibleB)).map(|r| r.success));
    let paired = algo_mean(runs, Algorithm::Paired);
    let holds = flex >= paired;
    let mut report = String::from("# Scaled ablation: login difficulty 1, greedy success (best of the two agents)\n\n");
    let _ = writeln!(report, "iterations per run: {SCALED_ITERATIONS}, eval episodes: {SCALED_EVAL_EPISODES}\n");
    report.push_str("| algorithm | seed | agent a | agent p | best | seconds |\n|---|---|---|---|---|---|\n");
    for r in runs {
        let _ = writeln!(report, "| {} | {} | {:.2} | {:.2} | {:.2} | {:.0} |", r.algo.as_str(), r.seed, r.success_a, r.success_p, r.success, r.secs);
    }
    report.push('\n');
    for algo in [Algorithm::FlexibleB, Algorithm::Flexible, Algorithm::Paired, Algorithm::Dr] {
        let _ = writeln!(report, "- mean {}: {:.3}", algo.as_str(), algo_mean(runs, algo));
    }
    let _ = writeln!(report, "\nflexible variants {flex:.3} vs paired {paired:.3}: {}", if holds { "holds" } else { "FLAGGED: inequality fails" });
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join("ablation.md");
    std::fs::create_dir_all(path.parent().expect("has parent")).expect("tmpdir");
    std::fs::write(&path, &report).expect("report written");
    outcome(holds, format!("flexible variants {flex:.3} vs paired {paired:.3}{}; report {}", if holds { "" } else { " (flagged)" }, path.display()))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    record("flexible regret exactness", eq2_exactness());
    record("paired regret brute force", eq1_brute_force());
    record("budget gradient sign", budget_sign());
    record("gradient suite", gradient_suite());
    record("oracle solvability", oracle_solvability());
    record("shaping telescoping", shaping_telescoping());
    record("determinism", determinism());
    record("baseline contracts", baseline_contracts());
    let runs = scaled_runs();
    record("scaled training", scaled_training(&runs));
    record("complexity trend", complexity_trend(&runs));
    record("ablation direction", ablation(&runs));

    let failed = results.iter().filter(|(_, o)| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
